//! Decomposed upper bounds on the weighted log partition function of a
//! discrete Markov random field.
//!
//! A single family of bounds covers sum inference (log partition function),
//! max inference (MAP) and marginal MAP. Every variable carries a weight
//! `tau_i >= 0`; `tau_i = 1` sums the variable out and `tau_i = 0` maximizes
//! over it. The bound splits each weight across a singleton term and the
//! cliques that touch the variable, moves cost-shifting vectors between the
//! terms, and is tightened by block coordinate descent. It is a valid upper
//! bound at every iterate, so the optimizer can be stopped at any time.
//!
//! The crate is organized bottom up:
//!
//! * [`model`]: factors, graph structure, elimination orders, queries.
//! * [`io`]: UAI model files, query files and trace output.
//! * [`powersum`]: the log-domain power-sum kernel.
//! * [`bound`]: the decomposed bound state and its evaluation.
//! * [`solver`]: the block coordinate descent optimizer.
//! * [`oracle`]: brute-force ground truth for small models.
//! * [`decode`]: local decoding and scoring of max-variable assignments.
//! * [`check`]: randomized property suites shared by the CLI and tests.

pub mod bound;
pub mod check;
pub mod decode;
mod error;
pub mod io;
pub mod model;
pub mod oracle;
pub mod powersum;
pub mod solver;

pub use bound::{BoundState, SplitWeights};
pub use error::{Error, Result};
pub use model::{DiscreteModel, EliminationOrder, Factor, InferenceQuery, ModelGraph};
pub use solver::{run, OptimizerConfig, RunOutput};
