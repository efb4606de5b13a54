//! The book's code listings, compiled and run as doctests. One module per
//! chapter so a failure points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/power-sums.md")]
pub mod power_sums {}
#[doc = include_str!("../../../book/src/bound.md")]
pub mod bound {}
#[doc = include_str!("../../../book/src/optimizer.md")]
pub mod optimizer {}
#[doc = include_str!("../../../book/src/decoding.md")]
pub mod decoding {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
