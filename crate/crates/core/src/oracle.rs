//! Brute-force ground truth for small models.
//!
//! Everything here enumerates the joint state space and applies scalar power
//! sums one variable at a time, so it shares only [`power_sum_scalar`] with
//! the optimizer. Every entry point refuses models whose relevant state space
//! exceeds a caller-supplied limit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::advance;
use crate::powersum::power_sum_scalar;
use crate::{
    BoundState, DiscreteModel, EliminationOrder, Error, Factor, InferenceQuery, ModelGraph, Result,
    SplitWeights,
};

/// Default cap on the number of enumerated joint states.
pub const DEFAULT_LIMIT: u64 = 1 << 20;

fn check_capacity(states: f64, limit: u64) -> Result<()> {
    if states > limit as f64 {
        Err(Error::Capacity { states, limit })
    } else {
        Ok(())
    }
}

/// Log-domain joint table `Σ_α θ_α(x)` over all variables, row-major with
/// variable 0 outermost.
pub fn joint_table(model: &DiscreteModel, limit: u64) -> Result<Vec<f64>> {
    check_capacity(model.joint_states(), limit)?;
    let n = model.num_vars();
    let size: usize = model.cards().iter().product();
    let mut x = vec![0usize; n];
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        out.push(model.log_potential(&x));
        advance(&mut x, model.cards());
    }
    Ok(out)
}

/// `Φ_τ = log ⊕^{τ_n}_{x_{o_n}} … ⊕^{τ_1}_{x_{o_1}} exp θ(x)` along `order`.
pub fn exact_weighted_logz(
    model: &DiscreteModel,
    query: &InferenceQuery,
    order: &EliminationOrder,
    limit: u64,
) -> Result<f64> {
    if query.len() != model.num_vars() || order.len() != model.num_vars() {
        return Err(Error::Dimension("query or order does not match the model".into()));
    }
    let mut table = joint_table(model, limit)?;
    // remaining variables in ascending index order, row-major
    let mut vars: Vec<usize> = (0..model.num_vars()).collect();
    for &v in order.order() {
        let cards: Vec<usize> = vars.iter().map(|&u| model.cards()[u]).collect();
        let pos = vars.iter().position(|&u| u == v).expect("variable not yet eliminated");
        let inner: usize = cards[pos + 1..].iter().product();
        let d = cards[pos];
        let outer = table.len() / (inner * d);
        let mut next = Vec::with_capacity(outer * inner);
        let mut slice = vec![0.0; d];
        for o in 0..outer {
            for r in 0..inner {
                for (s, e) in slice.iter_mut().enumerate() {
                    *e = table[(o * d + s) * inner + r];
                }
                next.push(power_sum_scalar(&slice, query.tau()[v])?);
            }
        }
        table = next;
        vars.remove(pos);
    }
    Ok(table[0])
}

/// `Q(x_B) = log Σ_{x_A} exp θ(x_A, x_B)`, with `x_B` listing the states of
/// the max variables in ascending variable order. Requires at most `limit`
/// joint states of the summed variables.
pub fn exact_q(model: &DiscreteModel, query: &InferenceQuery, x_b: &[usize], limit: u64) -> Result<f64> {
    let b = query.max_set();
    let a = query.sum_set();
    if x_b.len() != b.len() {
        return Err(Error::Dimension(format!(
            "assignment of {} variables for a max set of {}",
            x_b.len(),
            b.len()
        )));
    }
    for (&i, &s) in b.iter().zip(x_b) {
        if s >= model.cards()[i] {
            return Err(Error::Dimension(format!("state {s} out of range for variable {i}")));
        }
    }
    let a_cards: Vec<usize> = a.iter().map(|&i| model.cards()[i]).collect();
    check_capacity(a_cards.iter().map(|&d| d as f64).product(), limit)?;
    let mut x = vec![0usize; model.num_vars()];
    for (&i, &s) in b.iter().zip(x_b) {
        x[i] = s;
    }
    let size: usize = a_cards.iter().product();
    let mut xa = vec![0usize; a.len()];
    let mut vals = Vec::with_capacity(size);
    for _ in 0..size {
        for (&i, &s) in a.iter().zip(&xa) {
            x[i] = s;
        }
        vals.push(model.log_potential(&x));
        advance(&mut xa, &a_cards);
    }
    power_sum_scalar(&vals, 1.0)
}

/// `max_{x_B} Q(x_B)` and the lexicographically smallest maximizer.
pub fn exact_marginal_map(model: &DiscreteModel, query: &InferenceQuery, limit: u64) -> Result<(f64, Vec<usize>)> {
    check_capacity(model.joint_states(), limit)?;
    let b_cards: Vec<usize> = query.max_set().iter().map(|&i| model.cards()[i]).collect();
    let size: usize = b_cards.iter().product();
    let mut xb = vec![0usize; b_cards.len()];
    let mut best = (f64::NEG_INFINITY, xb.clone());
    for _ in 0..size {
        let q = exact_q(model, query, &xb, limit)?;
        if q > best.0 {
            best = (q, xb.clone());
        }
        advance(&mut xb, &b_cards);
    }
    Ok(best)
}

/// Central difference `(f(x + h) − f(x − h)) / 2h`.
pub fn finite_diff(f: impl Fn(f64) -> f64, at: f64, h: f64) -> f64 {
    (f(at + h) - f(at - h)) / (2.0 * h)
}

/// Outcome of [`holder_fuzz`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub seed: u64,
    pub trials: usize,
    /// Smallest `bound − exact` over trials with a finite exact value.
    pub min_margin: f64,
    /// Trials whose margin fell below `-1e-10`.
    pub violations: Vec<HolderViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderViolation {
    pub trial: usize,
    pub margin: f64,
}

/// Margin below which the decomposed bound counts as violated.
pub const HOLDER_TOL: f64 = 1e-10;

/// Random instances of the decomposed bound against the exact weighted log
/// partition function: at most 4 variables with at most 3 states, at most 3
/// cliques, weights `τ_i ∈ [0, 2]`, random elimination orders, random weight
/// splits (including zeros) and random shifts.
pub fn holder_fuzz(seed: u64, trials: usize) -> Result<HolderReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_margin = f64::INFINITY;
    let mut violations = Vec::new();
    for trial in 0..trials {
        let margin = holder_trial(&mut rng)?;
        min_margin = min_margin.min(margin);
        if margin < -HOLDER_TOL {
            violations.push(HolderViolation { trial, margin });
        }
    }
    Ok(HolderReport {
        seed,
        trials,
        min_margin,
        violations,
    })
}

fn holder_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.gen_range(1..=4);
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
    let m = rng.gen_range(1..=3);
    let mut factors = Vec::with_capacity(m);
    for _ in 0..m {
        let k = rng.gen_range(1..=n.min(3));
        let mut scope: Vec<usize> = (0..n).collect();
        scope.shuffle(rng);
        scope.truncate(k);
        let size: usize = scope.iter().map(|&v| cards[v]).product();
        let table = (0..size)
            .map(|_| {
                if rng.gen_bool(0.05) {
                    f64::NEG_INFINITY
                } else {
                    rng.gen_range(-2.0..2.0)
                }
            })
            .collect();
        factors.push(Factor::new(scope, table)?);
    }
    let model = DiscreteModel::new(cards, factors)?;
    let graph = ModelGraph::build(&model);
    let tau: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) })
        .collect();
    let query = InferenceQuery::new(tau.clone())?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let order = EliminationOrder::new(order)?;

    let mut singleton = vec![0.0; n];
    let mut clique: Vec<Vec<f64>> = model.factors().iter().map(|f| vec![0.0; f.arity()]).collect();
    for i in 0..n {
        let nbrs = graph.neighborhood(i);
        let mut u: Vec<f64> = (0..=nbrs.len())
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        if u.iter().all(|&v| v == 0.0) {
            u[0] = 1.0;
        }
        let z: f64 = u.iter().sum();
        singleton[i] = tau[i] * u[0] / z;
        for (k, &a) in nbrs.iter().enumerate() {
            let pos = model.factors()[a].scope().iter().position(|&v| v == i).expect("in scope");
            clique[a][pos] = tau[i] * u[k + 1] / z;
        }
    }
    let mut state = BoundState::with_weights(&model, &order, &query, SplitWeights::new(singleton, clique))?;
    for a in 0..model.factors().len() {
        for &i in model.factors()[a].scope() {
            let d: Vec<f64> = (0..model.cards()[i]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            state.set_shift(i, a, &d)?;
        }
    }
    let exact = exact_weighted_logz(&model, &query, &order, DEFAULT_LIMIT)?;
    if exact == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok(state.value() - exact)
}
