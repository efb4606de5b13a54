//! Discrete Markov random fields, their graph structure, elimination orders
//! and inference queries.
//!
//! Factor tables are dense and live in the log domain. Entries are indexed by
//! the joint state of the factor's scope in row-major order, so the last
//! scope variable varies fastest. `f64::NEG_INFINITY` encodes a zero
//! potential.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major strides for a table over variables with the given cardinalities.
pub fn strides(cards: &[usize]) -> Vec<usize> {
    let mut out = vec![1; cards.len()];
    for k in (0..cards.len().saturating_sub(1)).rev() {
        out[k] = out[k + 1] * cards[k + 1];
    }
    out
}

/// A log-domain potential over an ordered scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    scope: Vec<usize>,
    table: Vec<f64>,
}

impl Factor {
    /// Creates a factor. Scope validity against a model is checked by
    /// [`DiscreteModel::new`].
    pub fn new(scope: Vec<usize>, table: Vec<f64>) -> Result<Self> {
        if scope.is_empty() {
            return Err(Error::Model("factor scope is empty".into()));
        }
        let distinct: BTreeSet<_> = scope.iter().collect();
        if distinct.len() != scope.len() {
            return Err(Error::Model(format!("factor scope {scope:?} has duplicates")));
        }
        if let Some(v) = table.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
            return Err(Error::Model(format!("factor table entry {v} is not in [-inf, inf)")));
        }
        Ok(Self { scope, table })
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn arity(&self) -> usize {
        self.scope.len()
    }

    /// Reorders the axes of the factor. `perm[k]` is the current position of
    /// the variable that becomes position `k`.
    pub fn permuted(&self, perm: &[usize], cards: &[usize]) -> Factor {
        debug_assert_eq!(perm.len(), self.scope.len());
        let old_cards: Vec<usize> = self.scope.iter().map(|&v| cards[v]).collect();
        let old_strides = strides(&old_cards);
        let new_scope: Vec<usize> = perm.iter().map(|&p| self.scope[p]).collect();
        let new_cards: Vec<usize> = perm.iter().map(|&p| old_cards[p]).collect();
        let mut table = Vec::with_capacity(self.table.len());
        let mut states = vec![0usize; perm.len()];
        for _ in 0..self.table.len() {
            let src: usize = states
                .iter()
                .zip(perm)
                .map(|(&s, &p)| s * old_strides[p])
                .sum();
            table.push(self.table[src]);
            advance(&mut states, &new_cards);
        }
        Factor {
            scope: new_scope,
            table,
        }
    }
}

/// Odometer increment over `cards`, last position fastest. Returns `false`
/// after wrapping around.
pub(crate) fn advance(states: &mut [usize], cards: &[usize]) -> bool {
    for k in (0..states.len()).rev() {
        states[k] += 1;
        if states[k] < cards[k] {
            return true;
        }
        states[k] = 0;
    }
    false
}

/// A discrete Markov random field `p(x) ∝ exp(Σ_α θ_α(x_α))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    cards: Vec<usize>,
    factors: Vec<Factor>,
}

impl DiscreteModel {
    pub fn new(cards: Vec<usize>, factors: Vec<Factor>) -> Result<Self> {
        if let Some(i) = cards.iter().position(|&d| d == 0) {
            return Err(Error::Model(format!("variable {i} has cardinality 0")));
        }
        for (a, f) in factors.iter().enumerate() {
            if let Some(&v) = f.scope.iter().find(|&&v| v >= cards.len()) {
                return Err(Error::Model(format!(
                    "factor {a} references variable {v} but the model has {} variables",
                    cards.len()
                )));
            }
            let size: usize = f.scope.iter().map(|&v| cards[v]).product();
            if size != f.table.len() {
                return Err(Error::Model(format!(
                    "factor {a} has {} table entries, expected {size}",
                    f.table.len()
                )));
            }
        }
        Ok(Self { cards, factors })
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Number of joint configurations, as a float so it cannot overflow.
    pub fn joint_states(&self) -> f64 {
        self.cards.iter().map(|&d| d as f64).product()
    }

    /// `Σ_α θ_α(x_α)` at a full assignment.
    pub fn log_potential(&self, x: &[usize]) -> f64 {
        self.factors
            .iter()
            .map(|f| {
                let mut idx = 0;
                for &v in &f.scope {
                    idx = idx * self.cards[v] + x[v];
                }
                f.table[idx]
            })
            .sum()
    }
}

/// Incidence structure of a model: which factors touch each variable and
/// which variables share a factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    neighborhoods: Vec<Vec<usize>>,
    adjacency: Vec<BTreeSet<usize>>,
}

impl ModelGraph {
    pub fn build(model: &DiscreteModel) -> Self {
        let n = model.num_vars();
        let mut neighborhoods = vec![Vec::new(); n];
        let mut adjacency = vec![BTreeSet::new(); n];
        for (a, f) in model.factors.iter().enumerate() {
            for &i in &f.scope {
                neighborhoods[i].push(a);
                adjacency[i].extend(f.scope.iter().copied().filter(|&j| j != i));
            }
        }
        Self {
            neighborhoods,
            adjacency,
        }
    }

    /// Factors incident to variable `i`, ascending.
    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.adjacency[i]
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    pub fn num_vars(&self) -> usize {
        self.neighborhoods.len()
    }
}

/// A permutation of the variables; position 0 is eliminated first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationOrder {
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl EliminationOrder {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut rank = vec![usize::MAX; n];
        for (pos, &v) in order.iter().enumerate() {
            if v >= n || rank[v] != usize::MAX {
                return Err(Error::Model(format!("{order:?} is not a permutation")));
            }
            rank[v] = pos;
        }
        Ok(Self { order, rank })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            rank: (0..n).collect(),
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank(&self, var: usize) -> usize {
        self.rank[var]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Weighted min-fill order that eliminates every summed variable
    /// (`tau_i > 0`) before any maximized one.
    ///
    /// The score of a candidate is the sum, over the fill edges its
    /// elimination would add, of the product of the endpoint cardinalities.
    /// Ties go to the lowest variable index. Variables that appear in no
    /// factor are placed first within their phase.
    pub fn constrained_min_fill(
        model: &DiscreteModel,
        graph: &ModelGraph,
        query: &InferenceQuery,
    ) -> Self {
        let n = model.num_vars();
        let cards = model.cards();
        let mut adj: Vec<BTreeSet<usize>> = (0..n).map(|i| graph.neighbors(i).clone()).collect();
        let mut order = Vec::with_capacity(n);
        let mut done = vec![false; n];

        for phase_is_sum in [true, false] {
            let in_phase = |i: usize| query.is_sum(i) == phase_is_sum;
            for i in (0..n).filter(|&i| in_phase(i) && graph.neighborhood(i).is_empty()) {
                done[i] = true;
                order.push(i);
            }
            loop {
                let mut best: Option<(u128, usize)> = None;
                for i in (0..n).filter(|&i| !done[i] && in_phase(i)) {
                    let score = fill_score(&adj[i], &adj, cards);
                    if best.map_or(true, |(s, _)| score < s) {
                        best = Some((score, i));
                    }
                }
                let Some((_, v)) = best else { break };
                let nbrs: Vec<usize> = adj[v].iter().copied().collect();
                for (a, &p) in nbrs.iter().enumerate() {
                    adj[p].remove(&v);
                    for &q in &nbrs[a + 1..] {
                        adj[p].insert(q);
                        adj[q].insert(p);
                    }
                }
                adj[v].clear();
                done[v] = true;
                order.push(v);
            }
        }
        Self::new(order).expect("min-fill produces a permutation")
    }
}

fn fill_score(nbrs: &BTreeSet<usize>, adj: &[BTreeSet<usize>], cards: &[usize]) -> u128 {
    let nbrs: Vec<usize> = nbrs.iter().copied().collect();
    let mut score = 0u128;
    for (a, &p) in nbrs.iter().enumerate() {
        for &q in &nbrs[a + 1..] {
            if !adj[p].contains(&q) {
                score += (cards[p] * cards[q]) as u128;
            }
        }
    }
    score
}

/// Per-variable weights `tau_i >= 0`. Variables with zero weight are
/// maximized (the max set `B`); all others are summed with a power sum of
/// temperature `tau_i` (the sum set `A`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceQuery {
    tau: Vec<f64>,
}

impl InferenceQuery {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if let Some((i, t)) = tau.iter().enumerate().find(|(_, t)| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::Query(format!("weight {t} of variable {i} is not a finite nonnegative number")));
        }
        Ok(Self { tau })
    }

    /// Pure sum inference: every weight is 1.
    pub fn sum(n: usize) -> Self {
        Self { tau: vec![1.0; n] }
    }

    /// Pure max inference (MAP): every weight is 0.
    pub fn max(n: usize) -> Self {
        Self { tau: vec![0.0; n] }
    }

    /// Marginal MAP with the listed variables maximized and the rest summed.
    pub fn marginal_map(n: usize, max_vars: &[usize]) -> Result<Self> {
        let mut tau = vec![1.0; n];
        for &i in max_vars {
            if i >= n {
                return Err(Error::Query(format!("variable {i} out of range for {n} variables")));
            }
            if tau[i] == 0.0 {
                return Err(Error::Query(format!("variable {i} listed twice")));
            }
            tau[i] = 0.0;
        }
        Ok(Self { tau })
    }

    /// Marginal MAP with `round(frac * n)` max variables drawn uniformly
    /// with a seeded generator.
    pub fn random_marginal_map(n: usize, frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::Query(format!("max fraction {frac} is outside [0, 1]")));
        }
        let k = ((n as f64) * frac).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        Self::marginal_map(n, &picked)
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn is_sum(&self, i: usize) -> bool {
        self.tau[i] > 0.0
    }

    /// The max set `B`, ascending.
    pub fn max_set(&self) -> Vec<usize> {
        (0..self.tau.len()).filter(|&i| !self.is_sum(i)).collect()
    }

    /// The sum set `A`, ascending.
    pub fn sum_set(&self) -> Vec<usize> {
        (0..self.tau.len()).filter(|&i| self.is_sum(i)).collect()
    }
}

/// `θ_α(x_α) - Σ_{i∈α} δ_i(x_i)`, with one shift vector per scope position.
pub fn reparameterized_factor(
    factor: &Factor,
    cards: &[usize],
    shifts: &[&[f64]],
) -> Result<Vec<f64>> {
    if shifts.len() != factor.arity() {
        return Err(Error::InvalidShift(format!(
            "{} shift vectors for a factor of arity {}",
            shifts.len(),
            factor.arity()
        )));
    }
    let scope_cards: Vec<usize> = factor.scope.iter().map(|&v| cards[v]).collect();
    for (k, (s, &d)) in shifts.iter().zip(&scope_cards).enumerate() {
        if s.len() != d {
            return Err(Error::InvalidShift(format!(
                "shift for scope position {k} has length {}, expected {d}",
                s.len()
            )));
        }
    }
    let mut out = factor.table.clone();
    subtract_axis_shifts(&mut out, &scope_cards, shifts);
    Ok(out)
}

/// Subtracts one vector per axis from a row-major table in place.
pub(crate) fn subtract_axis_shifts(table: &mut [f64], cards: &[usize], shifts: &[&[f64]]) {
    let mut states = vec![0usize; cards.len()];
    for entry in table.iter_mut() {
        for (k, s) in shifts.iter().enumerate() {
            *entry -= s[states[k]];
        }
        advance(&mut states, cards);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(scope: [usize; 2]) -> Factor {
        Factor::new(scope.to_vec(), vec![0.0; 4]).unwrap()
    }

    fn grid3() -> DiscreteModel {
        let mut factors = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                let v = 3 * r + c;
                if c < 2 {
                    factors.push(pair([v, v + 1]));
                }
                if r < 2 {
                    factors.push(pair([v, v + 3]));
                }
            }
        }
        DiscreteModel::new(vec![2; 9], factors).unwrap()
    }

    #[test]
    fn graph_of_single_factor() {
        let m = DiscreteModel::new(vec![2, 2], vec![pair([0, 1])]).unwrap();
        let g = ModelGraph::build(&m);
        assert_eq!(g.neighborhood(0), &[0]);
        assert_eq!(g.neighborhood(1), &[0]);
        assert!(g.adjacent(0, 1));
    }

    #[test]
    fn graph_of_chain() {
        let m = DiscreteModel::new(vec![2; 3], vec![pair([0, 1]), pair([1, 2])]).unwrap();
        let g = ModelGraph::build(&m);
        assert_eq!(g.neighborhood(1), &[0, 1]);
        assert!(!g.adjacent(0, 2));
    }

    #[test]
    fn graph_without_factors() {
        let m = DiscreteModel::new(vec![3, 2], vec![]).unwrap();
        let g = ModelGraph::build(&m);
        assert!(g.neighborhood(0).is_empty() && g.neighborhood(1).is_empty());
    }

    #[test]
    fn model_validation() {
        assert!(Factor::new(vec![], vec![]).is_err());
        assert!(Factor::new(vec![1, 1], vec![0.0; 4]).is_err());
        assert!(Factor::new(vec![0], vec![f64::NAN]).is_err());
        assert!(Factor::new(vec![0], vec![f64::NEG_INFINITY, 0.0]).is_ok());
        assert!(DiscreteModel::new(vec![2], vec![pair([0, 1])]).is_err());
        let short = Factor::new(vec![0, 1], vec![0.0; 3]).unwrap();
        assert!(DiscreteModel::new(vec![2, 2], vec![short]).is_err());
    }

    #[test]
    fn min_fill_respects_sum_first() {
        let m = DiscreteModel::new(vec![2; 3], vec![pair([0, 1]), pair([1, 2])]).unwrap();
        let g = ModelGraph::build(&m);
        let q = InferenceQuery::marginal_map(3, &[1]).unwrap();
        let o = EliminationOrder::constrained_min_fill(&m, &g, &q);
        assert_eq!(o.order()[2], 1);
    }

    #[test]
    fn min_fill_on_grid_starts_at_corner() {
        let m = grid3();
        let g = ModelGraph::build(&m);
        let o = EliminationOrder::constrained_min_fill(&m, &g, &InferenceQuery::sum(9));
        assert_eq!(o.order()[0], 0);
        // Only the four corners have the minimal score of one fill edge.
        assert!([0, 2, 6, 8].contains(&o.order()[0]));
    }

    #[test]
    fn min_fill_tree_has_no_fill() {
        // star centered at 0: once two leaves are gone the center ties with
        // the last leaf and wins on index
        let m = DiscreteModel::new(vec![2; 4], vec![pair([0, 1]), pair([0, 2]), pair([0, 3])]).unwrap();
        let g = ModelGraph::build(&m);
        let o = EliminationOrder::constrained_min_fill(&m, &g, &InferenceQuery::sum(4));
        assert_eq!(o.order(), &[1, 2, 0, 3]);
    }

    #[test]
    fn isolated_variables_first_within_phase() {
        let m = DiscreteModel::new(vec![2; 4], vec![pair([0, 1])]).unwrap();
        let g = ModelGraph::build(&m);
        let q = InferenceQuery::marginal_map(4, &[3]).unwrap();
        let o = EliminationOrder::constrained_min_fill(&m, &g, &q);
        assert_eq!(o.order(), &[2, 0, 1, 3]);
    }

    #[test]
    fn reparameterization_examples() {
        let cards = [2, 2];
        let f = Factor::new(vec![0, 1], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let zero = [0.0, 0.0];
        assert_eq!(reparameterized_factor(&f, &cards, &[&zero, &zero]).unwrap(), f.table());

        let c = [0.7, 0.7];
        let out = reparameterized_factor(&f, &cards, &[&zero, &c]).unwrap();
        for (o, t) in out.iter().zip(f.table()) {
            assert!((o - (t - 0.7)).abs() < 1e-15);
        }

        let d = [0.5, -0.5];
        let out = reparameterized_factor(&f, &cards, &[&d, &zero]).unwrap();
        assert_eq!(out, vec![-0.5, 0.5, 1.5, 0.5]);
        assert_eq!(f.table(), &[0.0, 1.0, 1.0, 0.0]);

        assert!(matches!(
            reparameterized_factor(&f, &cards, &[&d]),
            Err(Error::InvalidShift(_))
        ));
        assert!(matches!(
            reparameterized_factor(&f, &cards, &[&d, &[0.0, 0.0, 0.0]]),
            Err(Error::InvalidShift(_))
        ));
    }

    #[test]
    fn permutation_moves_axes() {
        let cards = [2, 3];
        let f = Factor::new(vec![0, 1], (0..6).map(|v| v as f64).collect()).unwrap();
        let p = f.permuted(&[1, 0], &cards);
        assert_eq!(p.scope(), &[1, 0]);
        // entry (x1=j, x0=i) equals original (i, j)
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(p.table()[j * 2 + i], f.table()[i * 3 + j]);
            }
        }
    }

    #[test]
    fn random_marginal_map_is_reproducible() {
        let a = InferenceQuery::random_marginal_map(10, 0.5, 42).unwrap();
        let b = InferenceQuery::random_marginal_map(10, 0.5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.max_set().len(), 5);
    }

    #[test]
    fn marginal_map_rejects_bad_indices() {
        assert!(InferenceQuery::marginal_map(2, &[2]).is_err());
        assert!(InferenceQuery::marginal_map(2, &[1, 1]).is_err());
        assert!(InferenceQuery::new(vec![-1.0]).is_err());
    }
}
