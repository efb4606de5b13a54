//! The fully decomposed bound and its state.
//!
//! For cost shifts `δ` and split weights `w`, the bound is
//!
//! ```text
//! L(δ, w) = Σ_i  log ⊕^{w_i}_{x_i} exp[Σ_{α∈N_i} δ_i^α(x_i)]
//!         + Σ_α  log ⊕^{w^α}_{x_α} exp[θ_α(x_α) − Σ_{i∈α} δ_i^α(x_i)]
//! ```
//!
//! where every clique term eliminates its scope in the global elimination
//! order. Whenever `w_i + Σ_α w_i^α = τ_i` for every variable, `L` is an upper
//! bound on the weighted log partition function.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::subtract_axis_shifts;
use crate::powersum::{
    clique_belief, eliminate, eliminate_value, entropy, power_sum_strided, singleton_belief,
    CliqueBelief, WeightedScope,
};
use crate::{DiscreteModel, EliminationOrder, Error, InferenceQuery, ModelGraph, Result};

/// Tolerance on the weight simplex constraint when weights are supplied by
/// the caller.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Singleton and clique weights. Clique weights are indexed by factor and
/// then by position in the factor's own scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitWeights {
    pub(crate) singleton: Vec<f64>,
    pub(crate) clique: Vec<Vec<f64>>,
}

impl SplitWeights {
    pub fn new(singleton: Vec<f64>, clique: Vec<Vec<f64>>) -> Self {
        Self { singleton, clique }
    }

    pub fn singleton(&self, i: usize) -> f64 {
        self.singleton[i]
    }

    pub fn singletons(&self) -> &[f64] {
        &self.singleton
    }

    /// Weight of the variable at scope position `pos` of factor `alpha`.
    pub fn clique(&self, alpha: usize, pos: usize) -> f64 {
        self.clique[alpha][pos]
    }

    pub fn clique_weights(&self, alpha: usize) -> &[f64] {
        &self.clique[alpha]
    }

    /// `w_i + Σ_{α∈N_i} w_i^α`.
    pub fn total(&self, model: &DiscreteModel, graph: &ModelGraph, i: usize) -> f64 {
        self.singleton[i]
            + graph
                .neighborhood(i)
                .iter()
                .map(|&a| self.clique[a][scope_pos(model, a, i)])
                .sum::<f64>()
    }

    /// Initialization that mirrors weighted mini-bucket elimination.
    ///
    /// Variables are visited in elimination order. A clique is a parent of
    /// `i` if some other variable of the clique is eliminated after `i`;
    /// otherwise it is a child. Parents share `τ_i` uniformly. A variable
    /// without parents shares `τ_i` uniformly across its child cliques, and
    /// a variable in no clique keeps `τ_i` on its singleton term.
    pub fn wmb(
        model: &DiscreteModel,
        graph: &ModelGraph,
        order: &EliminationOrder,
        query: &InferenceQuery,
    ) -> Self {
        let mut out = Self::zeros(model, query);
        for i in 0..model.num_vars() {
            let tau = query.tau()[i];
            let nbrs = graph.neighborhood(i);
            if nbrs.is_empty() {
                out.singleton[i] = tau;
                continue;
            }
            let parents: Vec<usize> = nbrs
                .iter()
                .copied()
                .filter(|&a| {
                    model.factors()[a]
                        .scope()
                        .iter()
                        .any(|&j| order.rank(j) > order.rank(i))
                })
                .collect();
            let share = if parents.is_empty() { nbrs } else { &parents[..] };
            let w = tau / share.len() as f64;
            for &a in share {
                out.clique[a][scope_pos(model, a, i)] = w;
            }
        }
        out
    }

    /// Splits every `τ_i` uniformly over the singleton term and all incident
    /// cliques, so every weight of a summed variable is strictly positive.
    pub fn uniform(model: &DiscreteModel, graph: &ModelGraph, query: &InferenceQuery) -> Self {
        let mut out = Self::zeros(model, query);
        for i in 0..model.num_vars() {
            let nbrs = graph.neighborhood(i);
            let w = query.tau()[i] / (nbrs.len() + 1) as f64;
            out.singleton[i] = w;
            for &a in nbrs {
                out.clique[a][scope_pos(model, a, i)] = w;
            }
        }
        out
    }

    fn zeros(model: &DiscreteModel, query: &InferenceQuery) -> Self {
        Self {
            singleton: vec![0.0; query.len()],
            clique: model.factors().iter().map(|f| vec![0.0; f.arity()]).collect(),
        }
    }
}

/// Weighted mini-bucket style weight initialization; see [`SplitWeights::wmb`].
pub fn init_weights_wmb(
    model: &DiscreteModel,
    graph: &ModelGraph,
    order: &EliminationOrder,
    query: &InferenceQuery,
) -> SplitWeights {
    SplitWeights::wmb(model, graph, order, query)
}

fn scope_pos(model: &DiscreteModel, alpha: usize, i: usize) -> usize {
    model.factors()[alpha]
        .scope()
        .iter()
        .position(|&v| v == i)
        .expect("variable in factor scope")
}

/// Sizes of the optimization variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    /// Number of variable-clique pairs `(i, α)` with `i ∈ α`.
    pub pairs: usize,
    /// Number of scalar cost-shift entries, `Σ_{(i,α)} d_i`.
    pub shift_scalars: usize,
    /// Number of clique weights `w_i^α`, one per pair.
    pub clique_weights: usize,
    /// Number of singleton weights `w_i`, one per variable.
    pub singleton_weights: usize,
}

pub fn parameter_census(model: &DiscreteModel, graph: &ModelGraph) -> Census {
    let pairs = (0..model.num_vars()).map(|i| graph.neighborhood(i).len()).sum();
    let shift_scalars = (0..model.num_vars())
        .map(|i| graph.neighborhood(i).len() * model.cards()[i])
        .sum();
    Census {
        pairs,
        shift_scalars,
        clique_weights: pairs,
        singleton_weights: model.num_vars(),
    }
}

/// A clique with its scope sorted by elimination rank.
#[derive(Debug)]
pub(crate) struct RankedClique {
    /// Scope positions in rank order: `rank_to_scope[k]` is the original
    /// scope position of the `k`-th eliminated variable.
    pub rank_to_scope: Vec<usize>,
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub theta: Vec<f64>,
}

/// An incidence of a variable in a clique.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Incidence {
    pub clique: usize,
    /// Position in the factor's own scope.
    pub pos: usize,
    /// Position in the ranked scope.
    pub rpos: usize,
}

/// The immutable part of a bound: model, order and weights `τ`.
#[derive(Debug)]
pub(crate) struct Decomposition {
    pub model: DiscreteModel,
    pub graph: ModelGraph,
    pub order: EliminationOrder,
    pub query: InferenceQuery,
    pub cliques: Vec<RankedClique>,
    pub incidences: Vec<Vec<Incidence>>,
}

impl Decomposition {
    fn new(model: &DiscreteModel, order: &EliminationOrder, query: &InferenceQuery) -> Result<Self> {
        let n = model.num_vars();
        if order.len() != n {
            return Err(Error::Dimension(format!(
                "elimination order over {} variables for a model with {n}",
                order.len()
            )));
        }
        if query.len() != n {
            return Err(Error::Query(format!(
                "query over {} variables for a model with {n}",
                query.len()
            )));
        }
        let graph = ModelGraph::build(model);
        let mut incidences = vec![Vec::new(); n];
        let cliques = model
            .factors()
            .iter()
            .enumerate()
            .map(|(a, f)| {
                let mut rank_to_scope: Vec<usize> = (0..f.arity()).collect();
                rank_to_scope.sort_by_key(|&k| order.rank(f.scope()[k]));
                let vars: Vec<usize> = rank_to_scope.iter().map(|&k| f.scope()[k]).collect();
                let cards = vars.iter().map(|&v| model.cards()[v]).collect();
                for (rpos, &k) in rank_to_scope.iter().enumerate() {
                    incidences[f.scope()[k]].push(Incidence {
                        clique: a,
                        pos: k,
                        rpos,
                    });
                }
                RankedClique {
                    theta: f.permuted(&rank_to_scope, model.cards()).table().to_vec(),
                    rank_to_scope,
                    vars,
                    cards,
                }
            })
            .collect();
        Ok(Self {
            model: model.clone(),
            graph,
            order: order.clone(),
            query: query.clone(),
            cliques,
            incidences,
        })
    }
}

/// Cost shifts, split weights and cached bound terms.
///
/// The state is cheap to clone: the model and its ranked cliques are shared.
#[derive(Debug, Clone)]
pub struct BoundState {
    pub(crate) decomp: Arc<Decomposition>,
    /// `shifts[α][pos]` is `δ_i^α` for the variable at scope position `pos`.
    pub(crate) shifts: Vec<Vec<Vec<f64>>>,
    pub(crate) weights: SplitWeights,
    pub(crate) singleton_terms: Vec<f64>,
    pub(crate) clique_terms: Vec<f64>,
}

impl BoundState {
    /// Zero shifts with weights initialized by [`SplitWeights::wmb`].
    pub fn new(model: &DiscreteModel, order: &EliminationOrder, query: &InferenceQuery) -> Result<Self> {
        let graph = ModelGraph::build(model);
        let weights = SplitWeights::wmb(model, &graph, order, query);
        Self::with_weights(model, order, query, weights)
    }

    /// Zero shifts with the given weights, which must satisfy
    /// `w_i + Σ_α w_i^α = τ_i` for every variable.
    pub fn with_weights(
        model: &DiscreteModel,
        order: &EliminationOrder,
        query: &InferenceQuery,
        weights: SplitWeights,
    ) -> Result<Self> {
        let decomp = Arc::new(Decomposition::new(model, order, query)?);
        check_weights(&decomp, &weights)?;
        let shifts = model
            .factors()
            .iter()
            .map(|f| f.scope().iter().map(|&v| vec![0.0; model.cards()[v]]).collect())
            .collect();
        let mut state = Self {
            decomp,
            shifts,
            weights,
            singleton_terms: Vec::new(),
            clique_terms: Vec::new(),
        };
        state.refresh();
        Ok(state)
    }

    fn refresh(&mut self) {
        self.singleton_terms = (0..self.num_vars()).map(|i| self.singleton_term(i)).collect();
        self.clique_terms = (0..self.num_cliques()).map(|a| self.clique_term(a)).collect();
    }

    pub fn model(&self) -> &DiscreteModel {
        &self.decomp.model
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.decomp.graph
    }

    pub fn order(&self) -> &EliminationOrder {
        &self.decomp.order
    }

    pub fn query(&self) -> &InferenceQuery {
        &self.decomp.query
    }

    pub fn num_vars(&self) -> usize {
        self.decomp.model.num_vars()
    }

    pub fn num_cliques(&self) -> usize {
        self.decomp.cliques.len()
    }

    pub fn weights(&self) -> &SplitWeights {
        &self.weights
    }

    /// Cliques incident to `i`, ascending.
    pub fn neighborhood(&self, i: usize) -> &[usize] {
        self.decomp.graph.neighborhood(i)
    }

    pub fn census(&self) -> Census {
        parameter_census(&self.decomp.model, &self.decomp.graph)
    }

    fn incidence(&self, i: usize, alpha: usize) -> Result<Incidence> {
        self.decomp.incidences[i]
            .iter()
            .copied()
            .find(|inc| inc.clique == alpha)
            .ok_or_else(|| Error::InvalidShift(format!("variable {i} is not in factor {alpha}")))
    }

    /// `δ_i^α`.
    pub fn shift(&self, i: usize, alpha: usize) -> Result<&[f64]> {
        let inc = self.incidence(i, alpha)?;
        Ok(&self.shifts[alpha][inc.pos])
    }

    /// `Σ_{α∈N_i} δ_i^α`, zero for a variable in no clique.
    pub fn shift_sum(&self, i: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.decomp.model.cards()[i]];
        for inc in &self.decomp.incidences[i] {
            for (t, d) in s.iter_mut().zip(&self.shifts[inc.clique][inc.pos]) {
                *t += d;
            }
        }
        s
    }

    /// `w_i^α`.
    pub fn clique_weight(&self, i: usize, alpha: usize) -> Result<f64> {
        let inc = self.incidence(i, alpha)?;
        Ok(self.weights.clique[alpha][inc.pos])
    }

    /// Replaces `δ_i^α` and refreshes the affected cached terms.
    pub fn set_shift(&mut self, i: usize, alpha: usize, values: &[f64]) -> Result<()> {
        let inc = self.incidence(i, alpha)?;
        let dst = &mut self.shifts[alpha][inc.pos];
        if values.len() != dst.len() {
            return Err(Error::InvalidShift(format!(
                "shift of length {} for a variable with {} states",
                values.len(),
                dst.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidShift("shift entries must be finite".into()));
        }
        dst.copy_from_slice(values);
        self.singleton_terms[i] = self.singleton_term(i);
        self.clique_terms[alpha] = self.clique_term(alpha);
        Ok(())
    }

    /// Replaces all weights; they must satisfy the simplex constraint.
    pub fn set_weights(&mut self, weights: SplitWeights) -> Result<()> {
        check_weights(&self.decomp, &weights)?;
        self.weights = weights;
        self.refresh();
        Ok(())
    }

    /// The cached bound value `L(δ, w)`.
    pub fn value(&self) -> f64 {
        compensated_sum(self.singleton_terms.iter().chain(&self.clique_terms).copied())
    }

    /// Recomputes `L(δ, w)` from scratch without touching the cache.
    pub fn evaluate(&self) -> f64 {
        compensated_sum(
            (0..self.num_vars())
                .map(|i| self.singleton_term(i))
                .chain((0..self.num_cliques()).map(|a| self.clique_term(a))),
        )
    }

    /// `log ⊕^{w_i} exp[Σ_α δ_i^α]`.
    pub fn singleton_term(&self, i: usize) -> f64 {
        let s = self.shift_sum(i);
        power_sum_strided(&s, 0, 1, s.len(), self.weights.singleton[i])
    }

    /// The power sum of the reparameterized clique table.
    pub fn clique_term(&self, alpha: usize) -> f64 {
        let (table, ws) = self.ranked_clique(alpha);
        eliminate_value(&table, &ws).expect("ranked table matches its scope")
    }

    /// Reparameterized table and weighted scope of a clique, in rank order.
    pub(crate) fn ranked_clique(&self, alpha: usize) -> (Vec<f64>, WeightedScope) {
        let c = &self.decomp.cliques[alpha];
        let mut table = c.theta.clone();
        let shifts: Vec<&[f64]> = c.rank_to_scope.iter().map(|&k| &self.shifts[alpha][k][..]).collect();
        subtract_axis_shifts(&mut table, &c.cards, &shifts);
        (table, self.ranked_scope(alpha))
    }

    pub(crate) fn ranked_scope(&self, alpha: usize) -> WeightedScope {
        let c = &self.decomp.cliques[alpha];
        let weights = c.rank_to_scope.iter().map(|&k| self.weights.clique[alpha][k]).collect();
        WeightedScope::new(c.vars.clone(), c.cards.clone(), weights).expect("valid weights")
    }

    /// Singleton belief `μ_i`: softmax of the shift sum at temperature `w_i`,
    /// or uniform over its argmax set when `w_i = 0`.
    pub fn singleton_belief(&self, i: usize) -> Vec<f64> {
        singleton_belief(&self.shift_sum(i), self.weights.singleton[i])
    }

    /// Belief `μ_α` of a clique, over its scope in elimination order.
    pub fn clique_belief(&self, alpha: usize) -> CliqueBelief {
        let (table, ws) = self.ranked_clique(alpha);
        let (_, partials) = eliminate(&table, &ws).expect("ranked table matches its scope");
        clique_belief(&partials, &ws)
    }

    /// Variables of a clique in elimination order, matching the axes of
    /// [`BoundState::clique_belief`].
    pub fn ranked_vars(&self, alpha: usize) -> &[usize] {
        &self.decomp.cliques[alpha].vars
    }

    /// Marginal of `μ_α` on variable `i`.
    pub fn clique_marginal(&self, i: usize, alpha: usize) -> Result<Vec<f64>> {
        let inc = self.incidence(i, alpha)?;
        Ok(self.clique_belief(alpha).marginal(inc.rpos))
    }

    /// `∂L/∂δ_i^α = μ_i − Σ_{x_{α∖i}} μ_α`, one entry per incident clique in
    /// ascending clique order.
    pub fn delta_gradient(&self, i: usize) -> Vec<(usize, Vec<f64>)> {
        let mu = self.singleton_belief(i);
        self.decomp.incidences[i]
            .iter()
            .map(|inc| {
                let m = self.clique_belief(inc.clique).marginal(inc.rpos);
                (inc.clique, mu.iter().zip(&m).map(|(a, b)| a - b).collect())
            })
            .collect()
    }

    /// Entropies that form the weight gradient at node `i`.
    pub fn weight_gradient(&self, i: usize) -> WeightGradient {
        let singleton = entropy(&self.singleton_belief(i));
        let cliques = self.decomp.incidences[i]
            .iter()
            .map(|inc| (inc.clique, self.clique_belief(inc.clique).conditional_entropy(inc.rpos)))
            .collect();
        WeightGradient { singleton, cliques }
    }

    /// `H̄_i = (w_i H_i + Σ_α w_i^α H_{i|·}) / τ_i`, or `None` when `τ_i = 0`.
    pub fn average_entropy(&self, i: usize) -> Option<f64> {
        let tau = self.query().tau()[i];
        if tau <= 0.0 {
            return None;
        }
        let g = self.weight_gradient(i);
        let mut acc = self.weights.singleton[i] * g.singleton;
        for (a, h) in &g.cliques {
            acc += self.clique_weight(i, *a).expect("incident") * h;
        }
        Some(acc / tau)
    }

    /// A serializable snapshot of shifts, weights and value.
    pub fn dump(&self) -> StateDump {
        StateDump {
            shifts: self.shifts.clone(),
            weights: self.weights.clone(),
            bound: self.value(),
        }
    }
}

/// Gradient of `L` with respect to the weights of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGradient {
    /// `∂L/∂w_i = H(x_i; μ_i)`.
    pub singleton: f64,
    /// `∂L/∂w_i^α = H(x_i | x_{later}; μ_α)` per incident clique.
    pub cliques: Vec<(usize, f64)>,
}

/// Serialized form of a [`BoundState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDump {
    pub shifts: Vec<Vec<Vec<f64>>>,
    pub weights: SplitWeights,
    pub bound: f64,
}

/// `L(δ, w)` of a state, recomputed from scratch.
pub fn evaluate_bound(state: &BoundState) -> f64 {
    state.evaluate()
}

fn check_weights(d: &Decomposition, w: &SplitWeights) -> Result<()> {
    let n = d.model.num_vars();
    if w.singleton.len() != n || w.clique.len() != d.cliques.len() {
        return Err(Error::Dimension("weights do not match the model".into()));
    }
    for (f, cw) in d.model.factors().iter().zip(&w.clique) {
        if cw.len() != f.arity() {
            return Err(Error::Dimension("clique weights do not match factor arity".into()));
        }
    }
    let all = w.singleton.iter().chain(w.clique.iter().flatten());
    if let Some(v) = all.clone().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!("weight {v} is not a finite nonnegative number")));
    }
    for i in 0..n {
        let total = w.total(&d.model, &d.graph, i);
        let tau = d.query.tau()[i];
        if (total - tau).abs() > SIMPLEX_TOL * tau.max(1.0) {
            return Err(Error::Domain(format!(
                "weights of variable {i} sum to {total}, expected {tau}"
            )));
        }
    }
    Ok(())
}

/// Neumaier-compensated sum in iteration order.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    if sum.is_finite() {
        sum + comp
    } else {
        sum
    }
}
