//! Block coordinate descent on the decomposed bound.
//!
//! Each block is a variable `i` together with everything the bound keeps for
//! it: the shifts `δ_i^α` and weights `w_i^α` of its incident cliques and its
//! singleton weight `w_i`. A sweep visits all blocks color class by color
//! class; two variables of the same class share no clique, so their blocks
//! touch disjoint parts of the state and can be computed concurrently.
//!
//! Maximized variables (`τ_i = 0`) take a closed-form update that makes the
//! shifted max-marginals of all incident cliques agree. Summed variables take
//! a few gradient steps on the shifts and exponentiated-gradient steps on the
//! weights, each accepted by an Armijo backtracking search on the exact local
//! objective. Every committed block update leaves the bound no larger, and
//! the bound is valid at every iterate.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{compensated_sum, BoundState, Census};
use crate::decode::{decode_local, score_decoding, Score};
use crate::io::TraceRecord;
use crate::model::strides;
use crate::powersum::{
    clique_belief, eliminate, eliminate_all_but_position, eliminate_value, entropy,
    is_zero_weight, power_sum_strided, singleton_belief,
};
use crate::{DiscreteModel, EliminationOrder, Error, InferenceQuery, ModelGraph, Result};

/// Stand-in for `-inf` in cost shifts, which must stay finite.
pub const NEG_SENTINEL: f64 = -1e30;

/// Relative slack for roundoff when checking that a closed-form step did not
/// increase the local objective.
const ROUNDOFF_SLACK: f64 = 1e-12;

/// Squared step norm below which a block counts as stationary.
const STATIONARY: f64 = 1e-28;

/// Most doublings of an accepted weight step.
const MAX_EXPANSIONS: usize = 40;

/// How the split weights are initialized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightInit {
    /// Weighted mini-bucket style split; see [`crate::SplitWeights::wmb`].
    #[default]
    Wmb,
    /// Uniform split over the singleton and all incident cliques.
    Uniform,
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_sweeps: usize,
    /// Stop once a sweep changes the bound by at most `rel_tol · max(1, |L|)`.
    pub rel_tol: f64,
    /// Gradient steps per summed-variable block.
    pub inner_grad_steps: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
    /// Positive weights never drop below `weight_floor · τ_i`.
    pub weight_floor: f64,
    /// Compute the blocks of a color class concurrently.
    pub parallel: bool,
    pub weight_init: WeightInit,
    /// Decodings are scored exactly only when the max variables have at
    /// most this many joint states.
    pub score_limit: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 200,
            rel_tol: 1e-8,
            inner_grad_steps: 5,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 20,
            initial_step: 1.0,
            weight_floor: 1e-8,
            parallel: false,
            weight_init: WeightInit::Wmb,
            score_limit: 1 << 20,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Domain(format!("optimizer setting {what}")));
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol must be nonnegative");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if !(self.weight_floor >= 0.0 && self.weight_floor < 1.0) {
            return bad("weight_floor must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Greedy coloring of the variable adjacency graph in index order. Each
/// class is an independent set, listed in ascending order.
pub fn color_schedule(graph: &ModelGraph) -> Vec<Vec<usize>> {
    let n = graph.num_vars();
    let mut color = vec![usize::MAX; n];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let used: Vec<usize> = graph
            .neighbors(i)
            .iter()
            .map(|&j| color[j])
            .filter(|&c| c != usize::MAX)
            .collect();
        let c = (0..).find(|c| !used.contains(c)).expect("unbounded range");
        color[i] = c;
        if c == classes.len() {
            classes.push(Vec::new());
        }
        classes[c].push(i);
    }
    classes
}

/// Which rule produced a block update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Closed-form update of a maximized variable.
    ClosedForm,
    /// Gradient steps on a summed variable.
    Gradient,
    /// The block was left unchanged.
    Unchanged,
}

/// New values for one block, computed from a state snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockUpdate {
    pub node: usize,
    pub kind: BlockKind,
    /// New `δ_i^α` per incident clique, ascending by clique.
    pub shifts: Vec<(usize, Vec<f64>)>,
    pub singleton_weight: f64,
    /// New `w_i^α` per incident clique, ascending by clique.
    pub clique_weights: Vec<(usize, f64)>,
    pub line_search_failed: bool,
    /// Local objective before and after.
    pub local_before: f64,
    pub local_after: f64,
    singleton_term: f64,
    clique_terms: Vec<f64>,
}

impl BoundState {
    /// Commits a block update computed from this state (or from a snapshot
    /// that differs only outside the block's footprint).
    pub fn apply(&mut self, upd: &BlockUpdate) {
        let i = upd.node;
        for (k, inc) in self.decomp.incidences[i].iter().enumerate() {
            self.shifts[inc.clique][inc.pos].copy_from_slice(&upd.shifts[k].1);
            self.weights.clique[inc.clique][inc.pos] = upd.clique_weights[k].1;
            self.clique_terms[inc.clique] = upd.clique_terms[k];
        }
        self.weights.singleton[i] = upd.singleton_weight;
        self.singleton_terms[i] = upd.singleton_term;
    }
}

/// One incident clique of a block, with every shift except the block's own
/// already subtracted.
struct LocalClique {
    base: Vec<f64>,
    cards: Vec<usize>,
    weights: Vec<f64>,
    rpos: usize,
    stride: usize,
}

impl LocalClique {
    fn table(&self, delta: &[f64]) -> Vec<f64> {
        let d = self.cards[self.rpos];
        self.base
            .iter()
            .enumerate()
            .map(|(x, v)| v - delta[(x / self.stride) % d])
            .collect()
    }

    fn weights_with(&self, w: f64) -> Vec<f64> {
        let mut ws = self.weights.clone();
        ws[self.rpos] = w;
        ws
    }

    fn term(&self, delta: &[f64], w: f64) -> f64 {
        let ws = self.weights_with(w);
        let table = self.table(delta);
        crate::powersum::WeightedScope::from_cards(self.cards.clone(), ws)
            .and_then(|s| eliminate_value(&table, &s))
            .expect("local clique is consistent")
    }

    /// Marginal on the block variable and its conditional entropy.
    fn belief(&self, delta: &[f64], w: f64) -> (Vec<f64>, f64) {
        let ws = crate::powersum::WeightedScope::from_cards(self.cards.clone(), self.weights_with(w))
            .expect("local clique is consistent");
        let table = self.table(delta);
        let (_, partials) = eliminate(&table, &ws).expect("local clique is consistent");
        let b = clique_belief(&partials, &ws);
        (b.marginal(self.rpos), b.conditional_entropy(self.rpos))
    }

    fn gamma(&self) -> Vec<f64> {
        eliminate_all_but_position(&self.base, &self.cards, &self.weights, self.rpos)
            .into_iter()
            .map(|g| g.max(NEG_SENTINEL))
            .collect()
    }

    /// True when the block variable and every later variable of the clique
    /// are maximized, so the clique term is `max_x [γ(x) − δ(x)]`.
    fn separable(&self) -> bool {
        self.weights[self.rpos..].iter().all(|&w| is_zero_weight(w))
    }
}

struct Block {
    node: usize,
    tau: f64,
    locals: Vec<LocalClique>,
    cliques: Vec<usize>,
}

#[derive(Clone)]
struct Point {
    deltas: Vec<Vec<f64>>,
    singleton_weight: f64,
    clique_weights: Vec<f64>,
}

struct Eval {
    total: f64,
    singleton: f64,
    cliques: Vec<f64>,
}

impl Block {
    fn new(state: &BoundState, i: usize) -> Self {
        let incs = &state.decomp.incidences[i];
        let locals = incs
            .iter()
            .map(|inc| {
                let c = &state.decomp.cliques[inc.clique];
                let mut base = c.theta.clone();
                let zero = vec![0.0; c.cards[inc.rpos]];
                let shifts: Vec<&[f64]> = c
                    .rank_to_scope
                    .iter()
                    .map(|&k| {
                        if k == inc.pos {
                            &zero[..]
                        } else {
                            &state.shifts[inc.clique][k][..]
                        }
                    })
                    .collect();
                crate::model::subtract_axis_shifts(&mut base, &c.cards, &shifts);
                LocalClique {
                    base,
                    cards: c.cards.clone(),
                    weights: state.ranked_scope(inc.clique).weights().to_vec(),
                    rpos: inc.rpos,
                    stride: strides(&c.cards)[inc.rpos],
                }
            })
            .collect();
        Self {
            node: i,
            tau: state.query().tau()[i],
            locals,
            cliques: incs.iter().map(|inc| inc.clique).collect(),
        }
    }

    fn point(state: &BoundState, i: usize) -> Point {
        let incs = &state.decomp.incidences[i];
        Point {
            deltas: incs.iter().map(|inc| state.shifts[inc.clique][inc.pos].clone()).collect(),
            singleton_weight: state.weights.singleton[i],
            clique_weights: incs.iter().map(|inc| state.weights.clique[inc.clique][inc.pos]).collect(),
        }
    }

    fn eval(&self, p: &Point, card: usize) -> Eval {
        let s = shift_sum(&p.deltas, card);
        let singleton = power_sum_strided(&s, 0, 1, card, p.singleton_weight);
        let cliques: Vec<f64> = self
            .locals
            .iter()
            .zip(&p.deltas)
            .zip(&p.clique_weights)
            .map(|((l, d), &w)| l.term(d, w))
            .collect();
        let total = compensated_sum(std::iter::once(singleton).chain(cliques.iter().copied()));
        Eval {
            total,
            singleton,
            cliques,
        }
    }

    fn finish(&self, kind: BlockKind, p: Point, e: Eval, before: f64, failed: bool) -> BlockUpdate {
        BlockUpdate {
            node: self.node,
            kind,
            shifts: self.cliques.iter().copied().zip(p.deltas).collect(),
            singleton_weight: p.singleton_weight,
            clique_weights: self.cliques.iter().copied().zip(p.clique_weights).collect(),
            line_search_failed: failed,
            local_before: before,
            local_after: e.total,
            singleton_term: e.singleton,
            clique_terms: e.cliques,
        }
    }
}

fn shift_sum(deltas: &[Vec<f64>], card: usize) -> Vec<f64> {
    let mut s = vec![0.0; card];
    for d in deltas {
        for (t, v) in s.iter_mut().zip(d) {
            *t += v;
        }
    }
    s
}

fn not_worse(after: f64, before: f64) -> bool {
    after <= before + ROUNDOFF_SLACK * before.abs().max(1.0)
}

/// Update for block `i`, chosen by whether the variable is maximized or
/// summed. The state is only read.
pub fn block_update(state: &BoundState, i: usize, config: &OptimizerConfig) -> BlockUpdate {
    if state.query().is_sum(i) {
        sum_node_block_step(state, i, config)
    } else {
        closed_form_block_update(state, i)
    }
}

/// The closed-form update of a maximized variable:
///
/// ```text
/// δ_i^α ← |N_i|/(|N_i|+1) γ_i^α − 1/(|N_i|+1) Σ_{β≠α} γ_i^β
/// ```
///
/// where `γ_i^α` is the clique's power sum over everything except `x_i`
/// with `δ_i^α` removed. Afterwards `γ_i^α − δ_i^α` equals `Σ_β δ_i^β` for
/// every incident clique. If roundoff or a non sum-first order makes the
/// step increase the local objective, the block is left unchanged.
pub fn closed_form_block_update(state: &BoundState, i: usize) -> BlockUpdate {
    let block = Block::new(state, i);
    let card = state.model().cards()[i];
    let start = Block::point(state, i);
    let e0 = block.eval(&start, card);
    let before = e0.total;
    let n = block.locals.len();
    if n == 0 {
        return block.finish(BlockKind::Unchanged, start, e0, before, false);
    }
    let gammas: Vec<Vec<f64>> = block.locals.iter().map(LocalClique::gamma).collect();
    let total = shift_sum(&gammas, card);
    let nf = n as f64;
    let mut p = start.clone();
    for (d, g) in p.deltas.iter_mut().zip(&gammas) {
        for x in 0..card {
            let others = total[x] - g[x];
            d[x] = (nf * g[x] - others) / (nf + 1.0);
        }
    }
    let e = block.eval(&p, card);
    if not_worse(e.total, before) {
        block.finish(BlockKind::ClosedForm, p, e, before, false)
    } else {
        block.finish(BlockKind::Unchanged, start, e0, before, false)
    }
}

/// Update of a summed variable.
///
/// Incident cliques in which this and every later variable are maximized
/// take their exact minimizer `δ_i^α ← γ_i^α`. When the singleton weight is
/// zero, the slack of the singleton maximum is then pushed into the
/// remaining cliques. Finally up to `inner_grad_steps` joint steps are taken
/// on the remaining shifts (negative gradient, projected to keep the shift
/// sum fixed when the singleton weight is zero) and on the positive weights
/// (exponentiated gradient), each accepted by Armijo backtracking.
pub fn sum_node_block_step(state: &BoundState, i: usize, config: &OptimizerConfig) -> BlockUpdate {
    let block = Block::new(state, i);
    let card = state.model().cards()[i];
    let start = Block::point(state, i);
    let e0 = block.eval(&start, card);
    let before = e0.total;

    let separable: Vec<bool> = block
        .locals
        .iter()
        .zip(&start.clique_weights)
        .map(|(l, &w)| is_zero_weight(w) && l.separable())
        .collect();
    let free: Vec<usize> = (0..block.locals.len()).filter(|&k| !separable[k]).collect();
    let singleton_free = !is_zero_weight(start.singleton_weight);

    let mut p = start.clone();
    for (k, l) in block.locals.iter().enumerate() {
        if separable[k] {
            p.deltas[k] = l.gamma();
        }
    }
    if !singleton_free && !free.is_empty() {
        let s = shift_sum(&p.deltas, card);
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let share = free.len() as f64;
        for &k in &free {
            for x in 0..card {
                p.deltas[k][x] += (m - s[x]) / share;
            }
        }
    }
    let mut e = block.eval(&p, card);
    let mut kind = BlockKind::Gradient;
    if !not_worse(e.total, before) {
        p = start;
        e = e0;
        kind = BlockKind::Unchanged;
    }

    let interior = singleton_free && !free.is_empty() && free.iter().all(|&k| !is_zero_weight(p.clique_weights[k]));
    let mut failed = false;
    let mut moved = false;
    for _ in 0..config.inner_grad_steps {
        let s = shift_sum(&p.deltas, card);
        let mu = singleton_belief(&s, p.singleton_weight);
        let beliefs: Vec<(Vec<f64>, f64)> = free
            .iter()
            .map(|&k| block.locals[k].belief(&p.deltas[k], p.clique_weights[k]))
            .collect();

        let mut dir: Vec<Vec<f64>> = beliefs
            .iter()
            .map(|(m, _)| m.iter().zip(&mu).map(|(a, b)| a - b).collect())
            .collect();
        if !singleton_free && !dir.is_empty() {
            let share = dir.len() as f64;
            let mean: Vec<f64> = (0..card)
                .map(|x| beliefs.iter().map(|(m, _)| m[x]).sum::<f64>() / share)
                .collect();
            for (d, (m, _)) in dir.iter_mut().zip(&beliefs) {
                for x in 0..card {
                    d[x] = m[x] - mean[x];
                }
            }
        }

        // positive weights and their entropies; index free.len() is the singleton
        let mut pos: Vec<(usize, f64, f64)> = free
            .iter()
            .enumerate()
            .filter(|(_, &k)| !is_zero_weight(p.clique_weights[k]))
            .map(|(j, &k)| (j, p.clique_weights[k], beliefs[j].1))
            .collect();
        if singleton_free {
            pos.push((free.len(), p.singleton_weight, entropy(&mu)));
        }
        let hbar = pos.iter().map(|&(_, w, h)| w * h).sum::<f64>() / block.tau;
        let gv: Vec<f64> = pos.iter().map(|&(_, w, h)| w * (h - hbar)).collect();

        let sq = dir.iter().flatten().map(|v| v * v).sum::<f64>() + gv.iter().map(|v| v * v).sum::<f64>();
        if !(sq > STATIONARY) {
            break;
        }
        if interior {
            // smooth case: a moment-matching step on the shifts, then a
            // weight-only step whose length may grow
            let mut progress = false;
            if let Some((trial, et)) = matching_step(&block, &p, &e, &free, &beliefs, &dir, card, config) {
                p = trial;
                e = et;
                progress = true;
            }
            if let Some((trial, et)) = weight_step(&block, &p, &e, &free, card, config) {
                p = trial;
                e = et;
                progress = true;
            }
            if progress {
                moved = true;
                continue;
            }
        }
        let mut eta = config.initial_step;
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let mut trial = p.clone();
            for (&k, d) in free.iter().zip(&dir) {
                for x in 0..card {
                    trial.deltas[k][x] += eta * d[x];
                }
            }
            let old: Vec<f64> = pos.iter().map(|&(_, w, _)| w).collect();
            let new = exp_weight_step(&old, &gv, eta, block.tau, config.weight_floor);
            for (&(j, _, _), w) in pos.iter().zip(new) {
                if j == free.len() {
                    trial.singleton_weight = w;
                } else {
                    trial.clique_weights[free[j]] = w;
                }
            }
            let et = block.eval(&trial, card);
            if et.total <= e.total - config.armijo_c * eta * sq {
                accepted = Some((trial, et));
                break;
            }
            eta *= config.backtrack_factor;
        }
        match accepted {
            Some((trial, et)) => {
                p = trial;
                e = et;
                moved = true;
            }
            None => {
                failed = true;
                break;
            }
        }
    }
    if moved {
        kind = BlockKind::Gradient;
    }
    block.finish(kind, p, e, before, failed)
}

/// Shift step towards the point where every clique marginal and the
/// singleton belief agree, treating each clique's log marginal as affine in
/// its own shift with slope `−1/w`. This is exact when the variable comes last
/// in all of its cliques. Accepted by Armijo backtracking along the step;
/// `None` if the step is not a descent direction or every trial fails.
#[allow(clippy::too_many_arguments)]
fn matching_step(
    block: &Block,
    p: &Point,
    e: &Eval,
    free: &[usize],
    beliefs: &[(Vec<f64>, f64)],
    grad_dir: &[Vec<f64>],
    card: usize,
    config: &OptimizerConfig,
) -> Option<(Point, Eval)> {
    let total_weight = p.singleton_weight + free.iter().map(|&k| p.clique_weights[k]).sum::<f64>();
    let mut anchor = shift_sum(&p.deltas, card);
    let mut targets = Vec::with_capacity(free.len());
    for (&k, (m, _)) in free.iter().zip(beliefs) {
        let w = p.clique_weights[k];
        let g: Vec<f64> = (0..card).map(|x| p.deltas[k][x] + w * m[x].max(f64::MIN_POSITIVE).ln()).collect();
        for x in 0..card {
            anchor[x] += g[x] - p.deltas[k][x];
        }
        targets.push(g);
    }
    let log_q: Vec<f64> = anchor.iter().map(|a| a / total_weight).collect();
    let step: Vec<Vec<f64>> = free
        .iter()
        .zip(&targets)
        .map(|(&k, g)| (0..card).map(|x| g[x] - p.clique_weights[k] * log_q[x] - p.deltas[k][x]).collect())
        .collect();
    // directional derivative; grad_dir holds the negative gradient
    let slope: f64 = -step.iter().flatten().zip(grad_dir.iter().flatten()).map(|(a, b)| a * b).sum::<f64>();
    if !(slope < 0.0) || step.iter().flatten().any(|v| !v.is_finite()) {
        return None;
    }
    let mut eta = 1.0;
    for _ in 0..=config.max_backtracks {
        let mut trial = p.clone();
        for (&k, d) in free.iter().zip(&step) {
            for x in 0..card {
                trial.deltas[k][x] += eta * d[x];
            }
        }
        let et = block.eval(&trial, card);
        if et.total <= e.total + config.armijo_c * eta * slope {
            return Some((trial, et));
        }
        eta *= config.backtrack_factor;
    }
    None
}

/// Weight-only exponentiated step with Armijo acceptance. After an accepted
/// first trial the step keeps doubling while the objective keeps improving,
/// so weights heading for the floor get there in few steps.
fn weight_step(block: &Block, p: &Point, e: &Eval, free: &[usize], card: usize, config: &OptimizerConfig) -> Option<(Point, Eval)> {
    let s = shift_sum(&p.deltas, card);
    let mu = singleton_belief(&s, p.singleton_weight);
    let mut w: Vec<f64> = free.iter().map(|&k| p.clique_weights[k]).collect();
    let mut h: Vec<f64> = free
        .iter()
        .map(|&k| block.locals[k].belief(&p.deltas[k], p.clique_weights[k]).1)
        .collect();
    w.push(p.singleton_weight);
    h.push(entropy(&mu));
    let hbar = w.iter().zip(&h).map(|(w, h)| w * h).sum::<f64>() / block.tau;
    let g: Vec<f64> = w.iter().zip(&h).map(|(w, h)| w * (h - hbar)).collect();
    let sq: f64 = g.iter().map(|v| v * v).sum();
    if !(sq > STATIONARY) {
        return None;
    }
    let trial_at = |eta: f64| {
        let new = exp_weight_step(&w, &g, eta, block.tau, config.weight_floor);
        let mut trial = p.clone();
        for (j, &k) in free.iter().enumerate() {
            trial.clique_weights[k] = new[j];
        }
        trial.singleton_weight = new[free.len()];
        let et = block.eval(&trial, card);
        (trial, et)
    };
    let armijo = |eta: f64, et: &Eval| et.total <= e.total - config.armijo_c * eta * sq;
    let mut eta = config.initial_step;
    for _ in 0..=config.max_backtracks {
        let (trial, et) = trial_at(eta);
        if armijo(eta, &et) {
            let mut best = (trial, et);
            for _ in 0..MAX_EXPANSIONS {
                let (t2, e2) = trial_at(2.0 * eta);
                if !(armijo(2.0 * eta, &e2) && e2.total < best.1.total) {
                    break;
                }
                eta *= 2.0;
                best = (t2, e2);
            }
            return Some(best);
        }
        eta *= config.backtrack_factor;
    }
    None
}

/// Exponentiated-gradient step in the softmax parameterization: with
/// `g_k = w_k (H_k − H̄)`, returns `w_k ∝ w_k exp(−η g_k)` rescaled to sum to
/// `tau`. Entries below `floor · tau` are raised to it and the result is
/// rescaled again.
fn exp_weight_step(w: &[f64], g: &[f64], eta: f64, tau: f64, floor: f64) -> Vec<f64> {
    if w.is_empty() {
        return Vec::new();
    }
    let logs: Vec<f64> = w.iter().zip(g).map(|(w, g)| w.ln() - eta * g).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let u: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = u.iter().sum();
    let mut out: Vec<f64> = u.iter().map(|v| tau * v / z).collect();
    let low = floor * tau;
    if out.iter().any(|&v| v < low) {
        // pin the small entries to the floor and rescale the rest into the
        // remaining mass
        let pinned = out.iter().filter(|&&v| v < low).count() as f64;
        let rest: f64 = out.iter().filter(|&&v| v >= low).sum();
        let scale = (tau - pinned * low) / rest;
        out.iter_mut().for_each(|v| *v = if *v < low { low } else { *v * scale });
    }
    out
}

/// Multiplicative weight update `w_k ∝ w_k exp[−η w_k (H_k − H̄)]` with
/// `H̄ = Σ_k w_k H_k / τ`, renormalized to sum to `τ`.
///
/// Zero weights stay zero. Positive weights are kept at or above
/// `floor · τ`.
pub fn exp_weight_update(weights: &[f64], entropies: &[f64], tau: f64, eta: f64, floor: f64) -> Result<Vec<f64>> {
    if weights.len() != entropies.len() {
        return Err(Error::Dimension(format!(
            "{} weights and {} entropies",
            weights.len(),
            entropies.len()
        )));
    }
    if !(tau > 0.0) || !(eta >= 0.0) {
        return Err(Error::Domain("weight update needs tau > 0 and eta >= 0".into()));
    }
    let hbar = weights.iter().zip(entropies).map(|(w, h)| w * h).sum::<f64>() / tau;
    let active: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
    let w: Vec<f64> = active.iter().map(|&k| weights[k]).collect();
    let g: Vec<f64> = active.iter().map(|&k| weights[k] * (entropies[k] - hbar)).collect();
    let new = exp_weight_step(&w, &g, eta, tau, floor);
    let mut out = vec![0.0; weights.len()];
    for (&k, v) in active.iter().zip(new) {
        out[k] = v;
    }
    Ok(out)
}

/// Outcome of one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub line_search_failures: usize,
}

/// Visits every block once, color class by color class.
///
/// With `parallel` set, the updates of a class are computed concurrently
/// from the same snapshot and committed in ascending node order; the result
/// is bitwise identical to the sequential schedule.
pub fn sweep(state: &mut BoundState, colors: &[Vec<usize>], config: &OptimizerConfig) -> SweepStats {
    let mut stats = SweepStats::default();
    for class in colors {
        if config.parallel && class.len() > 1 {
            let snapshot = &*state;
            let updates: Vec<BlockUpdate> = class
                .par_iter()
                .map(|&i| block_update(snapshot, i, config))
                .collect();
            for u in &updates {
                stats.line_search_failures += u.line_search_failed as usize;
                state.apply(u);
            }
        } else {
            for &i in class {
                let u = block_update(state, i, config);
                stats.line_search_failures += u.line_search_failed as usize;
                state.apply(&u);
            }
        }
    }
    stats
}

/// A decoded assignment of the max variables with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub iteration: usize,
    pub config: Vec<usize>,
    pub score: Score,
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: BoundState,
    /// Record 0 is the initial state; record `t` follows sweep `t`.
    pub trace: Vec<TraceRecord>,
    /// Best evaluated decoding seen so far, earliest on ties.
    pub best: Option<Decoding>,
    pub sweeps: usize,
    pub converged: bool,
    pub census: Census,
}

impl RunOutput {
    pub fn bound(&self) -> f64 {
        self.state.value()
    }
}

/// Builds the initial state for a model and query: sum-first weighted
/// min-fill order, zero shifts and weights as selected by the config.
pub fn initial_state(model: &DiscreteModel, query: &InferenceQuery, config: &OptimizerConfig) -> Result<BoundState> {
    if query.len() != model.num_vars() {
        return Err(Error::Query(format!(
            "query over {} variables for a model with {}",
            query.len(),
            model.num_vars()
        )));
    }
    let graph = ModelGraph::build(model);
    let order = EliminationOrder::constrained_min_fill(model, &graph, query);
    let weights = match config.weight_init {
        WeightInit::Wmb => crate::SplitWeights::wmb(model, &graph, &order, query),
        WeightInit::Uniform => crate::SplitWeights::uniform(model, &graph, query),
    };
    BoundState::with_weights(model, &order, query, weights)
}

/// Runs the optimizer from the initial state of [`initial_state`].
pub fn run(model: &DiscreteModel, query: &InferenceQuery, config: &OptimizerConfig) -> Result<RunOutput> {
    config.validate()?;
    let state = initial_state(model, query, config)?;
    run_from(state, config)
}

/// Runs the optimizer from a given state.
///
/// Stops after `max_sweeps`, when a sweep changes the bound by at most
/// `rel_tol · max(1, |L|)`, or when the bound is not finite. A sweep whose
/// total comes out higher through roundoff is discarded, so the recorded
/// bounds never increase.
pub fn run_from(mut state: BoundState, config: &OptimizerConfig) -> Result<RunOutput> {
    config.validate()?;
    let start = Instant::now();
    let colors = color_schedule(state.graph());
    let mut trace = Vec::new();
    let mut best: Option<Decoding> = None;
    let mut last: Option<(Vec<usize>, Score)> = None;

    let mut record = |state: &BoundState, iteration: usize, failures: usize, best: &mut Option<Decoding>| {
        let x = decode_local(state);
        let score = match &last {
            Some((prev, s)) if *prev == x => *s,
            _ => score_decoding(state.model(), state.query(), &x, config.score_limit),
        };
        if score.beats(best.as_ref().map(|b| b.score)) {
            *best = Some(Decoding {
                iteration,
                config: x.clone(),
                score,
            });
        }
        last = Some((x.clone(), score));
        TraceRecord {
            iteration,
            bound: state.value(),
            decoded_config: x,
            decoded_score: score,
            elapsed: start.elapsed().as_secs_f64(),
            line_search_failures: failures,
        }
    };

    trace.push(record(&state, 0, 0, &mut best));
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        let prev = state.value();
        let saved = state.clone();
        let stats = sweep(&mut state, &colors, config);
        sweeps += 1;
        let mut cur = state.value();
        if cur > prev {
            // every block is non-increasing, so this is roundoff in the
            // compensated total; keep the trace monotone
            state = saved;
            cur = prev;
        }
        trace.push(record(&state, sweeps, stats.line_search_failures, &mut best));
        if !cur.is_finite() || (prev - cur).abs() <= config.rel_tol * cur.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let census = state.census();
    Ok(RunOutput {
        state,
        trace,
        best,
        sweeps,
        converged,
        census,
    })
}
