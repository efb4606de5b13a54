//! Log-domain power sums.
//!
//! The power sum of a nonnegative function with weight `w` is
//! `[Σ_x f(x)^(1/w)]^w`. It is the ordinary sum at `w = 1` and tends to the
//! maximum as `w → 0`; weight zero is defined to be the maximum. In the log
//! domain, with `v = log f`, this is `w · logsumexp(v / w)`.
//!
//! A table over an ordered scope is eliminated one axis at a time, the first
//! axis first, each with its own weight. The intermediate tables are the
//! partial sums `Z_0 … Z_c`; they also define the clique belief through the
//! chain rule `μ(x_k | x_{k+1:c}) = (Z_{k-1} / Z_k)^(1/w_k)`.

use crate::model::strides;
use crate::{Error, Result};

/// Weights at or below this value are treated as exactly zero.
pub const ZERO_WEIGHT: f64 = 1e-12;

/// Log-domain tolerance for membership in an argmax set.
pub const ARGMAX_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn is_zero_weight(w: f64) -> bool {
    w <= ZERO_WEIGHT
}

/// `w · logsumexp(v / w)` for `w > 0`, `max(v)` for `w = 0`.
///
/// Entries may be `-inf`; an all `-inf` input yields `-inf`.
pub fn power_sum_scalar(logvals: &[f64], w: f64) -> Result<f64> {
    if logvals.is_empty() {
        return Err(Error::Domain("power sum over an empty set".into()));
    }
    if !(w >= 0.0) {
        return Err(Error::Domain(format!("power sum weight {w} is negative")));
    }
    Ok(power_sum_strided(logvals, 0, 1, logvals.len(), w))
}

/// Power sum over `data[start + k * stride]` for `k < count`.
#[inline]
pub(crate) fn power_sum_strided(data: &[f64], start: usize, stride: usize, count: usize, w: f64) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for k in 0..count {
        m = m.max(data[start + k * stride]);
    }
    if is_zero_weight(w) || m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for k in 0..count {
        s += ((data[start + k * stride] - m) / w).exp();
    }
    m + w * s.ln()
}

/// An ordered clique scope with one nonnegative weight per position. The
/// scope must be ordered consistently with the global elimination order,
/// earliest-eliminated first.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedScope {
    vars: Vec<usize>,
    cards: Vec<usize>,
    weights: Vec<f64>,
}

impl WeightedScope {
    pub fn new(vars: Vec<usize>, cards: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if vars.len() != cards.len() || vars.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "scope of {} variables with {} cardinalities and {} weights",
                vars.len(),
                cards.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Domain(format!("weight {w} is not a finite nonnegative number")));
        }
        if cards.contains(&0) {
            return Err(Error::Dimension("zero cardinality in scope".into()));
        }
        Ok(Self { vars, cards, weights })
    }

    /// A scope labelled `0..c` with the given cardinalities.
    pub fn from_cards(cards: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        Self::new((0..cards.len()).collect(), cards, weights)
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Number of table entries.
    pub fn size(&self) -> usize {
        self.cards.iter().product()
    }

    pub fn position(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }

    fn check_table(&self, table: &[f64]) -> Result<()> {
        if table.len() != self.size() {
            return Err(Error::Dimension(format!(
                "table has {} entries, scope {:?} with cardinalities {:?} needs {}",
                table.len(),
                self.vars,
                self.cards,
                self.size()
            )));
        }
        Ok(())
    }
}

/// Partial power sums `Z_0 … Z_c` of one elimination. `Z_k` is a log-domain
/// table over scope positions `k..c`; `Z_0` is the input and `Z_c` holds the
/// final value.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSums {
    tables: Vec<Vec<f64>>,
}

impl PartialSums {
    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    pub fn value(&self) -> f64 {
        self.tables.last().expect("at least the input table")[0]
    }
}

fn eliminate_axis(src: &[f64], card: usize, w: f64) -> Vec<f64> {
    let stride = src.len() / card;
    (0..stride)
        .map(|r| power_sum_strided(src, r, stride, card, w))
        .collect()
}

/// Eliminates every axis of `table` in scope order, keeping the partial sums.
pub fn eliminate(table: &[f64], ws: &WeightedScope) -> Result<(f64, PartialSums)> {
    ws.check_table(table)?;
    let mut tables = Vec::with_capacity(ws.len() + 1);
    tables.push(table.to_vec());
    for (k, (&d, &w)) in ws.cards.iter().zip(&ws.weights).enumerate() {
        let next = eliminate_axis(&tables[k], d, w);
        tables.push(next);
    }
    let sums = PartialSums { tables };
    Ok((sums.value(), sums))
}

/// Value of the elimination without retaining partial sums.
pub fn eliminate_value(table: &[f64], ws: &WeightedScope) -> Result<f64> {
    ws.check_table(table)?;
    Ok(eliminate_tail(table, &ws.cards, &ws.weights))
}

fn eliminate_tail(table: &[f64], cards: &[usize], weights: &[f64]) -> f64 {
    match cards.len() {
        0 => table[0],
        1 => power_sum_strided(table, 0, 1, cards[0], weights[0]),
        _ => {
            let mut cur = eliminate_axis(table, cards[0], weights[0]);
            for (&d, &w) in cards[1..].iter().zip(&weights[1..]) {
                cur = eliminate_axis(&cur, d, w);
            }
            cur[0]
        }
    }
}

/// For each state of `keep`, the power sum over all other scope variables,
/// in scope order with their own weights.
pub fn eliminate_all_but_one(table: &[f64], ws: &WeightedScope, keep: usize) -> Result<Vec<f64>> {
    ws.check_table(table)?;
    let pos = ws
        .position(keep)
        .ok_or_else(|| Error::Dimension(format!("variable {keep} is not in scope {:?}", ws.vars)))?;
    Ok(eliminate_all_but_position(table, &ws.cards, &ws.weights, pos))
}

pub(crate) fn eliminate_all_but_position(
    table: &[f64],
    cards: &[usize],
    weights: &[f64],
    pos: usize,
) -> Vec<f64> {
    // Axes before `pos` are outermost and go first; afterwards every state of
    // the kept axis owns a contiguous slice over the remaining axes.
    let reduced;
    let src = if pos > 0 {
        let mut cur = eliminate_axis(table, cards[0], weights[0]);
        for k in 1..pos {
            cur = eliminate_axis(&cur, cards[k], weights[k]);
        }
        reduced = cur;
        &reduced[..]
    } else {
        table
    };
    let d = cards[pos];
    let slice = src.len() / d;
    (0..d)
        .map(|s| {
            eliminate_tail(
                &src[s * slice..(s + 1) * slice],
                &cards[pos + 1..],
                &weights[pos + 1..],
            )
        })
        .collect()
}

/// Clique belief defined by the chain rule over the partial sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CliqueBelief {
    cards: Vec<usize>,
    suffix: Vec<usize>,
    log_conditionals: Vec<Vec<f64>>,
    joint: Vec<f64>,
}

impl CliqueBelief {
    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    /// The normalized joint `μ_α(x_α)`, row-major over the scope.
    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    /// `log μ_α(x_k | x_{k+1:c})` as a table over positions `k..c`, with the
    /// conditioned variable on the outermost axis.
    pub fn log_conditional(&self, k: usize) -> &[f64] {
        &self.log_conditionals[k]
    }

    pub fn conditional(&self, k: usize) -> Vec<f64> {
        self.log_conditionals[k].iter().map(|v| v.exp()).collect()
    }

    /// Marginal of the joint on scope position `pos`.
    pub fn marginal(&self, pos: usize) -> Vec<f64> {
        let inner = self.suffix[pos + 1];
        let d = self.cards[pos];
        let mut out = vec![0.0; d];
        for (x, p) in self.joint.iter().enumerate() {
            out[(x / inner) % d] += p;
        }
        out
    }

    /// `H(x_k | x_{k+1:c}; μ_α) = -Σ μ_α(x) log μ_α(x_k | x_{k+1:c})`.
    pub fn conditional_entropy(&self, k: usize) -> f64 {
        let modulus = self.suffix[k];
        let logc = &self.log_conditionals[k];
        let mut h = 0.0;
        for (x, &p) in self.joint.iter().enumerate() {
            if p > 0.0 {
                h -= p * logc[x % modulus];
            }
        }
        h.max(0.0)
    }
}

/// Chain-rule belief of an elimination. Zero-weight positions take the
/// uniform distribution over the argmax set of the previous partial sum.
pub fn clique_belief(partials: &PartialSums, ws: &WeightedScope) -> CliqueBelief {
    let c = ws.len();
    // suffix[k] is the number of entries of Z_k
    let inner = strides(&ws.cards);
    let suffix: Vec<usize> = (0..=c)
        .map(|k| if k == c { 1 } else { inner[k] * ws.cards[k] })
        .collect();
    let mut log_conditionals = Vec::with_capacity(c);
    for k in 0..c {
        let src = &partials.tables[k];
        let d = ws.cards[k];
        let stride = src.len() / d;
        let w = ws.weights[k];
        let mut out = vec![f64::NEG_INFINITY; src.len()];
        for r in 0..stride {
            conditional_slice(src, r, stride, d, w, &mut out);
        }
        log_conditionals.push(out);
    }
    let size = ws.size();
    let mut joint: Vec<f64> = (0..size)
        .map(|x| {
            log_conditionals
                .iter()
                .enumerate()
                .map(|(k, lc)| lc[x % suffix[k]])
                .sum::<f64>()
                .exp()
        })
        .collect();
    let total: f64 = joint.iter().sum();
    if total > 0.0 && total.is_finite() {
        joint.iter_mut().for_each(|p| *p /= total);
    } else {
        joint.iter_mut().for_each(|p| *p = 1.0 / size as f64);
    }
    CliqueBelief {
        cards: ws.cards.clone(),
        suffix,
        log_conditionals,
        joint,
    }
}

fn conditional_slice(src: &[f64], r: usize, stride: usize, d: usize, w: f64, out: &mut [f64]) {
    let m = (0..d).map(|x| src[x * stride + r]).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        let u = -(d as f64).ln();
        (0..d).for_each(|x| out[x * stride + r] = u);
        return;
    }
    if is_zero_weight(w) {
        let ties = (0..d).filter(|&x| src[x * stride + r] >= m - ARGMAX_TOL).count();
        let u = -(ties as f64).ln();
        for x in 0..d {
            out[x * stride + r] = if src[x * stride + r] >= m - ARGMAX_TOL {
                u
            } else {
                f64::NEG_INFINITY
            };
        }
        return;
    }
    let s: f64 = (0..d).map(|x| ((src[x * stride + r] - m) / w).exp()).sum();
    let ls = s.ln();
    for x in 0..d {
        out[x * stride + r] = (src[x * stride + r] - m) / w - ls;
    }
}

/// Conditional entropies of every scope position.
pub fn conditional_entropies(belief: &CliqueBelief) -> Vec<f64> {
    (0..belief.cards.len())
        .map(|k| belief.conditional_entropy(k))
        .collect()
}

/// Belief of a single power-sum term: softmax of `v / w` for `w > 0`,
/// uniform over the argmax set for `w = 0`.
pub fn singleton_belief(logvals: &[f64], w: f64) -> Vec<f64> {
    let d = logvals.len();
    let mut out = vec![0.0; d];
    conditional_slice(logvals, 0, 1, d, w, &mut out);
    out.iter().map(|v| v.exp()).collect()
}

/// Entropy of a distribution in nats with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum::<f64>()
        .max(0.0)
}
