//! Randomized property suites backed by the brute-force oracle.
//!
//! Each suite draws its instances from a seeded generator, so a failing
//! trial can be reproduced from the suite seed and the trial number.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::{self, finite_diff, DEFAULT_LIMIT};
use crate::solver::{self, WeightInit};
use crate::{
    BoundState, DiscreteModel, EliminationOrder, Error, Factor, InferenceQuery, ModelGraph,
    OptimizerConfig, Result, SplitWeights,
};

/// Tolerances shared with the test suites.
pub const BOUND_TOL: f64 = 1e-9;
pub const MONOTONE_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const GRADIENT_STEP: f64 = 1e-6;
pub const KKT_TOL: f64 = 1e-5;
pub const PARALLEL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Holder,
    Gradients,
    Monotone,
    Anytime,
    Kkt,
    Parallel,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Holder,
        Suite::Gradients,
        Suite::Monotone,
        Suite::Anytime,
        Suite::Kkt,
        Suite::Parallel,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Holder => "holder",
            Suite::Gradients => "gradients",
            Suite::Monotone => "monotone",
            Suite::Anytime => "anytime",
            Suite::Kkt => "kkt",
            Suite::Parallel => "parallel",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub trial: usize,
    pub detail: String,
}

/// Result of one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub trials: usize,
    pub passed: bool,
    /// What `metric` measures, e.g. the worst margin or error seen.
    pub metric_name: String,
    pub metric: f64,
    pub failures: Vec<Failure>,
}

/// Seed of trial `t` of a suite run with `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64)
}

/// A random connected pairwise model: a random spanning tree plus
/// `extra_edges` additional edges, a unary factor on some variables, and
/// log-potentials drawn from `[-scale, scale]`.
pub fn random_pairwise_model(
    rng: &mut impl Rng,
    n: usize,
    max_card: usize,
    extra_edges: usize,
    scale: f64,
) -> DiscreteModel {
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=max_card.max(2))).collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|j| (rng.gen_range(0..j), j)).collect();
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|e| !edges.contains(e))
        .collect();
    candidates.shuffle(rng);
    edges.extend(candidates.into_iter().take(extra_edges));
    let mut factors = Vec::new();
    for (a, b) in edges {
        let (a, b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        let table = (0..cards[a] * cards[b]).map(|_| rng.gen_range(-scale..scale)).collect();
        factors.push(Factor::new(vec![a, b], table).expect("valid pairwise factor"));
    }
    for i in 0..n {
        if rng.gen_bool(0.5) {
            let table = (0..cards[i]).map(|_| rng.gen_range(-scale..scale)).collect();
            factors.push(Factor::new(vec![i], table).expect("valid unary factor"));
        }
    }
    DiscreteModel::new(cards, factors).expect("valid model")
}

/// A query mixing the three inference tasks and fractional weights.
pub fn random_query(rng: &mut impl Rng, n: usize) -> InferenceQuery {
    let tau = match rng.gen_range(0..4) {
        0 => vec![1.0; n],
        1 => vec![0.0; n],
        2 => (0..n).map(|_| if rng.gen_bool(0.5) { 0.0 } else { 1.0 }).collect(),
        _ => (0..n)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.2..1.5) })
            .collect(),
    };
    InferenceQuery::new(tau).expect("valid weights")
}

/// Runs one suite with `trials` random instances.
pub fn run_suite(suite: Suite, seed: u64, trials: usize) -> Result<SuiteReport> {
    match suite {
        Suite::Holder => holder(seed, trials),
        Suite::Gradients => gradients(seed, trials),
        Suite::Monotone => trace_suite(Suite::Monotone, seed, trials),
        Suite::Anytime => trace_suite(Suite::Anytime, seed, trials),
        Suite::Kkt => kkt(seed, trials),
        Suite::Parallel => parallel(seed, trials),
    }
}

fn report(suite: Suite, seed: u64, trials: usize, metric_name: &str, metric: f64, failures: Vec<Failure>) -> SuiteReport {
    SuiteReport {
        suite,
        seed,
        trials,
        passed: failures.is_empty(),
        metric_name: metric_name.into(),
        metric,
        failures,
    }
}

fn holder(seed: u64, trials: usize) -> Result<SuiteReport> {
    let r = oracle::holder_fuzz(seed, trials)?;
    let failures = r
        .violations
        .iter()
        .map(|v| Failure {
            trial: v.trial,
            detail: format!("bound below exact value by {}", -v.margin),
        })
        .collect();
    Ok(report(Suite::Holder, seed, trials, "min_margin", r.min_margin, failures))
}

/// A random state with every weight of a summed variable strictly positive
/// and random shifts.
pub fn random_interior_state(rng: &mut impl Rng, model: &DiscreteModel, tau: &[f64]) -> Result<BoundState> {
    let graph = ModelGraph::build(model);
    let query = InferenceQuery::new(tau.to_vec())?;
    let order = EliminationOrder::constrained_min_fill(model, &graph, &query);
    let n = model.num_vars();
    let mut singleton = vec![0.0; n];
    let mut clique: Vec<Vec<f64>> = model.factors().iter().map(|f| vec![0.0; f.arity()]).collect();
    for i in 0..n {
        let nbrs = graph.neighborhood(i);
        let u: Vec<f64> = (0..=nbrs.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
        let z: f64 = u.iter().sum();
        singleton[i] = tau[i] * u[0] / z;
        for (k, &a) in nbrs.iter().enumerate() {
            let pos = model.factors()[a].scope().iter().position(|&v| v == i).expect("in scope");
            clique[a][pos] = tau[i] * u[k + 1] / z;
        }
    }
    let mut state = BoundState::with_weights(model, &order, &query, SplitWeights::new(singleton, clique))?;
    for (a, f) in model.factors().iter().enumerate() {
        for &i in f.scope() {
            let d: Vec<f64> = (0..model.cards()[i]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            state.set_shift(i, a, &d)?;
        }
    }
    Ok(state)
}

/// Relative error used for gradient checks.
pub fn gradient_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / analytic.abs().max(1.0)
}

/// Worst relative error between analytic gradients and central finite
/// differences of the bound, over every shift entry and every transfer of
/// weight between a singleton term and an incident clique.
pub fn max_gradient_error(state: &BoundState, h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..state.num_vars() {
        for (alpha, g) in state.delta_gradient(i) {
            let base = state.shift(i, alpha)?.to_vec();
            for (x, &an) in g.iter().enumerate() {
                let f = |t: f64| {
                    let mut s = state.clone();
                    let mut d = base.clone();
                    d[x] = t;
                    s.set_shift(i, alpha, &d).expect("valid shift");
                    s.evaluate()
                };
                worst = worst.max(gradient_error(finite_diff(f, base[x], h), an));
            }
        }
        if !state.query().is_sum(i) {
            continue;
        }
        let wg = state.weight_gradient(i);
        for &(alpha, h_alpha) in &wg.cliques {
            let an = wg.singleton - h_alpha;
            let pos = state.model().factors()[alpha]
                .scope()
                .iter()
                .position(|&v| v == i)
                .expect("in scope");
            let f = |eps: f64| {
                let mut s = state.clone();
                let w = state.weights();
                let mut singles = w.singletons().to_vec();
                singles[i] += eps;
                let mut cliques: Vec<Vec<f64>> = (0..state.num_cliques()).map(|a| w.clique_weights(a).to_vec()).collect();
                cliques[alpha][pos] -= eps;
                s.set_weights(SplitWeights::new(singles, cliques)).expect("feasible transfer");
                s.evaluate()
            };
            worst = worst.max(gradient_error(finite_diff(f, 0.0, h), an));
        }
    }
    Ok(worst)
}

fn gradients(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t));
        let n = rng.gen_range(2..=4);
        let extra = rng.gen_range(0..=2);
        let model = random_pairwise_model(&mut rng, n, 3, extra, 1.5);
        let tau: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let state = random_interior_state(&mut rng, &model, &tau)?;
        let err = max_gradient_error(&state, GRADIENT_STEP)?;
        worst = worst.max(err);
        if err > GRADIENT_TOL {
            failures.push(Failure {
                trial: t,
                detail: format!("relative gradient error {err}"),
            });
        }
    }
    Ok(report(Suite::Gradients, seed, trials, "max_relative_error", worst, failures))
}

fn trace_suite(suite: Suite, seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut failures = Vec::new();
    let mut metric = f64::INFINITY;
    let config = OptimizerConfig {
        max_sweeps: 40,
        ..OptimizerConfig::default()
    };
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t));
        let n = rng.gen_range(2..=8);
        let extra = rng.gen_range(0..=3);
        let model = random_pairwise_model(&mut rng, n, 2, extra, 2.0);
        let query = random_query(&mut rng, n);
        let out = solver::run(&model, &query, &config)?;
        match suite {
            Suite::Monotone => {
                for w in out.trace.windows(2) {
                    let rise = w[1].bound - w[0].bound;
                    metric = metric.min(-rise);
                    if rise > MONOTONE_TOL {
                        failures.push(Failure {
                            trial: t,
                            detail: format!("bound rose by {rise} at iteration {}", w[1].iteration),
                        });
                        break;
                    }
                }
            }
            _ => {
                let exact = oracle::exact_weighted_logz(&model, &query, out.state.order(), DEFAULT_LIMIT)?;
                for r in &out.trace {
                    let margin = r.bound - exact;
                    metric = metric.min(margin);
                    if margin < -BOUND_TOL {
                        failures.push(Failure {
                            trial: t,
                            detail: format!("bound {} below exact {exact} at iteration {}", r.bound, r.iteration),
                        });
                        break;
                    }
                }
            }
        }
    }
    let name = if suite == Suite::Monotone { "min_decrease" } else { "min_margin" };
    Ok(report(suite, seed, trials, name, metric, failures))
}

/// Moment-matching and entropy-matching residuals of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `max |μ_i(x_i) − Σ_{x_{α∖i}} μ_α(x_α)|` over summed variables.
    pub moment: f64,
    /// `max |w (H − H̄_i)|` over all weights of summed variables.
    pub entropy: f64,
}

pub fn kkt_residuals(state: &BoundState) -> KktResiduals {
    let mut moment: f64 = 0.0;
    let mut ent: f64 = 0.0;
    for i in 0..state.num_vars() {
        let Some(hbar) = state.average_entropy(i) else { continue };
        for (_, g) in state.delta_gradient(i) {
            moment = g.iter().fold(moment, |m, v| m.max(v.abs()));
        }
        let wg = state.weight_gradient(i);
        ent = ent.max((state.weights().singleton(i) * (wg.singleton - hbar)).abs());
        for &(alpha, h) in &wg.cliques {
            let w = state.clique_weight(i, alpha).expect("incident");
            ent = ent.max((w * (h - hbar)).abs());
        }
    }
    KktResiduals { moment, entropy: ent }
}

/// Settings used to drive sum-inference runs to a stationary point.
pub fn kkt_config() -> OptimizerConfig {
    OptimizerConfig {
        max_sweeps: 5000,
        rel_tol: 1e-13,
        weight_init: WeightInit::Uniform,
        ..OptimizerConfig::default()
    }
}

fn kkt(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t));
        let n = rng.gen_range(3..=5);
        let extra = rng.gen_range(1..=2);
        let model = random_pairwise_model(&mut rng, n, 2, extra, 1.0);
        let out = solver::run(&model, &InferenceQuery::sum(n), &kkt_config())?;
        let r = kkt_residuals(&out.state);
        worst = worst.max(r.moment).max(r.entropy);
        if r.moment > KKT_TOL || r.entropy > KKT_TOL {
            failures.push(Failure {
                trial: t,
                detail: format!("moment residual {}, entropy residual {}", r.moment, r.entropy),
            });
        }
    }
    Ok(report(Suite::Kkt, seed, trials, "max_residual", worst, failures))
}

fn parallel(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t));
        let n = rng.gen_range(2..=8);
        let extra = rng.gen_range(0..=3);
        let model = random_pairwise_model(&mut rng, n, 2, extra, 2.0);
        let query = random_query(&mut rng, n);
        let seq = OptimizerConfig {
            max_sweeps: 40,
            ..OptimizerConfig::default()
        };
        let par = OptimizerConfig { parallel: true, ..seq.clone() };
        let a = solver::run(&model, &query, &seq)?;
        let b = solver::run(&model, &query, &par)?;
        if a.trace.len() != b.trace.len() {
            failures.push(Failure {
                trial: t,
                detail: format!("trace lengths {} and {}", a.trace.len(), b.trace.len()),
            });
            continue;
        }
        for (x, y) in a.trace.iter().zip(&b.trace) {
            let diff = (x.bound - y.bound).abs();
            worst = worst.max(diff);
            if diff > PARALLEL_TOL || x.decoded_config != y.decoded_config {
                failures.push(Failure {
                    trial: t,
                    detail: format!("traces differ at iteration {}", x.iteration),
                });
                break;
            }
        }
    }
    Ok(report(Suite::Parallel, seed, trials, "max_difference", worst, failures))
}
