use gdd::check::{random_pairwise_model, random_query};
use gdd::oracle::{exact_marginal_map, exact_weighted_logz, DEFAULT_LIMIT};
use gdd::solver::{color_schedule, run_from, sum_node_block_step, WeightInit};
use gdd::{
    BoundState, DiscreteModel, EliminationOrder, Factor, InferenceQuery, ModelGraph, OptimizerConfig, SplitWeights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_var() -> DiscreteModel {
    DiscreteModel::new(vec![2, 2], vec![Factor::new(vec![0, 1], vec![0.0, 1.0, 1.0, 0.0]).unwrap()]).unwrap()
}

fn moment_residual(state: &BoundState) -> f64 {
    (0..state.num_vars())
        .flat_map(|i| state.delta_gradient(i))
        .flat_map(|(_, g)| g)
        .fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn two_variable_interior_start_reaches_moment_matching() {
    let model = two_var();
    let query = InferenceQuery::sum(2);
    let weights = SplitWeights::new(vec![0.5, 0.5], vec![vec![0.5, 0.5]]);
    let state = BoundState::with_weights(&model, &EliminationOrder::identity(2), &query, weights).unwrap();
    let config = OptimizerConfig {
        max_sweeps: 100,
        ..OptimizerConfig::default()
    };
    let out = run_from(state, &config).unwrap();
    assert!(moment_residual(&out.state) <= 1e-6, "residual {}", moment_residual(&out.state));
    let exact = exact_weighted_logz(&model, &query, out.state.order(), DEFAULT_LIMIT).unwrap();
    assert!(out.bound() >= exact - 1e-9);
}

#[test]
fn map_on_two_node_tree() {
    let model = two_var();
    let out = gdd::run(&model, &InferenceQuery::max(2), &OptimizerConfig::default()).unwrap();
    let (map, _) = exact_marginal_map(&model, &InferenceQuery::max(2), DEFAULT_LIMIT).unwrap();
    assert!((out.bound() - map).abs() <= 1e-9);
    assert_eq!(out.trace[0].iteration, 0);
}

#[test]
fn single_clique_is_exact_before_any_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let cards = vec![2, 3, 2];
        let table = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let model = DiscreteModel::new(cards, vec![Factor::new(vec![2, 0, 1], table).unwrap()]).unwrap();
        let query = InferenceQuery::sum(3);
        let out = gdd::run(&model, &query, &OptimizerConfig::default()).unwrap();
        let exact = exact_weighted_logz(&model, &query, out.state.order(), DEFAULT_LIMIT).unwrap();
        assert!((out.trace[0].bound - exact).abs() < 1e-12);
    }
}

#[test]
fn marginal_map_traces_are_valid_and_monotone() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extra = rng.gen_range(0..=4);
        let model = random_pairwise_model(&mut rng, 6, 4, extra, 2.0);
        assert!(model.joint_states() <= 4096.0);
        let query = InferenceQuery::random_marginal_map(6, 0.5, seed).unwrap();
        let out = gdd::run(&model, &query, &OptimizerConfig::default()).unwrap();
        let exact = exact_weighted_logz(&model, &query, out.state.order(), DEFAULT_LIMIT).unwrap();
        for r in &out.trace {
            assert!(r.bound >= exact - 1e-9, "seed {seed}");
            if let Some(q) = r.decoded_score.value() {
                assert!(q <= r.bound + 1e-9, "seed {seed}");
            }
        }
        for w in out.trace.windows(2) {
            assert!(w[1].bound <= w[0].bound + 1e-10, "seed {seed}");
        }
    }
}

#[test]
fn single_sum_steps_never_increase_the_bound() {
    for seed in 0..150 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let extra = rng.gen_range(0..=1);
        let model = random_pairwise_model(&mut rng, 3, 3, extra, 2.0);
        let query = random_query(&mut rng, 3);
        let init = if seed % 2 == 0 { WeightInit::Wmb } else { WeightInit::Uniform };
        let config = OptimizerConfig {
            weight_init: init,
            ..OptimizerConfig::default()
        };
        let mut state = gdd::solver::initial_state(&model, &query, &config).unwrap();
        for i in (0..3).filter(|&i| query.is_sum(i)) {
            let before = state.value();
            let upd = sum_node_block_step(&state, i, &config);
            state.apply(&upd);
            assert!(state.value() <= before + 1e-12, "seed {seed} node {i}");
            assert!((state.value() - state.evaluate()).abs() < 1e-9);
        }
    }
}

#[test]
fn coloring_examples() {
    let pair = |a, b| Factor::new(vec![a, b], vec![0.0; 4]).unwrap();
    let chain = DiscreteModel::new(vec![2; 4], vec![pair(0, 1), pair(1, 2), pair(2, 3)]).unwrap();
    assert_eq!(color_schedule(&ModelGraph::build(&chain)), vec![vec![0, 2], vec![1, 3]]);

    let clique = DiscreteModel::new(vec![2; 3], vec![Factor::new(vec![0, 1, 2], vec![0.0; 8]).unwrap()]).unwrap();
    assert_eq!(color_schedule(&ModelGraph::build(&clique)), vec![vec![0], vec![1], vec![2]]);

    let mut grid = Vec::new();
    for r in 0..3 {
        for c in 0..3 {
            let v = 3 * r + c;
            if c < 2 {
                grid.push(pair(v, v + 1));
            }
            if r < 2 {
                grid.push(pair(v, v + 3));
            }
        }
    }
    let grid = DiscreteModel::new(vec![2; 9], grid).unwrap();
    assert_eq!(
        color_schedule(&ModelGraph::build(&grid)),
        vec![vec![0, 2, 4, 6, 8], vec![1, 3, 5, 7]]
    );
}

#[test]
fn parallel_run_matches_sequential_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = random_pairwise_model(&mut rng, 12, 3, 10, 2.0);
    let query = InferenceQuery::random_marginal_map(12, 0.5, 9).unwrap();
    let seq = gdd::run(&model, &query, &OptimizerConfig::default()).unwrap();
    let par = OptimizerConfig {
        parallel: true,
        ..OptimizerConfig::default()
    };
    let par = gdd::run(&model, &query, &par).unwrap();
    assert_eq!(seq.trace.len(), par.trace.len());
    for (a, b) in seq.trace.iter().zip(&par.trace) {
        assert_eq!(a.bound.to_bits(), b.bound.to_bits());
        assert_eq!(a.decoded_config, b.decoded_config);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let model = two_var();
    let bad = [
        OptimizerConfig {
            backtrack_factor: 1.0,
            ..OptimizerConfig::default()
        },
        OptimizerConfig {
            initial_step: 0.0,
            ..OptimizerConfig::default()
        },
        OptimizerConfig {
            rel_tol: -1.0,
            ..OptimizerConfig::default()
        },
    ];
    for c in bad {
        assert!(gdd::run(&model, &InferenceQuery::sum(2), &c).is_err());
    }
}
