use gdd::check::{random_interior_state, random_pairwise_model, random_query};
use gdd::decode::decode_local;
use gdd::model::reparameterized_factor;
use gdd::oracle::{exact_q, exact_weighted_logz, DEFAULT_LIMIT};
use gdd::powersum::{clique_belief, eliminate, power_sum_scalar, WeightedScope};
use gdd::solver::closed_form_block_update;
use gdd::{BoundState, DiscreteModel, EliminationOrder, InferenceQuery, ModelGraph, OptimizerConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_from(seed: u64, max_vars: usize) -> (DiscreteModel, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_vars);
    let extra = rng.gen_range(0..=3);
    (random_pairwise_model(&mut rng, n, 3, extra, 2.0), rng)
}

/// Every configuration from its flat index.
fn configs(cards: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = cards.iter().product();
    (0..total)
        .map(|mut idx| {
            let mut x = vec![0; cards.len()];
            for k in (0..cards.len()).rev() {
                x[k] = idx % cards[k];
                idx /= cards[k];
            }
            x
        })
        .collect()
}

fn shifted_state(seed: u64) -> (DiscreteModel, BoundState) {
    let (model, mut rng) = model_from(seed, 5);
    let query = random_query(&mut rng, model.num_vars());
    let graph = ModelGraph::build(&model);
    let order = EliminationOrder::constrained_min_fill(&model, &graph, &query);
    let mut state = BoundState::new(&model, &order, &query).unwrap();
    for (a, f) in model.factors().iter().enumerate() {
        for &i in f.scope() {
            let d: Vec<f64> = (0..model.cards()[i]).map(|_| rng.gen_range(-2.0..2.0)).collect();
            state.set_shift(i, a, &d).unwrap();
        }
    }
    (model, state)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifts_cancel_in_the_joint(seed in any::<u64>()) {
        let (model, state) = shifted_state(seed);
        for x in configs(model.cards()) {
            let mut total = 0.0;
            for (a, f) in model.factors().iter().enumerate() {
                let shifts: Vec<&[f64]> = f.scope().iter().map(|&i| state.shift(i, a).unwrap()).collect();
                let table = reparameterized_factor(f, model.cards(), &shifts).unwrap();
                let mut idx = 0;
                for &v in f.scope() {
                    idx = idx * model.cards()[v] + x[v];
                }
                total += table[idx];
            }
            for (i, &xi) in x.iter().enumerate() {
                total += state.shift_sum(i)[xi];
            }
            prop_assert!((total - model.log_potential(&x)).abs() < 1e-9);
        }
    }

    #[test]
    fn bound_dominates_exact_value(seed in any::<u64>()) {
        let (model, state) = shifted_state(seed);
        let exact = exact_weighted_logz(&model, state.query(), state.order(), DEFAULT_LIMIT).unwrap();
        prop_assert!(state.value() >= exact - 1e-9);
        prop_assert!((state.value() - state.evaluate()).abs() < 1e-9);
    }

    #[test]
    fn summed_variables_come_first(seed in any::<u64>()) {
        let (model, mut rng) = model_from(seed, 8);
        let query = random_query(&mut rng, model.num_vars());
        let graph = ModelGraph::build(&model);
        let order = EliminationOrder::constrained_min_fill(&model, &graph, &query);
        let first_max = order.order().iter().position(|&v| !query.is_sum(v)).unwrap_or(order.len());
        prop_assert!(order.order()[first_max..].iter().all(|&v| !query.is_sum(v)));
        let mut seen = order.order().to_vec();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..model.num_vars()).collect::<Vec<_>>());
    }

    #[test]
    fn power_sum_lies_between_max_and_log_sum(
        vals in prop::collection::vec(-20.0..20.0f64, 1..8),
        w in 0.0..1.0f64,
    ) {
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ps = power_sum_scalar(&vals, w).unwrap();
        prop_assert!(ps >= m - 1e-12);
        prop_assert!(ps <= m + w * (vals.len() as f64).ln() + 1e-12);
        let lse = power_sum_scalar(&vals, 1.0).unwrap();
        prop_assert!(ps <= lse + 1e-12);
    }

    #[test]
    fn clique_beliefs_are_distributions(
        cards in prop::collection::vec(1usize..4, 1..4),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size: usize = cards.iter().product();
        let table: Vec<f64> = (0..size).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let weights: Vec<f64> = cards.iter().map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) }).collect();
        let ws = WeightedScope::from_cards(cards.clone(), weights).unwrap();
        let (_, partials) = eliminate(&table, &ws).unwrap();
        let b = clique_belief(&partials, &ws);
        prop_assert!((b.joint().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(b.joint().iter().all(|&p| p >= 0.0));
        for (k, &d) in cards.iter().enumerate() {
            let h = b.conditional_entropy(k);
            prop_assert!(h >= -1e-12 && h <= (d as f64).ln() + 1e-9);
            prop_assert!((b.marginal(k).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn factor_permutation_preserves_potentials(seed in any::<u64>()) {
        let (model, _) = model_from(seed, 4);
        for f in model.factors() {
            let perm: Vec<usize> = (0..f.arity()).rev().collect();
            let g = f.permuted(&perm, model.cards());
            let single = |factor: &gdd::Factor| DiscreteModel::new(model.cards().to_vec(), vec![factor.clone()]).unwrap();
            let (a, b) = (single(f), single(&g));
            for x in configs(model.cards()) {
                prop_assert_eq!(a.log_potential(&x), b.log_potential(&x));
            }
        }
    }

    #[test]
    fn bound_is_convex_in_shifts(seed in any::<u64>()) {
        let (model, a) = shifted_state(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut b = a.clone();
        let mut mid = a.clone();
        for (alpha, f) in model.factors().iter().enumerate() {
            for &i in f.scope() {
                let db: Vec<f64> = (0..model.cards()[i]).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let m: Vec<f64> = a.shift(i, alpha).unwrap().iter().zip(&db).map(|(x, y)| 0.5 * (x + y)).collect();
                b.set_shift(i, alpha, &db).unwrap();
                mid.set_shift(i, alpha, &m).unwrap();
            }
        }
        prop_assert!(mid.value() <= 0.5 * (a.value() + b.value()) + 1e-9);
    }

    #[test]
    fn max_node_update_matches_shifted_max_marginals(seed in any::<u64>()) {
        let (model, mut rng) = model_from(seed, 5);
        let n = model.num_vars();
        let query = InferenceQuery::max(n);
        let graph = ModelGraph::build(&model);
        let order = EliminationOrder::constrained_min_fill(&model, &graph, &query);
        let mut state = BoundState::new(&model, &order, &query).unwrap();
        for (a, f) in model.factors().iter().enumerate() {
            for &i in f.scope() {
                let d: Vec<f64> = (0..model.cards()[i]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                state.set_shift(i, a, &d).unwrap();
            }
        }
        let i = rng.gen_range(0..n);
        let before = state.value();
        let upd = closed_form_block_update(&state, i);
        state.apply(&upd);
        prop_assert!(state.value() <= before + 1e-10);
        prop_assert!((state.value() - state.evaluate()).abs() < 1e-9);
        // every incident clique's max-marginal of x_i now equals the shift sum
        let total = state.shift_sum(i);
        for &alpha in state.neighborhood(i) {
            let f = &model.factors()[alpha];
            let shifts: Vec<&[f64]> = f.scope().iter().map(|&j| state.shift(j, alpha).unwrap()).collect();
            let table = reparameterized_factor(f, model.cards(), &shifts).unwrap();
            let pos = f.scope().iter().position(|&v| v == i).unwrap();
            let scope_cards: Vec<usize> = f.scope().iter().map(|&v| model.cards()[v]).collect();
            let mut mm = vec![f64::NEG_INFINITY; model.cards()[i]];
            for x in configs(&scope_cards) {
                let mut idx = 0;
                for (k, &c) in scope_cards.iter().enumerate() {
                    idx = idx * c + x[k];
                }
                mm[x[pos]] = mm[x[pos]].max(table[idx]);
            }
            for (a, b) in mm.iter().zip(&total) {
                prop_assert!((a - b).abs() < 1e-9, "max-marginal {a} vs shift sum {b}");
            }
        }
    }
}

#[test]
fn decoding_sandwich_on_marginal_map() {
    for seed in 0..30 {
        let (model, mut rng) = model_from(seed, 7);
        let n = model.num_vars();
        let query = InferenceQuery::random_marginal_map(n, 0.5, rng.gen()).unwrap();
        let out = gdd::run(&model, &query, &OptimizerConfig::default()).unwrap();
        let exact = exact_weighted_logz(&model, &query, out.state.order(), DEFAULT_LIMIT).unwrap();
        let x_b = decode_local(&out.state);
        let q = exact_q(&model, &query, &x_b, DEFAULT_LIMIT).unwrap();
        assert!(q <= exact + 1e-9, "seed {seed}: Q {q} above exact {exact}");
        assert!(exact <= out.bound() + 1e-9, "seed {seed}: exact {exact} above bound {}", out.bound());
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = random_pairwise_model(&mut rng, 4, 3, 2, 1.5);
    let tau = vec![1.0, 0.7, 1.3, 0.5];
    let state = random_interior_state(&mut rng, &model, &tau).unwrap();
    assert!(gdd::check::max_gradient_error(&state, 1e-6).unwrap() <= 1e-5);
}
