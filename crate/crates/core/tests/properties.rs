use graphmeta::graph::seeds::seed_library;
use graphmeta::graph::serial::{deserialize, serialize};
use graphmeta::graph::topo_order;
use graphmeta::guidance::{select_imr, select_insert, QuantileValueFn, Transition, FEATURE_DIM, NUM_ACTIONS};
use graphmeta::oracle::chebyshev;
use graphmeta::rewrite::{transform, InsertKind, RewriteOptions, RewriteStatus, SmrKind};
use graphmeta::testing::random_smooth_graph;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn special_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => -1e6..1e6f64,
        1 => Just(f64::NAN),
        1 => Just(f64::INFINITY),
        1 => Just(f64::NEG_INFINITY),
        1 => Just(-0.0),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), size in 4usize..30) {
        let g = random_smooth_graph(&mut ChaCha8Rng::seed_from_u64(seed), size);
        let back = deserialize(&serialize(&g)).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(serialize(&back), serialize(&g));
    }

    #[test]
    fn rewritten_graphs_round_trip(rng_seed in any::<u64>(), which in 0usize..6, smr in 0usize..4, insert in 0usize..6) {
        let g = &seed_library()[which];
        let out = transform(g, SmrKind::ALL[smr], None, InsertKind::ALL[insert], rng_seed, &RewriteOptions::default());
        prop_assume!(out.status == RewriteStatus::Ok);
        prop_assert_eq!(deserialize(&serialize(&out.graph)).unwrap(), out.graph);
    }

    #[test]
    fn topo_order_is_deterministic_and_respects_edges(seed in any::<u64>(), size in 4usize..30) {
        let g = random_smooth_graph(&mut ChaCha8Rng::seed_from_u64(seed), size);
        let order = topo_order(&g);
        prop_assert_eq!(&order, &topo_order(&deserialize(&serialize(&g)).unwrap()));
        let mut position = vec![0; g.len()];
        for (k, &id) in order.iter().enumerate() {
            position[id] = k;
        }
        prop_assert_eq!(order.len(), g.len());
        for n in g.nodes() {
            for &i in &n.inputs {
                prop_assert!(position[i] < position[n.id]);
            }
        }
    }

    #[test]
    fn chebyshev_is_symmetric_and_zero_on_itself(
        pairs in prop::collection::vec((special_f64(), special_f64()), 0..40)
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = chebyshev(&a, &b);
        let ba = chebyshev(&b, &a);
        prop_assert!(ab == ba, "{} vs {}", ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(chebyshev(&a, &a), 0.0);
    }

    #[test]
    fn q_values_stay_finite(
        seed in any::<u64>(),
        steps in prop::collection::vec((0usize..NUM_ACTIONS, -1e6..1e6f64, any::<bool>()), 1..200),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = QuantileValueFn::zeros(0.05);
        let target = q.clone();
        for (action, reward, done) in steps {
            let state: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
            let next_state: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
            let t = Transition { state, action, reward, next_state, done };
            let loss = q.update(&target, &t, 0.9, false);
            prop_assert!(loss.is_finite());
            prop_assert!(q.q_values(&state).iter().all(|v| v.is_finite()));
        }
    }
}

fn chi_square_p(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn imr_choice_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0usize; 4];
    for _ in 0..40_000 {
        counts[select_imr(&mut rng) as usize] += 1;
    }
    assert!(chi_square_p(&counts) > 1e-3, "{counts:?}");
}

#[test]
fn insert_choice_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut counts = [0usize; 6];
    for _ in 0..60_000 {
        counts[select_insert(&mut rng) as usize] += 1;
    }
    assert!(chi_square_p(&counts) > 1e-3, "{counts:?}");
}

#[test]
fn every_insert_template_shows_up_like_a_coupon_collector() {
    // Expected draws to see all 6 templates: 6 * H(6) = 14.7.
    let expected = 6.0 * (1..=6).map(|k| 1.0 / k as f64).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let trials = 4000;
    let mut total = 0usize;
    for _ in 0..trials {
        let mut seen = [false; 6];
        let mut draws = 0;
        while !seen.iter().all(|&s| s) {
            seen[select_insert(&mut rng) as usize] = true;
            draws += 1;
        }
        total += draws;
    }
    let mean = total as f64 / trials as f64;
    assert!((mean - expected).abs() < 0.5, "mean {mean}, expected {expected}");
}
