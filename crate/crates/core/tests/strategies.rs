use approx::assert_abs_diff_eq;
use pooltest_core::analytic::{brute_force_expected_tests, dorfman_tpp, double_pooling_tpp};
use pooltest_core::model::{stream_rng, InfectionVector};
use pooltest_core::simulator::simulate;
use pooltest_core::strategies::GridShape;
use pooltest_core::{PoolSize, PopulationSize, Probability, SimulationConfig, Strategy};
use proptest::prelude::*;

fn p(v: f64) -> Probability {
    Probability::new(v).unwrap()
}

fn n(v: usize) -> PoolSize {
    PoolSize::new(v).unwrap()
}

/// Strategies that can run on `len` samples with pools (or grid sides) of `size`.
fn strategies(size: usize, len: usize) -> Vec<Strategy> {
    let pool = n(size);
    let mut all = vec![
        Strategy::Individual,
        Strategy::SinglePooling { pool },
        Strategy::BinaryTree { pool, optimize: false },
        Strategy::BinaryTree { pool, optimize: true },
        Strategy::DoublePooling { pool },
    ];
    if size >= 2 && size * size <= len {
        let shape = GridShape::new(pool).unwrap();
        for optimize in [false, true] {
            all.push(Strategy::Grid2d { shape, optimize, leftover_pool: n(3) });
        }
    }
    all
}

/// Expected tests of the optimized tree on one block of `s`, by recursion on
/// the event that a node is positive.
fn tree_block(q: f64, s: usize) -> f64 {
    // cost of resolving a node already known to be positive
    fn resolve(q: f64, s: usize) -> f64 {
        if s == 1 {
            return 0.0;
        }
        let (l, r) = (s.div_ceil(2), s / 2);
        let pos = 1.0 - q.powi(s as i32);
        let left_pos = 1.0 - q.powi(l as i32);
        // left positive: resolve it, then test right as a fresh node
        let with_left = (left_pos / pos) * (resolve(q, l) + fresh(q, r));
        // left negative: right is known positive
        let without_left = (1.0 - left_pos / pos) * resolve(q, r);
        1.0 + with_left + without_left
    }
    fn fresh(q: f64, s: usize) -> f64 {
        1.0 + (1.0 - q.powi(s as i32)) * resolve(q, s)
    }
    if s == 1 {
        1.0
    } else {
        fresh(q, s)
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_strategy_classifies_exactly(
        statuses in prop::collection::vec(any::<bool>(), 1..80),
        size in 1usize..=12,
        seed in any::<u64>(),
    ) {
        let len = statuses.len();
        let v = InfectionVector::from_statuses(statuses);
        for s in strategies(size, len) {
            let out = s.run(&v, seed).unwrap();
            prop_assert!(out.is_exact_for(&v), "{:?}", s);
            prop_assert!(out.rounds <= s.max_rounds(), "{:?} took {} rounds", s, out.rounds);
            prop_assert!(out.tests >= 1);
        }
    }

    #[test]
    fn grid_never_exceeds_per_matrix_bound(side in 2usize..=8, seed in any::<u64>(), prev in 0.0f64..0.4) {
        let v = InfectionVector::sample_with(p(prev), side * side, &mut stream_rng(seed, 0));
        let k = v.positives();
        let shape = GridShape::new(n(side)).unwrap();
        for optimize in [false, true] {
            let out = Strategy::Grid2d { shape, optimize, leftover_pool: n(1) }.run(&v, 0).unwrap();
            prop_assert!(out.tests <= 2 * side + (k * k).min(side * side), "{} tests, k={}", out.tests, k);
        }
    }

    #[test]
    fn all_negative_costs_one_test_per_pool(len in 1usize..200, size in 1usize..=32) {
        let v = InfectionVector::from_statuses(vec![false; len]);
        let out = Strategy::SinglePooling { pool: n(size) }.run(&v, 0).unwrap();
        prop_assert_eq!(out.tests, len.div_ceil(size));
        let out = Strategy::BinaryTree { pool: n(size), optimize: true }.run(&v, 0).unwrap();
        prop_assert_eq!(out.tests, len.div_ceil(size));
    }
}

#[test]
fn enumeration_matches_closed_forms() {
    for &prev in &[0.02, 0.1, 0.3] {
        // a pool of one is a definitive individual test
        let one = brute_force_expected_tests(&Strategy::SinglePooling { pool: n(1) }, p(prev), 1, 0).unwrap();
        assert_eq!(one, 1.0);
        for size in [2usize, 3, 5, 8] {
            let single = brute_force_expected_tests(&Strategy::SinglePooling { pool: n(size) }, p(prev), size, 0).unwrap();
            assert_abs_diff_eq!(single / size as f64, dorfman_tpp(p(prev), n(size)), epsilon = 1e-12);
            let tree = brute_force_expected_tests(&Strategy::BinaryTree { pool: n(size), optimize: true }, p(prev), size, 0)
                .unwrap();
            assert_abs_diff_eq!(tree, tree_block(1.0 - prev, size), epsilon = 1e-12);
        }
    }
}

#[test]
fn tree_simulation_centres_on_exact_value() {
    let cfg = SimulationConfig {
        strategy: Strategy::BinaryTree { pool: n(16), optimize: true },
        p: p(0.05),
        m: PopulationSize::new(32).unwrap(),
        trials: 200_000,
        master_seed: 7,
    };
    let s = simulate(&cfg).unwrap();
    let exact = 2.0 * tree_block(0.95, 16);
    assert_abs_diff_eq!(exact, 10.505, epsilon = 1e-3);
    assert!((s.mean_tests - exact).abs() < 4.0 * s.stderr_tests, "{} vs {exact}", s.mean_tests);
}

#[test]
fn double_pooling_simulation_matches_formula() {
    for (prev, size) in [(0.02, 16usize), (0.05, 9)] {
        let cfg = SimulationConfig {
            strategy: Strategy::DoublePooling { pool: n(size) },
            p: p(prev),
            m: PopulationSize::new(size * size).unwrap(),
            trials: 40_000,
            master_seed: 11,
        };
        let s = simulate(&cfg).unwrap();
        let stderr_tpp = s.stderr_tests / (size * size) as f64;
        let formula = double_pooling_tpp(p(prev), n(size));
        assert!((s.mean_tpp - formula).abs() < 4.5 * stderr_tpp, "p={prev}: {} vs {formula}", s.mean_tpp);
    }
}

#[test]
fn small_blocks_converge_to_enumeration() {
    for size in [4usize, 7, 10] {
        for s in strategies(size.min(3), size).into_iter().filter(|s| !matches!(s, Strategy::DoublePooling { .. })) {
            let exact = brute_force_expected_tests(&s, p(0.15), size, 0).unwrap();
            let cfg = SimulationConfig {
                strategy: s,
                p: p(0.15),
                m: PopulationSize::new(size).unwrap(),
                trials: 50_000,
                master_seed: 3,
            };
            let sim = simulate(&cfg).unwrap();
            assert!(
                (sim.mean_tests - exact).abs() <= 4.0 * sim.stderr_tests.max(1e-9),
                "{s:?} on {size}: {} vs {exact}",
                sim.mean_tests
            );
        }
    }
}

#[test]
fn streams_are_reproducible() {
    let a = InfectionVector::sample_with(p(0.3), 100, &mut stream_rng(5, 9));
    let b = InfectionVector::sample_with(p(0.3), 100, &mut stream_rng(5, 9));
    let c = InfectionVector::sample_with(p(0.3), 100, &mut stream_rng(5, 10));
    assert_eq!(a, b);
    assert_ne!(a, c);
}
