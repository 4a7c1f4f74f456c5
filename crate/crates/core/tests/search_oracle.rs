//! Search strategies against brute-force optima.

mod common;

use std::collections::BTreeMap;

use mcm_part::util::rng_from_seed;
use mcm_part::{
    analytical_eval, enumerate_valid, random_search, simulated_annealing, AnalyticalModel, ChipTopology,
    ComputationGraph, Evaluator, SaConfig, SearchBudget,
};
use rand::Rng as _;

fn topo(c: usize) -> ChipTopology {
    ChipTopology::with_chips(c).unwrap()
}

/// Best analytical throughput over every valid assignment.
fn oracle(g: &ComputationGraph, c: usize) -> (f64, usize) {
    let all = enumerate_valid(g, &topo(c), 1 << 20).unwrap();
    let best = all
        .iter()
        .map(|p| analytical_eval(g, &topo(c), &p.assignment, AnalyticalModel::default()).throughput)
        .fold(0.0, f64::max);
    (best, all.len())
}

fn instances() -> Vec<(ComputationGraph, usize)> {
    let mut rng = rng_from_seed(2024);
    (0..12)
        .map(|k| {
            let n = rng.random_range(2..=6);
            let c = rng.random_range(1..=3);
            (common::mixed_graph(n, k, &mut rng), c)
        })
        .collect()
}

#[test]
fn random_search_finds_the_optimum() {
    let eval = Evaluator::default();
    for (g, c) in instances() {
        let (best, count) = oracle(&g, c);
        let budget = SearchBudget::new((100 * count).max(10_000), 1);
        let t = random_search(&g, &topo(c), &eval, &budget).unwrap();
        assert!(t.records.iter().all(|r| r.valid), "every sample passes the static check");
        assert_eq!(t.best(), best);
        let bp = t.best_partition.unwrap();
        assert_eq!(analytical_eval(&g, &topo(c), &bp.assignment, AnalyticalModel::default()).throughput, best);
    }
}

#[test]
fn annealing_finds_the_optimum() {
    let eval = Evaluator::default();
    for (g, c) in instances() {
        let (best, count) = oracle(&g, c);
        let budget = SearchBudget::new((100 * count).max(2_000), 3);
        let cfg = SaConfig { mutation_fraction: 0.5, ..Default::default() };
        let t = simulated_annealing(&g, &topo(c), &eval, &budget, &cfg).unwrap();
        assert!(t.records.iter().all(|r| r.valid));
        assert!(t.records.windows(2).all(|w| w[0].best <= w[1].best));
        assert_eq!(t.best(), best);
    }
}

#[test]
fn same_seed_same_trace() {
    let eval = Evaluator::default();
    let (g, c) = instances().pop().unwrap();
    let b = SearchBudget::new(300, 42);
    assert_eq!(random_search(&g, &topo(c), &eval, &b).unwrap(), random_search(&g, &topo(c), &eval, &b).unwrap());
    let cfg = SaConfig::default();
    assert_eq!(
        simulated_annealing(&g, &topo(c), &eval, &b, &cfg).unwrap(),
        simulated_annealing(&g, &topo(c), &eval, &b, &cfg).unwrap()
    );
}

/// Counts of each distinct throughput value.
fn histogram(values: impl Iterator<Item = f64>) -> BTreeMap<u64, f64> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v.to_bits()).or_insert(0.0) += 1.0;
    }
    h
}

#[test]
fn full_mutation_always_accept_matches_random_search() {
    // With every row redrawn and every move accepted, each step samples from
    // an independent flat-Dirichlet matrix, whose restricted rows are uniform
    // in expectation: the throughput distribution must match random search.
    let g = common::random_dag(5, 0.4, &mut rng_from_seed(8));
    let c = 3;
    let eval = Evaluator::default();
    let n = 6000;
    let rs = random_search(&g, &topo(c), &eval, &SearchBudget::new(n, 10)).unwrap();
    let cfg = SaConfig { init_temp: 1e12, cooling_rate: 1.0, mutation_fraction: 1.0 };
    let sa = simulated_annealing(&g, &topo(c), &eval, &SearchBudget::new(n, 11), &cfg).unwrap();
    let a = histogram(rs.records.iter().map(|r| r.throughput));
    let b = histogram(sa.records.iter().map(|r| r.throughput));
    let keys: Vec<u64> =
        a.keys().chain(b.keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    assert!(keys.len() >= 3, "need several outcomes for a meaningful test");
    // Two-sample chi-square with equal sample sizes.
    let mut chi2 = 0.0;
    for k in &keys {
        let (x, y) = (a.get(k).copied().unwrap_or(0.0), b.get(k).copied().unwrap_or(0.0));
        if x + y > 0.0 {
            chi2 += (x - y).powi(2) / (x + y);
        }
    }
    let df = (keys.len() - 1) as f64;
    // Wilson-Hilferty approximation of the 0.999 quantile.
    let z = 3.09;
    let q = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
    assert!(chi2 < q, "chi2 {chi2} exceeds {q} with {df} dof");
}

mod greedy {
    use super::*;
    use mcm_part::{check_static, greedy_heuristic};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn greedy_is_always_valid(n in 1usize..80, c in 1usize..40, seed in 0u64..10_000) {
            let mut rng = rng_from_seed(seed);
            let g = common::mixed_graph(n, seed, &mut rng);
            let p = greedy_heuristic(&g, &topo(c));
            prop_assert!(check_static(&g, &p.assignment, c).is_ok());
        }
    }
}
