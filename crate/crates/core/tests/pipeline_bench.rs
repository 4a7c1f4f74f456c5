//! Pretraining workflow and experiment harness.

mod common;

use std::collections::BTreeMap;

use mcm_part::bench::{self, Strategy};
use mcm_part::pipeline::{self, Corpus, NamedGraph, SelectionCriterion, ValidationConfig};
use mcm_part::rl::{self, PolicyConfig, PolicyParams, PpoConfig, RepairMode, RlEnv};
use mcm_part::util::rng_from_seed;
use mcm_part::{
    enumerate_valid, generate_synthetic, random_search, ChipTopology, Evaluator, GeneratorConfig, GraphFamily,
    SearchBudget, SurrogateConfig,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn topo(c: usize) -> ChipTopology {
    ChipTopology::with_chips(c).unwrap()
}

fn quick() -> PpoConfig {
    PpoConfig { num_epochs: 2, ..Default::default() }
}

fn pretrain_ids(corpus: &Corpus, samples: usize, every: usize, seed: u64) -> (Vec<usize>, Vec<Vec<u8>>) {
    let mut bytes = Vec::new();
    let init = rl::init_params(PolicyConfig::tiny(3), seed).unwrap();
    let (_, recs) =
        pipeline::pretrain(corpus, &topo(3), init, &quick(), &Evaluator::default(), samples, every, seed, |_, p| {
            bytes.push(p.to_bytes());
            Ok(())
        })
        .unwrap();
    (recs.iter().map(|r| r.id).collect(), bytes)
}

#[test]
fn checkpoint_counts_and_determinism() {
    let one = Corpus::synthetic(&[GraphFamily::Chain], 1, (8, 8), (1, 0), 1).unwrap();
    assert_eq!(pretrain_ids(&one, 80, 40, 1).0, vec![40, 80]);

    let ten = Corpus::synthetic(&GraphFamily::ALL, 10, (10, 16), (10, 0), 2).unwrap();
    let (ids, bytes) = pretrain_ids(&ten, 2000, 100, 3);
    assert_eq!(ids, (1..=20).map(|k| 100 * k).collect::<Vec<_>>());
    let (ids2, bytes2) = pretrain_ids(&ten, 2000, 100, 3);
    assert_eq!(ids, ids2);
    assert_eq!(bytes, bytes2);
}

#[test]
fn pretrain_requires_training_graphs() {
    let empty = Corpus::synthetic(&[GraphFamily::Chain], 2, (4, 4), (0, 2), 1).unwrap();
    let init = PolicyParams::zeros(PolicyConfig::tiny(2)).unwrap();
    let r = pipeline::pretrain(&empty, &topo(2), init, &quick(), &Evaluator::default(), 20, 10, 0, |_, _| Ok(()));
    assert!(r.is_err());
}

#[test]
fn validation_prefers_the_trained_checkpoint() {
    let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::Layered, 24, 8)).unwrap();
    let t = topo(4);
    let eval = Evaluator::default();
    let env = RlEnv::new(&g, &t, &eval);
    let cfg = PpoConfig { learning_rate: 3e-3, ..quick() };
    let random = rl::init_params(PolicyConfig::tiny(4), 1).unwrap();
    let (trained, _) = rl::fine_tune(&random, &env, &cfg, &SearchBudget::new(3000, 2)).unwrap();
    let cks = [random, trained];
    let val = vec![NamedGraph { name: "v".into(), graph: g.clone() }];
    for criterion in [SelectionCriterion::ZeroShot, SelectionCriterion::FineTune] {
        let vcfg = ValidationConfig { criterion, zeroshot_samples: 20, finetune_budget: 40, seed: 5 };
        let (recs, best) = pipeline::validate(&[0, 1], |i| Ok(cks[i].clone()), &val, &t, &eval, &cfg, &vcfg).unwrap();
        assert_eq!(best, 1, "{criterion:?}: {recs:?}");
        assert!(recs.iter().all(|r| r.zeroshot_score.unwrap().is_finite() && r.finetune_score.unwrap().is_finite()));
    }
    // A single checkpoint is returned as is.
    let vcfg = ValidationConfig { zeroshot_samples: 5, finetune_budget: 5, ..Default::default() };
    let (_, best) = pipeline::validate(&[7], |_| Ok(cks[0].clone()), &val, &t, &eval, &cfg, &vcfg).unwrap();
    assert_eq!(best, 0);
}

#[test]
fn zero_shot_is_frozen() {
    let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::CnnLike, 15, 8)).unwrap();
    let t = topo(3);
    let eval = Evaluator::default();
    let ck = rl::init_params(PolicyConfig::tiny(3), 4).unwrap();
    let before = ck.to_bytes();
    let trace = pipeline::zero_shot(&ck, &g, &t, &eval, &quick(), &SearchBudget::new(45, 1)).unwrap();
    assert_eq!(trace.len(), 45);
    assert_eq!(ck.to_bytes(), before);
    assert!(pipeline::zero_shot(&ck, &g, &t, &eval, &quick(), &SearchBudget::new(0, 1)).unwrap().is_empty());
    assert!(pipeline::zero_shot(&ck, &g, &topo(4), &eval, &quick(), &SearchBudget::new(5, 1)).is_err());
}

#[test]
fn uniform_policy_matches_random_search() {
    // Throughput histograms over 20k samples; chi-square against the 0.1%
    // critical value for the observed number of bins.
    let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::Layered, 5, 3)).unwrap();
    let t = topo(3);
    let eval = Evaluator::default();
    let uniform = PolicyParams::zeros(PolicyConfig::tiny(3)).unwrap();
    let budget = SearchBudget::new(20_000, 1);
    let cfg = PpoConfig { repair: RepairMode::Sample, ..Default::default() };
    let zs = pipeline::zero_shot(&uniform, &g, &t, &eval, &cfg, &budget).unwrap();
    let rs = random_search(&g, &t, &eval, &SearchBudget::new(20_000, 2)).unwrap();
    let mut bins: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for r in &zs.records {
        bins.entry(r.throughput.to_bits()).or_default().0 += 1.0;
    }
    for r in &rs.records {
        bins.entry(r.throughput.to_bits()).or_default().1 += 1.0;
    }
    let chi2: f64 = bins.values().map(|(a, b)| (a - b) * (a - b) / (a + b)).sum();
    let dof = bins.len() - 1;
    // Wilson-Hilferty approximation of the 0.999 quantile.
    let k = dof as f64;
    let critical = k * (1.0 - 2.0 / (9.0 * k) + 3.09 * (2.0 / (9.0 * k)).sqrt()).powi(3);
    assert!(chi2 < critical, "chi2 {chi2} with {dof} dof (critical {critical})");
}

#[test]
fn fine_tune_from_fresh_init_is_scratch_training() {
    let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::RandomDag, 12, 1)).unwrap();
    let t = topo(3);
    let eval = Evaluator::default();
    let env = RlEnv::new(&g, &t, &eval);
    let budget = SearchBudget::new(60, 11);
    let ck = rl::init_params(PolicyConfig::tiny(3), budget.seed).unwrap();
    let (p1, t1) = rl::fine_tune(&ck, &env, &quick(), &budget).unwrap();
    let (p2, t2) = rl::train_from_scratch(&env, PolicyConfig::tiny(3), &quick(), &budget).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(p1.to_bytes(), p2.to_bytes());
}

#[test]
fn fine_tune_explores_at_least_as_well_as_zero_shot() {
    let corpus = Corpus::synthetic(&[GraphFamily::Layered], 6, (24, 32), (6, 0), 4).unwrap();
    let t = topo(4);
    let eval = Evaluator::default();
    let cfg = PpoConfig { learning_rate: 1e-3, ..quick() };
    let init = rl::init_params(PolicyConfig::tiny(4), 9).unwrap();
    let (ck, _) = pipeline::pretrain(&corpus, &t, init, &cfg, &eval, 1200, 1200, 9, |_, _| Ok(())).unwrap();
    let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::Layered, 30, 777)).unwrap();
    let (mut zs_best, mut ft_best) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let budget = SearchBudget::new(400, seed);
        let zs = pipeline::zero_shot(&ck, &g, &t, &eval, &cfg, &budget).unwrap();
        let (_, ft) = pipeline::fine_tune(&ck, &g, &t, &eval, &cfg, &budget).unwrap();
        // Both start from the same first batch.
        assert_eq!(zs.records[..20], ft.records[..20]);
        zs_best.push(zs.best());
        ft_best.push(ft.best());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    assert!(median(&mut ft_best) >= median(&mut zs_best), "{ft_best:?} vs {zs_best:?}");
}

#[test]
fn comparison_is_invariant_to_graph_order() {
    let mut graphs: Vec<_> =
        (0..4).map(|k| generate_synthetic(&GeneratorConfig::new(GraphFamily::ALL[k], 8, k as u64)).unwrap()).collect();
    let t = topo(3);
    let eval = Evaluator::default();
    let strategies = vec![
        ("random".to_string(), Strategy::Random),
        ("sa".to_string(), Strategy::Annealing(Default::default())),
        ("rl".to_string(), Strategy::RlScratch { policy: PolicyConfig::tiny(3), ppo: quick() }),
    ];
    let a = bench::compare_strategies(&graphs, &t, &eval, &strategies, 60, &[1, 2]).unwrap();
    graphs.shuffle(&mut rng_from_seed(4));
    let b = bench::compare_strategies(&graphs, &t, &eval, &strategies, 60, &[1, 2]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curves.len(), 3);
    for (_, rows) in &a.curves {
        assert_eq!(rows.len(), 60);
        assert!(rows.windows(2).all(|w| w[1].geomean_improvement >= w[0].geomean_improvement - 1e-12));
    }
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("strategy,sample,geomean_improvement,stddev\nrandom,1,"));
    assert_eq!(text.lines().count(), 1 + 3 * 60);
}

proptest! {
    #[test]
    fn samples_to_target_is_monotone(raw in prop::collection::vec(0.0f64..2.0, 1..50), mut targets in prop::collection::vec(0.0f64..2.5, 1..6)) {
        let mut best = raw.clone();
        for i in 1..best.len() {
            best[i] = best[i].max(best[i - 1]);
        }
        targets.sort_by(f64::total_cmp);
        let counts = bench::samples_to_target(&best, &targets);
        for w in counts.windows(2) {
            match (w[0], w[1]) {
                (Some(a), Some(b)) => prop_assert!(a <= b),
                (None, Some(_)) => prop_assert!(false, "lower target unreached"),
                _ => {}
            }
        }
    }

    #[test]
    fn exhaustive_sparsity_matches_enumeration(n in 1usize..7, c in 1usize..4, seed in 0u64..200) {
        let mut rng = rng_from_seed(seed);
        let g = common::mixed_graph(n, seed, &mut rng);
        let t = topo(c);
        let s = bench::sparsity_exhaustive(&g, &t, 1 << 20).unwrap();
        prop_assert_eq!(s.valid, enumerate_valid(&g, &t, 1 << 20).unwrap().len() as u64);
        prop_assert_eq!(s.total, (c as u64).pow(n as u32));
    }
}

#[test]
fn valid_assignments_are_sparse() {
    let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::Layered, 20, 1)).unwrap();
    let s = bench::sparsity_probe(&g, &topo(4), 20_000, &mut rng_from_seed(3));
    assert!(s.fraction < 0.01, "{s:?}");
    assert!(s.ci_low <= s.fraction && s.fraction <= s.ci_high && s.ci_high < 0.01);
}

#[test]
fn calibration_reports_failures_and_correlation() {
    let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::Layered, 60, 2)).unwrap();
    let t = topo(6);
    let cfg = SurrogateConfig { noise_scale: 0.1, memory_headroom: 0.85, ..Default::default() };
    let r = bench::calibration_study(&g, &t, 300, &cfg, 1).unwrap();
    assert!(r.invalid_fraction > 0.0);
    assert!(r.pearson_r.unwrap() > 0.5);
    assert_eq!(r.pairs.len(), 300);
    let two = bench::calibration_study(&g, &t, 2, &SurrogateConfig { extra_failure_rate: 0.0, ..cfg }, 9).unwrap();
    if let Some(r) = two.pearson_r {
        assert!(two.two_point);
        assert!((r.abs() - 1.0).abs() < 1e-12);
    }
}
