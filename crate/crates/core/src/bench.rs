//! Experiment harness: strategy comparisons, samples-to-target tables,
//! constraint sparsity and cost-model calibration. Everything is emitted as
//! CSV.

use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::DistributionMatrix;
use crate::error::{Error, SolverError};
use crate::evaluator::{analytical_eval, surrogate_eval, AnalyticalModel, Evaluator, SurrogateConfig};
use crate::graph::{ChipTopology, ComputationGraph};
use crate::rl::{self, PolicyConfig, PolicyParams, PpoConfig, RlEnv};
use crate::search::{heuristic_baseline, random_search, simulated_annealing, SaConfig, SearchBudget, SearchTrace};
use crate::solver::{check_static, enumerate_valid, solve_sample, NodeOrder};
use crate::stats;
use crate::util::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Random,
    Annealing(SaConfig),
    RlScratch { policy: PolicyConfig, ppo: PpoConfig },
    RlFinetune { params: Box<PolicyParams>, ppo: PpoConfig },
    RlZeroShot { params: Box<PolicyParams>, ppo: PpoConfig },
}

impl Strategy {
    pub fn run(
        &self,
        g: &ComputationGraph,
        topo: &ChipTopology,
        eval: &Evaluator,
        budget: &SearchBudget,
    ) -> Result<SearchTrace, Error> {
        Ok(match self {
            Strategy::Random => random_search(g, topo, eval, budget)?,
            Strategy::Annealing(cfg) => simulated_annealing(g, topo, eval, budget, cfg)?,
            Strategy::RlScratch { policy, ppo } => {
                let mut policy = *policy;
                policy.num_chips = topo.num_chips;
                rl::train_from_scratch(&RlEnv::new(g, topo, eval), policy, ppo, budget)?.1
            }
            Strategy::RlFinetune { params, ppo } => rl::fine_tune(params, &RlEnv::new(g, topo, eval), ppo, budget)?.1,
            Strategy::RlZeroShot { params, ppo } => rl::zero_shot(params, &RlEnv::new(g, topo, eval), ppo, budget)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub sample: usize,
    pub geomean_improvement: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonTable {
    /// One curve per strategy, in input order.
    pub curves: Vec<(String, Vec<ComparisonRow>)>,
}

impl ComparisonTable {
    /// CSV with header `strategy,sample,geomean_improvement,stddev`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["strategy", "sample", "geomean_improvement", "stddev"])?;
        for (name, rows) in &self.curves {
            for r in rows {
                out.write_record([
                    name.clone(),
                    r.sample.to_string(),
                    r.geomean_improvement.to_string(),
                    r.stddev.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Best-so-far throughput divided by `reference`, padded with the last value
/// to `len` samples.
pub fn normalized_curve(trace: &SearchTrace, reference: f64, len: usize) -> Vec<f64> {
    let mut out: Vec<f64> = trace.records.iter().take(len).map(|r| r.best / reference).collect();
    let last = out.last().copied().unwrap_or(0.0);
    out.resize(len, last);
    out
}

/// For each strategy and seed, the per-sample geometric mean over graphs of
/// best-so-far throughput relative to the greedy heuristic; rows report the
/// mean and sample standard deviation over seeds. Runs are seeded by the
/// seed and the graph's fingerprint only, so strategies see paired streams
/// and graph order does not matter.
pub fn compare_strategies(
    graphs: &[ComputationGraph],
    topo: &ChipTopology,
    eval: &Evaluator,
    strategies: &[(String, Strategy)],
    samples: usize,
    seeds: &[u64],
) -> Result<ComparisonTable, Error> {
    if graphs.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("comparison needs at least one graph and one seed".into()));
    }
    let refs: Vec<f64> = graphs.iter().map(|g| heuristic_baseline(g, topo, eval)).collect();
    let cells: Vec<(usize, usize, usize)> = (0..strategies.len())
        .flat_map(|s| (0..seeds.len()).flat_map(move |k| (0..graphs.len()).map(move |g| (s, k, g))))
        .collect();
    let curves: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(s, k, gi)| {
            let budget = SearchBudget::new(samples, derive_seed(&[seeds[k], graphs[gi].fingerprint()]));
            let trace = strategies[s].1.run(&graphs[gi], topo, eval, &budget)?;
            Ok(normalized_curve(&trace, refs[gi], samples))
        })
        .collect::<Result<_, Error>>()?;
    let ng = graphs.len();
    let mut table = ComparisonTable::default();
    for (s, (name, _)) in strategies.iter().enumerate() {
        let mut rows = Vec::with_capacity(samples);
        for i in 0..samples {
            let per_seed: Vec<f64> = (0..seeds.len())
                .map(|k| {
                    let base = (s * seeds.len() + k) * ng;
                    let vals: Vec<f64> = (0..ng).map(|gi| curves[base + gi][i]).collect();
                    stats::geomean(&vals)
                })
                .collect();
            rows.push(ComparisonRow {
                sample: i + 1,
                geomean_improvement: stats::mean(&per_seed),
                stddev: stats::std_dev(&per_seed),
            });
        }
        table.curves.push((name.clone(), rows));
    }
    Ok(table)
}

/// First 1-based sample whose best-so-far reaches each threshold; `None`
/// when it never does.
pub fn samples_to_target(best_so_far: &[f64], targets: &[f64]) -> Vec<Option<usize>> {
    targets.iter().map(|&t| best_so_far.iter().position(|&b| b >= t).map(|i| i + 1)).collect()
}

/// CSV with header `target,samples`; unreached targets print `N.A.`.
pub fn write_s2t_csv<W: Write>(targets: &[f64], counts: &[Option<usize>], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["target", "samples"])?;
    for (t, c) in targets.iter().zip(counts) {
        out.write_record([t.to_string(), c.map_or_else(|| "N.A.".to_string(), |c| c.to_string())])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityEstimate {
    pub valid: u64,
    pub total: u64,
    pub fraction: f64,
    /// 95% Wilson interval; collapses to the exact value in exhaustive mode.
    pub ci_low: f64,
    pub ci_high: f64,
    pub exhaustive: bool,
}

/// Monte-Carlo estimate of the fraction of uniformly random total
/// assignments that pass the static check.
pub fn sparsity_probe(g: &ComputationGraph, topo: &ChipTopology, num_samples: u64, rng: &mut Rng) -> SparsityEstimate {
    let c = topo.num_chips as u32;
    let mut a = vec![0u32; g.num_nodes()];
    let mut valid = 0;
    for _ in 0..num_samples {
        a.iter_mut().for_each(|x| *x = rng.random_range(0..c));
        if check_static(g, &a, topo.num_chips).is_ok() {
            valid += 1;
        }
    }
    let (lo, hi) = stats::wilson(valid, num_samples, 1.96);
    SparsityEstimate {
        valid,
        total: num_samples,
        fraction: if num_samples == 0 { 0.0 } else { valid as f64 / num_samples as f64 },
        ci_low: lo,
        ci_high: hi,
        exhaustive: false,
    }
}

/// Exact fraction by enumeration; fails when `C^N` exceeds `limit`.
pub fn sparsity_exhaustive(
    g: &ComputationGraph,
    topo: &ChipTopology,
    limit: u128,
) -> Result<SparsityEstimate, SolverError> {
    let valid = enumerate_valid(g, topo, limit)?.len() as u64;
    let total = (topo.num_chips as u64).pow(g.num_nodes() as u32);
    let fraction = valid as f64 / total as f64;
    Ok(SparsityEstimate { valid, total, fraction, ci_low: fraction, ci_high: fraction, exhaustive: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    /// Analytical runtime over the minimum analytical runtime.
    pub analytical: f64,
    /// Surrogate runtime over the minimum valid surrogate runtime; `None`
    /// when the surrogate rejected the partition.
    pub surrogate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Pearson correlation over jointly valid samples; `None` when fewer than
    /// two pairs remain or one side has no spread.
    pub pearson_r: Option<f64>,
    pub invalid_fraction: f64,
    /// Exactly two jointly valid samples: any correlation is +-1.
    pub two_point: bool,
    /// Solver calls that gave up before producing a partition.
    pub solver_failures: usize,
    pub pairs: Vec<CalibrationPair>,
}

impl CalibrationReport {
    /// CSV with header `sample,analytical_norm,surrogate_norm,surrogate_valid`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample", "analytical_norm", "surrogate_norm", "surrogate_valid"])?;
        for (i, p) in self.pairs.iter().enumerate() {
            out.write_record([
                (i + 1).to_string(),
                p.analytical.to_string(),
                p.surrogate.map_or_else(String::new, |s| s.to_string()),
                p.surrogate.is_some().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Draws `num_samples` valid partitions with a uniform distribution and
/// compares analytical and surrogate runtimes, each normalised to its own
/// minimum.
pub fn calibration_study(
    g: &ComputationGraph,
    topo: &ChipTopology,
    num_samples: usize,
    cfg: &SurrogateConfig,
    seed: u64,
) -> Result<CalibrationReport, Error> {
    if num_samples < 2 {
        return Err(Error::InvalidArgument("calibration needs at least two samples".into()));
    }
    cfg.validate().map_err(Error::InvalidArgument)?;
    let uniform = DistributionMatrix::uniform(g.num_nodes(), topo.num_chips);
    let mut runs = Vec::with_capacity(num_samples);
    let mut failures = 0;
    let mut k = 0u64;
    while runs.len() < num_samples {
        if failures > 4 * num_samples {
            return Err(
                SolverError::StepBudgetExceeded { budget: crate::solver::STEPS_PER_NODE * g.num_nodes() }.into()
            );
        }
        let mut rng = rng_from_seed(derive_seed(&[seed, k]));
        k += 1;
        let order = NodeOrder::random(g.num_nodes(), &mut rng);
        match solve_sample(g, topo, &order, &uniform, &mut rng) {
            Ok(p) => {
                let a = analytical_eval(g, topo, &p.assignment, AnalyticalModel { include_comm: cfg.include_comm });
                let s = surrogate_eval(g, topo, &p.assignment, cfg);
                runs.push((a.runtime(), s.runtime()));
            }
            Err(SolverError::StepBudgetExceeded { .. }) => failures += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let min_a = runs.iter().filter_map(|r| r.0).fold(f64::INFINITY, f64::min);
    let min_s = runs.iter().filter_map(|r| r.1).fold(f64::INFINITY, f64::min);
    let mut pairs = Vec::with_capacity(runs.len());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut invalid = 0;
    for &(a, s) in &runs {
        let Some(a) = a else {
            // Static-valid partitions can still fail the analytical memory
            // check; count them as surrogate failures too.
            invalid += 1;
            pairs.push(CalibrationPair { analytical: f64::NAN, surrogate: None });
            continue;
        };
        let an = a / min_a;
        let sn = s.map(|s| s / min_s);
        if s.is_none() {
            invalid += 1;
        }
        if let Some(sn) = sn {
            xs.push(an);
            ys.push(sn);
        }
        pairs.push(CalibrationPair { analytical: an, surrogate: sn });
    }
    Ok(CalibrationReport {
        pearson_r: stats::pearson(&xs, &ys),
        invalid_fraction: invalid as f64 / runs.len() as f64,
        two_point: xs.len() == 2,
        solver_failures: failures,
        pairs,
    })
}
