//! Throughput models: the analytical pipeline model, a memory check, and a
//! noisy surrogate standing in for measurements on hardware.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{ChipTopology, ComputationGraph};
use crate::solver::check_static;
use crate::util::{derive_seed, fnv1a, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    /// Wrong length, out-of-range chip, or a static constraint violation.
    Static,
    Memory,
    /// Injected by the surrogate on top of the memory check.
    Dynamic,
    /// Every chip has zero latency, so throughput is undefined.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub valid: bool,
    pub throughput: f64,
    pub per_chip_latency: Vec<f64>,
    pub per_chip_memory: Vec<u64>,
    pub failure_reason: Option<FailureReason>,
}

impl EvalResult {
    /// Maximum per-chip latency, for valid results.
    pub fn runtime(&self) -> Option<f64> {
        self.valid.then(|| self.per_chip_latency.iter().copied().fold(0.0, f64::max))
    }

    fn invalid(num_chips: usize, reason: FailureReason) -> Self {
        EvalResult {
            valid: false,
            throughput: 0.0,
            per_chip_latency: vec![0.0; num_chips],
            per_chip_memory: vec![0; num_chips],
            failure_reason: Some(reason),
        }
    }
}

/// Per-chip latency model. With `include_comm`, every cross-chip edge adds
/// `bytes / bandwidth` to its source chip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticalModel {
    pub include_comm: bool,
}

impl Default for AnalyticalModel {
    fn default() -> Self {
        AnalyticalModel { include_comm: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    /// Standard deviation of the log of the per-chip latency factor.
    pub noise_scale: f64,
    pub extra_failure_rate: f64,
    /// Fraction of each chip's SRAM that is usable.
    pub memory_headroom: f64,
    pub seed: u64,
    pub include_comm: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            noise_scale: 0.1,
            extra_failure_rate: 0.05,
            memory_headroom: 0.9,
            seed: 0,
            include_comm: true,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(format!("noise_scale must be a finite value >= 0, got {}", self.noise_scale));
        }
        if !(0.0..1.0).contains(&self.extra_failure_rate) {
            return Err(format!("extra_failure_rate must be in [0, 1), got {}", self.extra_failure_rate));
        }
        if !(self.memory_headroom > 0.0) || !self.memory_headroom.is_finite() {
            return Err(format!("memory_headroom must be positive, got {}", self.memory_headroom));
        }
        Ok(())
    }
}

/// Per-chip sums of parameter and output bytes, and whether all of them fit
/// into `headroom * sram_bytes_per_chip`.
pub fn memory_check(g: &ComputationGraph, topo: &ChipTopology, assignment: &[u32], headroom: f64) -> (bool, Vec<u64>) {
    let mut mem = vec![0u64; topo.num_chips];
    for (node, &c) in g.nodes().iter().zip(assignment) {
        let m = &mut mem[c as usize];
        *m = m.saturating_add(node.param_bytes).saturating_add(node.output_bytes);
    }
    let ok = if headroom == 1.0 {
        mem.iter().all(|&m| m <= topo.sram_bytes_per_chip)
    } else {
        let cap = topo.sram_bytes_per_chip as f64 * headroom;
        mem.iter().all(|&m| m as f64 <= cap)
    };
    (ok, mem)
}

fn well_formed(g: &ComputationGraph, topo: &ChipTopology, assignment: &[u32]) -> bool {
    assignment.len() == g.num_nodes()
        && assignment.iter().all(|&c| (c as usize) < topo.num_chips)
        && check_static(g, assignment, topo.num_chips).is_ok()
}

fn latencies(g: &ComputationGraph, topo: &ChipTopology, assignment: &[u32], include_comm: bool) -> Vec<f64> {
    let mut lat = vec![0.0; topo.num_chips];
    for (node, &c) in g.nodes().iter().zip(assignment) {
        lat[c as usize] += node.compute_cost;
    }
    if include_comm {
        for e in g.edges() {
            let (a, b) = (assignment[e.src.index()], assignment[e.dst.index()]);
            if a != b {
                lat[a as usize] += e.transfer_bytes as f64 / topo.link_bandwidth_bytes_per_time;
            }
        }
    }
    lat
}

fn finish(lat: Vec<f64>, mem: Vec<u64>, mem_ok: bool) -> EvalResult {
    let max = lat.iter().copied().fold(0.0, f64::max);
    let reason = if !mem_ok {
        Some(FailureReason::Memory)
    } else if max <= 0.0 {
        Some(FailureReason::Degenerate)
    } else {
        None
    };
    EvalResult {
        valid: reason.is_none(),
        throughput: if reason.is_none() { 1.0 / max } else { 0.0 },
        per_chip_latency: lat,
        per_chip_memory: mem,
        failure_reason: reason,
    }
}

pub fn analytical_eval(
    g: &ComputationGraph,
    topo: &ChipTopology,
    assignment: &[u32],
    model: AnalyticalModel,
) -> EvalResult {
    if !well_formed(g, topo, assignment) {
        return EvalResult::invalid(topo.num_chips, FailureReason::Static);
    }
    let (mem_ok, mem) = memory_check(g, topo, assignment, 1.0);
    finish(latencies(g, topo, assignment, model.include_comm), mem, mem_ok)
}

/// Analytical latencies scaled per chip by `exp(noise_scale * z)`, with a
/// tighter memory budget and random extra failures. The noise and failure
/// draws are seeded by the assignment and `cfg.seed` only.
pub fn surrogate_eval(
    g: &ComputationGraph,
    topo: &ChipTopology,
    assignment: &[u32],
    cfg: &SurrogateConfig,
) -> EvalResult {
    if !well_formed(g, topo, assignment) {
        return EvalResult::invalid(topo.num_chips, FailureReason::Static);
    }
    let key = fnv1a(&assignment.iter().flat_map(|c| c.to_le_bytes()).collect::<Vec<u8>>());
    let mut rng = rng_from_seed(derive_seed(&[key, cfg.seed, assignment.len() as u64]));
    let mut lat = latencies(g, topo, assignment, cfg.include_comm);
    for l in lat.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        if cfg.noise_scale > 0.0 {
            *l *= (cfg.noise_scale * z).exp();
        }
    }
    let extra_failure = rng.random::<f64>() < cfg.extra_failure_rate;
    let (mem_ok, mem) = memory_check(g, topo, assignment, cfg.memory_headroom);
    let mut r = finish(lat, mem, mem_ok);
    if r.valid && extra_failure {
        r.valid = false;
        r.throughput = 0.0;
        r.failure_reason = Some(FailureReason::Dynamic);
    }
    r
}

/// Either evaluator behind one value, so search and training code can take
/// whichever the caller configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Evaluator {
    Analytical(AnalyticalModel),
    Surrogate(SurrogateConfig),
}

impl Default for Evaluator {
    fn default() -> Self {
        Evaluator::Analytical(AnalyticalModel::default())
    }
}

impl Evaluator {
    pub fn evaluate(&self, g: &ComputationGraph, topo: &ChipTopology, assignment: &[u32]) -> EvalResult {
        match self {
            Evaluator::Analytical(m) => analytical_eval(g, topo, assignment, *m),
            Evaluator::Surrogate(cfg) => surrogate_eval(g, topo, assignment, cfg),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Evaluator::Analytical(_) => "analytical",
            Evaluator::Surrogate(_) => "surrogate",
        }
    }

    pub fn include_comm(&self) -> bool {
        match self {
            Evaluator::Analytical(m) => m.include_comm,
            Evaluator::Surrogate(cfg) => cfg.include_comm,
        }
    }
}
