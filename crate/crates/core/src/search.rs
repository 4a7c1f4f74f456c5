//! Baseline strategies: the greedy block heuristic, random search and
//! simulated annealing over solver-produced partitions.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::DistributionMatrix;
use crate::error::SolverError;
use crate::evaluator::Evaluator;
use crate::graph::{ChipTopology, ComputationGraph};
use crate::solver::{
    check_static, solve_sample, NodeOrder, Partition, PartitionSource, StaticConstraint, StaticReport,
};
use crate::util::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_samples: usize,
    #[serde(default)]
    pub max_wall_time: Option<Duration>,
    pub seed: u64,
}

impl SearchBudget {
    pub fn new(max_samples: usize, seed: u64) -> Self {
        SearchBudget { max_samples, max_wall_time: None, seed }
    }

    pub(crate) fn expired(&self, start: Instant) -> bool {
        self.max_wall_time.is_some_and(|t| start.elapsed() >= t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// 1-based.
    pub sample: usize,
    pub throughput: f64,
    pub best: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub records: Vec<SampleRecord>,
    /// Highest-throughput valid partition seen, if any sample was valid.
    pub best_partition: Option<Partition>,
}

impl SearchTrace {
    pub fn best(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.best)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends one evaluated sample. `partition` is `None` for samples that
    /// never produced an assignment (solver budget exhausted).
    pub fn push(&mut self, throughput: f64, valid: bool, partition: Option<&Partition>) {
        let prev = self.best();
        let improved = valid && (self.best_partition.is_none() || throughput > prev);
        if improved {
            self.best_partition = partition.cloned();
        }
        let best = if improved { throughput } else { prev };
        self.records.push(SampleRecord { sample: self.records.len() + 1, throughput, best, valid });
    }

    /// CSV with header `sample,throughput,best,valid`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample", "throughput", "best", "valid"])?;
        for r in &self.records {
            out.write_record([
                r.sample.to_string(),
                r.throughput.to_string(),
                r.best.to_string(),
                r.valid.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cost-balanced contiguous blocks in topological order: a node moves the
/// cursor to the next chip when the running cost including it exceeds
/// `(chip + 1) * total / C`. Blocks that would break the triangle rule are
/// merged with the chips in between.
pub fn greedy_heuristic(g: &ComputationGraph, topo: &ChipTopology) -> Partition {
    let c = topo.num_chips as u32;
    let total: f64 = g.nodes().iter().map(|n| n.compute_cost).sum();
    let target = total / c as f64;
    let mut assignment = vec![0u32; g.num_nodes()];
    let mut chip = 0u32;
    let mut running = 0.0;
    for &v in g.topological_order() {
        running += g.node(v).compute_cost;
        while chip + 1 < c && running > target * (chip + 1) as f64 {
            chip += 1;
        }
        assignment[v.index()] = chip;
    }
    close_gaps(&mut assignment);
    loop {
        match check_static(g, &assignment, topo.num_chips) {
            StaticReport::Ok => break,
            StaticReport::Violated { constraint: StaticConstraint::TriangleDependency, .. } => {
                let (a, b) = first_triangle_edge(g, &assignment, topo.num_chips);
                for x in assignment.iter_mut() {
                    if *x > a && *x <= b {
                        *x = a;
                    }
                }
                close_gaps(&mut assignment);
            }
            StaticReport::Violated { constraint, witness } => {
                unreachable!("contiguous topological blocks cannot violate {constraint:?}: {witness}")
            }
        }
    }
    Partition::new(assignment, PartitionSource::Heuristic)
}

/// Renumbers used chips to 0..k, keeping their order.
fn close_gaps(assignment: &mut [u32]) {
    let mut used: Vec<u32> = assignment.to_vec();
    used.sort_unstable();
    used.dedup();
    for x in assignment.iter_mut() {
        *x = used.binary_search(x).expect("value is in use") as u32;
    }
}

/// Endpoint chips of a cross-chip edge that also has a longer chip path.
fn first_triangle_edge(g: &ComputationGraph, assignment: &[u32], num_chips: usize) -> (u32, u32) {
    let mut out = vec![0u64; num_chips];
    for e in g.edges() {
        let (a, b) = (assignment[e.src.index()], assignment[e.dst.index()]);
        if a != b {
            out[a as usize] |= 1 << b;
        }
    }
    // reach2[a]: chips reachable from a in two or more steps.
    let mut reach = vec![0u64; num_chips];
    let mut reach2 = vec![0u64; num_chips];
    for a in (0..num_chips).rev() {
        let mut via = 0u64;
        for x in 0..num_chips {
            if out[a] & (1 << x) != 0 {
                via |= reach[x];
            }
        }
        reach2[a] = via;
        reach[a] = out[a] | via;
    }
    for e in g.edges() {
        let (a, b) = (assignment[e.src.index()], assignment[e.dst.index()]);
        if a != b && reach2[a as usize] & (1 << b) != 0 {
            return (a, b);
        }
    }
    unreachable!("caller saw a triangle violation")
}

/// Throughput of the greedy heuristic under `eval`, used to normalise
/// rewards and annealing steps. Falls back to the heuristic's compute-only
/// throughput when the evaluator rejects it, and to 1 for zero-cost graphs.
pub fn heuristic_baseline(g: &ComputationGraph, topo: &ChipTopology, eval: &Evaluator) -> f64 {
    let p = greedy_heuristic(g, topo);
    let r = eval.evaluate(g, topo, &p.assignment);
    if r.valid && r.throughput > 0.0 {
        return r.throughput;
    }
    let mut lat = vec![0.0; topo.num_chips];
    for (node, &c) in g.nodes().iter().zip(&p.assignment) {
        lat[c as usize] += node.compute_cost;
    }
    let max = lat.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        1.0 / max
    } else {
        1.0
    }
}

/// One solver call plus evaluation. A solver budget failure counts as an
/// invalid sample; proven infeasibility is returned as an error.
fn sample_and_eval(
    g: &ComputationGraph,
    topo: &ChipTopology,
    eval: &Evaluator,
    probs: &DistributionMatrix,
    rng: &mut Rng,
) -> Result<(f64, bool, Option<Partition>), SolverError> {
    let order = NodeOrder::random(g.num_nodes(), rng);
    match solve_sample(g, topo, &order, probs, rng) {
        Ok(p) => {
            let r = eval.evaluate(g, topo, &p.assignment);
            Ok((r.throughput, r.valid, Some(p)))
        }
        Err(SolverError::StepBudgetExceeded { budget }) => {
            log::debug!("solver gave up after {budget} calls; sample counted as invalid");
            Ok((0.0, false, None))
        }
        Err(e) => Err(e),
    }
}

/// Uniform distribution, fresh random order per sample. Samples are seeded
/// independently from `(budget.seed, index)` and evaluated in parallel.
pub fn random_search(
    g: &ComputationGraph,
    topo: &ChipTopology,
    eval: &Evaluator,
    budget: &SearchBudget,
) -> Result<SearchTrace, SolverError> {
    const CHUNK: usize = 64;
    let start = Instant::now();
    let uniform = DistributionMatrix::uniform(g.num_nodes(), topo.num_chips);
    let mut trace = SearchTrace::default();
    let mut next = 1;
    while next <= budget.max_samples && !budget.expired(start) {
        let end = (next + CHUNK).min(budget.max_samples + 1);
        let results: Vec<_> = (next..end)
            .into_par_iter()
            .map(|s| {
                let mut rng = rng_from_seed(derive_seed(&[budget.seed, s as u64]));
                sample_and_eval(g, topo, eval, &uniform, &mut rng)
            })
            .collect();
        for r in results {
            let (t, valid, p) = r?;
            trace.push(t, valid, p.as_ref());
        }
        next = end;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaConfig {
    pub init_temp: f64,
    pub cooling_rate: f64,
    pub mutation_fraction: f64,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig { init_temp: 0.1, cooling_rate: 0.995, mutation_fraction: 0.05 }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mutation_fraction > 0.0 && self.mutation_fraction <= 1.0) {
            return Err(format!("mutation_fraction must be in (0, 1], got {}", self.mutation_fraction));
        }
        if !(self.init_temp >= 0.0) {
            return Err(format!("init_temp must be >= 0, got {}", self.init_temp));
        }
        if !(self.cooling_rate > 0.0 && self.cooling_rate <= 1.0) {
            return Err(format!("cooling_rate must be in (0, 1], got {}", self.cooling_rate));
        }
        Ok(())
    }
}

/// Metropolis rule on the throughput change, scaled by `scale` so the
/// temperature is independent of the graph's absolute throughput.
pub fn acceptance_probability(current: f64, proposed: f64, scale: f64, temp: f64) -> f64 {
    if proposed >= current {
        1.0
    } else if temp <= 0.0 {
        0.0
    } else {
        ((proposed - current) / (scale * temp)).exp()
    }
}

/// Annealing over distribution matrices: each step redraws
/// `ceil(mutation_fraction * N)` rows from a flat Dirichlet, samples a
/// partition and applies the Metropolis rule to the throughput change divided
/// by the heuristic baseline.
pub fn simulated_annealing(
    g: &ComputationGraph,
    topo: &ChipTopology,
    eval: &Evaluator,
    budget: &SearchBudget,
    cfg: &SaConfig,
) -> Result<SearchTrace, SolverError> {
    let start = Instant::now();
    let n = g.num_nodes();
    let k = ((cfg.mutation_fraction * n as f64).ceil() as usize).clamp(usize::from(n > 0), n);
    let scale = heuristic_baseline(g, topo, eval);
    let mut rng = rng_from_seed(budget.seed);
    let mut current = DistributionMatrix::uniform(n, topo.num_chips);
    let mut current_value: Option<f64> = None;
    let mut temp = cfg.init_temp;
    let mut trace = SearchTrace::default();
    for _ in 0..budget.max_samples {
        if budget.expired(start) {
            break;
        }
        let mut candidate = current.clone();
        for row in sample_indices(&mut rng, n, k) {
            candidate.randomize_row(row, &mut rng);
        }
        let (t, valid, p) = sample_and_eval(g, topo, eval, &candidate, &mut rng)?;
        trace.push(t, valid, p.as_ref());
        let accept = match current_value {
            None => true,
            Some(cur) => rng.random::<f64>() < acceptance_probability(cur, t, scale, temp),
        };
        if accept {
            current = candidate;
            current_value = Some(t);
        }
        temp *= cfg.cooling_rate;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::AnalyticalModel;
    use crate::graph::{DataEdge, NodeId, OpNode};

    fn graph(costs: &[f64], edges: &[(u32, u32)]) -> ComputationGraph {
        let nodes = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| OpNode {
                id: NodeId(i as u32),
                op_kind: "op".into(),
                compute_cost: c,
                output_bytes: 0,
                param_bytes: 0,
            })
            .collect();
        let edges =
            edges.iter().map(|&(s, d)| DataEdge { src: NodeId(s), dst: NodeId(d), transfer_bytes: 1 }).collect();
        ComputationGraph::new(nodes, edges).unwrap()
    }

    fn topo(c: usize) -> ChipTopology {
        ChipTopology::with_chips(c).unwrap()
    }

    #[test]
    fn greedy_examples() {
        let chain = graph(&[1.0; 4], &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(greedy_heuristic(&chain, &topo(2)).assignment, vec![0, 0, 1, 1]);
        assert_eq!(greedy_heuristic(&chain, &topo(1)).assignment, vec![0; 4]);
        assert_eq!(greedy_heuristic(&graph(&[3.0], &[]), &topo(4)).assignment, vec![0]);
    }

    #[test]
    fn greedy_merges_blocks_around_skip_edges() {
        // 0 -> 1 -> 2 plus shortcut 0 -> 2: three blocks on three chips would
        // put a direct 0 -> 2 chip edge next to 0 -> 1 -> 2.
        let g = graph(&[1.0; 3], &[(0, 1), (1, 2), (0, 2)]);
        let p = greedy_heuristic(&g, &topo(3));
        assert!(check_static(&g, &p.assignment, 3).is_ok());
        assert_eq!(p.source, PartitionSource::Heuristic);
    }

    #[test]
    fn trace_best_is_monotone() {
        let mut t = SearchTrace::default();
        let p = Partition::new(vec![0], PartitionSource::Sampled);
        t.push(0.5, true, Some(&p));
        t.push(0.7, false, None);
        t.push(0.4, true, Some(&p));
        let best: Vec<f64> = t.records.iter().map(|r| r.best).collect();
        assert_eq!(best, vec![0.5, 0.5, 0.5]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample,throughput,best,valid\n1,0.5,0.5,true\n"));
    }

    #[test]
    fn random_search_single_chip() {
        let g = graph(&[1.0, 2.0], &[(0, 1)]);
        let eval = Evaluator::Analytical(AnalyticalModel::default());
        let t = random_search(&g, &topo(1), &eval, &SearchBudget::new(1, 5)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.best_partition.unwrap().assignment, vec![0, 0]);
    }

    #[test]
    fn metropolis_limits() {
        assert_eq!(acceptance_probability(1.0, 1.2, 1.0, 0.0), 1.0);
        assert_eq!(acceptance_probability(1.0, 0.9, 1.0, 0.0), 0.0);
        assert!(acceptance_probability(1.0, 0.9, 1.0, 1e-9) < 1e-300);
        assert!((acceptance_probability(1.0, 0.9, 1.0, 0.1) - (-1.0f64).exp()).abs() < 1e-12);
        assert!(acceptance_probability(1.0, 0.0, 1.0, 1e12) > 0.999);
    }

    #[test]
    fn sa_config_checks() {
        assert!(SaConfig::default().validate().is_ok());
        assert!(SaConfig { mutation_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(SaConfig { mutation_fraction: 1.5, ..Default::default() }.validate().is_err());
    }
}
