//! Constraint solver producing valid chip assignments.

mod check;
mod domain;
mod state;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use check::{check_static, StaticConstraint, StaticReport};
pub use domain::Domain;
pub use state::SolverState;

use crate::distribution::{sample_index, DistributionMatrix};
use crate::error::SolverError;
use crate::graph::{ChipTopology, ComputationGraph, NodeId};
use crate::util::Rng;

/// `set_domain` calls allowed per node in one solve.
pub const STEPS_PER_NODE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionSource {
    Sampled,
    Repaired,
    Heuristic,
    BruteForce,
    /// Loaded from a file or produced outside the solver.
    External,
}

/// Total assignment of nodes to chip ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    pub assignment: Vec<u32>,
    pub source: PartitionSource,
}

#[derive(Serialize, Deserialize)]
struct PartitionDoc {
    assignment: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    valid: Option<bool>,
    #[serde(default = "external")]
    source: PartitionSource,
}

fn external() -> PartitionSource {
    PartitionSource::External
}

impl Partition {
    pub fn new(assignment: Vec<u32>, source: PartitionSource) -> Self {
        Partition { assignment, source }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Highest chip id in use, or `None` for an empty partition.
    pub fn max_chip(&self) -> Option<u32> {
        self.assignment.iter().copied().max()
    }

    /// `{"assignment":[..],"valid":..,"source":".."}` with validity computed
    /// against `g` and `num_chips`.
    pub fn to_json_value(&self, g: &ComputationGraph, num_chips: usize) -> serde_json::Value {
        let valid = self.assignment.len() == g.num_nodes()
            && self.assignment.iter().all(|&c| (c as usize) < num_chips)
            && check_static(g, &self.assignment, num_chips).is_ok();
        serde_json::to_value(PartitionDoc {
            assignment: self.assignment.clone(),
            valid: Some(valid),
            source: self.source,
        })
        .expect("partition serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        let doc: PartitionDoc = serde_json::from_str(s)?;
        Ok(Partition { assignment: doc.assignment, source: doc.source })
    }

    /// Range and length check; does not evaluate the static constraints.
    pub fn check_shape(&self, g: &ComputationGraph, num_chips: usize) -> Result<(), SolverError> {
        if self.assignment.len() != g.num_nodes() {
            return Err(SolverError::LengthMismatch { expected: g.num_nodes(), got: self.assignment.len() });
        }
        if let Some(&value) = self.assignment.iter().find(|&&c| c as usize >= num_chips) {
            return Err(SolverError::ValueOutOfRange { value, num_chips });
        }
        Ok(())
    }
}

/// Visiting order for the solver: a permutation of all node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeOrder(Vec<NodeId>);

impl NodeOrder {
    pub fn new(order: Vec<NodeId>) -> Result<Self, SolverError> {
        let mut seen = vec![false; order.len()];
        for id in &order {
            match seen.get_mut(id.index()) {
                Some(s) if !*s => *s = true,
                _ => return Err(SolverError::InvalidOrder),
            }
        }
        Ok(NodeOrder(order))
    }

    pub fn identity(n: usize) -> Self {
        NodeOrder((0..n).map(NodeId::from).collect())
    }

    /// A fresh uniformly random permutation.
    pub fn random(n: usize, rng: &mut Rng) -> Self {
        let mut v: Vec<NodeId> = (0..n).map(NodeId::from).collect();
        v.shuffle(rng);
        NodeOrder(v)
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Entry point matching the `init_solver` step of the solve loops.
pub fn init_solver<'g>(g: &'g ComputationGraph, topo: &ChipTopology) -> SolverState<'g> {
    SolverState::new(g, topo.num_chips)
}

fn step_budget(n: usize) -> usize {
    STEPS_PER_NODE * n.max(1)
}

fn finish(state: &SolverState, source: PartitionSource) -> Partition {
    let assignment = state.assignment().expect("all nodes decided at loop exit");
    debug_assert!(check_static(state.graph(), &assignment, state.num_chips()).is_ok());
    Partition { assignment, source }
}

/// Restart schedule: the Luby sequence 1, 1, 2, 1, 1, 2, 4, ..., scaled by
/// the number of nodes.
fn luby(i: u64) -> u64 {
    // i is 1-based.
    let mut k = 1;
    while (1u64 << k) - 1 < i {
        k += 1;
    }
    if (1u64 << k) - 1 == i {
        1 << (k - 1)
    } else {
        luby(i - (1 << (k - 1)) + 1)
    }
}

/// Runs `attempt` with a fresh solver until it completes, restarting on the
/// Luby schedule. The first attempt visits nodes in `order`; restarts use a
/// fresh random order. The total number of `set_domain` calls stays within
/// `budget`.
fn with_restarts<'g>(
    g: &'g ComputationGraph,
    topo: &ChipTopology,
    order: &NodeOrder,
    unit: usize,
    budget: usize,
    rng: &mut Rng,
    mut attempt: impl FnMut(&mut SolverState<'g>, &[NodeId], usize, &mut Rng) -> Result<bool, SolverError>,
) -> Result<SolverState<'g>, SolverError> {
    let mut spent = 0;
    let mut visit = order.as_slice().to_vec();
    for k in 1.. {
        if spent >= budget {
            break;
        }
        if k > 1 {
            visit.shuffle(rng);
        }
        let limit = (luby(k) as usize * unit).min(budget - spent);
        let mut state = init_solver(g, topo);
        let done = attempt(&mut state, &visit, limit, rng)?;
        spent += state.calls();
        if done {
            return Ok(state);
        }
    }
    Err(SolverError::StepBudgetExceeded { budget })
}

/// SAMPLE mode: visit nodes in `order`, drawing each value from the node's
/// row of `probs` restricted to its live domain.
pub fn solve_sample(
    g: &ComputationGraph,
    topo: &ChipTopology,
    order: &NodeOrder,
    probs: &DistributionMatrix,
    rng: &mut Rng,
) -> Result<Partition, SolverError> {
    let n = g.num_nodes();
    if order.len() != n {
        return Err(SolverError::LengthMismatch { expected: n, got: order.len() });
    }
    if probs.num_nodes() != n || probs.num_chips() != topo.num_chips {
        return Err(SolverError::LengthMismatch { expected: n * topo.num_chips, got: probs.as_flat().len() });
    }
    let mut weights = vec![0.0; topo.num_chips];
    let state = with_restarts(g, topo, order, 2 * n.max(1), step_budget(n), rng, |state, visit, limit, rng| {
        let mut i = 0;
        while i < n {
            if state.calls() >= limit {
                return Ok(false);
            }
            let u = visit[i];
            let values: Vec<u32> = state.get_domain(u).iter().collect();
            let row = probs.row(u.index());
            weights.clear();
            weights.extend(values.iter().map(|&c| row[c as usize]));
            let pick = values[sample_index(&weights, rng)];
            i = state.set_domain(u, Domain::singleton(pick))?;
        }
        Ok(true)
    })?;
    Ok(finish(&state, PartitionSource::Sampled))
}

/// FIX mode: keep every candidate value the solver still allows, then fill
/// the rest uniformly at random from their domains, in the same order.
pub fn solve_fix(
    g: &ComputationGraph,
    topo: &ChipTopology,
    order: &NodeOrder,
    candidate: &[u32],
    rng: &mut Rng,
) -> Result<Partition, SolverError> {
    let n = g.num_nodes();
    if order.len() != n {
        return Err(SolverError::LengthMismatch { expected: n, got: order.len() });
    }
    if candidate.len() != n {
        return Err(SolverError::LengthMismatch { expected: n, got: candidate.len() });
    }
    if let Some(&value) = candidate.iter().find(|&&c| c as usize >= topo.num_chips) {
        return Err(SolverError::ValueOutOfRange { value, num_chips: topo.num_chips });
    }
    let state = with_restarts(g, topo, order, 4 * n.max(1), step_budget(2 * n), rng, |state, visit, limit, rng| {
        let mut i = 0;
        while i < 2 * n {
            if state.calls() >= limit {
                return Ok(false);
            }
            let u = visit[i % n];
            let domain = state.get_domain(u);
            i = if i < n {
                let want = candidate[u.index()];
                if domain.contains(want) {
                    state.set_domain(u, Domain::singleton(want))?
                } else {
                    state.set_domain(u, domain)?
                }
            } else {
                let pick = domain.nth(rng.random_range(0..domain.len())).expect("live domain is non-empty");
                state.set_domain(u, Domain::singleton(pick))?
            };
        }
        Ok(true)
    })?;
    Ok(finish(&state, PartitionSource::Repaired))
}

/// Every valid assignment, in lexicographic order (node 0 most significant).
/// Fails when `num_chips^N` exceeds `limit`.
pub fn enumerate_valid(g: &ComputationGraph, topo: &ChipTopology, limit: u128) -> Result<Vec<Partition>, SolverError> {
    let n = g.num_nodes();
    let c = topo.num_chips;
    let needed = (c as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if needed > limit {
        return Err(SolverError::LimitExceeded { needed, limit });
    }
    let mut out = Vec::new();
    let mut y = vec![0u32; n];
    loop {
        if check_static(g, &y, c).is_ok() {
            out.push(Partition::new(y.clone(), PartitionSource::BruteForce));
        }
        // Odometer increment, last node fastest.
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            y[k] += 1;
            if (y[k] as usize) < c {
                break;
            }
            y[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DataEdge, OpNode};
    use crate::util::rng_from_seed;

    fn graph(n: usize, edges: &[(u32, u32)]) -> ComputationGraph {
        let nodes = (0..n)
            .map(|i| OpNode {
                id: NodeId(i as u32),
                op_kind: "op".into(),
                compute_cost: 1.0,
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
    fn luby_prefix() {
        let seq: Vec<u64> = (1..=15).map(luby).collect();
        assert_eq!(seq, vec![1, 1, 2, 1, 1, 2, 4, 1, 1, 2, 1, 1, 2, 4, 8]);
    }

    #[test]
    fn enumerate_small_cases() {
        let one = enumerate_valid(&graph(1, &[]), &topo(3), 1_000).unwrap();
        assert_eq!(one.iter().map(|p| p.assignment.clone()).collect::<Vec<_>>(), vec![vec![0]]);

        let chain = enumerate_valid(&graph(2, &[(0, 1)]), &topo(2), 1_000).unwrap();
        assert_eq!(chain.iter().map(|p| p.assignment.clone()).collect::<Vec<_>>(), vec![vec![0, 0], vec![0, 1]]);

        let empty = enumerate_valid(&ComputationGraph::empty(), &topo(4), 1).unwrap();
        assert_eq!(empty.len(), 1);
        assert!(empty[0].assignment.is_empty());

        assert!(matches!(enumerate_valid(&graph(10, &[]), &topo(4), 1_000), Err(SolverError::LimitExceeded { .. })));
    }

    #[test]
    fn single_chip_forces_zeros() {
        let g = graph(4, &[(0, 1), (1, 2), (0, 3)]);
        let mut rng = rng_from_seed(3);
        let order = NodeOrder::random(4, &mut rng);
        let p = solve_sample(&g, &topo(1), &order, &DistributionMatrix::uniform(4, 1), &mut rng).unwrap();
        assert_eq!(p.assignment, vec![0; 4]);
        let p = solve_fix(&g, &topo(1), &order, &[0, 0, 0, 0], &mut rng).unwrap();
        assert_eq!(p.assignment, vec![0; 4]);
    }

    #[test]
    fn concentrated_invalid_distribution_still_valid() {
        // All mass on chip 2 for every node: chip 0 and 1 would be skipped.
        let g = graph(3, &[(0, 1), (1, 2)]);
        let probs = DistributionMatrix::from_flat(3, 3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut rng = rng_from_seed(11);
        for _ in 0..50 {
            let order = NodeOrder::random(3, &mut rng);
            let p = solve_sample(&g, &topo(3), &order, &probs, &mut rng).unwrap();
            assert!(check_static(&g, &p.assignment, 3).is_ok(), "{:?}", p.assignment);
        }
    }

    #[test]
    fn fix_reverses_backwards_chain() {
        let g = graph(2, &[(0, 1)]);
        let mut rng = rng_from_seed(5);
        let mut outcomes = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let order = NodeOrder::random(2, &mut rng);
            let p = solve_fix(&g, &topo(2), &order, &[1, 0], &mut rng).unwrap();
            assert!(p.assignment[0] <= p.assignment[1]);
            assert!(check_static(&g, &p.assignment, 2).is_ok());
            outcomes.insert(p.assignment);
        }
        // Only [0,0] is reachable: [0,1] changes both coordinates, and [1,1]
        // would skip chip 0. Keeping y_1 = 0 forces node 0 to 0.
        assert_eq!(outcomes.into_iter().collect::<Vec<_>>(), vec![vec![0, 0]]);
    }

    #[test]
    fn order_must_be_permutation() {
        assert!(NodeOrder::new(vec![NodeId(0), NodeId(0)]).is_err());
        assert!(NodeOrder::new(vec![NodeId(1), NodeId(2)]).is_err());
        assert!(NodeOrder::new(vec![NodeId(1), NodeId(0)]).is_ok());
    }

    #[test]
    fn partition_json_shape() {
        let g = graph(2, &[(0, 1)]);
        let p = Partition::new(vec![0, 1], PartitionSource::Repaired);
        assert_eq!(
            serde_json::to_string(&p.to_json_value(&g, 2)).unwrap(),
            r#"{"assignment":[0,1],"valid":true,"source":"repaired"}"#
        );
        let back = Partition::from_json_str(r#"{"assignment":[1,0]}"#).unwrap();
        assert_eq!(back.source, PartitionSource::External);
    }
}
