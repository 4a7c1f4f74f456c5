//! Domain store with propagation and chronological backtracking.
//!
//! Propagators, run to a common fixpoint after every decision:
//!
//! * dataflow: bounds consistency on `f(u) <= f(v)` for every edge;
//! * no skipped chips: every chip up to the largest forced lower bound must
//!   stay coverable, and a chip with a single possible holder is assigned to
//!   that holder;
//! * triangle dependency: over the chip edges between fixed nodes, plus the
//!   chip paths implied by data paths between fixed nodes, a value is pruned
//!   when fixing it would put a direct chip edge next to a longer chip path;
//! * bypass: when edge `u -> v` crosses from chip `a` to chip `b`, every node
//!   on a longer `u -> v` path sits on `a` or `b`, since anything strictly
//!   between would close a longer chip path.
//!
//! All three only remove values that no valid completion uses, so the search
//! stays complete; dead ends left over are handled by backtracking.

use crate::error::SolverError;
use crate::graph::{ComputationGraph, NodeId};

use super::domain::Domain;

struct TrailEntry {
    node: u32,
    values: Domain,
    snapshot: Vec<Domain>,
}

pub struct SolverState<'g> {
    graph: &'g ComputationGraph,
    num_chips: usize,
    domains: Vec<Domain>,
    trail: Vec<TrailEntry>,
    dirty: Vec<u32>,
    calls: usize,
    /// Holder of each chip from the last coverage pass; only a warm start.
    matching: [u32; 64],
}

const NONE: u32 = u32::MAX;

/// Kuhn augmenting path for chip `c`.
fn augment(c: usize, holders: &[Vec<u32>], node_of: &mut [u32; 64], chip_of: &mut [u32], seen: &mut u64) -> bool {
    *seen |= 1 << c;
    for &w in &holders[c] {
        let z = chip_of[w as usize];
        if z == NONE {
            node_of[c] = w;
            chip_of[w as usize] = c as u32;
            return true;
        }
    }
    for &w in &holders[c] {
        let z = chip_of[w as usize] as usize;
        if *seen & (1 << z) == 0 && augment(z, holders, node_of, chip_of, seen) {
            node_of[c] = w;
            chip_of[w as usize] = c as u32;
            return true;
        }
    }
    false
}

impl<'g> SolverState<'g> {
    /// Full domains everywhere, no decisions. Propagation on full domains
    /// removes nothing (all-zero is always valid), so none is run here.
    pub fn new(graph: &'g ComputationGraph, num_chips: usize) -> Self {
        assert!((1..=64).contains(&num_chips), "num_chips must be in 1..=64");
        SolverState {
            graph,
            num_chips,
            domains: vec![Domain::full(num_chips); graph.num_nodes()],
            trail: Vec::new(),
            dirty: Vec::new(),
            calls: 0,
            matching: [NONE; 64],
        }
    }

    /// Starts from caller-restricted domains and propagates them.
    pub fn with_domains(
        graph: &'g ComputationGraph,
        num_chips: usize,
        domains: Vec<Domain>,
    ) -> Result<Self, SolverError> {
        if domains.len() != graph.num_nodes() {
            return Err(SolverError::LengthMismatch { expected: graph.num_nodes(), got: domains.len() });
        }
        let mut s = SolverState::new(graph, num_chips);
        let full = Domain::full(num_chips);
        for (i, d) in domains.into_iter().enumerate() {
            let d = d.intersect(full);
            if d.is_empty() {
                return Err(SolverError::Infeasible);
            }
            if d != full {
                s.domains[i] = d;
                s.dirty.push(i as u32);
            }
        }
        if !s.propagate() {
            return Err(SolverError::Infeasible);
        }
        Ok(s)
    }

    pub fn graph(&self) -> &'g ComputationGraph {
        self.graph
    }

    pub fn num_chips(&self) -> usize {
        self.num_chips
    }

    pub fn get_domain(&self, u: NodeId) -> Domain {
        self.domains[u.index()]
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    /// Number of decisions currently on the trail.
    pub fn decided_count(&self) -> usize {
        self.trail.len()
    }

    /// Total `set_domain` calls so far.
    pub fn calls(&self) -> usize {
        self.calls
    }

    /// The assignment, if every domain is a singleton.
    pub fn assignment(&self) -> Option<Vec<u32>> {
        self.domains.iter().map(|d| d.value()).collect()
    }

    /// Restricts `u` to `values`, propagates, and backtracks on failure.
    ///
    /// Returns the new decision count: one more than before, or fewer when
    /// earlier decisions had to be undone.
    pub fn set_domain(&mut self, u: NodeId, values: Domain) -> Result<usize, SolverError> {
        self.calls += 1;
        let i = u.index();
        let snapshot = self.domains.clone();
        self.trail.push(TrailEntry { node: u.0, values, snapshot });
        let restricted = self.domains[i].intersect(values);
        let ok = if restricted.is_empty() {
            false
        } else {
            if restricted != self.domains[i] {
                self.domains[i] = restricted;
                self.dirty.push(u.0);
            }
            self.propagate()
        };
        if !ok {
            self.backtrack()?;
        }
        Ok(self.trail.len())
    }

    /// Undo decisions until the refutation of one of them is consistent.
    fn backtrack(&mut self) -> Result<(), SolverError> {
        loop {
            let entry = self.trail.pop().ok_or(SolverError::Infeasible)?;
            self.domains = entry.snapshot;
            let i = entry.node as usize;
            let refuted = self.domains[i].without(entry.values);
            if refuted.is_empty() {
                continue;
            }
            self.dirty.clear();
            if refuted != self.domains[i] {
                self.domains[i] = refuted;
                self.dirty.push(entry.node);
            }
            if self.propagate() {
                return Ok(());
            }
        }
    }

    fn propagate(&mut self) -> bool {
        loop {
            if !self.propagate_dataflow() {
                self.dirty.clear();
                return false;
            }
            match self.propagate_coverage() {
                None => return false,
                Some(true) => continue,
                Some(false) => {}
            }
            match self.propagate_bypass() {
                None => return false,
                Some(true) => continue,
                Some(false) => {}
            }
            match self.propagate_triangle() {
                None => return false,
                Some(true) => continue,
                Some(false) => return true,
            }
        }
    }

    /// Bounds propagation for `f(u) <= f(v)` from the dirty worklist.
    fn propagate_dataflow(&mut self) -> bool {
        let g = self.graph;
        let mut queued = vec![false; self.domains.len()];
        for &u in &self.dirty {
            queued[u as usize] = true;
        }
        while let Some(u) = self.dirty.pop() {
            let u = u as usize;
            queued[u] = false;
            let d = self.domains[u];
            let (Some(lo), Some(hi)) = (d.min(), d.max()) else {
                return false;
            };
            for &v in g.succs(u) {
                let v = v as usize;
                let nd = self.domains[v].at_least(lo);
                if nd != self.domains[v] {
                    if nd.is_empty() {
                        return false;
                    }
                    self.domains[v] = nd;
                    if !queued[v] {
                        queued[v] = true;
                        self.dirty.push(v as u32);
                    }
                }
            }
            for &w in g.preds(u) {
                let w = w as usize;
                let nd = self.domains[w].at_most(hi);
                if nd != self.domains[w] {
                    if nd.is_empty() {
                        return false;
                    }
                    self.domains[w] = nd;
                    if !queued[w] {
                        queued[w] = true;
                        self.dirty.push(w as u32);
                    }
                }
            }
        }
        true
    }

    /// `None` on failure, otherwise whether anything changed.
    ///
    /// With `r` the largest domain minimum, chips `0..=r` all end up used, so
    /// they need distinct holders: a matching from those chips into nodes.
    /// A value survives only if some such matching is compatible with it.
    fn propagate_coverage(&mut self) -> Option<bool> {
        let Some(r) = self.domains.iter().filter_map(|d| d.min()).max() else {
            return Some(false);
        };
        let r = r as usize;
        let req = Domain::full(r + 1);
        let mut holders: Vec<Vec<u32>> = vec![Vec::new(); r + 1];
        for (i, d) in self.domains.iter().enumerate() {
            for c in d.intersect(req).iter() {
                holders[c as usize].push(i as u32);
            }
        }
        // Warm start from the previous matching where it is still allowed.
        let n = self.domains.len();
        let mut chip_of = vec![NONE; n];
        let mut node_of = [NONE; 64];
        for c in 0..=r {
            let w = self.matching[c];
            if w != NONE
                && (w as usize) < n
                && chip_of[w as usize] == NONE
                && self.domains[w as usize].contains(c as u32)
            {
                node_of[c] = w;
                chip_of[w as usize] = c as u32;
            }
        }
        for c in 0..=r {
            if node_of[c] == NONE {
                let mut seen = 0u64;
                if !augment(c, &holders, &mut node_of, &mut chip_of, &mut seen) {
                    return None;
                }
            }
        }
        self.matching[..=r].copy_from_slice(&node_of[..=r]);

        // Alternating moves: chip y -> node w (w may take y), then w's
        // matched chip. `free[y]`: an unmatched node is reachable from y.
        let mut adj = [0u64; 64];
        let mut free = 0u64;
        for (y, hs) in holders.iter().enumerate() {
            for &w in hs {
                if node_of[y] == w {
                    continue;
                }
                match chip_of[w as usize] {
                    NONE => free |= 1 << y,
                    z => adj[y] |= 1 << z,
                }
            }
        }
        let mut reach = adj;
        loop {
            let mut grew = false;
            for y in 0..=r {
                let mut acc = reach[y];
                for z in Domain::from_bits(reach[y]).iter() {
                    acc |= reach[z as usize];
                }
                if acc != reach[y] {
                    reach[y] = acc;
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        for y in 0..=r {
            if free & (1 << y) == 0 && reach[y] & free != 0 {
                free |= 1 << y;
            }
        }

        let mut changed = false;
        for v in 0..n {
            let y = chip_of[v];
            if y == NONE {
                continue;
            }
            let d = self.domains[v];
            // Leaving y is fine if y can be re-covered by a free node, or,
            // for a required chip x, by shifting holders along a chain that
            // ends at x's current holder.
            let keep = if free & (1 << y) != 0 {
                d
            } else {
                d.intersect(Domain::from_bits((reach[y as usize] & req.bits()) | (1 << y)))
            };
            if keep != d {
                self.domains[v] = keep;
                self.dirty.push(v as u32);
                changed = true;
            }
        }
        Some(changed)
    }

    /// `None` on failure, otherwise whether anything changed.
    fn propagate_bypass(&mut self) -> Option<bool> {
        let g = self.graph;
        let mut changed = false;
        for (k, e) in g.edges().iter().enumerate() {
            let inner = g.bypassed(k);
            if inner.is_empty() {
                continue;
            }
            let (u, v) = (e.src.index(), e.dst.index());
            match (self.domains[u].value(), self.domains[v].value()) {
                (Some(a), Some(b)) => {
                    if a == b {
                        continue;
                    }
                    let pair = Domain::from_values([a, b]);
                    for &w in inner {
                        let w = w as usize;
                        let nd = self.domains[w].intersect(pair);
                        if nd != self.domains[w] {
                            if nd.is_empty() {
                                return None;
                            }
                            self.domains[w] = nd;
                            self.dirty.push(w as u32);
                            changed = true;
                        }
                    }
                }
                (Some(a), None) => {
                    let d = self.domains[v];
                    let keep = self.bypass_support(inner, a, d, |b| Domain::from_values([a, b]));
                    if keep != d {
                        if keep.is_empty() {
                            return None;
                        }
                        self.domains[v] = keep;
                        self.dirty.push(v as u32);
                        changed = true;
                    }
                }
                (None, Some(b)) => {
                    let d = self.domains[u];
                    let keep = self.bypass_support(inner, b, d, |a| Domain::from_values([a, b]));
                    if keep != d {
                        if keep.is_empty() {
                            return None;
                        }
                        self.domains[u] = keep;
                        self.dirty.push(u as u32);
                        changed = true;
                    }
                }
                (None, None) => {}
            }
        }
        Some(changed)
    }

    /// Values `x` of `d` (other than the fixed endpoint chip) for which every
    /// inner node can still take one of the two endpoint chips.
    fn bypass_support(&self, inner: &[u32], fixed: u32, d: Domain, pair: impl Fn(u32) -> Domain) -> Domain {
        let mut keep = d;
        for x in d.iter() {
            if x == fixed {
                continue;
            }
            let p = pair(x);
            if inner.iter().any(|&w| self.domains[w as usize].intersect(p).is_empty()) {
                keep = keep.without(Domain::singleton(x));
            }
        }
        keep
    }

    /// `None` on failure, otherwise whether anything changed.
    ///
    /// Direct chip edges come from data edges between fixed nodes. Chip paths
    /// also arise through undecided nodes: a fixed node on chip `a` reaching
    /// a fixed node on chip `b` implies some chip path `a -> .. -> b`.
    fn propagate_triangle(&mut self) -> Option<bool> {
        let g = self.graph;
        let c = self.num_chips;
        let n = self.domains.len();
        let fixed: Vec<Option<u32>> = self.domains.iter().map(|d| d.value()).collect();
        let bit = |x: Option<u32>| x.map_or(0u64, |x| 1 << x);
        // Chips of fixed strict ancestors / descendants of each node.
        let mut anc = vec![0u64; n];
        let mut desc = vec![0u64; n];
        for &v in g.topological_order() {
            let v = v.index();
            anc[v] = g.preds(v).iter().fold(0, |m, &p| m | anc[p as usize] | bit(fixed[p as usize]));
        }
        for &v in g.topological_order().iter().rev() {
            let v = v.index();
            desc[v] = g.succs(v).iter().fold(0, |m, &s| m | desc[s as usize] | bit(fixed[s as usize]));
        }
        let mut out = [0u64; 64];
        let mut imp = [0u64; 64];
        for e in g.edges() {
            if let (Some(a), Some(b)) = (fixed[e.src.index()], fixed[e.dst.index()]) {
                if a != b {
                    out[a as usize] |= 1 << b;
                }
            }
        }
        for v in 0..n {
            if let Some(a) = fixed[v] {
                imp[a as usize] |= desc[v] & !(1 << a);
            }
        }
        if !chip_paths_ok(&out[..c], &imp[..c]) {
            return None;
        }
        let mut changed = false;
        for w in 0..n {
            let d = self.domains[w];
            if d.is_singleton() || (anc[w] == 0 && desc[w] == 0) {
                continue;
            }
            let mut pred_chips = 0u64;
            let mut succ_chips = 0u64;
            for &u in g.preds(w) {
                pred_chips |= bit(fixed[u as usize]);
            }
            for &v in g.succs(w) {
                succ_chips |= bit(fixed[v as usize]);
            }
            let mut keep = d;
            for x in d.iter() {
                let xb = 1u64 << x;
                let (mut t_out, mut t_imp) = (out, imp);
                let mut grew = false;
                for a in Domain::from_bits(anc[w] & !xb).iter() {
                    grew |= t_imp[a as usize] & xb == 0;
                    t_imp[a as usize] |= xb;
                }
                for a in Domain::from_bits(pred_chips & !xb).iter() {
                    grew |= t_out[a as usize] & xb == 0;
                    t_out[a as usize] |= xb;
                }
                let below = desc[w] & !xb;
                grew |= t_imp[x as usize] & below != below;
                t_imp[x as usize] |= below;
                let direct = succ_chips & !xb;
                grew |= t_out[x as usize] & direct != direct;
                t_out[x as usize] |= direct;
                if grew && !chip_paths_ok(&t_out[..c], &t_imp[..c]) {
                    keep = keep.without(Domain::singleton(x));
                }
            }
            if keep != d {
                if keep.is_empty() {
                    return None;
                }
                self.domains[w] = keep;
                self.dirty.push(w as u32);
                changed = true;
            }
        }
        Some(changed)
    }
}

/// `imp` holds chip pairs known to be joined by a chip path, `out` the direct
/// chip edges (a subset). True when all of them point upwards and no direct
/// edge `a -> b` also has a path of two or more steps.
fn chip_paths_ok(out: &[u64], imp: &[u64]) -> bool {
    let c = out.len();
    let mut reach = [0u64; 64];
    for a in (0..c).rev() {
        let succ = imp[a] | out[a];
        let not_above = if a >= 63 { u64::MAX } else { (1u64 << (a + 1)) - 1 };
        if succ & not_above != 0 {
            return false;
        }
        let mut via = 0u64;
        for x in Domain::from_bits(succ).iter() {
            via |= reach[x as usize];
        }
        if out[a] & via != 0 {
            return false;
        }
        reach[a] = succ | via;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DataEdge, OpNode};

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

    fn vals(d: Domain) -> Vec<u32> {
        d.iter().collect()
    }

    #[test]
    fn init_is_full_domains() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let s = SolverState::new(&g, 2);
        assert!(s.domains().iter().all(|&d| d == Domain::full(2)));
        let s = SolverState::new(&g, 1);
        assert!(s.domains().iter().all(|&d| vals(d) == vec![0]));
        let empty = ComputationGraph::empty();
        let s = SolverState::new(&empty, 3);
        assert_eq!(s.decided_count(), 0);
        assert!(s.domains().is_empty());
    }

    #[test]
    fn get_after_set() {
        let g = graph(3, &[]);
        let mut s = SolverState::new(&g, 4);
        assert_eq!(vals(s.get_domain(NodeId(0))), vec![0, 1, 2, 3]);
        // Node 2 on chip 2 requires chips 0 and 1 to remain coverable.
        assert_eq!(s.set_domain(NodeId(2), Domain::singleton(2)).unwrap(), 1);
        assert_eq!(vals(s.get_domain(NodeId(2))), vec![2]);
    }

    #[test]
    fn successor_upper_bound_reaches_predecessor() {
        let g = graph(2, &[(0, 1)]);
        let mut s = SolverState::new(&g, 2);
        s.set_domain(NodeId(1), Domain::singleton(0)).unwrap();
        assert_eq!(vals(s.get_domain(NodeId(0))), vec![0]);
    }

    #[test]
    fn chain_lower_bound_propagates() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let mut s = SolverState::new(&g, 3);
        // Node 0 on chip 1 leaves chip 0 without holders: refuted.
        let i = s.set_domain(NodeId(0), Domain::singleton(1)).unwrap();
        assert_eq!(i, 0);
        assert_eq!(vals(s.get_domain(NodeId(0))), vec![0, 2]);
    }

    #[test]
    fn chain_lower_bound_with_free_holder() {
        // A fourth isolated node can cover chip 0.
        let g = graph(4, &[(0, 1), (1, 2)]);
        let mut s = SolverState::new(&g, 3);
        assert_eq!(s.set_domain(NodeId(0), Domain::singleton(1)).unwrap(), 1);
        assert_eq!(vals(s.get_domain(NodeId(1))), vec![1, 2]);
        assert_eq!(vals(s.get_domain(NodeId(2))), vec![1, 2]);
        assert_eq!(vals(s.get_domain(NodeId(3))), vec![0]);
    }

    #[test]
    fn diamond_triangle_pruning() {
        // A=0 -> {B=1, C=2} -> D=3.
        let g = graph(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        let mut s = SolverState::new(&g, 3);
        s.set_domain(NodeId(1), Domain::singleton(0)).unwrap();
        assert_eq!(vals(s.get_domain(NodeId(0))), vec![0]);
        s.set_domain(NodeId(2), Domain::singleton(2)).unwrap();
        // C on chip 2 forces D onto chip 2, leaving chip 1 with no holder, so
        // the decision is refuted.
        assert_eq!(s.decided_count(), 1);
        assert_eq!(vals(s.get_domain(NodeId(2))), vec![0, 1]);
    }

    #[test]
    fn empty_values_backtracks_immediately() {
        let g = graph(2, &[(0, 1)]);
        let mut s = SolverState::new(&g, 2);
        s.set_domain(NodeId(0), Domain::singleton(0)).unwrap();
        let i = s.set_domain(NodeId(1), Domain::EMPTY).unwrap();
        // The empty decision is undone at once and node 1 keeps its domain.
        assert_eq!(i, 1);
        assert_eq!(vals(s.get_domain(NodeId(1))), vec![0, 1]);
    }

    #[test]
    fn exhausting_the_root_is_infeasible() {
        // Node 0 is pinned to chip 2; nodes 1 and 2 must cover chips 0 and 1,
        // but 1 -> 2 forces node 1 lower, and then 0/1/2 form a triangle.
        let g = graph(3, &[(1, 0), (2, 0), (1, 2)]);
        let two = Domain::full(2);
        let mut s = SolverState::with_domains(&g, 3, vec![Domain::singleton(2), two, two]).unwrap();
        assert_eq!(s.set_domain(NodeId(1), Domain::singleton(0)), Err(SolverError::Infeasible));
    }

    #[test]
    fn restricted_init_can_fail() {
        let g = graph(1, &[]);
        assert!(matches!(SolverState::with_domains(&g, 3, vec![Domain::singleton(1)]), Err(SolverError::Infeasible)));
    }

    #[test]
    fn bypass_pins_inner_nodes() {
        // 0 -> 1 -> 2 plus the shortcut 0 -> 2, and a spare node 3.
        let g = graph(4, &[(0, 1), (1, 2), (0, 2)]);
        let mut s = SolverState::new(&g, 4);
        s.set_domain(NodeId(0), Domain::singleton(0)).unwrap();
        s.set_domain(NodeId(2), Domain::singleton(2)).unwrap();
        assert_eq!(vals(s.get_domain(NodeId(1))), vec![0, 2]);
        assert_eq!(vals(s.get_domain(NodeId(3))), vec![1]);
    }

    #[test]
    fn chip_graph_checks() {
        assert!(chip_paths_ok(&[0b010, 0b100, 0], &[0b010, 0b100, 0]));
        assert!(!chip_paths_ok(&[0b110, 0b100, 0], &[0b110, 0b100, 0]));
        assert!(!chip_paths_ok(&[0, 0b001], &[0, 0b001]));
        // Direct 0 -> 2 next to a known path 0 -> 1 -> 2.
        assert!(!chip_paths_ok(&[0b100, 0, 0], &[0b110, 0b100, 0]));
        assert!(chip_paths_ok(&[0b100, 0, 0], &[0b100, 0, 0]));
    }
}
