//! Computation graphs, chip topologies and their JSON representation.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::GraphError;

/// Dense node index in `[0, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: NodeId,
    #[serde(rename = "op")]
    pub op_kind: String,
    #[serde(rename = "cost")]
    pub compute_cost: f64,
    #[serde(rename = "out_bytes")]
    pub output_bytes: u64,
    pub param_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEdge {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(rename = "bytes")]
    pub transfer_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    nodes: Vec<OpNode>,
    edges: Vec<DataEdge>,
}

/// A validated tensor-computation DAG.
///
/// Adjacency lists are derived once at construction; the graph is immutable
/// afterwards and can be shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputationGraph {
    nodes: Vec<OpNode>,
    edges: Vec<DataEdge>,
    preds: Vec<Vec<u32>>,
    succs: Vec<Vec<u32>>,
    topo: Vec<NodeId>,
    bypassed: Vec<Vec<u32>>,
}

impl ComputationGraph {
    /// Builds a graph, checking ids, edge endpoints, duplicates, feature
    /// signs and acyclicity.
    pub fn new(nodes: Vec<OpNode>, edges: Vec<DataEdge>) -> Result<Self, GraphError> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(GraphError::NonDenseId { position: i, id: node.id.0 });
            }
            if !(node.compute_cost >= 0.0) || !node.compute_cost.is_finite() {
                return Err(GraphError::InvalidFeature { node: i as u32, what: "cost" });
            }
        }
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for e in &edges {
            for end in [e.src, e.dst] {
                if end.index() >= n {
                    return Err(GraphError::DanglingEdge { src: e.src.0, dst: e.dst.0, num_nodes: n });
                }
            }
            if e.src == e.dst {
                return Err(GraphError::Cycle { node: e.src.0 });
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(GraphError::DuplicateEdge { src: e.src.0, dst: e.dst.0 });
            }
            succs[e.src.index()].push(e.dst.0);
            preds[e.dst.index()].push(e.src.0);
        }
        for list in preds.iter_mut().chain(succs.iter_mut()) {
            list.sort_unstable();
        }
        let topo = kahn(&preds, &succs)?;
        let bypassed = bypassed_nodes(&edges, &succs, &topo);
        Ok(ComputationGraph { nodes, edges, preds, succs, topo, bypassed })
    }

    pub fn empty() -> Self {
        ComputationGraph::new(Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self, GraphError> {
        let doc: GraphDoc = serde_json::from_reader(reader)?;
        ComputationGraph::new(doc.nodes, doc.edges)
    }

    pub fn from_json_str(s: &str) -> Result<Self, GraphError> {
        ComputationGraph::from_json_reader(s.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GraphError> {
        let file = std::fs::File::open(path)?;
        ComputationGraph::from_json_reader(std::io::BufReader::new(file))
    }

    /// Canonical compact JSON.
    pub fn to_json_string(&self) -> String {
        let doc = GraphDoc { nodes: self.nodes.clone(), edges: self.edges.clone() };
        serde_json::to_string(&doc).expect("graph serialization cannot fail")
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_json_string().as_bytes())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &OpNode {
        &self.nodes[id.index()]
    }

    pub fn edges(&self) -> &[DataEdge] {
        &self.edges
    }

    /// Predecessor indices of `i`, ascending.
    pub fn preds(&self, i: usize) -> &[u32] {
        &self.preds[i]
    }

    /// Successor indices of `i`, ascending.
    pub fn succs(&self, i: usize) -> &[u32] {
        &self.succs[i]
    }

    /// Topological order with the smallest ready `NodeId` taken first.
    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }

    /// Nodes lying strictly inside some longer path from the source to the
    /// destination of edge `edge_index`, ascending.
    pub fn bypassed(&self, edge_index: usize) -> &[u32] {
        &self.bypassed[edge_index]
    }

    /// Length of the longest path (in edges) from any source to each node.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.num_nodes()];
        for &v in &self.topo {
            let v = v.index();
            depth[v] = self.preds[v].iter().map(|&u| depth[u as usize] + 1).max().unwrap_or(0);
        }
        depth
    }

    /// Relabels nodes: new id of old node `i` is `perm[i]`. Used by tests and
    /// by the generator's shuffling.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self, GraphError> {
        assert_eq!(perm.len(), self.num_nodes());
        let mut nodes = vec![None; self.num_nodes()];
        for (old, node) in self.nodes.iter().enumerate() {
            let mut node = node.clone();
            node.id = NodeId::from(perm[old]);
            nodes[perm[old]] = Some(node);
        }
        let nodes = nodes.into_iter().map(|n| n.expect("perm is a bijection")).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| DataEdge {
                src: NodeId::from(perm[e.src.index()]),
                dst: NodeId::from(perm[e.dst.index()]),
                transfer_bytes: e.transfer_bytes,
            })
            .collect();
        ComputationGraph::new(nodes, edges)
    }

    /// Stable 64-bit content fingerprint (FNV-1a over the canonical JSON).
    pub fn fingerprint(&self) -> u64 {
        crate::util::fnv1a(self.to_json_string().as_bytes())
    }
}

fn bypassed_nodes(edges: &[DataEdge], succs: &[Vec<u32>], topo: &[NodeId]) -> Vec<Vec<u32>> {
    let n = succs.len();
    let words = n.div_ceil(64);
    // desc[u]: nodes reachable from u by one or more edges.
    let mut desc = vec![0u64; n * words];
    for &u in topo.iter().rev() {
        let u = u.index();
        for &v in &succs[u] {
            let v = v as usize;
            desc[u * words + v / 64] |= 1 << (v % 64);
            for k in 0..words {
                let w = desc[v * words + k];
                desc[u * words + k] |= w;
            }
        }
    }
    edges
        .iter()
        .map(|e| {
            let (u, v) = (e.src.index(), e.dst.index());
            // w is strictly between when u reaches w and w reaches v.
            (0..n)
                .filter(|&w| {
                    w != v
                        && desc[u * words + w / 64] & (1 << (w % 64)) != 0
                        && desc[w * words + v / 64] & (1 << (v % 64)) != 0
                })
                .map(|w| w as u32)
                .collect()
        })
        .collect()
}

fn kahn(preds: &[Vec<u32>], succs: &[Vec<u32>]) -> Result<Vec<NodeId>, GraphError> {
    let n = preds.len();
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<u32>> = (0..n as u32).filter(|&i| indeg[i as usize] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(NodeId(u));
        for &v in &succs[u as usize] {
            indeg[v as usize] -= 1;
            if indeg[v as usize] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() != n {
        let node = (0..n).find(|&i| indeg[i] > 0).unwrap_or(0) as u32;
        return Err(GraphError::Cycle { node });
    }
    Ok(order)
}

/// Multi-chip module description: `num_chips` dies on a uni-directional ring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChipTopology {
    pub num_chips: usize,
    pub sram_bytes_per_chip: u64,
    pub link_bandwidth_bytes_per_time: f64,
}

impl ChipTopology {
    /// Largest chip count supported; domains are 64-bit masks.
    pub const MAX_CHIPS: usize = 64;

    pub fn new(num_chips: usize, sram_bytes_per_chip: u64, link_bandwidth: f64) -> Result<Self, GraphError> {
        if num_chips == 0 || num_chips > Self::MAX_CHIPS {
            return Err(GraphError::InvalidTopology(format!(
                "num_chips must be in 1..={}, got {num_chips}",
                Self::MAX_CHIPS
            )));
        }
        if sram_bytes_per_chip == 0 {
            return Err(GraphError::InvalidTopology("sram_bytes_per_chip must be positive".into()));
        }
        if !(link_bandwidth > 0.0) || !link_bandwidth.is_finite() {
            return Err(GraphError::InvalidTopology("link bandwidth must be positive".into()));
        }
        Ok(ChipTopology { num_chips, sram_bytes_per_chip, link_bandwidth_bytes_per_time: link_bandwidth })
    }

    /// `num_chips` chips with 32 MiB SRAM each and unit-scaled links
    /// (1 MiB per time unit).
    pub fn with_chips(num_chips: usize) -> Result<Self, GraphError> {
        ChipTopology::new(num_chips, 32 << 20, (1u64 << 20) as f64)
    }
}
