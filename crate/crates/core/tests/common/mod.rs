#![allow(dead_code)]

use mcm_part::util::Rng;
use mcm_part::{generate_synthetic, ComputationGraph, DataEdge, GeneratorConfig, GraphFamily, NodeId, OpNode};
use rand::Rng as _;

/// Random DAG on `n` nodes: each pair `i < j` is an edge with probability `p`.
pub fn random_dag(n: usize, p: f64, rng: &mut Rng) -> ComputationGraph {
    let nodes = (0..n)
        .map(|i| OpNode {
            id: NodeId(i as u32),
            op_kind: "matmul".into(),
            compute_cost: rng.random_range(1.0..10.0),
            output_bytes: rng.random_range(0..4096),
            param_bytes: rng.random_range(0..4096),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push(DataEdge { src: NodeId(i as u32), dst: NodeId(j as u32), transfer_bytes: 64 });
            }
        }
    }
    ComputationGraph::new(nodes, edges).unwrap()
}

/// Mixed-family graph: either a generator family or a uniform random DAG.
pub fn mixed_graph(n: usize, seed: u64, rng: &mut Rng) -> ComputationGraph {
    let k = rng.random_range(0..6);
    if k < 5 {
        generate_synthetic(&GeneratorConfig::new(GraphFamily::ALL[k], n, seed)).unwrap()
    } else {
        random_dag(n, rng.random_range(0.1..0.6), rng)
    }
}
