//! Seeded synthetic graph families standing in for a production model corpus.

use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::graph::{ComputationGraph, DataEdge, NodeId, OpNode};
use crate::util::{rng_from_seed, Rng};

/// Op labels emitted by the generator. Models fix their vocabulary to this
/// list plus an unknown bucket.
pub const OP_KINDS: &[&str] =
    &["input", "matmul", "conv", "add", "relu", "pool", "norm", "concat", "lstm", "tanh", "softmax", "output"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFamily {
    Chain,
    Layered,
    RandomDag,
    CnnLike,
    RnnLike,
}

impl GraphFamily {
    pub const ALL: [GraphFamily; 5] =
        [GraphFamily::Chain, GraphFamily::Layered, GraphFamily::RandomDag, GraphFamily::CnnLike, GraphFamily::RnnLike];

    pub fn name(self) -> &'static str {
        match self {
            GraphFamily::Chain => "chain",
            GraphFamily::Layered => "layered",
            GraphFamily::RandomDag => "random-dag",
            GraphFamily::CnnLike => "cnn-like",
            GraphFamily::RnnLike => "rnn-like",
        }
    }
}

impl FromStr for GraphFamily {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GraphFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| GraphError::InvalidConfig(format!("unknown graph family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub family: GraphFamily,
    pub num_nodes: usize,
    pub seed: u64,
    pub cost_range: (f64, f64),
    pub out_bytes_range: (u64, u64),
    pub param_bytes_range: (u64, u64),
    /// Widest layer for the layered family.
    pub max_layer_width: usize,
}

impl GeneratorConfig {
    pub fn new(family: GraphFamily, num_nodes: usize, seed: u64) -> Self {
        GeneratorConfig {
            family,
            num_nodes,
            seed,
            cost_range: (1.0, 10.0),
            out_bytes_range: (1 << 10, 64 << 10),
            param_bytes_range: (0, 1 << 20),
            max_layer_width: 4,
        }
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::InvalidConfig(m.to_string()));
        if self.num_nodes == 0 {
            return bad("num_nodes must be at least 1");
        }
        let (lo, hi) = self.cost_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad("cost_range must satisfy 0 <= min <= max");
        }
        if self.out_bytes_range.0 > self.out_bytes_range.1 {
            return bad("out_bytes_range is empty");
        }
        if self.param_bytes_range.0 > self.param_bytes_range.1 {
            return bad("param_bytes_range is empty");
        }
        if self.max_layer_width == 0 {
            return bad("max_layer_width must be at least 1");
        }
        Ok(())
    }
}

struct Builder<'a> {
    cfg: &'a GeneratorConfig,
    rng: Rng,
    nodes: Vec<OpNode>,
    edges: Vec<DataEdge>,
}

impl Builder<'_> {
    fn add_node(&mut self, op: &str) -> u32 {
        let (clo, chi) = self.cfg.cost_range;
        let cost = if clo == chi { clo } else { self.rng.random_range(clo..=chi) };
        let out = self.rng.random_range(self.cfg.out_bytes_range.0..=self.cfg.out_bytes_range.1);
        let param = self.rng.random_range(self.cfg.param_bytes_range.0..=self.cfg.param_bytes_range.1);
        let id = self.nodes.len() as u32;
        self.nodes.push(OpNode {
            id: NodeId(id),
            op_kind: op.to_string(),
            compute_cost: cost,
            output_bytes: out,
            param_bytes: param,
        });
        id
    }

    fn connect(&mut self, src: u32, dst: u32) {
        if self.edges.iter().any(|e| e.src.0 == src && e.dst.0 == dst) {
            return;
        }
        let bytes = self.nodes[src as usize].output_bytes;
        self.edges.push(DataEdge { src: NodeId(src), dst: NodeId(dst), transfer_bytes: bytes });
    }

    fn remaining(&self) -> usize {
        self.cfg.num_nodes - self.nodes.len()
    }

    fn pick_op(&mut self, choices: &[&'static str]) -> &'static str {
        choices[self.rng.random_range(0..choices.len())]
    }
}

/// Generates a DAG from `cfg`. Output is a pure function of the config.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<ComputationGraph, GraphError> {
    cfg.validate()?;
    let mut b = Builder { cfg, rng: rng_from_seed(cfg.seed), nodes: Vec::new(), edges: Vec::new() };
    match cfg.family {
        GraphFamily::Chain => chain(&mut b),
        GraphFamily::Layered => layered(&mut b),
        GraphFamily::RandomDag => random_dag(&mut b),
        GraphFamily::CnnLike => cnn_like(&mut b),
        GraphFamily::RnnLike => rnn_like(&mut b),
    }
    debug_assert_eq!(b.nodes.len(), cfg.num_nodes);
    ComputationGraph::new(b.nodes, b.edges)
}

fn chain(b: &mut Builder) {
    let mut prev = b.add_node("input");
    while b.remaining() > 0 {
        let op = b.pick_op(&["matmul", "conv", "relu", "add", "norm"]);
        let v = b.add_node(op);
        b.connect(prev, v);
        prev = v;
    }
}

/// Layers of random width; every node after the first layer has at least one
/// predecessor in the previous layer and edges never skip a layer.
fn layered(b: &mut Builder) {
    let mut prev_layer: Vec<u32> = Vec::new();
    while b.remaining() > 0 {
        let width = b.rng.random_range(1..=b.cfg.max_layer_width).min(b.remaining());
        let mut layer = Vec::with_capacity(width);
        for _ in 0..width {
            let op =
                if prev_layer.is_empty() { "input" } else { b.pick_op(&["matmul", "conv", "add", "relu", "norm"]) };
            let v = b.add_node(op);
            if !prev_layer.is_empty() {
                let first = prev_layer[b.rng.random_range(0..prev_layer.len())];
                b.connect(first, v);
                if prev_layer.len() > 1 && b.rng.random_bool(0.5) {
                    let second = prev_layer[b.rng.random_range(0..prev_layer.len())];
                    b.connect(second, v);
                }
            }
            layer.push(v);
        }
        // Give dangling nodes of the previous layer a consumer.
        for &u in &prev_layer {
            if !b.edges.iter().any(|e| e.src.0 == u) {
                let v = layer[b.rng.random_range(0..layer.len())];
                b.connect(u, v);
            }
        }
        prev_layer = layer;
    }
}

fn random_dag(b: &mut Builder) {
    b.add_node("input");
    while b.remaining() > 0 {
        let op = b.pick_op(&["matmul", "conv", "add", "relu", "concat", "norm"]);
        let v = b.add_node(op);
        let fan_in = b.rng.random_range(1..=3usize).min(v as usize);
        for _ in 0..fan_in {
            // Bias towards recent nodes so graphs stay deep.
            let back = b.rng.random_range(1..=v.min(6));
            b.connect(v - back, v);
        }
    }
}

/// Conv/relu backbone with residual blocks and occasional two-way branches.
fn cnn_like(b: &mut Builder) {
    let mut x = b.add_node("input");
    while b.remaining() > 0 {
        let r = b.remaining();
        let roll = b.rng.random_range(0..10);
        if roll < 4 && r >= 3 {
            // Residual: x -> conv -> relu -> add(x)
            let c = b.add_node("conv");
            b.connect(x, c);
            let a = b.add_node("relu");
            b.connect(c, a);
            let s = b.add_node("add");
            b.connect(a, s);
            b.connect(x, s);
            x = s;
        } else if roll < 6 && r >= 3 {
            // Branch: x -> {conv, pool} -> concat
            let c = b.add_node("conv");
            let p = b.add_node("pool");
            b.connect(x, c);
            b.connect(x, p);
            let cat = b.add_node("concat");
            b.connect(c, cat);
            b.connect(p, cat);
            x = cat;
        } else {
            let op = b.pick_op(&["conv", "relu", "norm", "pool"]);
            let v = b.add_node(op);
            b.connect(x, v);
            x = v;
        }
    }
}

/// Unrolled recurrence: per step an input projection and a state update
/// that depends on the previous state.
fn rnn_like(b: &mut Builder) {
    let mut state = b.add_node("input");
    while b.remaining() > 0 {
        if b.remaining() >= 3 {
            let inp = b.add_node("matmul");
            let cell = b.add_node("lstm");
            b.connect(inp, cell);
            b.connect(state, cell);
            let act = b.add_node("tanh");
            b.connect(cell, act);
            state = act;
        } else {
            let op = if b.remaining() == 1 { "softmax" } else { "matmul" };
            let v = b.add_node(op);
            b.connect(state, v);
            state = v;
        }
    }
}
