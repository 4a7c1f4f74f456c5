//! GraphSAGE feature network, feed-forward policy head and optional value
//! head, with hand-written reverse mode.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::RlError;
use crate::graph::ComputationGraph;
use crate::rl::features::{feature_dim, static_features, with_previous};
use crate::util::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub num_chips: usize,
    pub num_layers: usize,
    pub embed_dim: usize,
    pub head_hidden: usize,
    #[serde(default)]
    pub value_head: bool,
}

impl PolicyConfig {
    /// 8 message-passing layers of width 128.
    pub fn standard(num_chips: usize) -> Self {
        PolicyConfig { num_chips, num_layers: 8, embed_dim: 128, head_hidden: 128, value_head: false }
    }

    /// 2 layers of width 16, for tests and quick runs.
    pub fn tiny(num_chips: usize) -> Self {
        PolicyConfig { num_chips, num_layers: 2, embed_dim: 16, head_hidden: 16, value_head: false }
    }

    pub fn profile(name: &str, num_chips: usize) -> Option<Self> {
        match name {
            "default" | "standard" => Some(Self::standard(num_chips)),
            "tiny" => Some(Self::tiny(num_chips)),
            _ => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        feature_dim(self.num_chips)
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if self.num_chips == 0 || self.num_layers == 0 || self.embed_dim == 0 || self.head_hidden == 0 {
            return Err(RlError::DimensionMismatch(format!("all policy dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// (name, rows, cols) of every tensor, in storage order.
    pub(crate) fn shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut d_in = self.input_dim();
        for k in 0..self.num_layers {
            out.push((format!("sage.{k}.weight"), 3 * d_in, self.embed_dim));
            out.push((format!("sage.{k}.bias"), 1, self.embed_dim));
            d_in = self.embed_dim;
        }
        out.push(("head.0.weight".into(), self.embed_dim, self.head_hidden));
        out.push(("head.0.bias".into(), 1, self.head_hidden));
        out.push(("head.1.weight".into(), self.head_hidden, self.num_chips));
        out.push(("head.1.bias".into(), 1, self.num_chips));
        if self.value_head {
            out.push(("value.weight".into(), self.embed_dim, 1));
            out.push(("value.bias".into(), 1, 1));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

/// Network weights, optimizer moments and the running reward baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
    pub adam: AdamState,
    /// Moving average of rewards; `None` until the first update.
    pub baseline: Option<f64>,
}

impl PolicyParams {
    /// Glorot-uniform weights and zero biases. The output layer is scaled
    /// down so the initial policy is close to uniform.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self, RlError> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let shapes = config.shapes();
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, r, c) in &shapes {
            let t = if name.ends_with("bias") {
                Array2::zeros((*r, *c))
            } else {
                let mut limit = (6.0 / (*r + *c) as f64).sqrt();
                if name == "head.1.weight" {
                    limit *= 0.01;
                }
                Array2::from_shape_fn((*r, *c), |_| rng.random_range(-limit..limit))
            };
            tensors.push(t);
        }
        Ok(Self::from_tensors(config, tensors))
    }

    /// All weights zero: a uniform policy.
    pub fn zeros(config: PolicyConfig) -> Result<Self, RlError> {
        config.validate()?;
        let tensors = config.shapes().iter().map(|(_, r, c)| Array2::zeros((*r, *c))).collect();
        Ok(Self::from_tensors(config, tensors))
    }

    fn from_tensors(config: PolicyConfig, tensors: Vec<Array2<f64>>) -> Self {
        let names = config.shapes().into_iter().map(|(n, _, _)| n).collect();
        let zeros: Vec<Array2<f64>> = tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        PolicyParams { config, names, tensors, adam: AdamState { step: 0, m: zeros.clone(), v: zeros }, baseline: None }
    }

    pub fn num_weights(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_weights());
        let mut it = values.iter();
        for t in &mut self.tensors {
            t.iter_mut().for_each(|x| *x = *it.next().unwrap());
        }
    }

    pub(crate) fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect()
    }

    fn layer(&self, k: usize) -> (&Array2<f64>, &Array2<f64>) {
        (&self.tensors[2 * k], &self.tensors[2 * k + 1])
    }

    fn head_index(&self) -> usize {
        2 * self.config.num_layers
    }

    /// One Adam step with the usual bias correction.
    pub(crate) fn adam_step(&mut self, grads: &[Array2<f64>], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - B1.powi(t);
        let c2 = 1.0 - B2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.adam.m[i];
            let v = &mut self.adam.v[i];
            let w = &mut self.tensors[i];
            ndarray::Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            });
        }
    }
}

/// Graph structure and static features, prepared once per graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub num_nodes: usize,
    pub static_feats: Array2<f64>,
    preds: Vec<Vec<u32>>,
    succs: Vec<Vec<u32>>,
}

impl GraphContext {
    pub fn new(g: &ComputationGraph) -> Self {
        let n = g.num_nodes();
        GraphContext {
            num_nodes: n,
            static_feats: static_features(g),
            preds: (0..n).map(|i| g.preds(i).to_vec()).collect(),
            succs: (0..n).map(|i| g.succs(i).to_vec()).collect(),
        }
    }

    pub fn features(&self, num_chips: usize, prev: Option<&[u32]>) -> Array2<f64> {
        with_previous(&self.static_feats, num_chips, prev)
    }
}

/// Mean of neighbour rows; the zero vector for nodes without neighbours.
fn aggregate(x: &Array2<f64>, lists: &[Vec<u32>]) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, list) in lists.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let mut row = out.row_mut(i);
        for &j in list {
            row += &x.row(j as usize);
        }
        row /= list.len() as f64;
    }
    out
}

/// Adjoint of [`aggregate`], accumulated into `dx`.
fn aggregate_back(d_agg: &Array2<f64>, lists: &[Vec<u32>], dx: &mut Array2<f64>) {
    for (i, list) in lists.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let share = &d_agg.row(i) / list.len() as f64;
        for &j in list {
            let mut row = dx.row_mut(j as usize);
            row += &share;
        }
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    concats: Vec<Array2<f64>>,
    pres: Vec<Array2<f64>>,
    pub embed: Array2<f64>,
    head_pre: Array2<f64>,
    head_act: Array2<f64>,
    pub logits: Array2<f64>,
}

pub(crate) fn check_input(params: &PolicyParams, feats: &Array2<f64>, ctx: &GraphContext) -> Result<(), RlError> {
    if feats.ncols() != params.config.input_dim() || feats.nrows() != ctx.num_nodes {
        return Err(RlError::DimensionMismatch(format!(
            "features are {}x{}, network expects {}x{}",
            feats.nrows(),
            feats.ncols(),
            ctx.num_nodes,
            params.config.input_dim()
        )));
    }
    Ok(())
}

pub(crate) fn embed(
    params: &PolicyParams,
    ctx: &GraphContext,
    feats: Array2<f64>,
) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let mut x = feats;
    let mut concats = Vec::with_capacity(params.config.num_layers);
    let mut pres = Vec::with_capacity(params.config.num_layers);
    for k in 0..params.config.num_layers {
        let (w, b) = params.layer(k);
        let a_in = aggregate(&x, &ctx.preds);
        let a_out = aggregate(&x, &ctx.succs);
        let z = concatenate(Axis(1), &[x.view(), a_in.view(), a_out.view()]).expect("rows agree");
        let pre = z.dot(w) + b;
        x = pre.mapv(relu);
        concats.push(z);
        pres.push(pre);
    }
    (x, concats, pres)
}

pub(crate) fn head(params: &PolicyParams, embed: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let h = params.head_index();
    let head_pre = embed.dot(&params.tensors[h]) + &params.tensors[h + 1];
    let head_act = head_pre.mapv(relu);
    let logits = head_act.dot(&params.tensors[h + 2]) + &params.tensors[h + 3];
    (head_pre, head_act, logits)
}

pub(crate) fn forward(params: &PolicyParams, ctx: &GraphContext, feats: Array2<f64>) -> Tape {
    let (embed, concats, pres) = embed(params, ctx, feats);
    let (head_pre, head_act, logits) = head(params, &embed);
    Tape { concats, pres, embed, head_pre, head_act, logits }
}

/// Value estimate from the mean-pooled embedding. Requires the value head.
pub(crate) fn value(params: &PolicyParams, embed: &Array2<f64>) -> f64 {
    let h = params.head_index() + 4;
    let pooled = embed.mean_axis(Axis(0)).expect("graph has nodes");
    pooled.dot(&params.tensors[h].column(0)) + params.tensors[h + 1][[0, 0]]
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - lse);
    }
    out
}

/// Accumulates parameter gradients given the loss adjoint of the logits and
/// of the value output.
pub(crate) fn backward(
    params: &PolicyParams,
    ctx: &GraphContext,
    tape: &Tape,
    d_logits: &Array2<f64>,
    d_value: f64,
    grads: &mut [Array2<f64>],
) {
    let h = params.head_index();
    grads[h + 2] += &tape.head_act.t().dot(d_logits);
    grads[h + 3] += &d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut d_head = d_logits.dot(&params.tensors[h + 2].t());
    ndarray::Zip::from(&mut d_head).and(&tape.head_pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0
        }
    });
    grads[h] += &tape.embed.t().dot(&d_head);
    grads[h + 1] += &d_head.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dx = d_head.dot(&params.tensors[h].t());
    if d_value != 0.0 {
        let v = h + 4;
        let n = tape.embed.nrows() as f64;
        let pooled = tape.embed.mean_axis(Axis(0)).expect("graph has nodes");
        grads[v].column_mut(0).scaled_add(d_value, &pooled);
        grads[v + 1][[0, 0]] += d_value;
        let share = &params.tensors[v].column(0) * (d_value / n);
        for mut row in dx.rows_mut() {
            row += &share;
        }
    }
    for k in (0..params.config.num_layers).rev() {
        let mut d_pre = dx;
        ndarray::Zip::from(&mut d_pre).and(&tape.pres[k]).for_each(|d, &p| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
        grads[2 * k] += &tape.concats[k].t().dot(&d_pre);
        grads[2 * k + 1] += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        if k == 0 {
            break;
        }
        let dz = d_pre.dot(&params.tensors[2 * k].t());
        let d = dz.ncols() / 3;
        let mut d_in = dz.slice(s![.., ..d]).to_owned();
        aggregate_back(&dz.slice(s![.., d..2 * d]).to_owned(), &ctx.preds, &mut d_in);
        aggregate_back(&dz.slice(s![.., 2 * d..]).to_owned(), &ctx.succs, &mut d_in);
        dx = d_in;
    }
}
