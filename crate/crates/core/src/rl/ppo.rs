//! Rollouts with iterative refinement, the clipped-surrogate update and the
//! training loops built on them.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{sample_index, DistributionMatrix};
use crate::error::{RlError, SolverError};
use crate::evaluator::Evaluator;
use crate::graph::{ChipTopology, ComputationGraph};
use crate::rl::net::{self, GraphContext, PolicyConfig, PolicyParams};
use crate::search::{heuristic_baseline, SearchBudget, SearchTrace};
use crate::solver::{check_static, solve_fix, solve_sample, NodeOrder, Partition, PartitionSource};
use crate::stats;
use crate::util::{derive_seed, rng_from_seed, Rng};

const INIT_STREAM: u64 = 0x1417;
const UPDATE_STREAM: u64 = 0x0DA7;

/// How the final candidate is turned into a valid partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairMode {
    /// Keep the candidate's feasible values, complete the rest at random.
    #[default]
    Fix,
    /// Resample every node from the final distribution.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub num_rollouts: usize,
    pub num_minibatches: usize,
    pub num_epochs: usize,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    /// Refinement steps T per rollout.
    pub refinement_steps: usize,
    pub entropy_bonus: f64,
    /// Weight of the value loss; only used with a value head.
    pub value_coef: f64,
    pub baseline_decay: f64,
    /// Divide advantages by the batch reward standard deviation.
    pub normalize_advantages: bool,
    /// Repair the final candidate with the solver. Off for the ablation
    /// where an invalid candidate simply earns zero.
    pub use_solver: bool,
    pub repair: RepairMode,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            num_rollouts: 20,
            num_minibatches: 4,
            num_epochs: 10,
            clip_epsilon: 0.2,
            learning_rate: 1e-4,
            refinement_steps: 2,
            entropy_bonus: 0.01,
            value_coef: 0.5,
            baseline_decay: 0.9,
            normalize_advantages: true,
            use_solver: true,
            repair: RepairMode::Fix,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_rollouts == 0 || self.num_minibatches == 0 || self.num_epochs == 0 || self.refinement_steps == 0 {
            return Err("num_rollouts, num_minibatches, num_epochs and refinement_steps must be positive".into());
        }
        if self.num_minibatches > self.num_rollouts {
            return Err(format!(
                "num_minibatches ({}) exceeds num_rollouts ({})",
                self.num_minibatches, self.num_rollouts
            ));
        }
        if !(self.clip_epsilon > 0.0) || !(self.learning_rate > 0.0) || !(self.entropy_bonus >= 0.0) {
            return Err("clip_epsilon and learning_rate must be positive, entropy_bonus non-negative".into());
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(format!("baseline_decay must be in [0, 1), got {}", self.baseline_decay));
        }
        Ok(())
    }
}

/// A graph prepared for rollouts: features, topology, evaluator and the
/// heuristic throughput that rewards are divided by.
#[derive(Debug, Clone)]
pub struct RlEnv<'a> {
    pub graph: &'a ComputationGraph,
    pub topo: &'a ChipTopology,
    pub evaluator: &'a Evaluator,
    pub ctx: GraphContext,
    pub reference: f64,
}

impl<'a> RlEnv<'a> {
    pub fn new(graph: &'a ComputationGraph, topo: &'a ChipTopology, evaluator: &'a Evaluator) -> Self {
        RlEnv {
            graph,
            topo,
            evaluator,
            ctx: GraphContext::new(graph),
            reference: heuristic_baseline(graph, topo, evaluator),
        }
    }

    fn check(&self, params: &PolicyParams) -> Result<(), RlError> {
        if params.config.num_chips != self.topo.num_chips {
            return Err(RlError::DimensionMismatch(format!(
                "policy built for {} chips, topology has {}",
                params.config.num_chips, self.topo.num_chips
            )));
        }
        if self.graph.is_empty() {
            return Err(RlError::DimensionMismatch("graph has no nodes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Action of the previous step fed back as features; `None` on step one.
    pub prev: Option<Vec<u32>>,
    pub actions: Vec<u32>,
    /// Log-probability of each node's sampled action.
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<StepRecord>,
    /// Distribution of the final step.
    pub probs: DistributionMatrix,
    /// Final sampled candidate y.
    pub candidate: Vec<u32>,
    /// Repaired partition y'; `None` when the solver gave up or, without the
    /// solver, when the candidate breaks a static rule.
    pub partition: Option<Partition>,
    pub throughput: f64,
    pub valid: bool,
    pub reward: f64,
    /// The solver failed to produce a partition.
    pub solver_failed: bool,
}

/// Node embeddings for `g`, with `prev` fed back as the previous action.
pub fn embed_graph(g: &ComputationGraph, params: &PolicyParams, prev: Option<&[u32]>) -> Result<Array2<f64>, RlError> {
    let ctx = GraphContext::new(g);
    if let Some(prev) = prev {
        if prev.len() != g.num_nodes() {
            return Err(RlError::DimensionMismatch(format!(
                "{} previous actions for {} nodes",
                prev.len(),
                g.num_nodes()
            )));
        }
        if let Some(&c) = prev.iter().find(|&&c| c as usize >= params.config.num_chips) {
            return Err(RlError::DimensionMismatch(format!("previous action {c} outside the policy's chips")));
        }
    }
    let feats = ctx.features(params.config.num_chips, prev);
    net::check_input(params, &feats, &ctx)?;
    Ok(net::embed(params, &ctx, feats).0)
}

/// Row softmax of the policy head applied to embeddings `h`.
pub fn policy_forward(h: &Array2<f64>, params: &PolicyParams) -> Result<DistributionMatrix, RlError> {
    if h.ncols() != params.config.embed_dim {
        return Err(RlError::DimensionMismatch(format!(
            "embedding width {} but head expects {}",
            h.ncols(),
            params.config.embed_dim
        )));
    }
    Ok(to_distribution(&net::log_softmax(&net::head(params, h).2)))
}

fn to_distribution(logp: &Array2<f64>) -> DistributionMatrix {
    let (n, c) = logp.dim();
    let mut probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    for row in probs.chunks_mut(c) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
    DistributionMatrix::from_flat(n, c, probs).expect("softmax rows are stochastic")
}

fn first_step_log_probs(params: &PolicyParams, ctx: &GraphContext) -> Array2<f64> {
    let feats = ctx.features(params.config.num_chips, None);
    net::log_softmax(&net::forward(params, ctx, feats).logits)
}

fn sample_step(logp: &Array2<f64>, prev: Option<Vec<u32>>, rng: &mut Rng) -> StepRecord {
    let mut actions = Vec::with_capacity(logp.nrows());
    let mut log_probs = Vec::with_capacity(logp.nrows());
    let mut weights = vec![0.0; logp.ncols()];
    for row in logp.rows() {
        weights.iter_mut().zip(row).for_each(|(w, l)| *w = l.exp());
        let a = sample_index(&weights, rng);
        actions.push(a as u32);
        log_probs.push(row[a]);
    }
    StepRecord { prev, actions, log_probs }
}

fn rollout_with(
    env: &RlEnv,
    params: &PolicyParams,
    cfg: &PpoConfig,
    first: &Array2<f64>,
    rng: &mut Rng,
) -> Result<Rollout, RlError> {
    let c = params.config.num_chips;
    let mut steps = Vec::with_capacity(cfg.refinement_steps);
    let mut logp = first.clone();
    steps.push(sample_step(&logp, None, rng));
    for _ in 1..cfg.refinement_steps {
        let prev = steps.last().unwrap().actions.clone();
        let feats = env.ctx.features(c, Some(&prev));
        logp = net::log_softmax(&net::forward(params, &env.ctx, feats).logits);
        steps.push(sample_step(&logp, Some(prev), rng));
    }
    let candidate = steps.last().unwrap().actions.clone();
    let probs = to_distribution(&logp);
    let mut solver_failed = false;
    let partition = if cfg.use_solver {
        let order = NodeOrder::random(env.graph.num_nodes(), rng);
        let repaired = match cfg.repair {
            RepairMode::Fix => solve_fix(env.graph, env.topo, &order, &candidate, rng),
            RepairMode::Sample => solve_sample(env.graph, env.topo, &order, &probs, rng),
        };
        match repaired {
            Ok(p) => Some(p),
            Err(e @ (SolverError::Infeasible | SolverError::StepBudgetExceeded { .. })) => {
                log::debug!("rollout repair failed: {e}");
                solver_failed = true;
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        check_static(env.graph, &candidate, c)
            .is_ok()
            .then(|| Partition::new(candidate.clone(), PartitionSource::Sampled))
    };
    let (throughput, valid) = match &partition {
        Some(p) => {
            let r = env.evaluator.evaluate(env.graph, env.topo, &p.assignment);
            (r.throughput, r.valid)
        }
        None => (0.0, false),
    };
    let reward = if valid { throughput / env.reference } else { 0.0 };
    Ok(Rollout { steps, probs, candidate, partition, throughput, valid, reward, solver_failed })
}

/// One rollout: T refinement steps, then repair and evaluation.
pub fn rollout(env: &RlEnv, params: &PolicyParams, cfg: &PpoConfig, rng: &mut Rng) -> Result<Rollout, RlError> {
    env.check(params)?;
    let first = first_step_log_probs(params, &env.ctx);
    rollout_with(env, params, cfg, &first, rng)
}

/// `count` rollouts in parallel. Rollout `j` draws from its own stream
/// seeded by `(seed, first_index + j + 1)`, so results do not depend on
/// scheduling.
pub fn collect_batch(
    env: &RlEnv,
    params: &PolicyParams,
    cfg: &PpoConfig,
    seed: u64,
    first_index: usize,
    count: usize,
) -> Result<Vec<Rollout>, RlError> {
    env.check(params)?;
    let first = first_step_log_probs(params, &env.ctx);
    (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng_from_seed(derive_seed(&[seed, (first_index + j + 1) as u64]));
            rollout_with(env, params, cfg, &first, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    /// Mean per-node entropy.
    pub entropy: f64,
    pub value: f64,
    pub clip_fraction: f64,
}

struct StepTerms {
    d_logits: Array2<f64>,
    policy: f64,
    entropy: f64,
    clipped: usize,
}

fn step_terms(logits: &Array2<f64>, step: &StepRecord, adv: f64, cfg: &PpoConfig, m: f64) -> StepTerms {
    let logp = net::log_softmax(logits);
    let mut d = Array2::zeros(logits.raw_dim());
    let (mut policy, mut entropy, mut clipped) = (0.0, 0.0, 0);
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    for (i, row) in logp.rows().into_iter().enumerate() {
        let a = step.actions[i] as usize;
        let ratio = (row[a] - step.log_probs[i]).exp();
        let unclipped = ratio * adv;
        let bounded = ratio.clamp(lo, hi) * adv;
        let g = if unclipped <= bounded {
            policy -= unclipped / m;
            -unclipped / m
        } else {
            policy -= bounded / m;
            clipped += 1;
            0.0
        };
        let h: f64 = -row.iter().map(|&l| l.exp() * l).sum::<f64>();
        entropy += h;
        for (j, &l) in row.iter().enumerate() {
            let p = l.exp();
            let onehot = if j == a { 1.0 } else { 0.0 };
            d[[i, j]] = g * (onehot - p) + cfg.entropy_bonus / m * p * (l + h);
        }
    }
    StepTerms { d_logits: d, policy, entropy, clipped }
}

/// Loss over a minibatch and its gradient with respect to every tensor.
///
/// `total = policy - entropy_bonus * entropy + value_coef * value`, where the
/// policy term is the negated clipped surrogate averaged over every
/// (rollout, step, node) triple.
pub fn loss_and_grad(
    params: &PolicyParams,
    ctx: &GraphContext,
    rollouts: &[&Rollout],
    advantages: &[f64],
    cfg: &PpoConfig,
) -> (LossParts, Vec<Array2<f64>>) {
    assert_eq!(rollouts.len(), advantages.len());
    let n = ctx.num_nodes;
    let c = params.config.num_chips;
    let m: f64 = rollouts.iter().map(|r| (r.steps.len() * n) as f64).sum();
    let shared = net::forward(params, ctx, ctx.features(c, None));
    let mut shared_d = Array2::zeros(shared.logits.raw_dim());
    let (mut policy, mut entropy, mut clipped) = (0.0, 0.0, 0usize);

    // Steps after the first see different features; each needs its own pass.
    let later: Vec<(usize, &StepRecord)> = rollouts
        .iter()
        .enumerate()
        .flat_map(|(k, r)| r.steps.iter().filter(|s| s.prev.is_some()).map(move |s| (k, s)))
        .collect();
    let parts: Vec<(StepTerms, Vec<Array2<f64>>)> = later
        .par_iter()
        .map(|&(k, step)| {
            let tape = net::forward(params, ctx, ctx.features(c, step.prev.as_deref()));
            let terms = step_terms(&tape.logits, step, advantages[k], cfg, m);
            let mut grads = params.zero_grads();
            net::backward(params, ctx, &tape, &terms.d_logits, 0.0, &mut grads);
            (terms, grads)
        })
        .collect();

    for (k, r) in rollouts.iter().enumerate() {
        for step in r.steps.iter().filter(|s| s.prev.is_none()) {
            let t = step_terms(&shared.logits, step, advantages[k], cfg, m);
            shared_d += &t.d_logits;
            policy += t.policy;
            entropy += t.entropy;
            clipped += t.clipped;
        }
    }

    let mut value_loss = 0.0;
    let mut d_value = 0.0;
    if params.config.value_head {
        let v = net::value(params, &shared.embed);
        let nr = rollouts.len() as f64;
        for r in rollouts {
            value_loss += 0.5 * (v - r.reward).powi(2) / nr;
            d_value += cfg.value_coef * (v - r.reward) / nr;
        }
    }

    let mut grads = params.zero_grads();
    net::backward(params, ctx, &shared, &shared_d, d_value, &mut grads);
    for (t, g) in &parts {
        policy += t.policy;
        entropy += t.entropy;
        clipped += t.clipped;
        for (acc, x) in grads.iter_mut().zip(g) {
            *acc += x;
        }
    }
    let entropy = entropy / m;
    let total = policy - cfg.entropy_bonus * entropy + cfg.value_coef * value_loss;
    let parts = LossParts { total, policy, entropy, value: value_loss, clip_fraction: clipped as f64 / m };
    (parts, grads)
}

/// Advantages for a batch: reward minus the value estimate (value head) or
/// the moving-average baseline, optionally scaled by the reward spread.
pub fn advantages(params: &PolicyParams, ctx: &GraphContext, batch: &[Rollout], cfg: &PpoConfig) -> Vec<f64> {
    let rewards: Vec<f64> = batch.iter().map(|r| r.reward).collect();
    let base = if params.config.value_head {
        let feats = ctx.features(params.config.num_chips, None);
        net::value(params, &net::embed(params, ctx, feats).0)
    } else {
        params.baseline.unwrap_or_else(|| stats::mean(&rewards))
    };
    let sd = stats::std_dev(&rewards);
    let scale = if cfg.normalize_advantages && sd > 1e-12 { sd } else { 1.0 };
    rewards.iter().map(|r| (r - base) / scale).collect()
}

/// `num_epochs` passes over `num_minibatches` shuffled splits of the batch,
/// one Adam step per split. Works on a copy: on a non-finite loss the input
/// parameters are left as they were and an error is returned.
pub fn ppo_update(
    params: &PolicyParams,
    env: &RlEnv,
    batch: &[Rollout],
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<(PolicyParams, LossParts), RlError> {
    if batch.len() != cfg.num_rollouts {
        return Err(RlError::BatchSize { expected: cfg.num_rollouts, got: batch.len() });
    }
    env.check(params)?;
    let adv = advantages(params, &env.ctx, batch, cfg);
    let mut next = params.clone();
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let chunk = batch.len().div_ceil(cfg.num_minibatches);
    let mut last = LossParts::default();
    for _ in 0..cfg.num_epochs {
        idx.shuffle(rng);
        let mut sums = LossParts::default();
        let mut count = 0.0;
        for mb in idx.chunks(chunk) {
            let rs: Vec<&Rollout> = mb.iter().map(|&i| &batch[i]).collect();
            let a: Vec<f64> = mb.iter().map(|&i| adv[i]).collect();
            let (parts, grads) = loss_and_grad(&next, &env.ctx, &rs, &a, cfg);
            if !parts.total.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(RlError::NonFiniteLoss);
            }
            next.adam_step(&grads, cfg.learning_rate);
            sums.total += parts.total;
            sums.policy += parts.policy;
            sums.entropy += parts.entropy;
            sums.value += parts.value;
            sums.clip_fraction += parts.clip_fraction;
            count += 1.0;
        }
        last = LossParts {
            total: sums.total / count,
            policy: sums.policy / count,
            entropy: sums.entropy / count,
            value: sums.value / count,
            clip_fraction: sums.clip_fraction / count,
        };
    }
    let mean_reward = batch.iter().map(|r| r.reward).sum::<f64>() / batch.len() as f64;
    let prev = params.baseline.unwrap_or(mean_reward);
    next.baseline = Some(cfg.baseline_decay * prev + (1.0 - cfg.baseline_decay) * mean_reward);
    Ok((next, last))
}

/// Runs batches until the budget is spent, recording every evaluated
/// partition. With `learn` each full batch is followed by an update.
pub(crate) fn run(
    mut params: PolicyParams,
    env: &RlEnv,
    cfg: &PpoConfig,
    budget: &SearchBudget,
    learn: bool,
) -> Result<(PolicyParams, SearchTrace), RlError> {
    env.check(&params)?;
    let start = Instant::now();
    let mut trace = SearchTrace::default();
    let mut batch_no = 0u64;
    while trace.len() < budget.max_samples && !budget.expired(start) {
        let count = cfg.num_rollouts.min(budget.max_samples - trace.len());
        let batch = collect_batch(env, &params, cfg, budget.seed, trace.len(), count)?;
        for r in &batch {
            trace.push(r.throughput, r.valid, r.partition.as_ref());
        }
        if learn && batch.len() == cfg.num_rollouts {
            let mut rng = rng_from_seed(derive_seed(&[budget.seed, UPDATE_STREAM, batch_no]));
            match ppo_update(&params, env, &batch, cfg, &mut rng) {
                Ok((next, stats)) => {
                    log::debug!("batch {batch_no}: loss {:.4} entropy {:.4}", stats.total, stats.entropy);
                    params = next;
                }
                Err(RlError::NonFiniteLoss) => log::warn!("batch {batch_no}: non-finite loss, update skipped"),
                Err(e) => return Err(e),
            }
        }
        batch_no += 1;
    }
    Ok((params, trace))
}

/// Seeded parameter initialisation used by training from scratch.
pub fn init_params(config: PolicyConfig, seed: u64) -> Result<PolicyParams, RlError> {
    PolicyParams::init(config, derive_seed(&[seed, INIT_STREAM]))
}

/// Fresh parameters trained on one graph until the budget is spent.
pub fn train_from_scratch(
    env: &RlEnv,
    config: PolicyConfig,
    cfg: &PpoConfig,
    budget: &SearchBudget,
) -> Result<(PolicyParams, SearchTrace), RlError> {
    cfg.validate().map_err(RlError::Config)?;
    run(init_params(config, budget.seed)?, env, cfg, budget, true)
}

/// Rollouts with frozen parameters.
pub fn zero_shot(
    params: &PolicyParams,
    env: &RlEnv,
    cfg: &PpoConfig,
    budget: &SearchBudget,
) -> Result<SearchTrace, RlError> {
    cfg.validate().map_err(RlError::Config)?;
    Ok(run(params.clone(), env, cfg, budget, false)?.1)
}

/// Training warm-started from `params`.
pub fn fine_tune(
    params: &PolicyParams,
    env: &RlEnv,
    cfg: &PpoConfig,
    budget: &SearchBudget,
) -> Result<(PolicyParams, SearchTrace), RlError> {
    cfg.validate().map_err(RlError::Config)?;
    run(params.clone(), env, cfg, budget, true)
}
