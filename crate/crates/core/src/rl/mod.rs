//! Learned partitioner: a GraphSAGE encoder and feed-forward head emit a
//! per-node chip distribution, refined over a few non-autoregressive steps
//! and trained with PPO against rewards of solver-repaired partitions.

mod checkpoint;
pub mod features;
pub mod net;
pub mod ppo;

pub use net::{AdamState, GraphContext, PolicyConfig, PolicyParams};
pub use ppo::{
    advantages, collect_batch, embed_graph, fine_tune, init_params, loss_and_grad, policy_forward, ppo_update, rollout,
    train_from_scratch, zero_shot, LossParts, PpoConfig, RepairMode, RlEnv, Rollout, StepRecord,
};
