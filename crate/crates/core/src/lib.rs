//! Placement of tensor-computation DAGs onto the chiplets of a multi-chip
//! module connected by a uni-directional ring.
//!
//! A constraint solver turns candidate assignments (or per-node chip
//! distributions) into assignments that respect the ring's static rules;
//! classical search and a learned policy drive it to maximise pipelined
//! throughput.
//!
//! ```
//! use mcm_part::{generate_synthetic, random_search, ChipTopology, Evaluator, GeneratorConfig, GraphFamily, SearchBudget};
//!
//! let g = generate_synthetic(&GeneratorConfig::new(GraphFamily::Layered, 40, 7)).unwrap();
//! let topo = ChipTopology::with_chips(4).unwrap();
//! let trace = random_search(&g, &topo, &Evaluator::default(), &SearchBudget::new(200, 1)).unwrap();
//! assert!(trace.best() > 0.0);
//! ```

pub mod bench;
pub mod distribution;
pub mod error;
pub mod evaluator;
pub mod generate;
pub mod graph;
pub mod pipeline;
pub mod rl;
pub mod search;
pub mod solver;
pub mod stats;
pub mod util;

pub use distribution::DistributionMatrix;
pub use error::{Error, GraphError, Result, RlError, SolverError};
pub use evaluator::{
    analytical_eval, memory_check, surrogate_eval, AnalyticalModel, EvalResult, Evaluator, FailureReason,
    SurrogateConfig,
};
pub use generate::{generate_synthetic, GeneratorConfig, GraphFamily};
pub use graph::{ChipTopology, ComputationGraph, DataEdge, NodeId, OpNode};
pub use rl::{PolicyConfig, PolicyParams, PpoConfig, RlEnv};
pub use search::{
    greedy_heuristic, heuristic_baseline, random_search, simulated_annealing, SaConfig, SampleRecord, SearchBudget,
    SearchTrace,
};
pub use solver::{
    check_static, enumerate_valid, solve_fix, solve_sample, Domain, NodeOrder, Partition, PartitionSource,
};
