use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cycle detected through node {node}")]
    Cycle { node: u32 },
    #[error("edge {src}->{dst} references a node outside [0, {num_nodes})")]
    DanglingEdge { src: u32, dst: u32, num_nodes: usize },
    #[error("duplicate edge {src}->{dst}")]
    DuplicateEdge { src: u32, dst: u32 },
    #[error("node at position {position} has id {id}; ids must be dense and in file order")]
    NonDenseId { position: usize, id: u32 },
    #[error("node {node} has an invalid {what}")]
    InvalidFeature { node: u32, what: &'static str },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolverError {
    #[error("proven infeasible: backtracking exhausted the first decision")]
    Infeasible,
    #[error("step budget of {budget} set_domain calls exceeded")]
    StepBudgetExceeded { budget: usize },
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("node order is not a permutation of the graph's nodes")]
    InvalidOrder,
    #[error("value {value} outside [0, {num_chips})")]
    ValueOutOfRange { value: u32, num_chips: usize },
    #[error("enumeration of {needed} assignments exceeds the limit of {limit}")]
    LimitExceeded { needed: u128, limit: u128 },
}

#[derive(Debug, Error)]
pub enum RlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite loss encountered; update aborted")]
    NonFiniteLoss,
    #[error("batch has {got} rollouts, config expects {expected}")]
    BatchSize { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Crate-wide error, used where several module errors can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Graph(e) => match e {
                GraphError::Parse(_) => "graph.parse",
                GraphError::Io(_) => "io",
                GraphError::Cycle { .. } => "graph.cycle",
                GraphError::DanglingEdge { .. } => "graph.dangling_edge",
                GraphError::DuplicateEdge { .. } => "graph.duplicate_edge",
                GraphError::NonDenseId { .. } => "graph.non_dense_id",
                GraphError::InvalidFeature { .. } => "graph.invalid_feature",
                GraphError::InvalidTopology(_) => "graph.invalid_topology",
                GraphError::InvalidConfig(_) => "graph.invalid_config",
            },
            Error::Solver(e) => match e {
                SolverError::Infeasible => "solver.infeasible",
                SolverError::StepBudgetExceeded { .. } => "solver.step_budget",
                SolverError::LengthMismatch { .. } => "solver.length_mismatch",
                SolverError::InvalidOrder => "solver.invalid_order",
                SolverError::ValueOutOfRange { .. } => "solver.value_out_of_range",
                SolverError::LimitExceeded { .. } => "solver.limit_exceeded",
            },
            Error::Rl(e) => match e {
                RlError::DimensionMismatch(_) => "rl.dimension_mismatch",
                RlError::NonFiniteLoss => "rl.non_finite_loss",
                RlError::BatchSize { .. } => "rl.batch_size",
                RlError::Config(_) => "rl.config",
                RlError::Checkpoint(_) => "rl.checkpoint",
                RlError::Io(_) => "io",
                RlError::Solver(_) => "solver",
            },
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
