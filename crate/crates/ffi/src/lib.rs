//! C ABI over the partitioner.
//!
//! Graphs live behind an opaque `McmGraph` handle. Every fallible call
//! returns an `McmStatus`; on failure a description is kept per thread and
//! can be read with `mcm_last_error_message`. Panics are caught at the
//! boundary and reported as `MCM_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mcm_part::util::rng_from_seed;
use mcm_part::{
    AnalyticalModel, ChipTopology, ComputationGraph, DistributionMatrix, Error, Evaluator, FailureReason,
    GeneratorConfig, GraphError, NodeOrder, RlError, SolverError, SurrogateConfig,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed or structurally invalid graph.
    Graph = 3,
    Io = 4,
    /// No assignment satisfies the constraints.
    Infeasible = 5,
    /// The solver gave up before deciding.
    StepBudget = 6,
    /// Output buffer length does not match the graph.
    LengthMismatch = 7,
    Internal = 99,
}

/// Failure kind of an evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McmFailure {
    None = 0,
    Static = 1,
    Memory = 2,
    Dynamic = 3,
    Degenerate = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McmEvaluatorKind {
    Analytical = 0,
    Surrogate = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McmEvalResult {
    pub valid: bool,
    pub throughput: f64,
    pub failure: McmFailure,
}

/// Chip count plus per-chip SRAM and link bandwidth. Zero SRAM or
/// bandwidth picks the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McmTopology {
    pub num_chips: usize,
    pub sram_bytes_per_chip: u64,
    pub link_bandwidth: f64,
}

/// Opaque graph handle.
pub struct McmGraph(ComputationGraph);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

impl From<GraphError> for Fail {
    fn from(e: GraphError) -> Self {
        Fail::Core(e.into())
    }
}

impl From<SolverError> for Fail {
    fn from(e: SolverError) -> Self {
        Fail::Core(e.into())
    }
}

fn status_of(e: &Error) -> McmStatus {
    match e {
        Error::Graph(GraphError::Io(_)) | Error::Io(_) | Error::Rl(RlError::Io(_)) => McmStatus::Io,
        Error::Graph(GraphError::InvalidTopology(_) | GraphError::InvalidConfig(_)) => McmStatus::InvalidArgument,
        Error::Graph(_) | Error::Json(_) => McmStatus::Graph,
        Error::Solver(SolverError::Infeasible) => McmStatus::Infeasible,
        Error::Solver(SolverError::StepBudgetExceeded { .. }) => McmStatus::StepBudget,
        Error::Solver(SolverError::LengthMismatch { .. }) => McmStatus::LengthMismatch,
        _ => McmStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> McmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McmStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null_pointer: {what} is null"));
            McmStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(format!("{}: {e}", e.code()));
            status_of(&e)
        }
        Err(_) => {
            set_error("internal: panic".into());
            McmStatus::Internal
        }
    }
}

fn null(what: &'static str) -> Fail {
    Fail::Null(what)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")).into())
}

unsafe fn graph_arg<'a>(g: *const McmGraph) -> Result<&'a ComputationGraph, Fail> {
    g.as_ref().map(|g| &g.0).ok_or_else(|| null("graph"))
}

fn topology(t: &McmTopology) -> Result<ChipTopology, Fail> {
    let base = ChipTopology::with_chips(t.num_chips)?;
    let sram = if t.sram_bytes_per_chip == 0 { base.sram_bytes_per_chip } else { t.sram_bytes_per_chip };
    let bw = if t.link_bandwidth == 0.0 { base.link_bandwidth_bytes_per_time } else { t.link_bandwidth };
    Ok(ChipTopology::new(t.num_chips, sram, bw)?)
}

unsafe fn emit_graph(out: *mut *mut McmGraph, g: ComputationGraph) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(McmGraph(g)));
    Ok(())
}

fn check_len(g: &ComputationGraph, len: usize) -> Result<(), Fail> {
    if len != g.num_nodes() {
        return Err(SolverError::LengthMismatch { expected: g.num_nodes(), got: len }.into());
    }
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mcm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a graph from a NUL-terminated JSON string.
///
/// # Safety
/// `json` must be NULL or a valid C string; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mcm_graph_from_json(json: *const c_char, out: *mut *mut McmGraph) -> McmStatus {
    guard(|| {
        let g = ComputationGraph::from_json_str(str_arg(json, "json")?)?;
        emit_graph(out, g)
    })
}

/// Loads a graph from a JSON file.
///
/// # Safety
/// As for [`mcm_graph_from_json`].
#[no_mangle]
pub unsafe extern "C" fn mcm_graph_load(path: *const c_char, out: *mut *mut McmGraph) -> McmStatus {
    guard(|| {
        let g = ComputationGraph::load(Path::new(str_arg(path, "path")?))?;
        emit_graph(out, g)
    })
}

/// Generates a synthetic graph of the named family.
///
/// # Safety
/// `family` must be NULL or a valid C string; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mcm_graph_generate(
    family: *const c_char,
    num_nodes: usize,
    seed: u64,
    out: *mut *mut McmGraph,
) -> McmStatus {
    guard(|| {
        let family = str_arg(family, "family")?.parse::<mcm_part::GraphFamily>()?;
        let g = mcm_part::generate_synthetic(&GeneratorConfig::new(family, num_nodes, seed))?;
        emit_graph(out, g)
    })
}

/// Number of nodes, or 0 for a NULL handle.
///
/// # Safety
/// `g` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcm_graph_num_nodes(g: *const McmGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.num_nodes())
}

/// Serialises the graph to JSON. Free the result with [`mcm_string_free`].
///
/// # Safety
/// `g` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mcm_graph_to_json(g: *const McmGraph, out: *mut *mut c_char) -> McmStatus {
    guard(|| {
        let g = graph_arg(g)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = CString::new(g.to_json_string()).map_err(|e| Error::InvalidArgument(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `g` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcm_graph_free(g: *mut McmGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn mcm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Samples a valid partition from uniform per-node chip probabilities,
/// writing one chip index per node into `out`.
///
/// # Safety
/// `g` must be NULL or live; `topo` NULL or readable; `out` NULL or valid
/// for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mcm_solve_sample(
    g: *const McmGraph,
    topo: *const McmTopology,
    seed: u64,
    out: *mut u32,
    len: usize,
) -> McmStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let topo = topology(topo.as_ref().ok_or_else(|| null("topology"))?)?;
        check_len(g, len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut rng = rng_from_seed(seed);
        let order = NodeOrder::random(g.num_nodes(), &mut rng);
        let probs = DistributionMatrix::uniform(g.num_nodes(), topo.num_chips);
        let p = mcm_part::solve_sample(g, &topo, &order, &probs, &mut rng)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&p.assignment);
        Ok(())
    })
}

/// Repairs `candidate` into the valid partition closest to it. `out` may
/// alias `candidate`.
///
/// # Safety
/// `candidate` and `out` must be NULL or valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn mcm_solve_fix(
    g: *const McmGraph,
    topo: *const McmTopology,
    candidate: *const u32,
    seed: u64,
    out: *mut u32,
    len: usize,
) -> McmStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let topo = topology(topo.as_ref().ok_or_else(|| null("topology"))?)?;
        check_len(g, len)?;
        if candidate.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let cand = std::slice::from_raw_parts(candidate, len).to_vec();
        let mut rng = rng_from_seed(seed);
        let order = NodeOrder::random(g.num_nodes(), &mut rng);
        let p = mcm_part::solve_fix(g, &topo, &order, &cand, &mut rng)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&p.assignment);
        Ok(())
    })
}

/// Evaluates an assignment. Invalid partitions are a successful call with
/// `valid == false`; the surrogate uses its default settings with `seed`.
///
/// # Safety
/// `assignment` must be NULL or valid for `len` reads; `out` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mcm_evaluate(
    g: *const McmGraph,
    topo: *const McmTopology,
    kind: McmEvaluatorKind,
    seed: u64,
    assignment: *const u32,
    len: usize,
    out: *mut McmEvalResult,
) -> McmStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let topo = topology(topo.as_ref().ok_or_else(|| null("topology"))?)?;
        if assignment.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let y = std::slice::from_raw_parts(assignment, len);
        let eval = match kind {
            McmEvaluatorKind::Analytical => Evaluator::Analytical(AnalyticalModel::default()),
            McmEvaluatorKind::Surrogate => Evaluator::Surrogate(SurrogateConfig { seed, ..Default::default() }),
        };
        let r = eval.evaluate(g, &topo, y);
        *out = McmEvalResult {
            valid: r.valid,
            throughput: r.throughput,
            failure: match r.failure_reason {
                None => McmFailure::None,
                Some(FailureReason::Static) => McmFailure::Static,
                Some(FailureReason::Memory) => McmFailure::Memory,
                Some(FailureReason::Dynamic) => McmFailure::Dynamic,
                Some(FailureReason::Degenerate) => McmFailure::Degenerate,
            },
        };
        Ok(())
    })
}
