use std::ffi::{CStr, CString};
use std::ptr;

use mcm_part_ffi::*;

fn topo(c: usize) -> McmTopology {
    McmTopology { num_chips: c, sram_bytes_per_chip: 0, link_bandwidth: 0.0 }
}

fn generate(family: &str, n: usize, seed: u64) -> *mut McmGraph {
    let fam = CString::new(family).unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { mcm_graph_generate(fam.as_ptr(), n, seed, &mut g) }, McmStatus::Ok);
    g
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mcm_last_error_message()) }.to_str().unwrap().to_string()
}

#[test]
fn solve_and_evaluate_round_trip() {
    let g = generate("layered", 16, 3);
    let n = unsafe { mcm_graph_num_nodes(g) };
    assert_eq!(n, 16);
    let t = topo(4);
    let mut y = vec![0u32; n];
    assert_eq!(unsafe { mcm_solve_sample(g, &t, 7, y.as_mut_ptr(), n) }, McmStatus::Ok);
    let mut r = McmEvalResult { valid: false, throughput: 0.0, failure: McmFailure::Static };
    assert_eq!(unsafe { mcm_evaluate(g, &t, McmEvaluatorKind::Analytical, 0, y.as_ptr(), n, &mut r) }, McmStatus::Ok);
    assert!(r.valid);
    assert_eq!(r.failure, McmFailure::None);
    assert!(r.throughput > 0.0);

    // Repairing a valid assignment in place leaves it valid.
    let before = y.clone();
    assert_eq!(unsafe { mcm_solve_fix(g, &t, y.as_ptr(), 1, y.as_mut_ptr(), n) }, McmStatus::Ok);
    assert_eq!(y, before);

    // The same seed gives the same partition.
    let mut z = vec![0u32; n];
    assert_eq!(unsafe { mcm_solve_sample(g, &t, 7, z.as_mut_ptr(), n) }, McmStatus::Ok);
    assert_eq!(z, before);
    unsafe { mcm_graph_free(g) };
}

#[test]
fn invalid_assignment_is_reported_not_failed() {
    let g = generate("chain", 5, 1);
    let y = [1u32, 0, 0, 0, 0];
    let mut r = McmEvalResult { valid: true, throughput: 1.0, failure: McmFailure::None };
    assert_eq!(
        unsafe { mcm_evaluate(g, &topo(2), McmEvaluatorKind::Surrogate, 3, y.as_ptr(), 5, &mut r) },
        McmStatus::Ok
    );
    assert!(!r.valid);
    assert_eq!(r.throughput, 0.0);
    assert_eq!(r.failure, McmFailure::Static);
    unsafe { mcm_graph_free(g) };
}

#[test]
fn error_codes() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { mcm_graph_from_json(ptr::null(), &mut g) }, McmStatus::NullPointer);
    assert!(last_error().starts_with("null_pointer"));
    let bad = CString::new("{\"nodes\": 3}").unwrap();
    assert_eq!(unsafe { mcm_graph_from_json(bad.as_ptr(), &mut g) }, McmStatus::Graph);
    assert!(last_error().starts_with("graph.parse"));
    let path = CString::new("/nonexistent/g.json").unwrap();
    assert_eq!(unsafe { mcm_graph_load(path.as_ptr(), &mut g) }, McmStatus::Io);
    let fam = CString::new("moebius").unwrap();
    assert_eq!(unsafe { mcm_graph_generate(fam.as_ptr(), 5, 0, &mut g) }, McmStatus::InvalidArgument);
    assert!(g.is_null());

    let h = generate("chain", 5, 1);
    let mut y = [0u32; 4];
    assert_eq!(unsafe { mcm_solve_sample(h, &topo(2), 0, y.as_mut_ptr(), 4) }, McmStatus::LengthMismatch);
    assert_eq!(unsafe { mcm_solve_sample(h, &topo(0), 0, y.as_mut_ptr(), 5) }, McmStatus::InvalidArgument);
    assert_eq!(unsafe { mcm_solve_sample(h, ptr::null(), 0, y.as_mut_ptr(), 5) }, McmStatus::NullPointer);
    assert_eq!(unsafe { mcm_graph_num_nodes(ptr::null()) }, 0);
    unsafe { mcm_graph_free(h) };
    unsafe { mcm_graph_free(ptr::null_mut()) };
}

#[test]
fn fix_rejects_out_of_range_candidate() {
    let g = generate("chain", 3, 2);
    let cand = [0u32, 9, 1];
    let mut y = [0u32; 3];
    assert_eq!(unsafe { mcm_solve_fix(g, &topo(4), cand.as_ptr(), 0, y.as_mut_ptr(), 3) }, McmStatus::InvalidArgument);
    assert!(last_error().starts_with("solver.value_out_of_range"), "{}", last_error());
    unsafe { mcm_graph_free(g) };
}

#[test]
fn json_round_trip() {
    let g = generate("random-dag", 12, 4);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { mcm_graph_to_json(g, &mut s) }, McmStatus::Ok);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mcm_graph_from_json(s, &mut h) }, McmStatus::Ok);
    assert_eq!(unsafe { mcm_graph_num_nodes(h) }, 12);
    let mut s2 = ptr::null_mut();
    assert_eq!(unsafe { mcm_graph_to_json(h, &mut s2) }, McmStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(s) }, unsafe { CStr::from_ptr(s2) });
    unsafe {
        mcm_string_free(s);
        mcm_string_free(s2);
        mcm_graph_free(g);
        mcm_graph_free(h);
    }
    assert_eq!(unsafe { CStr::from_ptr(mcm_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
