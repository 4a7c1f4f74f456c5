//! Stand-alone checker for the three static placement constraints.
//!
//! Shares no code with the propagating solver: it rebuilds the chip-level
//! dependency graph from scratch and computes longest paths by dynamic
//! programming.

use serde::{Deserialize, Serialize};

use crate::graph::ComputationGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StaticConstraint {
    /// Data only flows from lower to higher chip ids.
    AcyclicDataflow,
    /// Used chips form the prefix `{0, .., max_used}`.
    NoSkippedChips,
    /// A direct chip dependency cannot coexist with a longer chip path.
    TriangleDependency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum StaticReport {
    Ok,
    Violated { constraint: StaticConstraint, witness: String },
}

impl StaticReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, StaticReport::Ok)
    }

    pub fn violated(&self) -> Option<StaticConstraint> {
        match self {
            StaticReport::Ok => None,
            StaticReport::Violated { constraint, .. } => Some(*constraint),
        }
    }
}

/// Checks a total assignment against the static constraints.
///
/// Panics if `assignment` has the wrong length or a value `>= num_chips`;
/// callers own that precondition.
pub fn check_static(g: &ComputationGraph, assignment: &[u32], num_chips: usize) -> StaticReport {
    assert_eq!(assignment.len(), g.num_nodes(), "assignment length must equal node count");
    assert!(assignment.iter().all(|&c| (c as usize) < num_chips), "chip id out of range");

    for e in g.edges() {
        let (a, b) = (assignment[e.src.index()], assignment[e.dst.index()]);
        if a > b {
            return StaticReport::Violated {
                constraint: StaticConstraint::AcyclicDataflow,
                witness: format!("edge {}->{} maps chip {a} -> chip {b}", e.src.0, e.dst.0),
            };
        }
    }

    let mut used = vec![false; num_chips];
    for &c in assignment {
        used[c as usize] = true;
    }
    if let Some(max_used) = used.iter().rposition(|&u| u) {
        if let Some(gap) = (0..max_used).find(|&d| !used[d]) {
            return StaticReport::Violated {
                constraint: StaticConstraint::NoSkippedChips,
                witness: format!("chip {gap} is empty while chip {max_used} is used"),
            };
        }
    }

    // Chip dependency graph; edges go strictly upwards after the first check.
    let mut chip_edge = vec![vec![false; num_chips]; num_chips];
    for e in g.edges() {
        let (a, b) = (assignment[e.src.index()] as usize, assignment[e.dst.index()] as usize);
        if a != b {
            chip_edge[a][b] = true;
        }
    }
    assert!(
        (0..num_chips).all(|a| (0..=a).all(|b| !chip_edge[a][b])),
        "chip graph must be acyclic once dataflow holds"
    );

    // longest[a][b]: longest path length a -> b, or None when unreachable.
    let mut longest = vec![vec![None::<usize>; num_chips]; num_chips];
    for a in 0..num_chips {
        longest[a][a] = Some(0);
        for b in a + 1..num_chips {
            let mut best = None;
            for m in a..b {
                if chip_edge[m][b] {
                    if let Some(l) = longest[a][m] {
                        best = best.max(Some(l + 1));
                    }
                }
            }
            longest[a][b] = best;
        }
    }
    for e in g.edges() {
        let (a, b) = (assignment[e.src.index()] as usize, assignment[e.dst.index()] as usize);
        if a != b && longest[a][b] != Some(1) {
            return StaticReport::Violated {
                constraint: StaticConstraint::TriangleDependency,
                witness: format!(
                    "edge {}->{} is a direct chip {a} -> {b} dependency but the longest chip path has length {}",
                    e.src.0,
                    e.dst.0,
                    longest[a][b].unwrap_or(0)
                ),
            };
        }
    }
    StaticReport::Ok
}
