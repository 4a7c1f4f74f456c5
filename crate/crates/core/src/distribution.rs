use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::util::Rng;

/// Row-stochastic `N x C` matrix: row `i` is node `i`'s distribution over chips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMatrix {
    num_nodes: usize,
    num_chips: usize,
    probs: Vec<f64>,
}

impl DistributionMatrix {
    pub const ROW_TOLERANCE: f64 = 1e-6;

    pub fn uniform(num_nodes: usize, num_chips: usize) -> Self {
        let p = 1.0 / num_chips as f64;
        DistributionMatrix { num_nodes, num_chips, probs: vec![p; num_nodes * num_chips] }
    }

    /// Wraps `probs` (row-major) after checking shape, signs and row sums.
    pub fn from_flat(num_nodes: usize, num_chips: usize, probs: Vec<f64>) -> Option<Self> {
        if probs.len() != num_nodes * num_chips || num_chips == 0 {
            return None;
        }
        let m = DistributionMatrix { num_nodes, num_chips, probs };
        m.is_row_stochastic().then_some(m)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_chips(&self) -> usize {
        self.num_chips
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_chips..(i + 1) * self.num_chips]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.probs
    }

    /// Replaces row `i` with a draw from the flat Dirichlet distribution.
    pub fn randomize_row(&mut self, i: usize, rng: &mut Rng) {
        let c = self.num_chips;
        let row = &mut self.probs[i * c..(i + 1) * c];
        let mut total = 0.0;
        for p in row.iter_mut() {
            // Exp(1) variates normalised to sum one.
            let u: f64 = rng.random::<f64>();
            *p = -(1.0 - u).ln();
            total += *p;
        }
        if total > 0.0 {
            row.iter_mut().for_each(|p| *p /= total);
        } else {
            row.iter_mut().for_each(|p| *p = 1.0 / c as f64);
        }
    }

    pub fn is_row_stochastic(&self) -> bool {
        (0..self.num_nodes).all(|i| {
            let row = self.row(i);
            row.iter().all(|&p| p >= 0.0 && p.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= Self::ROW_TOLERANCE
        })
    }

    /// Draws one chip per row independently.
    pub fn sample_all(&self, rng: &mut Rng) -> Vec<u32> {
        (0..self.num_nodes).map(|i| sample_index(self.row(i), rng) as u32).collect()
    }
}

/// Inverse-CDF draw from unnormalised non-negative weights. Falls back to
/// uniform when the weights carry no mass.
pub fn sample_index(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return rng.random_range(0..weights.len());
    }
    let mut x = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if x < w {
            return k;
        }
        x -= w;
    }
    // Rounding left us past the end; take the last index with mass.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}
