//! Batch Gaussian over the reconstruction losses of traversed segments, and
//! the confidence derived from it.

use serde::{Deserialize, Serialize};

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub k_sigma: f64,
    /// Number of labeled losses in the last successful fit.
    pub n_trav: usize,
}

impl ConfidenceStats {
    /// Unfitted stats: every loss at or below zero is fully confident.
    pub fn new(k_sigma: f64) -> Self {
        Self { mu_pos: 0.0, sigma_pos: 1.0, k_sigma, n_trav: 0 }
    }

    /// Refits from the labeled losses. Returns false and keeps the previous
    /// values if nothing is labeled.
    pub fn fit(&mut self, losses: &[f64], labeled: &[bool]) -> bool {
        let (sum, n) = losses
            .iter()
            .zip(labeled)
            .filter(|(_, &l)| l)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        if n == 0 {
            return false;
        }
        let mu = sum / n as f64;
        let var = losses
            .iter()
            .zip(labeled)
            .filter(|(_, &l)| l)
            .map(|(v, _)| (v - mu) * (v - mu))
            .sum::<f64>()
            / n as f64;
        self.mu_pos = mu;
        self.sigma_pos = var.sqrt().max(SIGMA_FLOOR);
        self.n_trav = n;
        true
    }

    pub fn confidence(&self, loss: f64) -> f64 {
        if loss <= self.mu_pos {
            return 1.0;
        }
        let s = self.sigma_pos * self.k_sigma;
        let d = loss - self.mu_pos;
        (-(d * d) / (2.0 * s * s)).exp()
    }
}

/// Per-segment mean squared reconstruction error.
pub fn reco_loss(reco: &[f64], input: &[f64]) -> f64 {
    debug_assert_eq!(reco.len(), input.len());
    reco.iter().zip(input).map(|(r, x)| (r - x) * (r - x)).sum::<f64>() / input.len() as f64
}
