//! Traversability score from velocity tracking: squared command/estimate
//! discrepancy, smoothed by a scalar Kalman filter and squashed by a
//! decreasing sigmoid.

use serde::{Deserialize, Serialize};

use crate::robot::TwistCommand;

/// Half the squared planar difference between commanded and achieved velocity.
pub fn velocity_error(cmd: &TwistCommand, velocity: (f64, f64)) -> f64 {
    0.5 * ((cmd.vx - velocity.0).powi(2) + (cmd.vy - velocity.1).powi(2))
}

/// `sigmoid(-k (x - v_thr))`.
pub fn score(x_hat: f64, k: f64, v_thr: f64) -> f64 {
    let z = -k * (x_hat - v_thr);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub kalman_q: f64,
    pub kalman_r: f64,
    pub sigmoid_k: f64,
    pub sigmoid_vthr: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { kalman_q: 1e-3, kalman_r: 1e-1, sigmoid_k: 10.0, sigmoid_vthr: 0.2 }
    }
}

/// Scalar Kalman filter over the velocity error plus the sigmoid mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreFilter {
    pub x_hat: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub k: f64,
    pub v_thr: f64,
}

impl ScoreFilter {
    pub fn new(cfg: &ScoreConfig) -> Self {
        Self {
            x_hat: 0.0,
            p: 1.0,
            q: cfg.kalman_q,
            r: cfg.kalman_r,
            k: cfg.sigmoid_k,
            v_thr: cfg.sigmoid_vthr,
        }
    }

    /// Predict (`P += Q`) then update with gain `P / (P + R)`. Returns the
    /// filtered estimate.
    pub fn update(&mut self, z: f64) -> f64 {
        self.p += self.q;
        let gain = self.p / (self.p + self.r);
        self.x_hat += gain * (z - self.x_hat);
        self.p *= 1.0 - gain;
        self.x_hat
    }

    /// Filters a raw velocity error and returns the resulting score.
    pub fn observe(&mut self, v_error: f64) -> f64 {
        let x = self.update(v_error);
        score(x, self.k, self.v_thr)
    }

    pub fn current_score(&self) -> f64 {
        score(self.x_hat, self.k, self.v_thr)
    }
}
