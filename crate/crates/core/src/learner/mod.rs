//! Online learner: masked reconstruction for familiarity, a confidence
//! weighted traversability regression, Adam, and threshold selection on a
//! proxy ROC.

mod adam;
mod checkpoint;
mod confidence;
mod mlp;
mod threshold;

pub use adam::{AdamConfig, OptimState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use confidence::{reco_loss, ConfidenceStats, SIGMA_FLOOR};
pub use mlp::{sigmoid, BatchForward, Dense, Forward, MlpModel, DEFAULT_HIDDEN};
pub use threshold::{false_positive_rate, select_threshold};

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graphs::{MissionNode, Split};
use crate::world::SegmentFrame;

/// Objective variants for the training-objective study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Reconstruction, confidence weighting and proxy-ROC threshold.
    #[default]
    Full,
    /// Regression only: every unlabeled segment is a weight-1 negative and the
    /// threshold is fixed.
    Trav,
    /// Full objective with a fixed threshold.
    Fixed,
    /// Traversable iff confidence exceeds 0.5.
    Anom,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Trav, Mode::Fixed, Mode::Anom, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Trav => "trav",
            Mode::Fixed => "fixed",
            Mode::Anom => "anom",
        }
    }

    fn selects_threshold(self) -> bool {
        matches!(self, Mode::Full | Mode::Anom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub w_trav: f64,
    pub w_reco: f64,
    pub batch_nodes: usize,
    pub target_fpr: f64,
    pub k_sigma: f64,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub mode: Mode,
    /// Threshold before the first successful selection, and the fixed value
    /// for modes that do not select one.
    pub initial_threshold: f64,
    /// Number of recent batches whose proxy samples are pooled for threshold
    /// selection. 1 selects from the current batch alone.
    pub threshold_window: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            w_trav: 0.03,
            w_reco: 0.5,
            batch_nodes: 8,
            target_fpr: 0.15,
            k_sigma: 2.0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            adam: AdamConfig::default(),
            mode: Mode::Full,
            initial_threshold: 0.5,
            threshold_window: 10,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(self.w_trav >= 0.0 && self.w_reco >= 0.0) {
            return Err(Error::param("w_trav/w_reco", "loss weights must be >= 0"));
        }
        if !(self.target_fpr > 0.0 && self.target_fpr < 1.0) {
            return Err(Error::param("target_fpr", "must lie in (0, 1)"));
        }
        if !(self.k_sigma > 0.0) {
            return Err(Error::param("k_sigma", "must be positive"));
        }
        if self.threshold_window == 0 {
            return Err(Error::param("threshold_window", "must be positive"));
        }
        if self.batch_nodes == 0 {
            return Err(Error::param("batch_nodes", "must be positive"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::param("lr", "must be positive"));
        }
        Ok(())
    }
}

/// Per-segment supervision resolved from labels, confidence and mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    /// Regression target for the traversability head.
    pub y: f64,
    /// Weight of the squared traversability error.
    pub trav_weight: f64,
    /// Whether the segment contributes to the reconstruction objective.
    pub reco: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_total: f64,
    pub l_trav: f64,
    pub l_reco: f64,
}

/// Evaluates the objective on a cached forward pass and returns its gradient.
///
/// `l_trav = (1/N) Σ a_n (t_n − y_n)²` and `l_reco` is the mean reconstruction
/// loss over segments with `reco` set.
pub fn objective(
    model: &MlpModel,
    x: ArrayView2<f64>,
    fwd: &BatchForward,
    targets: &[Target],
    w_trav: f64,
    w_reco: f64,
) -> (LossTerms, MlpModel) {
    let (n, e) = x.dim();
    debug_assert_eq!(targets.len(), n);
    let n_reco = targets.iter().filter(|t| t.reco).count();
    let mut d_reco = Array2::zeros((n, e));
    let mut d_logit = Array1::zeros(n);
    let (mut l_trav, mut l_reco) = (0.0, 0.0);
    for (i, t) in targets.iter().enumerate() {
        let p = fwd.trav[i];
        let r = p - t.y;
        l_trav += t.trav_weight * r * r;
        d_logit[i] = w_trav * 2.0 * t.trav_weight * r * p * (1.0 - p) / n as f64;
        if t.reco {
            let scale = w_reco * 2.0 / (e as f64 * n_reco as f64);
            let mut sq = 0.0;
            for j in 0..e {
                let diff = fwd.reco[[i, j]] - x[[i, j]];
                sq += diff * diff;
                d_reco[[i, j]] = scale * diff;
            }
            l_reco += sq / e as f64;
        }
    }
    l_trav /= n.max(1) as f64;
    if n_reco > 0 {
        l_reco /= n_reco as f64;
    }
    let terms = LossTerms { l_total: w_trav * l_trav + w_reco * l_reco, l_trav, l_reco };
    (terms, model.backward(fwd, &d_reco, &d_logit))
}

/// Picks `batch_nodes` indices from `candidates`: without replacement when
/// enough exist, uniformly with replacement otherwise.
pub fn sample_batch<R: Rng + ?Sized>(candidates: &[usize], batch_nodes: usize, rng: &mut R) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    if candidates.len() >= batch_nodes {
        index::sample(rng, candidates.len(), batch_nodes).into_iter().map(|i| candidates[i]).collect()
    } else {
        (0..batch_nodes).map(|_| candidates[rng.random_range(0..candidates.len())]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub trav: f64,
    pub confidence: f64,
    pub reco_loss: f64,
    pub traversable: bool,
}

/// Immutable inference state published by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub model: MlpModel,
    pub stats: ConfidenceStats,
    pub tau_thr: f64,
    pub mode: Mode,
}

impl Predictor {
    pub fn predict_embeddings(&self, x: ArrayView2<f64>) -> Result<Vec<SegmentPrediction>> {
        let fwd = self.model.forward_batch(x)?;
        Ok((0..x.nrows())
            .map(|i| {
                let loss = reco_loss(fwd.reco.row(i).as_slice().unwrap(), &x.row(i).to_vec());
                let confidence = self.stats.confidence(loss);
                let trav = fwd.trav[i];
                let traversable = match self.mode {
                    Mode::Anom => confidence > 0.5,
                    _ => trav >= self.tau_thr,
                };
                SegmentPrediction { trav, confidence, reco_loss: loss, traversable }
            })
            .collect())
    }

    pub fn predict(&self, frame: &SegmentFrame) -> Result<Vec<SegmentPrediction>> {
        if frame.segments.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack_embeddings(frame.segments.iter().map(|s| s.embedding.as_slice()), self.model.embedding_dim())?;
        self.predict_embeddings(x.view())
    }
}

fn stack_embeddings<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != dim {
            return Err(crate::error::Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        flat.extend_from_slice(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, dim), flat).expect("row lengths checked"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: u64,
    pub l_total: f64,
    pub l_trav: f64,
    pub l_reco: f64,
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub tau_thr: f64,
    pub batch_segments: usize,
}

/// Proxy sets used in the most recent threshold refresh, pooled over the
/// threshold window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProxyTrace {
    pub negatives: Vec<f64>,
    pub positives: Vec<f64>,
    /// Threshold chosen from these sets, if selection succeeded.
    pub selected: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainerConfig,
    model: MlpModel,
    optim: OptimState,
    stats: ConfidenceStats,
    tau_thr: f64,
    step: u64,
    rng: ChaCha8Rng,
    last_proxy: ProxyTrace,
    /// Per-batch `(negatives, positives)`, newest last.
    proxy_window: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, embedding_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MlpModel::xavier(embedding_dim, &cfg.hidden, &mut rng)?;
        let stats = ConfidenceStats::new(cfg.k_sigma);
        Ok(Self::from_parts(cfg, model, stats, None, 0, rng))
    }

    /// Resumes from a checkpoint with fresh optimizer moments.
    pub fn from_checkpoint(cfg: TrainerConfig, ckpt: Checkpoint, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::from_parts(cfg, ckpt.predictor.model, ckpt.predictor.stats, Some(ckpt.predictor.tau_thr), ckpt.step, rng))
    }

    fn from_parts(
        cfg: TrainerConfig,
        model: MlpModel,
        stats: ConfidenceStats,
        tau: Option<f64>,
        step: u64,
        rng: ChaCha8Rng,
    ) -> Self {
        let optim = OptimState::new(&model, cfg.adam);
        let tau_thr = tau.unwrap_or(cfg.initial_threshold);
        Self { cfg, model, optim, stats, tau_thr, step, rng, last_proxy: ProxyTrace::default(), proxy_window: VecDeque::new() }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn stats(&self) -> &ConfidenceStats {
        &self.stats
    }

    pub fn tau_thr(&self) -> f64 {
        self.tau_thr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn last_proxy(&self) -> &ProxyTrace {
        &self.last_proxy
    }

    /// Applies runtime-tunable parameters.
    pub fn set_k_sigma(&mut self, k: f64) {
        self.cfg.k_sigma = k;
        self.stats.k_sigma = k;
    }

    pub fn set_target_fpr(&mut self, fpr: f64) {
        self.cfg.target_fpr = fpr;
    }

    pub fn snapshot(&self) -> Predictor {
        Predictor { model: self.model.clone(), stats: self.stats, tau_thr: self.tau_thr, mode: self.cfg.mode }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { predictor: self.snapshot(), step: self.step }
    }

    /// One optimisation step on a batch drawn from the valid training nodes.
    /// Returns `None` without touching any state if no node is valid.
    pub fn train_step(&mut self, nodes: &[MissionNode]) -> Option<TrainMetrics> {
        let candidates: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.valid && n.split == Split::Train)
            .map(|(i, _)| i)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let picked = sample_batch(&candidates, self.cfg.batch_nodes, &mut self.rng);
        let segments: Vec<_> = picked.iter().flat_map(|&i| nodes[i].frame.segments.iter()).collect();
        let x = stack_embeddings(segments.iter().map(|s| s.embedding.as_slice()), self.model.embedding_dim()).ok()?;
        let labels: Vec<Option<f64>> = segments.iter().map(|s| s.label).collect();
        Some(self.train_on(x.view(), &labels))
    }

    /// One optimisation step on an explicit batch.
    pub fn train_on(&mut self, x: ArrayView2<f64>, labels: &[Option<f64>]) -> TrainMetrics {
        let fwd = self.model.forward_batch(x).expect("batch dimension checked by caller");
        let losses: Vec<f64> = (0..x.nrows())
            .map(|i| reco_loss(fwd.reco.row(i).as_slice().unwrap(), x.row(i).as_slice().unwrap()))
            .collect();
        let labeled: Vec<bool> = labels.iter().map(Option::is_some).collect();
        self.stats.fit(&losses, &labeled);
        let conf: Vec<f64> = losses.iter().map(|&l| self.stats.confidence(l)).collect();

        let mode = self.cfg.mode;
        let targets: Vec<Target> = labels
            .iter()
            .zip(&conf)
            .map(|(label, &c)| match (label, mode) {
                (Some(y), _) => Target { y: *y, trav_weight: 1.0, reco: true },
                (None, Mode::Trav) => Target { y: 0.0, trav_weight: 1.0, reco: false },
                (None, _) => Target { y: 0.0, trav_weight: 1.0 - c, reco: false },
            })
            .collect();
        let w_reco = if mode == Mode::Trav { 0.0 } else { self.cfg.w_reco };
        let (terms, grads) = objective(&self.model, x, &fwd, &targets, self.cfg.w_trav, w_reco);
        self.optim.step(&mut self.model, &grads);
        self.step += 1;

        if mode.selects_threshold() {
            let (mut neg, mut pos) = (Vec::new(), Vec::new());
            for ((label, &c), &p) in labels.iter().zip(&conf).zip(fwd.trav.iter()) {
                if label.is_some() {
                    pos.push(p);
                } else if c < 0.5 {
                    neg.push(p);
                }
            }
            self.proxy_window.push_back((neg, pos));
            while self.proxy_window.len() > self.cfg.threshold_window {
                self.proxy_window.pop_front();
            }
            let mut trace = ProxyTrace::default();
            for (n, p) in &self.proxy_window {
                trace.negatives.extend_from_slice(n);
                trace.positives.extend_from_slice(p);
            }
            trace.selected = select_threshold(&trace.negatives, &trace.positives, self.cfg.target_fpr);
            if let Some(t) = trace.selected {
                self.tau_thr = t;
            }
            self.last_proxy = trace;
        }

        TrainMetrics {
            step: self.step,
            l_total: terms.l_total,
            l_trav: terms.l_trav,
            l_reco: terms.l_reco,
            mu_pos: self.stats.mu_pos,
            sigma_pos: self.stats.sigma_pos,
            tau_thr: self.tau_thr,
            batch_segments: x.nrows(),
        }
    }
}
