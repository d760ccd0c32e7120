//! Shared-trunk MLP with a reconstruction head and a sigmoid traversability
//! head. Weights are stored input-major (`w[[i, o]]`), so a batch forward is
//! `X · W + b` with one row per segment.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 2] = [256, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..=a));
        Self { w, b: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub trunk: Vec<Dense>,
    pub reco: Dense,
    pub trav: Dense,
}

/// Single-sample outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub reco: Vec<f64>,
    pub trav: f64,
    pub hidden: Vec<f64>,
}

/// Batch activations kept for the backward pass. `acts[0]` is the input,
/// `acts[l + 1]` the post-ReLU output of trunk layer `l`.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub acts: Vec<Array2<f64>>,
    pub reco: Array2<f64>,
    pub trav: Array1<f64>,
}

impl BatchForward {
    pub fn hidden(&self) -> &Array2<f64> {
        self.acts.last().expect("input is always present")
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn layer_sizes(embedding_dim: usize, hidden: &[usize]) -> Result<Vec<usize>> {
    if embedding_dim == 0 {
        return Err(Error::param("embedding_dim", "must be positive"));
    }
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::param("hidden", "needs at least one non-empty layer"));
    }
    Ok(std::iter::once(embedding_dim).chain(hidden.iter().copied()).collect())
}

impl MlpModel {
    pub fn zeros(embedding_dim: usize, hidden: &[usize]) -> Result<Self> {
        let sizes = layer_sizes(embedding_dim, hidden)?;
        let bottleneck = *sizes.last().unwrap();
        Ok(Self {
            trunk: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            reco: Dense::zeros(bottleneck, embedding_dim),
            trav: Dense::zeros(bottleneck, 1),
        })
    }

    pub fn xavier<R: Rng + ?Sized>(embedding_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let sizes = layer_sizes(embedding_dim, hidden)?;
        let bottleneck = *sizes.last().unwrap();
        let trunk = sizes.windows(2).map(|w| Dense::xavier(w[0], w[1], rng)).collect();
        let reco = Dense::xavier(bottleneck, embedding_dim, rng);
        let trav = Dense::xavier(bottleneck, 1, rng);
        Ok(Self { trunk, reco, trav })
    }

    /// Zeroed model with the same shapes, used for gradients and moments.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.fan_in(), d.fan_out());
        Self { trunk: self.trunk.iter().map(z).collect(), reco: z(&self.reco), trav: z(&self.trav) }
    }

    pub fn embedding_dim(&self) -> usize {
        self.reco.fan_out()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.trunk.iter().map(Dense::fan_out).collect()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain([&self.reco, &self.trav])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk.iter_mut().chain([&mut self.reco, &mut self.trav])
    }

    /// Parameter tensors in a fixed order: per layer, weights then biases.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|d| [d.w.as_slice().expect("standard layout"), d.b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for d in self.layers_mut() {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: flat.len() });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    pub fn forward(&self, embedding: &[f64]) -> Result<Forward> {
        let e = self.embedding_dim();
        if embedding.len() != e {
            return Err(Error::DimensionMismatch { expected: e, got: embedding.len() });
        }
        let x = ArrayView2::from_shape((1, e), embedding).expect("shape checked");
        let out = self.forward_batch(x)?;
        Ok(Forward {
            reco: out.reco.row(0).to_vec(),
            trav: out.trav[0],
            hidden: out.hidden().row(0).to_vec(),
        })
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<BatchForward> {
        let e = self.embedding_dim();
        if x.ncols() != e {
            return Err(Error::DimensionMismatch { expected: e, got: x.ncols() });
        }
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.trunk {
            let mut a = layer.apply(&acts.last().unwrap().view());
            a.mapv_inplace(|v| v.max(0.0));
            acts.push(a);
        }
        let h = acts.last().unwrap().view();
        let reco = self.reco.apply(&h);
        let trav = self.trav.apply(&h).column(0).mapv(sigmoid);
        Ok(BatchForward { acts, reco, trav })
    }

    /// Back-propagates output gradients through a cached forward pass.
    ///
    /// `d_reco` is dL/d(reco) and `d_logit` is dL/d(pre-sigmoid trav logit).
    pub fn backward(&self, fwd: &BatchForward, d_reco: &Array2<f64>, d_logit: &Array1<f64>) -> MlpModel {
        let mut g = self.zeros_like();
        let h = fwd.hidden();
        let d_logit = d_logit.view().insert_axis(Axis(1));

        g.reco.w = h.t().dot(d_reco);
        g.reco.b = d_reco.sum_axis(Axis(0));
        g.trav.w = h.t().dot(&d_logit);
        g.trav.b = d_logit.sum_axis(Axis(0));

        let mut d_act = d_reco.dot(&self.reco.w.t()) + d_logit.dot(&self.trav.w.t());
        for l in (0..self.trunk.len()).rev() {
            // ReLU derivative from the post-activation: zero where clamped.
            ndarray::Zip::from(&mut d_act).and(&fwd.acts[l + 1]).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            let input = &fwd.acts[l];
            g.trunk[l].w = input.t().dot(&d_act);
            g.trunk[l].b = d_act.sum_axis(Axis(0));
            if l > 0 {
                d_act = d_act.dot(&self.trunk[l].w.t());
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_model_outputs() {
        let m = MlpModel::zeros(5, &[4, 3]).unwrap();
        let f = m.forward(&[1.0, -2.0, 3.0, 0.5, 0.0]).unwrap();
        assert_eq!(f.reco, vec![0.0; 5]);
        assert_eq!(f.trav, 0.5);
        assert_eq!(f.hidden, vec![0.0; 3]);
    }

    #[test]
    fn hand_set_one_unit_network() {
        // E = 1, one hidden unit: h = relu(2x + 1), reco = 3h - 1, trav = sigmoid(h - 2).
        let mut m = MlpModel::zeros(1, &[1]).unwrap();
        m.trunk[0].w[[0, 0]] = 2.0;
        m.trunk[0].b[0] = 1.0;
        m.reco.w[[0, 0]] = 3.0;
        m.reco.b[0] = -1.0;
        m.trav.w[[0, 0]] = 1.0;
        m.trav.b[0] = -2.0;
        let f = m.forward(&[0.5]).unwrap();
        assert_eq!(f.hidden, vec![2.0]);
        assert_eq!(f.reco, vec![5.0]);
        assert_eq!(f.trav, 0.5);
        let f = m.forward(&[-1.0]).unwrap();
        assert_eq!(f.hidden, vec![0.0]);
        assert_eq!(f.reco, vec![-1.0]);
        assert!((f.trav - 1.0 / (1.0 + 2f64.exp())).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::xavier(6, &DEFAULT_HIDDEN, &mut rng).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 0.0, 1.0];
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
        assert!(matches!(m.forward(&x[..5]), Err(Error::DimensionMismatch { expected: 6, got: 5 })));
        assert_eq!(m.hidden_sizes(), vec![256, 32]);
        assert_eq!(m.param_count(), 6 * 256 + 256 + 256 * 32 + 32 + 32 * 6 + 6 + 32 + 1);
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = MlpModel::xavier(90, &DEFAULT_HIDDEN, &mut rng).unwrap();
        let a = (6.0f64 / (90.0 + 256.0)).sqrt();
        assert!(m.trunk[0].w.iter().all(|v| v.abs() <= a));
        assert!(m.trunk[0].b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MlpModel::xavier(4, &[3, 2], &mut rng).unwrap();
        let mut z = m.zeros_like();
        z.set_flat_params(&m.flat_params()).unwrap();
        assert_eq!(z, m);
        assert!(z.set_flat_params(&[0.0]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) - 0.8807970779778823).abs() < 1e-15);
    }
}
