//! Layer primitives: dense, batch normalization, rectifier, inverted
//! dropout, and the order-insensitive column mean used for pooling.
//!
//! Everything is f64 and returns exact analytic gradients; the batch-norm
//! backward differentiates through the batch statistics themselves.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    /// in × out.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseParams {
    /// Symmetric scaled-uniform initialization with bound
    /// √(6 / (fan_in + fan_out)); biases stay zero.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> DenseParams {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut w = Array2::zeros((fan_in, fan_out));
        for v in w.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        DenseParams {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Returns (dx, dw, db) for upstream gradient `dout`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dout: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let dx = dout.dot(&self.w.t());
        let dw = x.t().dot(&dout);
        let db = dout.sum_axis(Axis(0));
        (dx, dw, db)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNormParams {
    pub fn identity(width: usize) -> BatchNormParams {
        BatchNormParams {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    /// Normalizes with the batch's own statistics (biased variance over N
    /// rows). Returns the output plus the cache needed for the backward
    /// pass and the batch statistics for the running-average update.
    pub fn forward_batch(&self, z: ArrayView2<f64>, epsilon: f64) -> BnForward {
        let n = z.nrows() as f64;
        let mean = z.mean_axis(Axis(0)).expect("nonempty batch");
        let mut var = Array1::zeros(z.ncols());
        for row in z.rows() {
            let centered = &row - &mean;
            var += &centered.mapv(|v| v * v);
        }
        var /= n;
        let inv_std = var.mapv(|v| 1.0 / (v + epsilon).sqrt());
        let xhat = (&z - &mean) * &inv_std;
        let out = &xhat * &self.gamma + &self.beta;
        BnForward {
            out,
            cache: BnCache { xhat, inv_std },
            batch_mean: mean,
            batch_var: var,
        }
    }

    /// Normalizes with the stored running statistics; a per-row pure map.
    pub fn forward_running(&self, z: ArrayView2<f64>, epsilon: f64) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + epsilon).sqrt());
        (&z - &self.running_mean) * &inv_std * &self.gamma + &self.beta
    }

    /// running ← momentum · running + (1 − momentum) · batch.
    pub fn update_running(&mut self, mean: &Array1<f64>, var: &Array1<f64>, momentum: f64) {
        self.running_mean = momentum * &self.running_mean + (1.0 - momentum) * mean;
        self.running_var = momentum * &self.running_var + (1.0 - momentum) * var;
    }

    /// Gradient through the batch-statistics normalization:
    /// dx = inv_std/N · (N·dx̂ − Σdx̂ − x̂ ⊙ Σ(dx̂ ⊙ x̂)).
    pub fn backward(&self, cache: &BnCache, dout: ArrayView2<f64>) -> BnGrads {
        let n = dout.nrows() as f64;
        let dgamma = (&dout * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dout.sum_axis(Axis(0));
        let dxhat = &dout * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dx = (dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat)
            * &cache.inv_std
            / n;
        BnGrads { dx, dgamma, dbeta }
    }
}

pub struct BnForward {
    pub out: Array2<f64>,
    pub cache: BnCache,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub struct BnGrads {
    pub dx: Array2<f64>,
    pub dgamma: Array1<f64>,
    pub dbeta: Array1<f64>,
}

pub fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Upstream gradient masked to where the rectifier was active.
pub fn relu_backward(z: &Array2<f64>, dout: &Array2<f64>) -> Array2<f64> {
    let mut dx = dout.clone();
    dx.zip_mut_with(z, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// 1/(1−rate), so expectations match inference. `None` when rate is 0.
pub fn dropout_mask(shape: (usize, usize), rate: f64, seed: u64) -> Option<Array2<f64>> {
    if rate == 0.0 {
        return None;
    }
    let scale = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Array2::zeros(shape);
    for v in mask.iter_mut() {
        *v = if rng.random::<f64>() < rate { 0.0 } else { scale };
    }
    Some(mask)
}

/// Column means computed order-insensitively: each column is sorted and
/// summed as offsets from its smallest value. Permuting rows changes
/// nothing, not even the rounding, and a column of identical values yields
/// that value exactly.
pub fn stable_column_mean(rows: ArrayView2<f64>) -> Array1<f64> {
    let (n, d) = rows.dim();
    let mut out = Array1::zeros(d);
    let mut col: Vec<f64> = Vec::with_capacity(n);
    for j in 0..d {
        col.clear();
        col.extend(rows.column(j).iter().copied());
        col.sort_by(f64::total_cmp);
        let anchor = col[0];
        let sum: f64 = col.iter().map(|v| v - anchor).sum();
        out[j] = anchor + sum / n as f64;
    }
    out
}

/// Logistic squashing, clipped into [1e-7, 1−1e-7] so downstream logs are
/// finite.
pub fn sigmoid_clipped(z: f64) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    p.clamp(CLIP, 1.0 - CLIP)
}

/// Probability clip bound ε for the cross-entropy loss.
pub const CLIP: f64 = 1e-7;
