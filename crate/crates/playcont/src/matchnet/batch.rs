//! Batched training forward/backward over a stacked row representation.
//!
//! A batch of (playlist, candidate, label) examples is flattened into one
//! N×D matrix: each example contributes its playlist rows followed by its
//! candidate row. The shared transformation f runs over all N rows at once,
//! which is also the batch-norm semantic: batch statistics are computed over
//! the combined song-level rows of the whole batch. After f, each example's
//! playlist rows are mean-pooled and concatenated with its candidate row;
//! the discriminator then works on one row per example.

use ndarray::{s, Array1, Array2};

use super::layers::{
    dropout_mask, relu, relu_backward, stable_column_mean, sigmoid_clipped, BnCache, CLIP,
};
use super::{MatchNet, MatchNetError};
use crate::rng::substream;

/// One training example with owned feature data.
#[derive(Clone, Debug)]
pub struct Example {
    /// T×D matrix of the shortened playlist's feature rows.
    pub playlist: Array2<f64>,
    /// Candidate song feature vector.
    pub song: Array1<f64>,
    pub label: bool,
}

/// Total and per-example-mean binary cross-entropy of a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub mean: f64,
}

/// −Σ y·ln ŷ + (1−y)·ln(1−ŷ); probabilities are already clipped.
pub(crate) fn bce(probs: &Array1<f64>, labels: &[f64]) -> BatchLoss {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum();
    BatchLoss {
        total,
        mean: total / labels.len() as f64,
    }
}

/// Flattened batch: all song-level rows in one matrix.
pub(crate) struct Stacked {
    pub x0: Array2<f64>,
    /// Playlist row range [start, end) of each example.
    pub segs: Vec<(usize, usize)>,
    /// Candidate row of each example (directly after its playlist rows).
    pub cand: Vec<usize>,
    pub labels: Vec<f64>,
}

impl Stacked {
    pub fn from_examples(net: &MatchNet, batch: &[Example]) -> Result<Stacked, MatchNetError> {
        let d = net.config.input_dim;
        let mut n = 0;
        for e in batch {
            net.check_input(e.playlist.view(), e.song.view())?;
            n += e.playlist.nrows() + 1;
        }
        let mut x0 = Array2::zeros((n, d));
        let mut segs = Vec::with_capacity(batch.len());
        let mut cand = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for e in batch {
            let t = e.playlist.nrows();
            x0.slice_mut(s![offset..offset + t, ..]).assign(&e.playlist);
            x0.row_mut(offset + t).assign(&e.song);
            segs.push((offset, offset + t));
            cand.push(offset + t);
            labels.push(f64::from(u8::from(e.label)));
            offset += t + 1;
        }
        Ok(Stacked { x0, segs, cand, labels })
    }

    /// Gathers rows out of a master feature matrix; used by the training
    /// loop to avoid materializing per-pair matrices.
    pub fn from_indexed(features: &Array2<f64>, pairs: &[IndexedPair]) -> Stacked {
        let d = features.ncols();
        let n: usize = pairs.iter().map(|p| p.rows.len() + 1).sum();
        let mut x0 = Array2::zeros((n, d));
        let mut segs = Vec::with_capacity(pairs.len());
        let mut cand = Vec::with_capacity(pairs.len());
        let mut labels = Vec::with_capacity(pairs.len());
        let mut offset = 0;
        for pair in pairs {
            for (i, &row) in pair.rows.iter().enumerate() {
                x0.row_mut(offset + i).assign(&features.row(row));
            }
            let t = pair.rows.len();
            x0.row_mut(offset + t).assign(&features.row(pair.cand));
            segs.push((offset, offset + t));
            cand.push(offset + t);
            labels.push(pair.label);
            offset += t + 1;
        }
        Stacked { x0, segs, cand, labels }
    }
}

/// A pair resolved to row indices of a master feature matrix.
pub(crate) struct IndexedPair {
    pub rows: Vec<usize>,
    pub cand: usize,
    pub label: f64,
}

pub(crate) struct BlockCache {
    /// Input the dense layer saw.
    pub x_in: Array2<f64>,
    pub bn: Option<BnCache>,
    /// Batch statistics (mean, biased variance) for the running update.
    pub bn_stats: Option<(Array1<f64>, Array1<f64>)>,
    /// Input the rectifier saw.
    pub relu_in: Array2<f64>,
    pub mask: Option<Array2<f64>>,
}

pub(crate) struct TrainForward {
    pub f_caches: Vec<BlockCache>,
    pub g_cache: BlockCache,
    /// Discriminator hidden activations after dropout (input of the output
    /// layer).
    pub r: Array2<f64>,
    pub probs: Array1<f64>,
}

fn block_forward(
    net: &MatchNet,
    dense: &super::layers::DenseParams,
    bn: &super::layers::BatchNormParams,
    x: Array2<f64>,
    mask_seed: Option<u64>,
) -> (Array2<f64>, BlockCache) {
    let z = dense.forward(x.view());
    let (z, bn_cache, bn_stats) = if net.config.batch_norm {
        let fwd = bn.forward_batch(z.view(), net.config.bn_epsilon);
        (fwd.out, Some(fwd.cache), Some((fwd.batch_mean, fwd.batch_var)))
    } else {
        (z, None, None)
    };
    let mut h = relu(&z);
    let mask = mask_seed
        .and_then(|seed| dropout_mask(h.dim(), net.config.dropout_rate, seed));
    if let Some(mask) = &mask {
        h *= mask;
    }
    (
        h,
        BlockCache {
            x_in: x,
            bn: bn_cache,
            bn_stats,
            relu_in: z,
            mask,
        },
    )
}

/// Forward pass in train semantics: batch statistics, dropout from
/// `mask_seed` (no dropout when `None`).
pub(crate) fn train_forward(
    net: &MatchNet,
    stacked: &Stacked,
    mask_seed: Option<u64>,
) -> TrainForward {
    let b = stacked.labels.len();
    let h_dim = net.config.hidden_dim;

    let mut h = stacked.x0.clone();
    let mut f_caches = Vec::with_capacity(net.f.len());
    for (i, block) in net.f.iter().enumerate() {
        let seed = mask_seed.map(|s| substream(s, "mask-f", &i.to_string()));
        let (next, cache) = block_forward(net, &block.dense, &block.bn, h, seed);
        f_caches.push(cache);
        h = next;
    }

    let mut u = Array2::zeros((b, 2 * h_dim));
    for e in 0..b {
        let (start, end) = stacked.segs[e];
        let pooled = stable_column_mean(h.slice(s![start..end, ..]));
        u.slice_mut(s![e, ..h_dim]).assign(&pooled);
        u.slice_mut(s![e, h_dim..]).assign(&h.row(stacked.cand[e]));
    }

    let g_seed = mask_seed.map(|s| substream(s, "mask-g", ""));
    let (r, g_cache) = block_forward(net, &net.g.dense, &net.g.bn, u, g_seed);
    let z2 = net.g_out.forward(r.view());
    let probs = z2.column(0).mapv(sigmoid_clipped);
    TrainForward { f_caches, g_cache, r, probs }
}

/// Forward pass in inference semantics (running statistics, no dropout).
pub(crate) fn infer_probs(net: &MatchNet, stacked: &Stacked) -> Array1<f64> {
    let b = stacked.labels.len();
    let h_dim = net.config.hidden_dim;
    let h = net.f_rows_running(stacked.x0.view());
    let mut u = Array2::zeros((b, 2 * h_dim));
    for e in 0..b {
        let (start, end) = stacked.segs[e];
        let pooled = stable_column_mean(h.slice(s![start..end, ..]));
        u.slice_mut(s![e, ..h_dim]).assign(&pooled);
        u.slice_mut(s![e, h_dim..]).assign(&h.row(stacked.cand[e]));
    }
    net.g_rows_running(u.view())
}

/// Gradients of the mean batch loss, laid out like the net's parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) f: Vec<BlockGrads>,
    pub(crate) g: BlockGrads,
    pub(crate) g_out_w: Array2<f64>,
    pub(crate) g_out_b: Array1<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Present when batch norm is on.
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

impl Gradients {
    /// Same order as [`MatchNet::params_flat`].
    pub fn to_flat(&self) -> Array1<f64> {
        let mut out = Vec::new();
        for b in self.f.iter().chain(std::iter::once(&self.g)) {
            out.extend(b.w.iter().copied());
            out.extend(b.b.iter().copied());
            if let (Some(gamma), Some(beta)) = (&b.gamma, &b.beta) {
                out.extend(gamma.iter().copied());
                out.extend(beta.iter().copied());
            }
        }
        out.extend(self.g_out_w.iter().copied());
        out.extend(self.g_out_b.iter().copied());
        Array1::from(out)
    }
}

fn block_backward(
    dense: &super::layers::DenseParams,
    bn: &super::layers::BatchNormParams,
    cache: &BlockCache,
    mut dout: Array2<f64>,
) -> (Array2<f64>, BlockGrads) {
    if let Some(mask) = &cache.mask {
        dout *= mask;
    }
    let dout = relu_backward(&cache.relu_in, &dout);
    let (dz, dgamma, dbeta) = match &cache.bn {
        Some(bn_cache) => {
            let g = bn.backward(bn_cache, dout.view());
            (g.dx, Some(g.dgamma), Some(g.dbeta))
        }
        None => (dout, None, None),
    };
    let (dx, dw, db) = dense.backward(cache.x_in.view(), dz.view());
    (dx, BlockGrads { w: dw, b: db, gamma: dgamma, beta: dbeta })
}

/// Backward pass matching [`train_forward`]. Returns gradients of the MEAN
/// loss; multiply by the batch size for the total-loss gradient.
pub(crate) fn train_backward(
    net: &MatchNet,
    stacked: &Stacked,
    fwd: &TrainForward,
) -> Gradients {
    let b = stacked.labels.len();
    let h_dim = net.config.hidden_dim;

    // d(mean loss)/dz2 = (ŷ − y)/B, zero where the clip made the loss flat.
    let mut dz2 = Array2::zeros((b, 1));
    for e in 0..b {
        let p = fwd.probs[e];
        if p > CLIP && p < 1.0 - CLIP {
            dz2[[e, 0]] = (p - stacked.labels[e]) / b as f64;
        }
    }

    let (dr, g_out_w, g_out_b) = net.g_out.backward(fwd.r.view(), dz2.view());
    let (du, g_grads) = block_backward(&net.g.dense, &net.g.bn, &fwd.g_cache, dr);

    // Un-pool: every playlist row of example e receives dP_e / T_e, the
    // candidate row receives dC_e.
    let mut dh = Array2::zeros(fwd.f_caches.last().unwrap().relu_in.dim());
    for e in 0..b {
        let (start, end) = stacked.segs[e];
        let t = (end - start) as f64;
        let dp = du.slice(s![e, ..h_dim]);
        for row in start..end {
            let mut target = dh.row_mut(row);
            target += &dp.mapv(|v| v / t);
        }
        let dc = du.slice(s![e, h_dim..]);
        dh.row_mut(stacked.cand[e]).assign(&dc);
    }

    let mut f_grads = vec![None; net.f.len()];
    let mut upstream = dh;
    for (i, block) in net.f.iter().enumerate().rev() {
        let (dx, grads) = block_backward(&block.dense, &block.bn, &fwd.f_caches[i], upstream);
        f_grads[i] = Some(grads);
        upstream = dx;
    }

    Gradients {
        f: f_grads.into_iter().map(Option::unwrap).collect(),
        g: g_grads,
        g_out_w,
        g_out_b,
    }
}
