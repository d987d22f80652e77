//! The playlist-song match classifier.
//!
//! Two components share the work. A feature transformation `f` — a stack of
//! dense → batch-norm → rectify → dropout blocks — maps every song's feature
//! vector to an H-dimensional hidden representation; the same weights are
//! applied to the playlist's songs and to the candidate song. The playlist's
//! hidden rows are mean-pooled into a single vector, concatenated with the
//! candidate's, and a discriminator `g` (dense → batch-norm → rectify →
//! dropout → dense → logistic) turns the pair into a match probability.
//!
//! Training minimizes binary cross-entropy over balanced match/mismatch
//! pairs; ranking scores every candidate song against a playlist, reusing
//! the pooled playlist representation so cost stays linear in the number of
//! candidates.
//!
//! In train mode batch normalization uses the statistics of the current
//! batch (computed over all song-level rows) and dropout is active; in
//! inference mode the running statistics are used and dropout is off, which
//! makes inference a pure per-row map followed by an order-insensitive mean
//! — scores are exactly invariant to playlist row order.

mod batch;
mod layers;
mod serialize;
mod train;

pub use batch::{BatchLoss, Example, Gradients};
pub use train::{train, TrainReport};

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{FeatureTable, SongId};
use crate::rng::substream;
use layers::{stable_column_mean, BatchNormParams, DenseParams};

#[derive(Debug, Error)]
pub enum MatchNetError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input has {got} feature columns, the net expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("playlist must contain at least one song")]
    EmptyPlaylist,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("operation requires {0} mode")]
    WrongMode(&'static str),
    #[error("no feature vector for song {0}")]
    MissingFeature(String),
    #[error("candidate {0} is already in the playlist")]
    CandidateInPlaylist(String),
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file: {0}")]
    BadModel(String),
}

/// Architecture and training controls.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchNetConfig {
    /// Feature dimension D.
    pub input_dim: usize,
    /// Hidden representation width H; the last f block outputs this.
    pub hidden_dim: usize,
    /// Number of dense→batch-norm→rectify→dropout blocks in f. Blocks before
    /// the last are twice as wide as `hidden_dim`.
    pub f_blocks: usize,
    /// Width of the discriminator's hidden layer.
    pub g_hidden: usize,
    pub dropout_rate: f64,
    /// Batch normalization can be switched off, leaving plain dense→rectify
    /// blocks; gradients then become additive per example, which the tests
    /// exploit.
    pub batch_norm: bool,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation cost tolerated before stopping;
    /// 0 stops after the first epoch.
    pub patience: usize,
}

impl MatchNetConfig {
    pub fn new(input_dim: usize) -> MatchNetConfig {
        MatchNetConfig {
            input_dim,
            hidden_dim: 128,
            f_blocks: 2,
            g_hidden: 128,
            dropout_rate: 0.5,
            batch_norm: true,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
        }
    }

    pub fn validate(&self) -> Result<(), MatchNetError> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("f_blocks", self.f_blocks),
            ("g_hidden", self.g_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(MatchNetError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(MatchNetError::InvalidConfig(format!(
                "dropout_rate must lie in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.bn_epsilon > 0.0 && self.bn_epsilon.is_finite()) {
            return Err(MatchNetError::InvalidConfig(format!(
                "bn_epsilon must be positive, got {}",
                self.bn_epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(MatchNetError::InvalidConfig(format!(
                "bn_momentum must lie in [0,1), got {}",
                self.bn_momentum
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MatchNetError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of each f block: D → 2H → … → 2H → H.
    fn f_widths(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.f_blocks);
        let mut fan_in = self.input_dim;
        for i in 0..self.f_blocks {
            let out = if i + 1 == self.f_blocks {
                self.hidden_dim
            } else {
                2 * self.hidden_dim
            };
            widths.push((fan_in, out));
            fan_in = out;
        }
        widths
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Block {
    pub dense: DenseParams,
    pub bn: BatchNormParams,
}

/// The classifier: f blocks, the discriminator block and its output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchNet {
    config: MatchNetConfig,
    pub(crate) f: Vec<Block>,
    pub(crate) g: Block,
    pub(crate) g_out: DenseParams,
    mode: Mode,
}

/// Initializes a net: dense weights from the symmetric scaled-uniform
/// scheme with bound √(6/(fan_in+fan_out)), biases zero, batch-norm scale 1,
/// shift 0, running mean 0, running variance 1. Starts in inference mode.
pub fn init(config: &MatchNetConfig, rng_seed: u64) -> Result<MatchNet, MatchNetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(substream(rng_seed, "matchnet-init", ""));
    let f = config
        .f_widths()
        .into_iter()
        .map(|(fan_in, fan_out)| Block {
            dense: DenseParams::glorot(fan_in, fan_out, &mut rng),
            bn: BatchNormParams::identity(fan_out),
        })
        .collect();
    let g = Block {
        dense: DenseParams::glorot(2 * config.hidden_dim, config.g_hidden, &mut rng),
        bn: BatchNormParams::identity(config.g_hidden),
    };
    let g_out = DenseParams::glorot(config.g_hidden, 1, &mut rng);
    Ok(MatchNet {
        config: config.clone(),
        f,
        g,
        g_out,
        mode: Mode::Inference,
    })
}

impl MatchNet {
    pub fn config(&self) -> &MatchNetConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Match probability for one playlist (rows of `playlist_features`) and
    /// one candidate song. Honors the current mode; dropout is never applied
    /// here (single-pair calls have no mask seed — use [`MatchNet::loss`]
    /// for the training objective).
    pub fn forward(
        &self,
        playlist_features: ArrayView2<f64>,
        song_feature: ArrayView1<f64>,
    ) -> Result<f64, MatchNetError> {
        self.check_input(playlist_features, song_feature)?;
        match self.mode {
            Mode::Inference => {
                let h_p = stable_column_mean(self.f_rows_running(playlist_features).view());
                let h_s = self.f_rows_running(song_feature.insert_axis(Axis(0)));
                let u = concat_pair(&h_p, h_s.row(0));
                Ok(self.g_rows_running(u.view())[0])
            }
            Mode::Train => {
                let example = Example {
                    playlist: playlist_features.to_owned(),
                    song: song_feature.to_owned(),
                    label: true, // irrelevant for the probability
                };
                let stacked = batch::Stacked::from_examples(self, &[example])?;
                Ok(batch::train_forward(self, &stacked, None).probs[0])
            }
        }
    }

    /// Batch cross-entropy under the current mode: total and per-example
    /// mean. In train mode, dropout masks are derived from `mask_seed`, so
    /// a fixed seed makes the value reproducible.
    pub fn loss(&self, batch: &[Example], mask_seed: u64) -> Result<BatchLoss, MatchNetError> {
        if batch.is_empty() {
            return Err(MatchNetError::EmptyBatch);
        }
        let stacked = batch::Stacked::from_examples(self, batch)?;
        let probs = match self.mode {
            Mode::Inference => batch::infer_probs(self, &stacked),
            Mode::Train => batch::train_forward(self, &stacked, Some(mask_seed)).probs,
        };
        Ok(batch::bce(&probs, &stacked.labels))
    }

    /// Exact analytic gradients of the mean batch loss with respect to every
    /// trainable parameter, differentiated through the batch-norm batch
    /// statistics and the shared use of f. The same `mask_seed` makes
    /// [`MatchNet::loss`] evaluate the identical objective.
    pub fn backward(
        &self,
        batch: &[Example],
        mask_seed: u64,
    ) -> Result<(BatchLoss, Gradients), MatchNetError> {
        if self.mode != Mode::Train {
            return Err(MatchNetError::WrongMode("train"));
        }
        if batch.is_empty() {
            return Err(MatchNetError::EmptyBatch);
        }
        let stacked = batch::Stacked::from_examples(self, batch)?;
        let fwd = batch::train_forward(self, &stacked, Some(mask_seed));
        let loss = batch::bce(&fwd.probs, &stacked.labels);
        let grads = batch::train_backward(self, &stacked, &fwd);
        Ok((loss, grads))
    }

    /// Scores every candidate against the playlist and returns them in
    /// descending score order, ties broken by ascending song id. Uses
    /// inference semantics; the pooled playlist representation is computed
    /// once and shared across candidates.
    pub fn rank_candidates(
        &self,
        playlist: &BTreeSet<SongId>,
        candidates: &BTreeSet<SongId>,
        features: &FeatureTable,
    ) -> Result<Vec<(SongId, f64)>, MatchNetError> {
        if playlist.is_empty() {
            return Err(MatchNetError::EmptyPlaylist);
        }
        if let Some(song) = candidates.intersection(playlist).next() {
            return Err(MatchNetError::CandidateInPlaylist(song.to_string()));
        }
        let gather = |songs: &BTreeSet<SongId>| -> Result<Array2<f64>, MatchNetError> {
            let mut m = Array2::zeros((songs.len(), self.config.input_dim));
            for (i, song) in songs.iter().enumerate() {
                let row = features
                    .get(song)
                    .ok_or_else(|| MatchNetError::MissingFeature(song.to_string()))?;
                if row.len() != self.config.input_dim {
                    return Err(MatchNetError::DimensionMismatch {
                        expected: self.config.input_dim,
                        got: row.len(),
                    });
                }
                m.row_mut(i).assign(&ArrayView1::from(row));
            }
            Ok(m)
        };
        let x_p = gather(playlist)?;
        let x_c = gather(candidates)?;
        let h_p = stable_column_mean(self.f_rows_running(x_p.view()).view());
        let h_c = self.f_rows_running(x_c.view());

        let mut scored: Vec<(SongId, f64)> = candidates
            .iter()
            .cloned()
            .zip(h_c.rows().into_iter().map(|r| r.to_owned()))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(song, h_s)| {
                let u = concat_pair(&h_p, h_s.view());
                let p = self.g_rows_running(u.view())[0];
                (song, p)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(scored)
    }

    /// Applies f to each row independently using running batch-norm
    /// statistics (the inference path).
    pub(crate) fn f_rows_running(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for block in &self.f {
            let z = block.dense.forward(h.view());
            let z = if self.config.batch_norm {
                block.bn.forward_running(z.view(), self.config.bn_epsilon)
            } else {
                z
            };
            h = layers::relu(&z);
        }
        h
    }

    /// Applies the discriminator to each row independently using running
    /// statistics; returns clipped probabilities.
    pub(crate) fn g_rows_running(&self, u: ArrayView2<f64>) -> Array1<f64> {
        let z = self.g.dense.forward(u);
        let z = if self.config.batch_norm {
            self.g.bn.forward_running(z.view(), self.config.bn_epsilon)
        } else {
            z
        };
        let r = layers::relu(&z);
        let z2 = self.g_out.forward(r.view());
        z2.column(0).mapv(layers::sigmoid_clipped)
    }

    fn check_input(
        &self,
        playlist: ArrayView2<f64>,
        song: ArrayView1<f64>,
    ) -> Result<(), MatchNetError> {
        if playlist.nrows() == 0 {
            return Err(MatchNetError::EmptyPlaylist);
        }
        for got in [playlist.ncols(), song.len()] {
            if got != self.config.input_dim {
                return Err(MatchNetError::DimensionMismatch {
                    expected: self.config.input_dim,
                    got,
                });
            }
        }
        if playlist.iter().chain(song.iter()).any(|v| !v.is_finite()) {
            return Err(MatchNetError::NonFiniteInput);
        }
        Ok(())
    }

    /// All trainable parameters as one flat vector, in the fixed order:
    /// per f block W (row-major), b, then γ, β when batch norm is on; the
    /// discriminator block in the same layout; finally the output layer's
    /// W, b. The optimizer and the finite-difference checks both use this.
    pub fn params_flat(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit_params(|a| out.extend(a.copied()));
        Array1::from(out)
    }

    /// Writes a flat vector produced by [`MatchNet::params_flat`] back.
    pub fn set_params_flat(&mut self, flat: &Array1<f64>) {
        assert_eq!(flat.len(), self.n_params(), "parameter count mismatch");
        let mut offset = 0;
        self.visit_params_mut(|a| {
            for v in a {
                *v = flat[offset];
                offset += 1;
            }
        });
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(|a| n += a.count());
        n
    }

    fn visit_params(&self, mut visit: impl FnMut(Box<dyn Iterator<Item = &f64> + '_>)) {
        let bn = self.config.batch_norm;
        for block in self.f.iter().chain(std::iter::once(&self.g)) {
            visit(Box::new(block.dense.w.iter()));
            visit(Box::new(block.dense.b.iter()));
            if bn {
                visit(Box::new(block.bn.gamma.iter()));
                visit(Box::new(block.bn.beta.iter()));
            }
        }
        visit(Box::new(self.g_out.w.iter()));
        visit(Box::new(self.g_out.b.iter()));
    }

    fn visit_params_mut(&mut self, mut visit: impl FnMut(Box<dyn Iterator<Item = &mut f64> + '_>)) {
        let bn = self.config.batch_norm;
        for block in self.f.iter_mut().chain(std::iter::once(&mut self.g)) {
            visit(Box::new(block.dense.w.iter_mut()));
            visit(Box::new(block.dense.b.iter_mut()));
            if bn {
                visit(Box::new(block.bn.gamma.iter_mut()));
                visit(Box::new(block.bn.beta.iter_mut()));
            }
        }
        visit(Box::new(self.g_out.w.iter_mut()));
        visit(Box::new(self.g_out.b.iter_mut()));
    }

    /// Running batch-norm statistics (mean then variance per layer), flat.
    /// Together with [`MatchNet::params_flat`] this captures the whole
    /// mutable state — used for best-validation snapshots.
    pub fn running_stats_flat(&self) -> Array1<f64> {
        let mut out = Vec::new();
        if self.config.batch_norm {
            for block in self.f.iter().chain(std::iter::once(&self.g)) {
                out.extend(block.bn.running_mean.iter().copied());
                out.extend(block.bn.running_var.iter().copied());
            }
        }
        Array1::from(out)
    }

    pub fn set_running_stats_flat(&mut self, flat: &Array1<f64>) {
        let mut offset = 0;
        if self.config.batch_norm {
            for block in self.f.iter_mut().chain(std::iter::once(&mut self.g)) {
                for a in [&mut block.bn.running_mean, &mut block.bn.running_var] {
                    for v in a.iter_mut() {
                        *v = flat[offset];
                        offset += 1;
                    }
                }
            }
        }
        assert_eq!(offset, flat.len(), "running-stat count mismatch");
    }

    /// Saves the model to `path`: a checksummed binary file with a text
    /// header echoing the configuration.
    pub fn save(&self, path: &std::path::Path) -> Result<(), MatchNetError> {
        serialize::save(self, path)
    }

    /// Loads a model saved by [`MatchNet::save`]. The net starts in
    /// inference mode.
    pub fn load(path: &std::path::Path) -> Result<MatchNet, MatchNetError> {
        serialize::load(path)
    }
}

/// [h_p ‖ h_s] as a 1×2H matrix.
fn concat_pair(h_p: &Array1<f64>, h_s: ArrayView1<f64>) -> Array2<f64> {
    let h = h_p.len();
    let mut u = Array2::zeros((1, 2 * h));
    u.slice_mut(s![0, ..h]).assign(h_p);
    u.slice_mut(s![0, h..]).assign(&h_s);
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn small_config() -> MatchNetConfig {
        MatchNetConfig {
            hidden_dim: 4,
            f_blocks: 2,
            g_hidden: 4,
            dropout_rate: 0.0,
            ..MatchNetConfig::new(6)
        }
    }

    fn random_playlist(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let config = small_config();
        let a = init(&config, 7).unwrap();
        let b = init(&config, 7).unwrap();
        assert_eq!(a, b);
        let c = init(&config, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_zero_sizes() {
        let mut config = small_config();
        config.hidden_dim = 0;
        assert!(matches!(
            init(&config, 1),
            Err(MatchNetError::InvalidConfig(_))
        ));
    }

    #[test]
    fn f_widths_follow_the_double_then_narrow_rule() {
        let mut config = MatchNetConfig::new(32);
        assert_eq!(config.f_widths(), vec![(32, 256), (256, 128)]);
        config.f_blocks = 1;
        assert_eq!(config.f_widths(), vec![(32, 128)]);
        config.f_blocks = 3;
        assert_eq!(config.f_widths(), vec![(32, 256), (256, 256), (256, 128)]);
    }

    #[test]
    fn untrained_net_predicts_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = init(&small_config(), 1).unwrap();
        for _ in 0..50 {
            let playlist = random_playlist(&mut rng, 4, 6);
            let song: Array1<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = net.forward(playlist.view(), song.view()).unwrap();
            assert!((p - 0.5).abs() < 0.45, "untrained prediction {p} is extreme");
        }
    }

    #[test]
    fn zeroed_output_layer_predicts_exactly_half() {
        let mut net = init(&small_config(), 3).unwrap();
        net.g_out.w.fill(0.0);
        net.g_out.b.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mode in [Mode::Inference, Mode::Train] {
            net.set_mode(mode);
            let playlist = random_playlist(&mut rng, 3, 6);
            let song: Array1<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(net.forward(playlist.view(), song.view()).unwrap(), 0.5);
        }
    }

    #[test]
    fn identical_playlist_rows_match_the_single_row_playlist() {
        let net = init(&small_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row: Array1<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let song: Array1<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let single = Array2::from_shape_fn((1, 6), |(_, j)| row[j]);
        let repeated = Array2::from_shape_fn((5, 6), |(_, j)| row[j]);
        let a = net.forward(single.view(), song.view()).unwrap();
        let b = net.forward(repeated.view(), song.view()).unwrap();
        assert_eq!(a, b, "pooling identical rows must be exact");
    }

    #[test]
    fn inference_is_exactly_permutation_invariant() {
        let net = init(&small_config(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for t in [2, 3, 5, 9] {
            let playlist = random_playlist(&mut rng, t, 6);
            let song: Array1<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let base = net.forward(playlist.view(), song.view()).unwrap();
            let mut order: Vec<usize> = (0..t).collect();
            for _ in 0..5 {
                // Fisher-Yates with the test rng.
                for i in (1..t).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                let permuted = playlist.select(Axis(0), &order);
                let p = net.forward(permuted.view(), song.view()).unwrap();
                assert_eq!(p, base, "row order changed the score");
            }
        }
    }

    #[test]
    fn forward_validates_inputs() {
        let net = init(&small_config(), 1).unwrap();
        let playlist = Array2::zeros((2, 6));
        let song5 = Array1::zeros(5);
        assert!(matches!(
            net.forward(playlist.view(), song5.view()),
            Err(MatchNetError::DimensionMismatch { expected: 6, got: 5 })
        ));
        let empty = Array2::zeros((0, 6));
        let song = Array1::zeros(6);
        assert!(matches!(
            net.forward(empty.view(), song.view()),
            Err(MatchNetError::EmptyPlaylist)
        ));
        let mut bad = Array2::zeros((2, 6));
        bad[[0, 0]] = f64::NAN;
        assert!(matches!(
            net.forward(bad.view(), song.view()),
            Err(MatchNetError::NonFiniteInput)
        ));
    }

    #[test]
    fn params_round_trip_through_flat_vector() {
        let net = init(&small_config(), 12).unwrap();
        let flat = net.params_flat();
        assert_eq!(flat.len(), net.n_params());
        let mut other = init(&small_config(), 99).unwrap();
        assert_ne!(other.params_flat(), flat);
        other.set_params_flat(&flat);
        assert_eq!(other.params_flat(), flat);
        // Dense layers now agree; only running stats may differ (both are
        // freshly initialized, so they agree too).
        assert_eq!(other, net);
    }

    #[test]
    fn param_count_matches_architecture() {
        let net = init(&small_config(), 1).unwrap();
        // f: 6→8 (48+8 + 8+8), 8→4 (32+4 + 4+4); g: 8→4 (32+4 + 4+4); out 4→1 (4+1).
        let expected = (48 + 8 + 16) + (32 + 4 + 8) + (32 + 4 + 8) + 5;
        assert_eq!(net.n_params(), expected);
    }

    fn toy_features() -> (FeatureTable, BTreeSet<SongId>, BTreeSet<SongId>) {
        let mut features = FeatureTable::new(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for i in 0..30 {
            let id = SongId::new(format!("s{i:02}")).unwrap();
            let row: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            features.insert(id, row).unwrap();
        }
        let playlist: BTreeSet<SongId> = (0..5)
            .map(|i| SongId::new(format!("s{i:02}")).unwrap())
            .collect();
        let candidates: BTreeSet<SongId> = (5..30)
            .map(|i| SongId::new(format!("s{i:02}")).unwrap())
            .collect();
        (features, playlist, candidates)
    }

    #[test]
    fn ranking_is_sorted_deterministic_and_matches_forward() {
        let net = init(&small_config(), 17).unwrap();
        let (features, playlist, candidates) = toy_features();
        let ranked = net.rank_candidates(&playlist, &candidates, &features).unwrap();
        assert_eq!(ranked.len(), candidates.len());
        for w in ranked.windows(2) {
            assert!(w[0].1 >= w[1].1);
            if w[0].1 == w[1].1 {
                assert!(w[0].0 < w[1].0);
            }
        }
        assert_eq!(
            ranked,
            net.rank_candidates(&playlist, &candidates, &features).unwrap()
        );
        // Cached playlist pooling must give the same probabilities as the
        // per-pair forward pass.
        let mut x_p = Array2::zeros((playlist.len(), 6));
        for (i, song) in playlist.iter().enumerate() {
            x_p.row_mut(i)
                .assign(&ArrayView1::from(features.get(song).unwrap()));
        }
        for (song, score) in &ranked {
            let x_s = ArrayView1::from(features.get(song).unwrap());
            let direct = net.forward(x_p.view(), x_s).unwrap();
            assert_abs_diff_eq!(direct, *score, epsilon = 1e-15);
        }
    }

    #[test]
    fn ranking_rejects_overlap_and_missing_features() {
        let net = init(&small_config(), 17).unwrap();
        let (features, playlist, mut candidates) = toy_features();
        candidates.insert(playlist.iter().next().unwrap().clone());
        assert!(matches!(
            net.rank_candidates(&playlist, &candidates, &features),
            Err(MatchNetError::CandidateInPlaylist(_))
        ));
        let mut candidates: BTreeSet<SongId> = Default::default();
        candidates.insert(SongId::new("ghost").unwrap());
        assert!(matches!(
            net.rank_candidates(&playlist, &candidates, &features),
            Err(MatchNetError::MissingFeature(_))
        ));
    }

    #[test]
    fn single_candidate_ranks_first() {
        let net = init(&small_config(), 17).unwrap();
        let (features, playlist, _) = toy_features();
        let mut only: BTreeSet<SongId> = Default::default();
        only.insert(SongId::new("s29").unwrap());
        let ranked = net.rank_candidates(&playlist, &only, &features).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].0.as_str(), "s29");
    }
}
