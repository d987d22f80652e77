//! Collaborative-filtering baselines: weighted matrix factorization over the
//! binary playlist-song matrix, fit by alternating least squares, and a
//! seeded random scorer.
//!
//! Every cell of the interaction matrix is treated as observed-positive
//! (confidence `alpha`) or unobserved (confidence 1). Because the matrix is
//! built from training playlists only, songs that occur in no training
//! playlist have no column; such candidates are *unrankable* and are placed
//! in a deterministic tail (score −∞, ordered by id) so that evaluation
//! denominators stay comparable across scorers.
//!
//! Factorization scores only playlists that were training rows — it has no
//! way to embed an unseen playlist — so it supports the weak-generalization
//! experiment only.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Playlist, SongId};
use crate::rng::substream;

#[derive(Debug, Error)]
pub enum WmfError {
    #[error("playlist collection is empty")]
    EmptyCollection,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("duplicate playlist id {0}")]
    DuplicatePlaylist(String),
    #[error("normal equations are singular; increase the regularization weight")]
    Singular,
    #[error("playlist {0} is not a training row; factorization can only score training playlists")]
    UnknownPlaylist(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file: {0}")]
    BadModel(String),
}

/// Factorization hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WmfConfig {
    /// Latent dimension k.
    pub factors: usize,
    /// Confidence weight on observed cells; unobserved cells weigh 1.
    pub alpha: f64,
    /// L2 regularization weight λ.
    pub lambda: f64,
    /// Full alternations (playlist half-sweep then song half-sweep) to run.
    pub sweeps: usize,
    pub rng_seed: u64,
}

impl WmfConfig {
    pub fn new(rng_seed: u64) -> WmfConfig {
        WmfConfig { factors: 64, alpha: 40.0, lambda: 0.1, sweeps: 15, rng_seed }
    }

    pub fn validate(&self) -> Result<(), WmfError> {
        if self.factors == 0 {
            return Err(WmfError::InvalidConfig("factors must be at least 1".into()));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(WmfError::InvalidConfig("alpha must be a positive real".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(WmfError::InvalidConfig("lambda must be non-negative".into()));
        }
        if self.sweeps == 0 {
            return Err(WmfError::InvalidConfig("sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sparse binary playlist-song matrix with index maps in both directions.
/// Rows keep the input playlist order; columns are the training songs in
/// ascending id order.
#[derive(Clone, Debug)]
pub struct Interactions {
    row_songs: Vec<Vec<usize>>,
    col_playlists: Vec<Vec<usize>>,
    playlist_ids: Vec<String>,
    playlist_index: BTreeMap<String, usize>,
    song_ids: Vec<SongId>,
    song_index: BTreeMap<SongId, usize>,
}

impl Interactions {
    pub fn n_playlists(&self) -> usize {
        self.row_songs.len()
    }

    pub fn n_songs(&self) -> usize {
        self.col_playlists.len()
    }

    /// Number of stored ones: Σ over playlists of their unique song count.
    pub fn n_nonzero(&self) -> usize {
        self.row_songs.iter().map(Vec::len).sum()
    }

    pub fn song_column(&self, song: &SongId) -> Option<usize> {
        self.song_index.get(song).copied()
    }

    pub fn playlist_row(&self, id: &str) -> Option<usize> {
        self.playlist_index.get(id).copied()
    }
}

/// Collects the binary occurrence matrix from training playlists. Only
/// songs that occur in at least one training playlist receive a column.
pub fn build_interaction_matrix(train: &[Playlist]) -> Result<Interactions, WmfError> {
    if train.is_empty() {
        return Err(WmfError::EmptyCollection);
    }
    let mut song_index = BTreeMap::new();
    for playlist in train {
        for song in playlist.songs() {
            let next = song_index.len();
            song_index.entry(song.clone()).or_insert(next);
        }
    }
    // Re-number columns in ascending id order for a deterministic layout.
    let song_ids: Vec<SongId> = song_index.keys().cloned().collect();
    for (col, song) in song_ids.iter().enumerate() {
        *song_index.get_mut(song).unwrap() = col;
    }

    let mut playlist_index = BTreeMap::new();
    let mut playlist_ids = Vec::with_capacity(train.len());
    let mut row_songs = Vec::with_capacity(train.len());
    let mut col_playlists = vec![Vec::new(); song_ids.len()];
    for (row, playlist) in train.iter().enumerate() {
        if playlist_index.insert(playlist.id().to_string(), row).is_some() {
            return Err(WmfError::DuplicatePlaylist(playlist.id().to_string()));
        }
        playlist_ids.push(playlist.id().to_string());
        let cols: Vec<usize> = playlist
            .song_set()
            .iter()
            .map(|s| song_index[s])
            .collect();
        for &col in &cols {
            col_playlists[col].push(row);
        }
        row_songs.push(cols);
    }
    Ok(Interactions {
        row_songs,
        col_playlists,
        playlist_ids,
        playlist_index,
        song_ids,
        song_index,
    })
}

/// Solves A·x = b for symmetric positive-definite A by Cholesky
/// factorization. Returns `None` when A is not positive definite.
fn spd_solve(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let k = a.nrows();
    let mut l = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for m in 0..j {
                sum -= l[[i, m]] * l[[j, m]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    // Forward substitution L·y = b, then back substitution Lᵀ·x = y.
    let mut y = Array1::<f64>::zeros(k);
    for i in 0..k {
        let mut sum = b[i];
        for m in 0..i {
            sum -= l[[i, m]] * y[m];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(k);
    for i in (0..k).rev() {
        let mut sum = y[i];
        for m in i + 1..k {
            sum -= l[[m, i]] * x[m];
        }
        x[i] = sum / l[[i, i]];
    }
    Some(x)
}

/// One half-sweep: re-solves every row of `target` exactly, holding `other`
/// fixed. `observed[i]` lists the columns of `other` that row i interacts
/// with. The normal equations for row i are
/// (OᵀO + (alpha−1)·Σ_obs o oᵀ + λI)·x = alpha·Σ_obs o.
fn update_side(
    target: &mut Array2<f64>,
    other: &Array2<f64>,
    observed: &[Vec<usize>],
    alpha: f64,
    lambda: f64,
) -> Result<(), WmfError> {
    let k = other.ncols();
    let gram = other.t().dot(other);
    let solved: Result<Vec<Array1<f64>>, WmfError> = (0..target.nrows())
        .into_par_iter()
        .map(|i| {
            let mut a = gram.clone();
            for d in 0..k {
                a[[d, d]] += lambda;
            }
            let mut b = Array1::<f64>::zeros(k);
            for &col in &observed[i] {
                let o = other.row(col);
                for p in 0..k {
                    b[p] += alpha * o[p];
                    for q in 0..k {
                        a[[p, q]] += (alpha - 1.0) * o[p] * o[q];
                    }
                }
            }
            spd_solve(&a, &b).ok_or(WmfError::Singular)
        })
        .collect();
    for (i, row) in solved?.into_iter().enumerate() {
        target.row_mut(i).assign(&row);
    }
    Ok(())
}

/// The exact weighted objective
/// Σ_cells c·(r − u·v)² + λ·(Σ‖u‖² + Σ‖v‖²),
/// computed without materializing the dense cell sum: the all-cells part
/// Σ (u·v)² is Σ_u uᵀ(VᵀV)u, then observed cells swap in their weighted
/// residual.
pub fn wmf_objective(
    playlist_factors: &Array2<f64>,
    song_factors: &Array2<f64>,
    interactions: &Interactions,
    alpha: f64,
    lambda: f64,
) -> f64 {
    let gram = song_factors.t().dot(song_factors);
    let mut total = 0.0;
    for (i, cols) in interactions.row_songs.iter().enumerate() {
        let u = playlist_factors.row(i);
        total += u.dot(&gram.dot(&u));
        for &col in cols {
            let pred = u.dot(&song_factors.row(col));
            total += alpha * (1.0 - pred) * (1.0 - pred) - pred * pred;
        }
    }
    let norms: f64 = playlist_factors.iter().map(|v| v * v).sum::<f64>()
        + song_factors.iter().map(|v| v * v).sum::<f64>();
    total + lambda * norms
}

/// Learned factors plus the index maps tying them back to ids.
#[derive(Clone, Debug)]
pub struct WmfModel {
    pub playlist_factors: Array2<f64>,
    pub song_factors: Array2<f64>,
    pub playlist_ids: Vec<String>,
    pub playlist_index: BTreeMap<String, usize>,
    pub song_ids: Vec<SongId>,
    pub song_index: BTreeMap<SongId, usize>,
    pub config: WmfConfig,
}

/// A fitted model together with its optimization trace.
#[derive(Clone, Debug)]
pub struct WmfFit {
    pub model: WmfModel,
    /// Objective value after every half-sweep; length 2·sweeps,
    /// non-increasing.
    pub objective_trace: Vec<f64>,
}

fn gaussian_factors(rows: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 0.01).expect("valid standard deviation");
    let mut m = Array2::zeros((rows, k));
    for v in m.iter_mut() {
        *v = dist.sample(&mut rng);
    }
    m
}

/// Alternating least squares: playlist rows and song columns are re-solved
/// exactly in turn, each half-sweep sharing one gram matrix of the fixed
/// side. The returned trace of objective values never increases.
pub fn als_fit(interactions: &Interactions, config: &WmfConfig) -> Result<WmfFit, WmfError> {
    config.validate()?;
    let k = config.factors;
    let mut playlist_factors = gaussian_factors(
        interactions.n_playlists(),
        k,
        substream(config.rng_seed, "factor-init", "playlists"),
    );
    let mut song_factors = gaussian_factors(
        interactions.n_songs(),
        k,
        substream(config.rng_seed, "factor-init", "songs"),
    );

    let mut objective_trace = Vec::with_capacity(2 * config.sweeps);
    for _ in 0..config.sweeps {
        update_side(
            &mut playlist_factors,
            &song_factors,
            &interactions.row_songs,
            config.alpha,
            config.lambda,
        )?;
        objective_trace.push(wmf_objective(
            &playlist_factors,
            &song_factors,
            interactions,
            config.alpha,
            config.lambda,
        ));
        update_side(
            &mut song_factors,
            &playlist_factors,
            &interactions.col_playlists,
            config.alpha,
            config.lambda,
        )?;
        objective_trace.push(wmf_objective(
            &playlist_factors,
            &song_factors,
            interactions,
            config.alpha,
            config.lambda,
        ));
    }

    Ok(WmfFit {
        model: WmfModel {
            playlist_factors,
            song_factors,
            playlist_ids: interactions.playlist_ids.clone(),
            playlist_index: interactions.playlist_index.clone(),
            song_ids: interactions.song_ids.clone(),
            song_index: interactions.song_index.clone(),
            config: config.clone(),
        },
        objective_trace,
    })
}

/// Sorts (id, score) pairs by descending score, ties by ascending id.
/// Scores of −∞ mark unrankable candidates, so they end up last.
pub(crate) fn sort_scored(mut scored: Vec<(SongId, f64)>) -> Vec<(SongId, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

impl WmfModel {
    /// Scores every candidate against a training playlist's factor by inner
    /// product. Candidates without a column get score −∞ and form a
    /// deterministic tail after all ranked songs, in ascending id order.
    pub fn rank_candidates(
        &self,
        playlist_id: &str,
        candidates: &BTreeSet<SongId>,
    ) -> Result<Vec<(SongId, f64)>, WmfError> {
        let row = *self
            .playlist_index
            .get(playlist_id)
            .ok_or_else(|| WmfError::UnknownPlaylist(playlist_id.to_string()))?;
        let u = self.playlist_factors.row(row);
        let scored = candidates
            .iter()
            .map(|song| {
                let score = match self.song_index.get(song) {
                    Some(&col) => u.dot(&self.song_factors.row(col)),
                    None => f64::NEG_INFINITY,
                };
                (song.clone(), score)
            })
            .collect();
        Ok(sort_scored(scored))
    }

    pub fn save(&self, path: &Path) -> Result<(), WmfError> {
        let io_err = |e| WmfError::Io { path: path.display().to_string(), source: e };
        let header = format!(
            "version=1\nfactors={}\nalpha={}\nlambda={}\nsweeps={}\nseed={}\nn_playlists={}\nn_songs={}\n",
            self.config.factors,
            self.config.alpha,
            self.config.lambda,
            self.config.sweeps,
            self.config.rng_seed,
            self.playlist_ids.len(),
            self.song_ids.len(),
        );
        let playlist_block: String = self.playlist_ids.iter().map(|s| format!("{s}\n")).collect();
        let song_block: String = self.song_ids.iter().map(|s| format!("{s}\n")).collect();
        let mut buf = Vec::new();
        buf.extend_from_slice(b"PWMF");
        for block in [&header, &playlist_block, &song_block] {
            buf.extend_from_slice(&u32::try_from(block.len()).unwrap().to_le_bytes());
            buf.extend_from_slice(block.as_bytes());
        }
        for v in self.playlist_factors.iter().chain(self.song_factors.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&crc32fast::hash(&buf).to_le_bytes());
        std::fs::write(path, buf).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<WmfModel, WmfError> {
        let bad = |msg: &str| WmfError::BadModel(msg.to_string());
        let buf = std::fs::read(path)
            .map_err(|e| WmfError::Io { path: path.display().to_string(), source: e })?;
        if buf.len() < 12 {
            return Err(bad("file too short"));
        }
        if &buf[..4] != b"PWMF" {
            return Err(bad("wrong magic bytes"));
        }
        let (body, stored) = buf.split_at(buf.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(stored.try_into().unwrap()) {
            return Err(bad("checksum mismatch"));
        }

        let mut offset = 4;
        let mut blocks = Vec::new();
        for _ in 0..3 {
            if offset + 4 > body.len() {
                return Err(bad("truncated text block"));
            }
            let len = u32::from_le_bytes(body[offset..offset + 4].try_into().unwrap()) as usize;
            offset += 4;
            if offset + len > body.len() {
                return Err(bad("text block exceeds file size"));
            }
            let text = std::str::from_utf8(&body[offset..offset + len])
                .map_err(|_| bad("text block is not UTF-8"))?;
            blocks.push(text.to_string());
            offset += len;
        }

        let mut header = BTreeMap::new();
        for line in blocks[0].lines() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("malformed header line"))?;
            header.insert(key.to_string(), value.to_string());
        }
        fn field<T: std::str::FromStr>(
            header: &BTreeMap<String, String>,
            key: &str,
        ) -> Result<T, WmfError> {
            header
                .get(key)
                .ok_or_else(|| WmfError::BadModel(format!("missing header key {key:?}")))?
                .parse()
                .map_err(|_| WmfError::BadModel(format!("unparsable header key {key:?}")))
        }
        let version: u32 = field(&header, "version")?;
        if version != 1 {
            return Err(WmfError::BadModel(format!("unsupported version {version}")));
        }
        let config = WmfConfig {
            factors: field(&header, "factors")?,
            alpha: field(&header, "alpha")?,
            lambda: field(&header, "lambda")?,
            sweeps: field(&header, "sweeps")?,
            rng_seed: field(&header, "seed")?,
        };
        config
            .validate()
            .map_err(|e| WmfError::BadModel(format!("invalid configuration in header: {e}")))?;
        let n_playlists: usize = field(&header, "n_playlists")?;
        let n_songs: usize = field(&header, "n_songs")?;

        let playlist_ids: Vec<String> = blocks[1].lines().map(str::to_string).collect();
        let song_ids = blocks[2]
            .lines()
            .map(SongId::new)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| WmfError::BadModel(format!("bad song id: {e}")))?;
        if playlist_ids.len() != n_playlists || song_ids.len() != n_songs {
            return Err(bad("index block length disagrees with header"));
        }
        let playlist_index: BTreeMap<String, usize> = playlist_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let song_index: BTreeMap<SongId, usize> = song_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        if playlist_index.len() != n_playlists || song_index.len() != n_songs {
            return Err(bad("duplicate id in index block"));
        }

        let k = config.factors;
        let expected = offset + 8 * k * (n_playlists + n_songs);
        if body.len() != expected {
            return Err(bad("factor blob size disagrees with header"));
        }
        let mut read_matrix = |rows: usize| {
            let m = Array2::from_shape_fn((rows, k), |(i, j)| {
                let at = offset + 8 * (i * k + j);
                f64::from_le_bytes(body[at..at + 8].try_into().unwrap())
            });
            offset += 8 * rows * k;
            m
        };
        let playlist_factors = read_matrix(n_playlists);
        let song_factors = read_matrix(n_songs);
        if playlist_factors.iter().chain(song_factors.iter()).any(|v| !v.is_finite()) {
            return Err(bad("non-finite factor value"));
        }

        Ok(WmfModel {
            playlist_factors,
            song_factors,
            playlist_ids,
            playlist_index,
            song_ids,
            song_index,
            config,
        })
    }
}

/// Scores every candidate with an independent uniform(0,1) draw. The draw
/// order is the candidates' ascending id order, so a seed fixes the
/// permutation regardless of how the set was assembled.
pub fn random_rank(candidates: &BTreeSet<SongId>, rng_seed: u64) -> Vec<(SongId, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let scored = candidates
        .iter()
        .map(|song| (song.clone(), rng.random::<f64>()))
        .collect();
    sort_scored(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn playlist(id: &str, songs: &[&str]) -> Playlist {
        Playlist::from_entries(
            id,
            songs.iter().map(|s| (SongId::new(*s).unwrap(), format!("{s}-artist"))),
        )
        .unwrap()
        .0
    }

    fn toy_interactions() -> Interactions {
        // [[1,1,0],[0,1,1],[1,0,1]] over columns (a,b,c)
        build_interaction_matrix(&[
            playlist("p1", &["a", "b"]),
            playlist("p2", &["b", "c"]),
            playlist("p3", &["a", "c"]),
        ])
        .unwrap()
    }

    /// Dense re-computation of the objective, cell by cell — deliberately
    /// naive so it shares nothing with the production gram-matrix version.
    fn dense_objective(
        u: &Array2<f64>,
        v: &Array2<f64>,
        inter: &Interactions,
        alpha: f64,
        lambda: f64,
    ) -> f64 {
        let mut total = 0.0;
        for i in 0..inter.n_playlists() {
            for j in 0..inter.n_songs() {
                let observed = inter.row_songs[i].contains(&j);
                let (c, r) = if observed { (alpha, 1.0) } else { (1.0, 0.0) };
                let pred = u.row(i).dot(&v.row(j));
                total += c * (r - pred) * (r - pred);
            }
        }
        total
            + lambda
                * (u.iter().map(|x| x * x).sum::<f64>() + v.iter().map(|x| x * x).sum::<f64>())
    }

    #[test]
    fn interaction_matrix_layout() {
        let inter = build_interaction_matrix(&[playlist("p1", &["a", "b"]), playlist("p2", &["b"])])
            .unwrap();
        assert_eq!(inter.n_playlists(), 2);
        assert_eq!(inter.n_songs(), 2);
        assert_eq!(inter.n_nonzero(), 3);
        assert_eq!(inter.song_column(&SongId::new("a").unwrap()), Some(0));
        assert_eq!(inter.song_column(&SongId::new("b").unwrap()), Some(1));
        assert_eq!(inter.row_songs, vec![vec![0, 1], vec![1]]);
        assert_eq!(inter.col_playlists, vec![vec![0], vec![0, 1]]);
        assert_eq!(inter.playlist_row("p1"), Some(0));
        // A song with features but no training occurrence simply has no
        // column.
        assert_eq!(inter.song_column(&SongId::new("zzz").unwrap()), None);
    }

    #[test]
    fn empty_and_duplicate_collections_are_rejected() {
        assert!(matches!(
            build_interaction_matrix(&[]),
            Err(WmfError::EmptyCollection)
        ));
        assert!(matches!(
            build_interaction_matrix(&[playlist("p", &["a"]), playlist("p", &["b"])]),
            Err(WmfError::DuplicatePlaylist(id)) if id == "p"
        ));
    }

    #[test]
    fn spd_solve_matches_dense_oracle() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let b = array![1.0, 2.0, 3.0];
        let x = spd_solve(&a, &b).unwrap();
        let expected = [0.004484304932735439, 0.2125560538116592, 0.9282511210762331];
        for (got, want) in x.iter().zip(expected) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
        }
        // Indefinite matrix → no Cholesky factor.
        let indefinite = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(spd_solve(&indefinite, &array![1.0, 1.0]).is_none());
    }

    #[test]
    fn scalar_normal_equation_closed_form() {
        // 1×1 matrix [1], k=1, song factor fixed at v: the playlist update
        // is u = v·alpha / (v²·alpha + λ).
        let inter = build_interaction_matrix(&[playlist("p", &["a"])]).unwrap();
        let (v, alpha, lambda) = (0.7, 40.0, 0.1);
        let other = array![[v]];
        let mut target = array![[0.0]];
        update_side(&mut target, &other, &inter.row_songs, alpha, lambda).unwrap();
        assert_abs_diff_eq!(target[[0, 0]], 1.4213197969543148, epsilon = 1e-12);
        assert_abs_diff_eq!(
            target[[0, 0]],
            v * alpha / (v * v * alpha + lambda),
            epsilon = 1e-15
        );
    }

    #[test]
    fn gram_objective_equals_dense_objective() {
        let inter = toy_interactions();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..5 {
            let u = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
            let v = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
            let alpha = 1.0 + trial as f64 * 7.3;
            let lambda = 0.05 * trial as f64;
            let fast = wmf_objective(&u, &v, &inter, alpha, lambda);
            let slow = dense_objective(&u, &v, &inter, alpha, lambda);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-10);
        }
    }

    #[test]
    fn toy_fit_objective_is_monotone_and_matches_dense_oracle() {
        let inter = toy_interactions();
        let config = WmfConfig {
            factors: 2,
            alpha: 10.0,
            lambda: 0.5,
            sweeps: 4,
            rng_seed: 9,
        };
        let fit = als_fit(&inter, &config).unwrap();
        assert_eq!(fit.objective_trace.len(), 8);
        for pair in fit.objective_trace.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-9),
                "objective increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        let final_dense = dense_objective(
            &fit.model.playlist_factors,
            &fit.model.song_factors,
            &inter,
            config.alpha,
            config.lambda,
        );
        assert_abs_diff_eq!(final_dense, *fit.objective_trace.last().unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn monotone_on_random_matrices() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let playlists: Vec<Playlist> = (0..8)
                .map(|i| {
                    let mut songs: Vec<i32> =
                        (0..10).filter(|_| rng.random::<f64>() < 0.4).collect();
                    songs.push(rng.random_range(0..10));
                    let unique: BTreeSet<String> =
                        songs.into_iter().map(|j| format!("s{j:02}")).collect();
                    playlist(
                        &format!("p{i}"),
                        &unique.iter().map(String::as_str).collect::<Vec<_>>(),
                    )
                })
                .collect();
            let inter = build_interaction_matrix(&playlists).unwrap();
            let config = WmfConfig {
                factors: 3,
                alpha: 25.0,
                lambda: 0.2,
                sweeps: 6,
                rng_seed: seed,
            };
            let fit = als_fit(&inter, &config).unwrap();
            for pair in fit.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn huge_regularization_collapses_factors() {
        let inter = toy_interactions();
        let config = WmfConfig {
            factors: 2,
            alpha: 40.0,
            lambda: 1e9,
            sweeps: 2,
            rng_seed: 1,
        };
        let fit = als_fit(&inter, &config).unwrap();
        let max = fit
            .model
            .playlist_factors
            .iter()
            .chain(fit.model.song_factors.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-3, "largest factor entry {max}");
    }

    #[test]
    fn unweighted_unregularized_fit_reconstructs_a_rank_one_matrix() {
        // All cells observed with confidence 1: ALS reduces to plain matrix
        // factorization. An all-ones matrix is exactly rank 1, so the
        // reconstruction error must match the rank-1 truncation oracle (0).
        let playlists: Vec<Playlist> = (0..4)
            .map(|i| playlist(&format!("p{i}"), &["a", "b", "c"]))
            .collect();
        let inter = build_interaction_matrix(&playlists).unwrap();
        let config = WmfConfig {
            factors: 1,
            alpha: 1.0,
            lambda: 0.0,
            sweeps: 40,
            rng_seed: 3,
        };
        let fit = als_fit(&inter, &config).unwrap();
        let recon_err: f64 = (0..4)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| {
                let pred = fit
                    .model
                    .playlist_factors
                    .row(i)
                    .dot(&fit.model.song_factors.row(j));
                (1.0 - pred) * (1.0 - pred)
            })
            .sum();
        assert!(recon_err < 1e-6, "reconstruction error {recon_err}");
    }

    #[test]
    fn ranking_orders_by_inner_product_with_id_ties() {
        let inter = toy_interactions();
        let mut fit = als_fit(&inter, &WmfConfig::new(1)).unwrap();
        // k=1 hand case: playlist factor 2, song factors a=3, b=1.
        fit.model.config.factors = 1;
        fit.model.playlist_factors = array![[2.0], [1.0], [1.0]];
        fit.model.song_factors = array![[3.0], [1.0], [1.0]];
        let candidates: BTreeSet<SongId> =
            ["a", "b"].iter().map(|s| SongId::new(*s).unwrap()).collect();
        let ranked = fit.model.rank_candidates("p1", &candidates).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(ranked[0].1, 6.0);
        assert_eq!(ranked[1].1, 2.0);

        // Equal scores fall back to ascending id order.
        let tie_candidates: BTreeSet<SongId> =
            ["b", "c"].iter().map(|s| SongId::new(*s).unwrap()).collect();
        let tied = fit.model.rank_candidates("p1", &tie_candidates).unwrap();
        assert_eq!(tied[0].0.as_str(), "b");
        assert_eq!(tied[1].0.as_str(), "c");
        assert_eq!(tied[0].1, tied[1].1);

        assert!(matches!(
            fit.model.rank_candidates("nope", &candidates),
            Err(WmfError::UnknownPlaylist(id)) if id == "nope"
        ));
    }

    #[test]
    fn column_less_candidates_form_a_sorted_tail() {
        let inter = toy_interactions();
        let fit = als_fit(&inter, &WmfConfig { factors: 2, ..WmfConfig::new(4) }).unwrap();
        let candidates: BTreeSet<SongId> = ["a", "b", "c", "x2", "x1"]
            .iter()
            .map(|s| SongId::new(*s).unwrap())
            .collect();
        let ranked = fit.model.rank_candidates("p2", &candidates).unwrap();
        assert_eq!(ranked.len(), 5);
        let tail: Vec<&str> = ranked[3..].iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(tail, ["x1", "x2"]);
        assert!(ranked[3].1.is_infinite() && ranked[3].1 < 0.0);
        assert!(ranked[..3].iter().all(|(_, sc)| sc.is_finite()));
    }

    #[test]
    fn scaling_song_factors_scales_scores_but_not_order() {
        let inter = toy_interactions();
        let fit = als_fit(&inter, &WmfConfig { factors: 2, ..WmfConfig::new(8) }).unwrap();
        let candidates: BTreeSet<SongId> =
            ["a", "b", "c"].iter().map(|s| SongId::new(*s).unwrap()).collect();
        let base = fit.model.rank_candidates("p3", &candidates).unwrap();
        let mut scaled_model = fit.model.clone();
        scaled_model.song_factors *= 3.0;
        let scaled = scaled_model.rank_candidates("p3", &candidates).unwrap();
        for (b, s) in base.iter().zip(&scaled) {
            assert_eq!(b.0, s.0);
            assert_abs_diff_eq!(3.0 * b.1, s.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn lambda_zero_on_degenerate_data_reports_singularity() {
        // k=2 with a single 1×1 observation: the normal equations are rank
        // 1 at λ=0.
        let inter = build_interaction_matrix(&[playlist("p", &["a"])]).unwrap();
        let config = WmfConfig {
            factors: 2,
            alpha: 40.0,
            lambda: 0.0,
            sweeps: 1,
            rng_seed: 0,
        };
        assert!(matches!(als_fit(&inter, &config), Err(WmfError::Singular)));
    }

    #[test]
    fn fit_is_deterministic() {
        let inter = toy_interactions();
        let config = WmfConfig { factors: 2, sweeps: 3, ..WmfConfig::new(21) };
        let a = als_fit(&inter, &config).unwrap();
        let b = als_fit(&inter, &config).unwrap();
        assert_eq!(a.model.playlist_factors, b.model.playlist_factors);
        assert_eq!(a.model.song_factors, b.model.song_factors);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pwmf");
        let fit = als_fit(&toy_interactions(), &WmfConfig { factors: 2, ..WmfConfig::new(7) })
            .unwrap();
        fit.model.save(&path).unwrap();
        let loaded = WmfModel::load(&path).unwrap();
        assert_eq!(loaded.playlist_factors, fit.model.playlist_factors);
        assert_eq!(loaded.song_factors, fit.model.song_factors);
        assert_eq!(loaded.playlist_ids, fit.model.playlist_ids);
        assert_eq!(loaded.song_ids, fit.model.song_ids);
        assert_eq!(loaded.playlist_index, fit.model.playlist_index);
        assert_eq!(loaded.song_index, fit.model.song_index);
        assert_eq!(loaded.config, fit.model.config);

        let path2 = dir.path().join("model2.pwmf");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_model_file_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pwmf");
        let fit = als_fit(&toy_interactions(), &WmfConfig { factors: 2, ..WmfConfig::new(7) })
            .unwrap();
        fit.model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            WmfModel::load(&path),
            Err(WmfError::BadModel(msg)) if msg.contains("checksum")
        ));
    }

    #[test]
    fn random_rank_is_a_seeded_permutation() {
        let candidates: BTreeSet<SongId> = (0..5)
            .map(|i| SongId::new(format!("s{i}")).unwrap())
            .collect();
        let a = random_rank(&candidates, 42);
        let b = random_rank(&candidates, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for pair in a.windows(2) {
            assert!(pair[0].1 >= pair[1].1);
        }
        let single: BTreeSet<SongId> = std::iter::once(SongId::new("only").unwrap()).collect();
        assert_eq!(random_rank(&single, 0)[0].0.as_str(), "only");
    }

    #[test]
    fn random_rank_puts_each_candidate_first_uniformly() {
        let candidates: BTreeSet<SongId> = (0..5)
            .map(|i| SongId::new(format!("s{i}")).unwrap())
            .collect();
        let mut firsts: BTreeMap<SongId, usize> = BTreeMap::new();
        for seed in 0..10_000 {
            let top = random_rank(&candidates, seed).remove(0).0;
            *firsts.entry(top).or_default() += 1;
        }
        assert_eq!(firsts.len(), 5);
        for (song, count) in firsts {
            assert!(
                (1800..=2200).contains(&count),
                "{song} was first {count} times out of 10000"
            );
        }
    }
}
