//! Synthetic playlist collections with planted cluster structure.
//!
//! Songs live in clusters around random unit-norm centroids; a playlist
//! mostly samples songs from one home cluster. A continuation model that
//! reads the feature vectors can therefore beat chance by a wide margin,
//! which is what the end-to-end tests check.
//!
//! Artists pair up consecutive songs of a cluster (two songs per artist),
//! so any playlist of at least 14 distinct songs passes the default
//! collection filter: at least ⌈len/2⌉ ≥ 7 unique artists and never more
//! than two songs by one artist.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use super::{DatasetError, FeatureTable, Playlist, SongId};
use crate::rng::substream;

#[derive(Clone, Debug, Serialize)]
pub struct SyntheticParams {
    pub n_clusters: usize,
    pub songs_per_cluster: usize,
    pub n_playlists: usize,
    pub playlist_len: usize,
    pub dim: usize,
    /// Standard deviation of the Gaussian noise added to each song's
    /// cluster centroid.
    pub noise_sd: f64,
    /// Probability that a playlist slot is filled from a cluster other than
    /// the playlist's home cluster.
    pub cross_cluster_prob: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n_clusters: 5,
            songs_per_cluster: 200,
            n_playlists: 400,
            playlist_len: 18,
            dim: 32,
            noise_sd: 0.1,
            cross_cluster_prob: 0.1,
        }
    }
}

impl SyntheticParams {
    fn validate(&self) -> Result<(), DatasetError> {
        let counts = [
            ("n_clusters", self.n_clusters),
            ("songs_per_cluster", self.songs_per_cluster),
            ("n_playlists", self.n_playlists),
            ("playlist_len", self.playlist_len),
            ("dim", self.dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(DatasetError::InvalidParam(format!("{name} must be positive")));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(DatasetError::InvalidParam(format!(
                "noise_sd must be a finite non-negative number, got {}",
                self.noise_sd
            )));
        }
        if !(0.0..=1.0).contains(&self.cross_cluster_prob) {
            return Err(DatasetError::InvalidParam(format!(
                "cross_cluster_prob must lie in [0,1], got {}",
                self.cross_cluster_prob
            )));
        }
        let total = self.n_clusters * self.songs_per_cluster;
        if self.playlist_len > total {
            return Err(DatasetError::InvalidParam(format!(
                "playlist_len {} exceeds the {total}-song universe",
                self.playlist_len
            )));
        }
        if self.cross_cluster_prob == 0.0 && self.playlist_len > self.songs_per_cluster {
            return Err(DatasetError::InvalidParam(format!(
                "playlist_len {} exceeds songs_per_cluster {} but cross_cluster_prob is 0",
                self.playlist_len, self.songs_per_cluster
            )));
        }
        Ok(())
    }
}

/// Generated collection plus the cluster assignment of every song, kept so
/// tests can verify the planted structure.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub playlists: Vec<Playlist>,
    pub features: FeatureTable,
    pub song_clusters: BTreeMap<SongId, usize>,
}

fn song_id(cluster: usize, j: usize) -> SongId {
    SongId::new(format!("c{cluster:03}s{j:05}")).expect("generated id is valid")
}

fn artist_id(cluster: usize, j: usize) -> String {
    format!("c{cluster:03}a{:05}", j / 2)
}

fn unit_norm_centroid(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn generate_synthetic(
    params: &SyntheticParams,
    rng_seed: u64,
) -> Result<SyntheticData, DatasetError> {
    params.validate()?;
    let centroids: Vec<Vec<f64>> = (0..params.n_clusters)
        .map(|c| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(substream(rng_seed, "synth-centroid", &c.to_string()));
            unit_norm_centroid(&mut rng, params.dim)
        })
        .collect();

    let mut features = FeatureTable::new(params.dim)?;
    let mut song_clusters = BTreeMap::new();
    let mut cluster_songs: Vec<Vec<SongId>> = vec![Vec::new(); params.n_clusters];
    for (c, centroid) in centroids.iter().enumerate() {
        for j in 0..params.songs_per_cluster {
            let song = song_id(c, j);
            let mut vector = centroid.clone();
            if params.noise_sd > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(substream(
                    rng_seed,
                    "synth-song",
                    song.as_str(),
                ));
                let noise = Normal::new(0.0, params.noise_sd).expect("validated sd");
                for v in &mut vector {
                    *v += noise.sample(&mut rng);
                }
            }
            features.insert(song.clone(), vector)?;
            song_clusters.insert(song.clone(), c);
            cluster_songs[c].push(song);
        }
    }

    let mut playlists = Vec::with_capacity(params.n_playlists);
    for i in 0..params.n_playlists {
        let id = format!("pl{i:05}");
        let mut rng = ChaCha8Rng::seed_from_u64(substream(rng_seed, "synth-playlist", &id));
        let home = rng.random_range(0..params.n_clusters);
        let mut chosen = BTreeSet::new();
        let mut entries = Vec::with_capacity(params.playlist_len);
        while entries.len() < params.playlist_len {
            let cross = params.n_clusters > 1 && rng.random::<f64>() < params.cross_cluster_prob;
            let cluster = if cross {
                // Uniform over the other clusters.
                let mut c = rng.random_range(0..params.n_clusters - 1);
                if c >= home {
                    c += 1;
                }
                c
            } else {
                home
            };
            let free: Vec<&SongId> = cluster_songs[cluster]
                .iter()
                .filter(|s| !chosen.contains(*s))
                .collect();
            let song = if let Some(song) = free.choose(&mut rng) {
                (*song).clone()
            } else {
                // Chosen cluster exhausted; fall back to any unchosen song.
                // Unreachable when cross_cluster_prob = 0 (validated), so the
                // one-cluster-per-playlist guarantee still holds there.
                let all_free: Vec<&SongId> = cluster_songs
                    .iter()
                    .flatten()
                    .filter(|s| !chosen.contains(*s))
                    .collect();
                (*all_free.choose(&mut rng).expect("playlist_len <= universe")).clone()
            };
            chosen.insert(song.clone());
            let c = song_clusters[&song];
            let j: usize = song
                .as_str()
                .split_once('s')
                .expect("generated id")
                .1
                .parse()
                .expect("generated id");
            entries.push((song, artist_id(c, j)));
        }
        playlists.push(Playlist::from_entries(id, entries)?.0);
    }

    Ok(SyntheticData {
        playlists,
        features,
        song_clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticParams {
        SyntheticParams {
            n_clusters: 3,
            songs_per_cluster: 30,
            n_playlists: 12,
            playlist_len: 14,
            dim: 8,
            noise_sd: 0.05,
            cross_cluster_prob: 0.2,
        }
    }

    #[test]
    fn universe_size_is_clusters_times_songs() {
        let data = generate_synthetic(&small(), 1).unwrap();
        assert_eq!(data.features.len(), 90);
        assert_eq!(data.playlists.len(), 12);
        for p in &data.playlists {
            assert_eq!(p.len(), 14);
        }
    }

    #[test]
    fn zero_noise_zero_cross_makes_playlists_single_vector() {
        let params = SyntheticParams {
            noise_sd: 0.0,
            cross_cluster_prob: 0.0,
            ..small()
        };
        let data = generate_synthetic(&params, 5).unwrap();
        for p in &data.playlists {
            let first = data.features.get(&p.songs()[0]).unwrap();
            for song in p.songs() {
                assert_eq!(data.features.get(song).unwrap(), first);
            }
        }
    }

    #[test]
    fn zero_cross_keeps_playlists_in_one_cluster() {
        let params = SyntheticParams {
            cross_cluster_prob: 0.0,
            ..small()
        };
        let data = generate_synthetic(&params, 9).unwrap();
        for p in &data.playlists {
            let clusters: BTreeSet<usize> =
                p.songs().iter().map(|s| data.song_clusters[s]).collect();
            assert_eq!(clusters.len(), 1, "playlist {} spans clusters", p.id());
        }
    }

    #[test]
    fn centroids_are_unit_norm_and_songs_scatter_around_them() {
        let params = SyntheticParams {
            noise_sd: 0.0,
            ..small()
        };
        let data = generate_synthetic(&params, 3).unwrap();
        for song in data.features.song_ids() {
            let norm: f64 = data
                .features
                .get(song)
                .unwrap()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "{song}: |centroid| = {norm}");
        }
    }

    #[test]
    fn default_filter_keeps_every_generated_playlist() {
        let data = generate_synthetic(&small(), 11).unwrap();
        let (kept, stats) = crate::dataset::filter_collection(
            &data.playlists,
            &data.features,
            &crate::dataset::FilterParams::default(),
        );
        assert_eq!(kept.len(), data.playlists.len(), "{stats:?}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small(), 21).unwrap();
        let b = generate_synthetic(&small(), 21).unwrap();
        assert_eq!(a.playlists, b.playlists);
        assert_eq!(a.features, b.features);
        let c = generate_synthetic(&small(), 22).unwrap();
        assert_ne!(a.playlists, c.playlists);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let cases = [
            SyntheticParams { n_clusters: 0, ..small() },
            SyntheticParams { dim: 0, ..small() },
            SyntheticParams { noise_sd: -0.1, ..small() },
            SyntheticParams { cross_cluster_prob: 1.5, ..small() },
            SyntheticParams { playlist_len: 91, ..small() }, // > 90-song universe
            SyntheticParams { playlist_len: 31, cross_cluster_prob: 0.0, ..small() },
        ];
        for params in cases {
            assert!(generate_synthetic(&params, 1).is_err(), "{params:?}");
        }
    }
}
