//! Weak and strong generalization splits.
//!
//! Both splits withhold part of each evaluated playlist as its
//! *continuation* — the songs a model is asked to recover. The weak split
//! song-splits every playlist and trains on the retained parts, so every
//! evaluated playlist was (partially) seen in training. The strong split
//! first assigns whole playlists to either train or query, trains only on
//! the train side, and song-splits the query side, so evaluated playlists
//! are entirely unseen.
//!
//! Per-playlist randomness is drawn from a substream keyed by playlist id,
//! so a playlist's continuation does not depend on where it sits in the
//! input order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io;
use super::{DatasetError, FeatureTable, Playlist, SongId};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Weak,
    Strong,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Weak => "weak",
            SplitMode::Strong => "strong",
        })
    }
}

impl FromStr for SplitMode {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weak" => Ok(SplitMode::Weak),
            "strong" => Ok(SplitMode::Strong),
            other => Err(DatasetError::InvalidParam(format!(
                "unknown split mode {other:?}, expected weak or strong"
            ))),
        }
    }
}

/// Provenance record stored as `meta.json` inside a bundle directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub mode: SplitMode,
    pub holdout_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub playlist_fraction: Option<f64>,
    pub seed: u64,
}

/// A train/query split with withheld continuations.
///
/// `universe` is the full set of rankable songs (everything with a feature
/// vector), a superset of the songs appearing in the playlists.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitBundle {
    meta: BundleMeta,
    train_playlists: Vec<Playlist>,
    query_playlists: Vec<Playlist>,
    /// Withheld songs per query playlist; kept as playlists so artist ids
    /// survive a save/load round trip.
    continuations: BTreeMap<String, Playlist>,
    universe: BTreeSet<SongId>,
}

impl SplitBundle {
    pub fn meta(&self) -> &BundleMeta {
        &self.meta
    }

    pub fn mode(&self) -> SplitMode {
        self.meta.mode
    }

    pub fn train_playlists(&self) -> &[Playlist] {
        &self.train_playlists
    }

    pub fn query_playlists(&self) -> &[Playlist] {
        &self.query_playlists
    }

    /// Withheld songs of one query playlist.
    pub fn continuation(&self, playlist_id: &str) -> Option<BTreeSet<SongId>> {
        self.continuations.get(playlist_id).map(Playlist::song_set)
    }

    pub fn universe(&self) -> &BTreeSet<SongId> {
        &self.universe
    }

    /// How many train playlists contain each song. Songs of the universe
    /// that appear in no train playlist are absent from the map (count 0).
    pub fn training_frequency(&self) -> BTreeMap<SongId, usize> {
        let mut counts = BTreeMap::new();
        for p in &self.train_playlists {
            for song in p.songs() {
                *counts.entry(song.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// CRC-32 over the canonical serialized form; identifies a bundle in
    /// evaluation reports.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for part in self.canonical_parts() {
            hasher.update(&part);
        }
        hasher.finalize()
    }

    fn canonical_parts(&self) -> [Vec<u8>; 4] {
        let mut train = Vec::new();
        io::write_playlists_to(&mut train, &self.train_playlists).expect("vec write");
        let mut query = Vec::new();
        io::write_playlists_to(&mut query, &self.query_playlists).expect("vec write");
        let conts: Vec<Playlist> = self.continuations.values().cloned().collect();
        let mut cont = Vec::new();
        io::write_playlists_to(&mut cont, &conts).expect("vec write");
        let mut meta = serde_json::to_vec_pretty(&self.meta).expect("meta serializes");
        meta.push(b'\n');
        [train, query, cont, meta]
    }

    /// Writes `train.pls`, `query.pls`, `continuations.pls` and `meta.json`
    /// into `dir` (created if missing).
    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| DatasetError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let [train, query, cont, meta] = self.canonical_parts();
        for (name, bytes) in [
            ("train.pls", train),
            ("query.pls", query),
            ("continuations.pls", cont),
            ("meta.json", meta),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        Ok(())
    }

    /// Loads a bundle directory. The universe is not persisted, so the
    /// feature table that defines it must be supplied; every song in the
    /// bundle must have a feature vector.
    pub fn load(dir: &Path, features: &FeatureTable) -> Result<SplitBundle, DatasetError> {
        let bad = |msg: String| DatasetError::BadBundle {
            dir: dir.display().to_string(),
            msg,
        };
        let meta_path = dir.join("meta.json");
        let meta_text =
            std::fs::read_to_string(&meta_path).map_err(|source| DatasetError::Io {
                path: meta_path.display().to_string(),
                source,
            })?;
        let meta: BundleMeta =
            serde_json::from_str(&meta_text).map_err(|e| bad(format!("meta.json: {e}")))?;
        let train_playlists = io::load_playlists(&dir.join("train.pls"))?.playlists;
        let query_playlists = io::load_playlists(&dir.join("query.pls"))?.playlists;
        let cont_lists = io::load_playlists(&dir.join("continuations.pls"))?.playlists;
        let mut continuations = BTreeMap::new();
        for p in cont_lists {
            continuations.insert(p.id().to_string(), p);
        }

        let universe = features.song_set();
        for p in train_playlists
            .iter()
            .chain(&query_playlists)
            .chain(continuations.values())
        {
            for song in p.songs() {
                if !universe.contains(song) {
                    return Err(DatasetError::OutsideUniverse {
                        playlist: p.id().to_string(),
                        song: song.to_string(),
                    });
                }
            }
        }

        let query_ids: BTreeSet<&str> = query_playlists.iter().map(Playlist::id).collect();
        let cont_ids: BTreeSet<&str> = continuations.keys().map(String::as_str).collect();
        if query_ids != cont_ids {
            return Err(bad(
                "query playlist ids and continuation ids do not match".into(),
            ));
        }
        for q in &query_playlists {
            let cont = &continuations[q.id()];
            if let Some(song) = cont.songs().iter().find(|s| q.contains(s)) {
                return Err(bad(format!(
                    "continuation of {} overlaps its retained songs at {}",
                    q.id(),
                    song
                )));
            }
        }
        let train_ids: BTreeSet<&str> = train_playlists.iter().map(Playlist::id).collect();
        match meta.mode {
            SplitMode::Weak => {
                if train_ids != query_ids {
                    return Err(bad("weak bundle: train and query ids differ".into()));
                }
            }
            SplitMode::Strong => {
                if let Some(id) = train_ids.intersection(&query_ids).next() {
                    return Err(bad(format!(
                        "strong bundle: playlist {id} is in both train and query"
                    )));
                }
            }
        }
        Ok(SplitBundle {
            meta,
            train_playlists,
            query_playlists,
            continuations,
            universe,
        })
    }
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), DatasetError> {
    if !(value > 0.0 && value < 1.0) {
        return Err(DatasetError::InvalidFraction { name, value });
    }
    Ok(())
}

fn check_universe(
    playlists: &[Playlist],
    universe: &BTreeSet<SongId>,
) -> Result<(), DatasetError> {
    for p in playlists {
        for song in p.songs() {
            if !universe.contains(song) {
                return Err(DatasetError::OutsideUniverse {
                    playlist: p.id().to_string(),
                    song: song.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Splits one playlist into (retained, withheld). Withholds
/// `max(1, round(fraction · T))` uniformly chosen songs; both parts stay in
/// original song order.
fn song_split(
    playlist: &Playlist,
    fraction: f64,
    seed: u64,
) -> Result<(Playlist, Playlist), DatasetError> {
    let t = playlist.len();
    // f64::round is round-half-away-from-zero; for positive arguments that
    // is the intended round-half-up.
    let k = ((fraction * t as f64).round() as usize).max(1);
    if k >= t {
        return Err(DatasetError::PlaylistTooShort {
            id: playlist.id().to_string(),
            len: t,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let withheld_idx: BTreeSet<usize> = rand::seq::index::sample(&mut rng, t, k).iter().collect();
    let retained = playlist
        .restricted_to(|s| {
            let i = playlist.songs().iter().position(|x| x == s).unwrap();
            !withheld_idx.contains(&i)
        })
        .expect("k < t leaves songs");
    let withheld = playlist
        .restricted_to(|s| {
            let i = playlist.songs().iter().position(|x| x == s).unwrap();
            withheld_idx.contains(&i)
        })
        .expect("k >= 1 withholds songs");
    Ok((retained, withheld))
}

/// Weak generalization: every playlist is song-split; the retained parts
/// serve as both training and query playlists, the withheld parts as the
/// continuations to recover.
pub fn split_weak(
    playlists: &[Playlist],
    universe: &BTreeSet<SongId>,
    holdout_fraction: f64,
    rng_seed: u64,
) -> Result<SplitBundle, DatasetError> {
    check_fraction("holdout_fraction", holdout_fraction)?;
    check_universe(playlists, universe)?;
    let mut retained_lists = Vec::with_capacity(playlists.len());
    let mut continuations = BTreeMap::new();
    for p in playlists {
        let seed = substream(rng_seed, "weak-holdout", p.id());
        let (retained, withheld) = song_split(p, holdout_fraction, seed)?;
        retained_lists.push(retained);
        continuations.insert(p.id().to_string(), withheld);
    }
    Ok(SplitBundle {
        meta: BundleMeta {
            mode: SplitMode::Weak,
            holdout_fraction,
            playlist_fraction: None,
            seed: rng_seed,
        },
        train_playlists: retained_lists.clone(),
        query_playlists: retained_lists,
        continuations,
        universe: universe.clone(),
    })
}

/// Strong generalization: `⌈playlist_fraction · |P|⌉` whole playlists become
/// the query side and are song-split; the rest train the model unchanged.
pub fn split_strong(
    playlists: &[Playlist],
    universe: &BTreeSet<SongId>,
    playlist_fraction: f64,
    holdout_fraction: f64,
    rng_seed: u64,
) -> Result<SplitBundle, DatasetError> {
    check_fraction("playlist_fraction", playlist_fraction)?;
    check_fraction("holdout_fraction", holdout_fraction)?;
    check_universe(playlists, universe)?;
    let n = playlists.len();
    if n < 2 {
        return Err(DatasetError::TooFewPlaylists(n));
    }
    // 0.2 · 100 is 20.000000000000004 in f64; nudge below the true product
    // so exact multiples don't ceil one too high.
    let n_query = ((playlist_fraction * n as f64) - 1e-9).ceil() as usize;
    let n_query = n_query.max(1);
    if n_query >= n {
        return Err(DatasetError::InvalidParam(format!(
            "playlist_fraction {playlist_fraction} leaves no training playlists for {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(substream(rng_seed, "strong-assign", ""));
    let query_idx: BTreeSet<usize> =
        rand::seq::index::sample(&mut rng, n, n_query).iter().collect();

    let mut train_playlists = Vec::with_capacity(n - n_query);
    let mut query_playlists = Vec::with_capacity(n_query);
    let mut continuations = BTreeMap::new();
    for (i, p) in playlists.iter().enumerate() {
        if !query_idx.contains(&i) {
            train_playlists.push(p.clone());
            continue;
        }
        let seed = substream(rng_seed, "strong-holdout", p.id());
        let (retained, withheld) = song_split(p, holdout_fraction, seed)?;
        query_playlists.push(retained);
        continuations.insert(p.id().to_string(), withheld);
    }
    Ok(SplitBundle {
        meta: BundleMeta {
            mode: SplitMode::Strong,
            holdout_fraction,
            playlist_fraction: Some(playlist_fraction),
            seed: rng_seed,
        },
        train_playlists,
        query_playlists,
        continuations,
        universe: universe.clone(),
    })
}
