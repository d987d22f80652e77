//! Playlist collections and song feature tables.
//!
//! A playlist is a set of songs (iteration order is kept only so that runs
//! are reproducible); every song carries an artist identifier because the
//! collection filter needs it. Songs are described by fixed-dimensional
//! feature vectors held in a [`FeatureTable`]. The module also provides the
//! collection filter, weak/strong experiment splits and a synthetic
//! generator for desk-scale experiments.

mod filter;
pub mod io;
pub mod split;
mod stats;
pub mod synthetic;

pub use filter::{filter_collection, FilterParams, FilterStats};
pub use split::{split_strong, split_weak, BundleMeta, SplitBundle, SplitMode};
pub use stats::{five_number_summary, CollectionStats, FiveNumber};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticParams};

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid identifier {0:?}: identifiers are non-empty and may not contain tab, newline, comma or colon")]
    InvalidId(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("feature vector for song {song} has {got} entries, expected {expected}")]
    DimensionMismatch {
        song: String,
        expected: usize,
        got: usize,
    },
    #[error("feature vector for song {0} contains a non-finite value")]
    NonFinite(String),
    #[error("duplicate song id {0} in feature table")]
    DuplicateSong(String),
    #[error("duplicate playlist id {0}")]
    DuplicatePlaylist(String),
    #[error("playlist {0} has no songs")]
    EmptyPlaylist(String),
    #[error("playlist {playlist} has no artist entry for song {song}")]
    MissingArtist { playlist: String, song: String },
    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    InvalidFraction { name: &'static str, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("playlist {playlist} contains song {song} that is outside the universe")]
    OutsideUniverse { playlist: String, song: String },
    #[error("playlist {id} is too short to split (length {len})")]
    PlaylistTooShort { id: String, len: usize },
    #[error("need at least 2 playlists for a strong split, got {0}")]
    TooFewPlaylists(usize),
    #[error("split bundle at {dir} is inconsistent: {msg}")]
    BadBundle { dir: String, msg: String },
}

/// Opaque song identifier.
///
/// Identifiers are non-empty and may not contain tab, newline, comma or
/// colon — the characters the on-disk formats reserve.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SongId(String);

impl SongId {
    pub fn new(token: impl Into<String>) -> Result<Self, DatasetError> {
        let token = token.into();
        if !valid_id(&token) {
            return Err(DatasetError::InvalidId(token));
        }
        Ok(SongId(token))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SongId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl serde::Serialize for SongId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> serde::Deserialize<'de> for SongId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        SongId::new(String::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn valid_id(token: &str) -> bool {
    !token.is_empty()
        && !token.starts_with('#')
        && !token.contains(['\t', '\n', '\r', ',', ':'])
}

/// A playlist: an identifier plus a set of distinct songs.
///
/// Song order is retained only to make iteration reproducible; no operation
/// treats it as a sequence signal. Every song has an artist entry, used
/// solely by [`filter_collection`].
#[derive(Clone, Debug, PartialEq)]
pub struct Playlist {
    id: String,
    songs: Vec<SongId>,
    artists: BTreeMap<SongId, String>,
}

impl Playlist {
    /// Builds a playlist from `(song, artist)` entries, collapsing duplicate
    /// songs to their first occurrence. Returns the playlist and the number
    /// of duplicates collapsed.
    pub fn from_entries<I>(id: impl Into<String>, entries: I) -> Result<(Self, usize), DatasetError>
    where
        I: IntoIterator<Item = (SongId, String)>,
    {
        let id = id.into();
        if !valid_id(&id) {
            return Err(DatasetError::InvalidId(id));
        }
        let mut songs = Vec::new();
        let mut artists = BTreeMap::new();
        let mut duplicates = 0usize;
        for (song, artist) in entries {
            if !valid_id(&artist) {
                return Err(DatasetError::InvalidId(artist));
            }
            if artists.contains_key(&song) {
                duplicates += 1;
                continue;
            }
            artists.insert(song.clone(), artist);
            songs.push(song);
        }
        if songs.is_empty() {
            return Err(DatasetError::EmptyPlaylist(id));
        }
        Ok((Playlist { id, songs, artists }, duplicates))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of songs T_p.
    pub fn len(&self) -> usize {
        self.songs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.songs.is_empty()
    }

    pub fn songs(&self) -> &[SongId] {
        &self.songs
    }

    pub fn contains(&self, song: &SongId) -> bool {
        self.artists.contains_key(song)
    }

    pub fn artist_of(&self, song: &SongId) -> Option<&str> {
        self.artists.get(song).map(String::as_str)
    }

    pub fn song_set(&self) -> BTreeSet<SongId> {
        self.songs.iter().cloned().collect()
    }

    /// Number of distinct artists.
    pub fn unique_artists(&self) -> usize {
        self.artists.values().collect::<BTreeSet<_>>().len()
    }

    /// Largest number of songs by any single artist.
    pub fn max_songs_per_artist(&self) -> usize {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for artist in self.artists.values() {
            *counts.entry(artist).or_insert(0) += 1;
        }
        counts.values().copied().max().unwrap_or(0)
    }

    /// Copy of this playlist restricted to `keep`, preserving song order.
    /// Returns `None` if no songs survive.
    pub fn restricted_to(&self, keep: impl Fn(&SongId) -> bool) -> Option<Playlist> {
        let songs: Vec<SongId> = self.songs.iter().filter(|s| keep(s)).cloned().collect();
        if songs.is_empty() {
            return None;
        }
        let artists = songs
            .iter()
            .map(|s| (s.clone(), self.artists[s].clone()))
            .collect();
        Some(Playlist {
            id: self.id.clone(),
            songs,
            artists,
        })
    }
}

/// Map from song id to a D-dimensional feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: BTreeMap<SongId, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Result<Self, DatasetError> {
        if dim == 0 {
            return Err(DatasetError::InvalidParam(
                "feature dimension must be positive".into(),
            ));
        }
        Ok(FeatureTable {
            dim,
            rows: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, song: SongId, vector: Vec<f64>) -> Result<(), DatasetError> {
        if vector.len() != self.dim {
            return Err(DatasetError::DimensionMismatch {
                song: song.0,
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite(song.0));
        }
        if self.rows.contains_key(&song) {
            return Err(DatasetError::DuplicateSong(song.0));
        }
        self.rows.insert(song, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, song: &SongId) -> Option<&[f64]> {
        self.rows.get(song).map(Vec::as_slice)
    }

    pub fn contains(&self, song: &SongId) -> bool {
        self.rows.contains_key(song)
    }

    /// Songs in ascending id order.
    pub fn song_ids(&self) -> impl Iterator<Item = &SongId> {
        self.rows.keys()
    }

    /// The universe of rankable songs: every song with a feature vector.
    pub fn song_set(&self) -> BTreeSet<SongId> {
        self.rows.keys().cloned().collect()
    }
}
