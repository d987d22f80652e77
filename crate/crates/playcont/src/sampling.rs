//! Derivation of balanced match/mismatch training pairs.
//!
//! For every playlist p and every song s in it, two examples are emitted:
//! the match (p without s, s, 1) and a mismatch (p without s, s⁻, 0) whose
//! candidate s⁻ is drawn uniformly from the songs outside p. The output is
//! therefore exactly label-balanced, and every shortened playlist has one
//! song fewer than its source.
//!
//! Mismatch candidates are drawn with replacement across iterations: the
//! same song may serve as the negative for several shortened playlists.
//! Each playlist draws from its own seeded substream, so the result does
//! not depend on playlist iteration order.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{valid_id, Playlist, SongId};
use crate::rng::substream;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("playlist {playlist} contains song {song} that is outside the universe")]
    OutsideUniverse { playlist: String, song: String },
    #[error("playlist {0} covers the whole universe; no mismatch candidate exists")]
    NoMismatchCandidates(String),
    #[error("pair has no source playlist recorded; only freshly derived pairs can be resampled")]
    SourceUnknown,
    #[error("pair references source playlist {0}, which is not among the given playlists")]
    UnknownSourcePlaylist(String),
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
}

/// One training example: a shortened playlist, a candidate song and whether
/// the candidate truly belongs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledPair {
    /// The shortened playlist p_s = p \ {s}.
    pub playlist_songs: BTreeSet<SongId>,
    pub candidate: SongId,
    pub label: bool,
    /// Id of the playlist this pair was derived from; `None` for pairs read
    /// back from a pair file, which does not record provenance.
    pub source_id: Option<String>,
}

impl fmt::Display for LabeledPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t", u8::from(self.label), self.candidate)?;
        for (i, song) in self.playlist_songs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{song}")?;
        }
        Ok(())
    }
}

fn check_playlist(
    playlist: &Playlist,
    universe: &BTreeSet<SongId>,
) -> Result<Vec<SongId>, SamplingError> {
    for song in playlist.songs() {
        if !universe.contains(song) {
            return Err(SamplingError::OutsideUniverse {
                playlist: playlist.id().to_string(),
                song: song.to_string(),
            });
        }
    }
    let outside: Vec<SongId> = universe
        .iter()
        .filter(|s| !playlist.contains(s))
        .cloned()
        .collect();
    if outside.is_empty() {
        return Err(SamplingError::NoMismatchCandidates(
            playlist.id().to_string(),
        ));
    }
    Ok(outside)
}

/// Derives one match and one mismatch per (playlist, member song), in
/// playlist order, each match immediately followed by its mismatch.
pub fn derive_pairs(
    playlists: &[Playlist],
    universe: &BTreeSet<SongId>,
    rng_seed: u64,
) -> Result<Vec<LabeledPair>, SamplingError> {
    let mut pairs = Vec::new();
    for playlist in playlists {
        let outside = check_playlist(playlist, universe)?;
        let mut rng = ChaCha8Rng::seed_from_u64(substream(rng_seed, "mismatch", playlist.id()));
        for song in playlist.songs() {
            let shortened: BTreeSet<SongId> = playlist
                .songs()
                .iter()
                .filter(|s| *s != song)
                .cloned()
                .collect();
            pairs.push(LabeledPair {
                playlist_songs: shortened.clone(),
                candidate: song.clone(),
                label: true,
                source_id: Some(playlist.id().to_string()),
            });
            let negative = outside[rng.random_range(0..outside.len())].clone();
            pairs.push(LabeledPair {
                playlist_songs: shortened,
                candidate: negative,
                label: false,
                source_id: Some(playlist.id().to_string()),
            });
        }
    }
    Ok(pairs)
}

/// Redraws every mismatch candidate, keeping matches untouched. Useful as a
/// per-epoch negative refresh; each source playlist again uses its own
/// substream, consumed in the order its mismatches appear.
pub fn resample_mismatches(
    pairs: &[LabeledPair],
    universe: &BTreeSet<SongId>,
    source_playlists: &[Playlist],
    rng_seed: u64,
) -> Result<Vec<LabeledPair>, SamplingError> {
    let by_id: std::collections::HashMap<&str, &Playlist> = source_playlists
        .iter()
        .map(|p| (p.id(), p))
        .collect();
    let mut streams: std::collections::HashMap<&str, (ChaCha8Rng, Vec<SongId>)> =
        std::collections::HashMap::new();
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if pair.label {
            out.push(pair.clone());
            continue;
        }
        let source_id = pair.source_id.as_deref().ok_or(SamplingError::SourceUnknown)?;
        let playlist = *by_id
            .get(source_id)
            .ok_or_else(|| SamplingError::UnknownSourcePlaylist(source_id.to_string()))?;
        if !streams.contains_key(source_id) {
            let outside = check_playlist(playlist, universe)?;
            let rng =
                ChaCha8Rng::seed_from_u64(substream(rng_seed, "remismatch", source_id));
            streams.insert(playlist.id(), (rng, outside));
        }
        let (rng, outside) = streams.get_mut(source_id).expect("inserted above");
        let negative = outside[rng.random_range(0..outside.len())].clone();
        out.push(LabeledPair {
            candidate: negative,
            ..pair.clone()
        });
    }
    Ok(out)
}

/// Writes pairs as `<label>\t<candidate>\t<song,song,...>` lines. Source
/// playlist ids are not part of the format and are dropped.
pub fn write_pairs(path: &Path, pairs: &[LabeledPair]) -> Result<(), SamplingError> {
    let mut buf = String::new();
    for pair in pairs {
        buf.push_str(&pair.to_string());
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|source| SamplingError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a pair file written by [`write_pairs`]. Lines starting with `#`
/// are skipped. Loaded pairs carry no source playlist id.
pub fn load_pairs(path: &Path) -> Result<Vec<LabeledPair>, SamplingError> {
    let text = std::fs::read_to_string(path).map_err(|source| SamplingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let err = |line: usize, msg: String| SamplingError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [label, candidate, songs] = fields[..] else {
            return Err(err(
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        };
        let label = match label {
            "0" => false,
            "1" => true,
            other => return Err(err(lineno, format!("label must be 0 or 1, got {other:?}"))),
        };
        if !valid_id(candidate) {
            return Err(err(lineno, format!("invalid candidate id {candidate:?}")));
        }
        let candidate = SongId::new(candidate).expect("validated");
        let mut playlist_songs = BTreeSet::new();
        for tok in songs.split(',') {
            if !valid_id(tok) {
                return Err(err(lineno, format!("invalid song id {tok:?}")));
            }
            if !playlist_songs.insert(SongId::new(tok).expect("validated")) {
                return Err(err(lineno, format!("duplicate song {tok} in shortened playlist")));
            }
        }
        pairs.push(LabeledPair {
            playlist_songs,
            candidate,
            label,
            source_id: None,
        });
    }
    Ok(pairs)
}
