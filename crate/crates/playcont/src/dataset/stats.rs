//! Descriptive statistics printed when a collection is prepared.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::Playlist;

/// Min, quartiles and max of a sample, with quartiles computed by linear
/// interpolation at position q·(n−1) over the sorted values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Five-number summary of a non-empty sample.
pub fn five_number_summary(values: &[f64]) -> Option<FiveNumber> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(FiveNumber {
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Size and shape of a playlist collection.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollectionStats {
    pub n_playlists: usize,
    pub n_songs: usize,
    pub n_artists: usize,
    pub songs_per_playlist: Option<FiveNumber>,
    pub artists_per_playlist: Option<FiveNumber>,
}

impl CollectionStats {
    pub fn describe(playlists: &[Playlist]) -> CollectionStats {
        let mut songs = BTreeSet::new();
        let mut artists = BTreeSet::new();
        let mut lens = Vec::with_capacity(playlists.len());
        let mut artist_counts = Vec::with_capacity(playlists.len());
        for p in playlists {
            songs.extend(p.songs().iter().cloned());
            artists.extend(p.songs().iter().map(|s| p.artist_of(s).unwrap().to_string()));
            lens.push(p.len() as f64);
            artist_counts.push(p.unique_artists() as f64);
        }
        CollectionStats {
            n_playlists: playlists.len(),
            n_songs: songs.len(),
            n_artists: artists.len(),
            songs_per_playlist: five_number_summary(&lens),
            artists_per_playlist: five_number_summary(&artist_counts),
        }
    }
}

impl fmt::Display for CollectionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "playlists : {}", self.n_playlists)?;
        writeln!(f, "songs     : {}", self.n_songs)?;
        writeln!(f, "artists   : {}", self.n_artists)?;
        let row = |name: &str, fv: &Option<FiveNumber>| match fv {
            Some(v) => format!(
                "{name}: min {} / q1 {} / median {} / q3 {} / max {}",
                v.min, v.q1, v.median, v.q3, v.max
            ),
            None => format!("{name}: (empty)"),
        };
        writeln!(f, "{}", row("songs per playlist  ", &self.songs_per_playlist))?;
        write!(f, "{}", row("artists per playlist", &self.artists_per_playlist))
    }
}
