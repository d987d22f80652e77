//! Collection filter: rejects artist-themed and short playlists and drops
//! songs without feature vectors.

use serde::Serialize;

use super::{FeatureTable, Playlist};

/// Thresholds for [`filter_collection`]. Defaults match the usual pipeline:
/// at least 7 unique artists with at most 2 songs each, at least 14 songs
/// before the feature join and at least 5 after it.
#[derive(Clone, Debug, Serialize)]
pub struct FilterParams {
    pub min_artists: usize,
    pub max_per_artist: usize,
    pub min_linked: usize,
    pub min_final: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_artists: 7,
            max_per_artist: 2,
            min_linked: 14,
            min_final: 5,
        }
    }
}

/// Per-rule rejection counts emitted by [`filter_collection`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FilterStats {
    pub input: usize,
    /// Rule 1: too few unique artists or too many songs by one artist.
    pub rejected_artist_rule: usize,
    /// Rule 2: fewer than `min_linked` songs.
    pub rejected_min_linked: usize,
    /// Rule 3: songs dropped for lacking a feature vector (song count, not
    /// playlist count).
    pub songs_dropped: usize,
    /// Rule 4: playlist fell below `min_final` songs after the feature join.
    pub rejected_min_final: usize,
    pub kept: usize,
}

/// Applies the four filtering rules in order and returns the surviving
/// playlists (input order preserved) together with per-rule counts.
pub fn filter_collection(
    playlists: &[Playlist],
    features: &FeatureTable,
    params: &FilterParams,
) -> (Vec<Playlist>, FilterStats) {
    let mut stats = FilterStats {
        input: playlists.len(),
        ..FilterStats::default()
    };
    let mut kept = Vec::new();
    for playlist in playlists {
        if playlist.unique_artists() < params.min_artists
            || playlist.max_songs_per_artist() > params.max_per_artist
        {
            stats.rejected_artist_rule += 1;
            continue;
        }
        if playlist.len() < params.min_linked {
            stats.rejected_min_linked += 1;
            continue;
        }
        let before = playlist.len();
        let restricted = playlist.restricted_to(|s| features.contains(s));
        let after = restricted.as_ref().map_or(0, Playlist::len);
        stats.songs_dropped += before - after;
        match restricted {
            Some(p) if p.len() >= params.min_final.max(1) => {
                kept.push(p);
            }
            _ => stats.rejected_min_final += 1,
        }
    }
    stats.kept = kept.len();
    (kept, stats)
}
