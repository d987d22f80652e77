//! On-disk formats for playlists and feature tables.
//!
//! Playlist file: one playlist per line,
//! `<playlist_id>\t<song_id>:<artist_id>,<song_id>:<artist_id>,...`.
//! Feature file: a `D=<int>` header, then `<song_id>\t<v1> <v2> ... <vD>`
//! per song. Both are UTF-8; lines starting with `#` are comments and are
//! skipped, which is where the CLI echoes its run configuration. Files
//! written here are canonical: loading one and writing it back reproduces
//! it byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DatasetError, FeatureTable, Playlist, SongId};

/// Result of [`load_playlists`]: the playlists plus a counter of duplicate
/// song ids that were collapsed (playlists are sets).
#[derive(Debug)]
pub struct LoadedPlaylists {
    pub playlists: Vec<Playlist>,
    pub duplicates_collapsed: u64,
}

fn read_to_string(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn load_playlists(path: &Path) -> Result<LoadedPlaylists, DatasetError> {
    let text = read_to_string(path)?;
    let mut playlists = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut duplicates_collapsed = 0u64;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or("");
        let songs_field = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno, "expected 2 tab-separated fields, got 1"))?;
        if fields.next().is_some() {
            return Err(parse_err(
                path,
                lineno,
                "expected 2 tab-separated fields, got more",
            ));
        }
        let mut entries = Vec::new();
        for item in songs_field.split(',') {
            let (song, artist) = item.split_once(':').ok_or_else(|| {
                parse_err(path, lineno, format!("song entry {item:?} is not <song>:<artist>"))
            })?;
            let song = SongId::new(song).map_err(|e| parse_err(path, lineno, e.to_string()))?;
            entries.push((song, artist.to_string()));
        }
        let (playlist, dups) = Playlist::from_entries(id, entries)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        duplicates_collapsed += dups as u64;
        if !seen_ids.insert(playlist.id().to_string()) {
            return Err(parse_err(
                path,
                lineno,
                DatasetError::DuplicatePlaylist(playlist.id().to_string()).to_string(),
            ));
        }
        playlists.push(playlist);
    }
    Ok(LoadedPlaylists {
        playlists,
        duplicates_collapsed,
    })
}

pub fn write_playlists_to<W: Write>(w: &mut W, playlists: &[Playlist]) -> std::io::Result<()> {
    for p in playlists {
        write!(w, "{}\t", p.id())?;
        for (i, song) in p.songs().iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{}:{}", song, p.artist_of(song).expect("artist entry"))?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_playlists(path: &Path, playlists: &[Playlist]) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    write_playlists_to(&mut buf, playlists).expect("write to Vec cannot fail");
    fs::write(path, buf).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_features(path: &Path) -> Result<FeatureTable, DatasetError> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    let (idx, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing D=<dim> header"))?;
    let dim: usize = header
        .strip_prefix("D=")
        .and_then(|v| v.parse().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| parse_err(path, idx + 1, format!("bad header {header:?}, expected D=<positive int>")))?;
    let mut table = FeatureTable::new(dim)?;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected <song_id>\\t<values>"))?;
        let song = SongId::new(id).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let mut vector = Vec::with_capacity(dim);
        for tok in values.split_ascii_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad float {tok:?}")))?;
            vector.push(v);
        }
        table
            .insert(song, vector)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
    }
    Ok(table)
}

pub fn write_features_to<W: Write>(w: &mut W, table: &FeatureTable) -> std::io::Result<()> {
    writeln!(w, "D={}", table.dim())?;
    for song in table.song_ids() {
        write!(w, "{song}\t")?;
        let row = table.get(song).expect("row exists");
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_features(path: &Path, table: &FeatureTable) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    write_features_to(&mut buf, table).expect("write to Vec cannot fail");
    fs::write(path, buf).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_basic_playlist_line() {
        let f = tmpfile("p1\ta:art1,b:art2\n");
        let loaded = load_playlists(f.path()).unwrap();
        assert_eq!(loaded.playlists.len(), 1);
        let p = &loaded.playlists[0];
        assert_eq!(p.id(), "p1");
        assert_eq!(
            p.songs().iter().map(SongId::as_str).collect::<Vec<_>>(),
            vec!["a", "b"]
        );
        assert_eq!(loaded.duplicates_collapsed, 0);
    }

    #[test]
    fn collapses_duplicates_with_counter() {
        let f = tmpfile("p2\ta:art1,a:art1,b:art2\n");
        let loaded = load_playlists(f.path()).unwrap();
        assert_eq!(loaded.playlists[0].len(), 2);
        assert_eq!(loaded.duplicates_collapsed, 1);
    }

    #[test]
    fn missing_songs_field_reports_line_number() {
        let f = tmpfile("p1\ta:art1\np2\ta:art1\np3\n");
        let err = load_playlists(f.path()).unwrap_err();
        match err {
            DatasetError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_songs_field_is_rejected() {
        let f = tmpfile("p1\t\n");
        assert!(load_playlists(f.path()).is_err());
    }

    #[test]
    fn duplicate_playlist_id_is_rejected() {
        let f = tmpfile("p1\ta:x\np1\tb:y\n");
        assert!(load_playlists(f.path()).is_err());
    }

    #[test]
    fn comment_lines_are_skipped() {
        let f = tmpfile("# run config: {}\np1\ta:art1,b:art2\n");
        let loaded = load_playlists(f.path()).unwrap();
        assert_eq!(loaded.playlists.len(), 1);
    }

    #[test]
    fn features_header_and_rows() {
        let f = tmpfile("D=3\na\t0 1 2\n");
        let t = load_features(f.path()).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get(&SongId::new("a").unwrap()).unwrap(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn feature_dimension_mismatch_names_song() {
        let f = tmpfile("D=3\na\t0 1\n");
        let err = load_features(f.path()).unwrap_err();
        assert!(err.to_string().contains("song a"), "{err}");
    }

    #[test]
    fn feature_duplicate_song_rejected() {
        let f = tmpfile("D=2\na\t0 1\na\t2 3\n");
        assert!(load_features(f.path()).is_err());
    }

    #[test]
    fn feature_non_finite_rejected() {
        let f = tmpfile("D=2\na\t0 NaN\n");
        let err = load_features(f.path()).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn playlist_round_trip_is_byte_exact() {
        let text = "p1\ta:art1,b:art2\npz\tq:ar,w:ar2,e:ar3\n";
        let f = tmpfile(text);
        let loaded = load_playlists(f.path()).unwrap();
        let mut buf = Vec::new();
        write_playlists_to(&mut buf, &loaded.playlists).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn feature_round_trip_is_byte_exact() {
        let text = "D=2\na\t0.25 -1.5\nb\t0.1 3.14159\n";
        let f = tmpfile(text);
        let t = load_features(f.path()).unwrap();
        let mut buf = Vec::new();
        write_features_to(&mut buf, &t).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }
}
