//! The offline ranking experiment: every query playlist's withheld songs
//! are ranked among all candidate songs, summarized by median rank, mean
//! average precision and recall at fixed cutoffs, and broken down by how
//! often each withheld song occurred in the training playlists.
//!
//! Candidates for a playlist are the whole song universe minus the songs it
//! retained — withheld songs of *other* playlists stay in the pool, and a
//! playlist's own withheld songs compete against each other. The median
//! rank pools each withheld song's rank across playlists; MAP and mean
//! recall average per-playlist values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureTable, SongId, SplitBundle, SplitMode};
use crate::matchnet::{MatchNet, MatchNetError};
use crate::rng::substream;
use crate::wmf::{random_rank, WmfError, WmfModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no songs withheld; nothing to evaluate")]
    EmptyWithheld,
    #[error("candidate list contains {0} twice")]
    DuplicateCandidate(String),
    #[error("withheld song {0} is missing from the candidate list")]
    WithheldNotRanked(String),
    #[error("invalid cutoffs: {0}")]
    InvalidCutoffs(String),
    #[error("invalid frequency buckets: {0}")]
    InvalidBuckets(String),
    #[error("the factorization scorer embeds only training playlists and requires a weak-mode bundle")]
    UnsupportedMode,
    #[error(transparent)]
    MatchNet(#[from] MatchNetError),
    #[error(transparent)]
    Factorization(#[from] WmfError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad report file: {0}")]
    BadReport(String),
}

/// Ranking outcome for one query playlist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub playlist_id: String,
    pub candidate_count: usize,
    /// 1-based rank of every withheld song among the candidates.
    pub ranks: BTreeMap<SongId, usize>,
    pub average_precision: f64,
    pub recall_at: BTreeMap<usize, f64>,
}

/// Ranks the withheld songs inside an already-ordered candidate list and
/// computes average precision plus recall at each cutoff.
///
/// Average precision is the mean, over withheld songs, of
/// (songs found at or above the song's position) / position.
pub fn evaluate_continuation(
    playlist_id: &str,
    ranked: &[(SongId, f64)],
    withheld: &BTreeSet<SongId>,
    cutoffs: &[usize],
) -> Result<ContinuationResult, EvalError> {
    if withheld.is_empty() {
        return Err(EvalError::EmptyWithheld);
    }
    let mut position = BTreeMap::new();
    for (i, (song, _)) in ranked.iter().enumerate() {
        if position.insert(song.clone(), i + 1).is_some() {
            return Err(EvalError::DuplicateCandidate(song.to_string()));
        }
    }
    let mut ranks = BTreeMap::new();
    for song in withheld {
        let rank = *position
            .get(song)
            .ok_or_else(|| EvalError::WithheldNotRanked(song.to_string()))?;
        ranks.insert(song.clone(), rank);
    }

    let mut sorted: Vec<usize> = ranks.values().copied().collect();
    sorted.sort_unstable();
    let m = sorted.len() as f64;
    let average_precision = sorted
        .iter()
        .enumerate()
        .map(|(i, &r)| (i + 1) as f64 / r as f64)
        .sum::<f64>()
        / m;
    let recall_at = cutoffs
        .iter()
        .map(|&k| (k, sorted.iter().filter(|&&r| r <= k).count() as f64 / m))
        .collect();

    Ok(ContinuationResult {
        playlist_id: playlist_id.to_string(),
        candidate_count: ranked.len(),
        ranks,
        average_precision,
        recall_at,
    })
}

/// Training-frequency buckets, e.g. `0,1,2,3-4,5+`: how often a withheld
/// song occurred in training playlists decides its bucket. The ranges must
/// start at 0, be contiguous, and end open-ended.
#[derive(Clone, Debug, PartialEq)]
pub struct Buckets {
    ranges: Vec<(usize, Option<usize>)>,
    labels: Vec<String>,
}

impl Default for Buckets {
    fn default() -> Buckets {
        "0,1,2,3-4,5+".parse().expect("default buckets parse")
    }
}

impl std::str::FromStr for Buckets {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Buckets, EvalError> {
        let bad = |msg: String| EvalError::InvalidBuckets(msg);
        let mut ranges = Vec::new();
        let mut labels = Vec::new();
        for token in s.split(',') {
            let token = token.trim();
            let range = if let Some(lo) = token.strip_suffix('+') {
                let lo = lo.parse().map_err(|_| bad(format!("bad token {token:?}")))?;
                (lo, None)
            } else if let Some((lo, hi)) = token.split_once('-') {
                let lo = lo.parse().map_err(|_| bad(format!("bad token {token:?}")))?;
                let hi = hi.parse().map_err(|_| bad(format!("bad token {token:?}")))?;
                if hi < lo {
                    return Err(bad(format!("empty range {token:?}")));
                }
                (lo, Some(hi))
            } else {
                let v = token.parse().map_err(|_| bad(format!("bad token {token:?}")))?;
                (v, Some(v))
            };
            let expected_lo = match ranges.last() {
                None => 0,
                Some((_, None)) => return Err(bad("open-ended bucket must be last".into())),
                Some(&(_, Some(hi))) => hi + 1,
            };
            if range.0 != expected_lo {
                return Err(bad(format!(
                    "bucket {token:?} starts at {}, expected {expected_lo}",
                    range.0
                )));
            }
            ranges.push(range);
            labels.push(token.to_string());
        }
        match ranges.last() {
            Some((_, None)) => Ok(Buckets { ranges, labels }),
            _ => Err(bad("buckets must end with an open-ended range like 5+".into())),
        }
    }
}

impl std::fmt::Display for Buckets {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.labels.join(","))
    }
}

impl Buckets {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn index_of(&self, frequency: usize) -> usize {
        self.ranges
            .iter()
            .position(|&(lo, hi)| frequency >= lo && hi.is_none_or(|h| frequency <= h))
            .expect("contiguous open-ended ranges cover every count")
    }
}

/// One row of the frequency breakdown. `median_rank` and `mean_recall` are
/// absent when no withheld song fell into the bucket; the row itself is
/// always present so the table schema is stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub label: String,
    pub n: usize,
    pub median_rank: Option<f64>,
    pub mean_recall: Option<f64>,
}

fn median_of_sorted(sorted: &[usize]) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    Some(if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    })
}

/// Assigns every withheld song's rank to the bucket of its training
/// frequency (absent from the map means 0) and summarizes each bucket by
/// median rank and the share of ranks at or under `recall_cutoff`.
pub fn bucket_breakdown(
    results: &[ContinuationResult],
    training_frequency: &BTreeMap<SongId, usize>,
    buckets: &Buckets,
    recall_cutoff: usize,
) -> Vec<BucketRow> {
    let mut per_bucket: Vec<Vec<usize>> = vec![Vec::new(); buckets.len()];
    for result in results {
        for (song, &rank) in &result.ranks {
            let freq = training_frequency.get(song).copied().unwrap_or(0);
            per_bucket[buckets.index_of(freq)].push(rank);
        }
    }
    per_bucket
        .into_iter()
        .zip(buckets.labels())
        .map(|(mut ranks, label)| {
            ranks.sort_unstable();
            let hits = ranks.iter().filter(|&&r| r <= recall_cutoff).count();
            BucketRow {
                label: label.clone(),
                n: ranks.len(),
                median_rank: median_of_sorted(&ranks),
                mean_recall: (!ranks.is_empty()).then(|| hits as f64 / ranks.len() as f64),
            }
        })
        .collect()
}

/// The three ways to order candidates for a playlist.
pub enum Scorer<'a> {
    /// The trained classifier; needs the feature table to look songs up.
    MatchNet(&'a MatchNet, &'a FeatureTable),
    /// A fitted factorization model; weak-mode bundles only.
    Factorization(&'a WmfModel),
    /// Independent uniform scores, one substream per playlist.
    Random { rng_seed: u64 },
}

impl Scorer<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Scorer::MatchNet(..) => "matchnet",
            Scorer::Factorization(_) => "wmf",
            Scorer::Random { .. } => "random",
        }
    }

    fn rng_seed(&self) -> Option<u64> {
        match self {
            Scorer::Random { rng_seed } => Some(*rng_seed),
            _ => None,
        }
    }
}

/// Everything the experiment produced: aggregates, the frequency breakdown
/// and the per-playlist results they were computed from. Serializing the
/// report skips `results`; the JSON-lines writer emits them as separate
/// lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scorer: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rng_seed: Option<u64>,
    pub bundle_checksum: u32,
    pub cutoffs: Vec<usize>,
    pub bucket_recall_cutoff: usize,
    pub n_playlists: usize,
    pub n_withheld_songs: usize,
    pub median_rank: f64,
    pub mean_average_precision: f64,
    pub mean_recall_at: BTreeMap<usize, f64>,
    pub bucket_table: Vec<BucketRow>,
    #[serde(skip)]
    pub results: Vec<ContinuationResult>,
}

fn check_cutoffs(cutoffs: &[usize]) -> Result<(), EvalError> {
    if cutoffs.is_empty() {
        return Err(EvalError::InvalidCutoffs("no cutoffs given".into()));
    }
    if cutoffs.contains(&0) {
        return Err(EvalError::InvalidCutoffs("cutoff 0 is meaningless".into()));
    }
    if cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::InvalidCutoffs(
            "cutoffs must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Computes the aggregate metrics and bucket table from per-playlist
/// results.
fn aggregate(
    results: Vec<ContinuationResult>,
    scorer: &Scorer,
    bundle: &SplitBundle,
    cutoffs: &[usize],
    buckets: &Buckets,
    bucket_recall_cutoff: usize,
) -> EvalReport {
    let mut pooled: Vec<usize> = results
        .iter()
        .flat_map(|r| r.ranks.values().copied())
        .collect();
    pooled.sort_unstable();
    let n = results.len() as f64;
    let mean_average_precision =
        results.iter().map(|r| r.average_precision).sum::<f64>() / n;
    let mean_recall_at = cutoffs
        .iter()
        .map(|&k| (k, results.iter().map(|r| r.recall_at[&k]).sum::<f64>() / n))
        .collect();
    let bucket_table = bucket_breakdown(
        &results,
        &bundle.training_frequency(),
        buckets,
        bucket_recall_cutoff,
    );
    EvalReport {
        scorer: scorer.name().to_string(),
        rng_seed: scorer.rng_seed(),
        bundle_checksum: bundle.checksum(),
        cutoffs: cutoffs.to_vec(),
        bucket_recall_cutoff,
        n_playlists: results.len(),
        n_withheld_songs: pooled.len(),
        median_rank: median_of_sorted(&pooled).unwrap_or(f64::NAN),
        mean_average_precision,
        mean_recall_at,
        bucket_table,
        results,
    }
}

/// Runs the ranking experiment over every query playlist of the bundle.
/// Playlists are scored independently (in parallel) and aggregated in a
/// fixed order, so the report is deterministic.
pub fn run_experiment(
    bundle: &SplitBundle,
    scorer: &Scorer,
    cutoffs: &[usize],
    buckets: &Buckets,
    bucket_recall_cutoff: usize,
) -> Result<EvalReport, EvalError> {
    check_cutoffs(cutoffs)?;
    if matches!(scorer, Scorer::Factorization(_)) && bundle.mode() == SplitMode::Strong {
        return Err(EvalError::UnsupportedMode);
    }
    let universe = bundle.universe();
    let results: Result<Vec<ContinuationResult>, EvalError> = bundle
        .query_playlists()
        .par_iter()
        .map(|playlist| {
            let retained = playlist.song_set();
            let candidates: BTreeSet<SongId> =
                universe.difference(&retained).cloned().collect();
            let withheld = bundle
                .continuation(playlist.id())
                .expect("bundle invariant: every query playlist has a continuation");
            let ranked = match scorer {
                Scorer::MatchNet(net, features) => {
                    net.rank_candidates(&retained, &candidates, features)?
                }
                Scorer::Factorization(model) => {
                    model.rank_candidates(playlist.id(), &candidates)?
                }
                Scorer::Random { rng_seed } => {
                    random_rank(&candidates, substream(*rng_seed, "random-rank", playlist.id()))
                }
            };
            evaluate_continuation(playlist.id(), &ranked, &withheld, cutoffs)
        })
        .collect();
    Ok(aggregate(results?, scorer, bundle, cutoffs, buckets, bucket_recall_cutoff))
}

/// Formats a float with six significant digits in plain decimal notation.
pub(crate) fn sig6_str(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if exp >= 5 {
        let scale = 10f64.powi(exp - 5);
        format!("{}", (v / scale).round() * scale)
    } else {
        format!("{:.*}", (5 - exp) as usize, v)
    }
}

/// The same rounding as [`sig6_str`], returned as a value — reports are
/// serialized with every float passed through this, so written files are
/// stable and re-readable to exactly what they show.
fn sig6(v: f64) -> f64 {
    sig6_str(v).parse().expect("sig6_str emits valid floats")
}

fn rounded_result(r: &ContinuationResult) -> ContinuationResult {
    ContinuationResult {
        playlist_id: r.playlist_id.clone(),
        candidate_count: r.candidate_count,
        ranks: r.ranks.clone(),
        average_precision: sig6(r.average_precision),
        recall_at: r.recall_at.iter().map(|(&k, &v)| (k, sig6(v))).collect(),
    }
}

fn rounded_report(report: &EvalReport) -> EvalReport {
    EvalReport {
        scorer: report.scorer.clone(),
        rng_seed: report.rng_seed,
        bundle_checksum: report.bundle_checksum,
        cutoffs: report.cutoffs.clone(),
        bucket_recall_cutoff: report.bucket_recall_cutoff,
        n_playlists: report.n_playlists,
        n_withheld_songs: report.n_withheld_songs,
        median_rank: sig6(report.median_rank),
        mean_average_precision: sig6(report.mean_average_precision),
        mean_recall_at: report
            .mean_recall_at
            .iter()
            .map(|(&k, &v)| (k, sig6(v)))
            .collect(),
        bucket_table: report
            .bucket_table
            .iter()
            .map(|b| BucketRow {
                label: b.label.clone(),
                n: b.n,
                median_rank: b.median_rank.map(sig6),
                mean_recall: b.mean_recall.map(sig6),
            })
            .collect(),
        results: report.results.iter().map(rounded_result).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// Line 1: the aggregate record. Every further line: one
    /// [`ContinuationResult`].
    JsonLines,
    /// `#`-prefixed aggregate echo, a header row, then one row per
    /// playlist. Ranks are `song:rank` pairs joined by `;`.
    Csv,
}

/// Writes the report with floats rounded to six significant digits. Two
/// runs with identical seeds produce byte-identical files.
pub fn write_report(
    report: &EvalReport,
    path: &Path,
    format: ReportFormat,
) -> Result<(), EvalError> {
    let io_err = |e| EvalError::Io { path: path.display().to_string(), source: e };
    let rounded = rounded_report(report);
    let mut out = String::new();
    match format {
        ReportFormat::JsonLines => {
            out.push_str(&serde_json::to_string(&rounded).expect("report serializes"));
            out.push('\n');
            for result in &rounded.results {
                out.push_str(&serde_json::to_string(result).expect("result serializes"));
                out.push('\n');
            }
        }
        ReportFormat::Csv => {
            out.push_str(&format!(
                "# scorer={} bundle_checksum={:08x}{}\n",
                rounded.scorer,
                rounded.bundle_checksum,
                rounded
                    .rng_seed
                    .map(|s| format!(" rng_seed={s}"))
                    .unwrap_or_default(),
            ));
            out.push_str(&format!(
                "# n_playlists={} n_withheld_songs={} median_rank={} mean_average_precision={}\n",
                rounded.n_playlists,
                rounded.n_withheld_songs,
                sig6_str(rounded.median_rank),
                sig6_str(rounded.mean_average_precision),
            ));
            let header: Vec<String> = ["playlist_id", "candidate_count", "n_withheld"]
                .map(String::from)
                .into_iter()
                .chain(std::iter::once("average_precision".to_string()))
                .chain(rounded.cutoffs.iter().map(|k| format!("recall@{k}")))
                .chain(std::iter::once("ranks".to_string()))
                .collect();
            out.push_str(&header.join(","));
            out.push('\n');
            for r in &rounded.results {
                let ranks: Vec<String> =
                    r.ranks.iter().map(|(s, rk)| format!("{s}:{rk}")).collect();
                let row: Vec<String> = [
                    r.playlist_id.clone(),
                    r.candidate_count.to_string(),
                    r.ranks.len().to_string(),
                    sig6_str(r.average_precision),
                ]
                .into_iter()
                .chain(rounded.cutoffs.iter().map(|k| sig6_str(r.recall_at[k])))
                .chain(std::iter::once(ranks.join(";")))
                .collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out).map_err(io_err)
}

/// Writes the frequency-bucket table as CSV. Empty buckets keep their row
/// with blank median/recall cells.
pub fn write_bucket_table(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let io_err = |e| EvalError::Io { path: path.display().to_string(), source: e };
    let mut out = format!(
        "# scorer={} bundle_checksum={:08x} recall_cutoff={}\n",
        report.scorer, report.bundle_checksum, report.bucket_recall_cutoff
    );
    out.push_str("bucket,n,median_rank,mean_recall\n");
    for row in &report.bucket_table {
        let median = row.median_rank.map(sig6_str).unwrap_or_default();
        let recall = row.mean_recall.map(sig6_str).unwrap_or_default();
        out.push_str(&format!("{},{},{median},{recall}\n", row.label, row.n));
    }
    std::fs::write(path, out).map_err(io_err)
}

/// Reads a JSON-lines report back, including per-playlist results.
pub fn read_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })?;
    let mut lines = text.lines();
    let first = lines
        .next()
        .ok_or_else(|| EvalError::BadReport("empty file".into()))?;
    let mut report: EvalReport = serde_json::from_str(first)
        .map_err(|e| EvalError::BadReport(format!("aggregate line: {e}")))?;
    for (i, line) in lines.enumerate() {
        let result: ContinuationResult = serde_json::from_str(line)
            .map_err(|e| EvalError::BadReport(format!("result line {}: {e}", i + 2)))?;
        report.results.push(result);
    }
    if report.results.len() != report.n_playlists {
        return Err(EvalError::BadReport(format!(
            "aggregate says {} playlists, file has {} result lines",
            report.n_playlists,
            report.results.len()
        )));
    }
    Ok(report)
}
