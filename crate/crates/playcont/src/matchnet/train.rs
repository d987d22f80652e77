//! Mini-batch training with adaptive moment estimation and early stopping
//! on validation cost.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{bce, infer_probs, train_backward, train_forward, IndexedPair, Stacked};
use super::{MatchNet, MatchNetError, Mode};
use crate::dataset::FeatureTable;
use crate::rng::substream;
use crate::sampling::LabeledPair;

/// Per-epoch costs and the selected epoch. `wall_secs` is measured, so it
/// is skipped when the report is serialized; written reports stay
/// byte-identical across reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example training cost of each epoch.
    pub train_cost: Vec<f64>,
    /// Mean per-example validation cost after each epoch.
    pub val_cost: Vec<f64>,
    /// 1-based epoch whose parameters were kept (minimum validation cost).
    pub best_epoch: usize,
    pub epochs_run: usize,
    #[serde(skip)]
    pub wall_secs: f64,
}

fn resolve_pairs(
    pairs: &[LabeledPair],
    index: &std::collections::BTreeMap<&crate::dataset::SongId, usize>,
) -> Result<Vec<IndexedPair>, MatchNetError> {
    pairs
        .iter()
        .map(|pair| {
            if pair.playlist_songs.is_empty() {
                return Err(MatchNetError::EmptyPlaylist);
            }
            let look = |song: &crate::dataset::SongId| {
                index
                    .get(song)
                    .copied()
                    .ok_or_else(|| MatchNetError::MissingFeature(song.to_string()))
            };
            let rows = pair.playlist_songs.iter().map(look).collect::<Result<_, _>>()?;
            Ok(IndexedPair {
                rows,
                cand: look(&pair.candidate)?,
                label: f64::from(u8::from(pair.label)),
            })
        })
        .collect()
}

struct Adam {
    m: Array1<f64>,
    v: Array1<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Adam {
        Adam { m: Array1::zeros(n), v: Array1::zeros(n), t: 0, lr }
    }

    fn step(&mut self, params: &mut Array1<f64>, grad: &Array1<f64>) {
        self.t += 1;
        self.m = Self::BETA1 * &self.m + (1.0 - Self::BETA1) * grad;
        self.v = Self::BETA2 * &self.v + (1.0 - Self::BETA2) * grad.mapv(|g| g * g);
        let m_hat = &self.m / (1.0 - Self::BETA1.powi(self.t));
        let v_hat = &self.v / (1.0 - Self::BETA2.powi(self.t));
        *params = &*params - self.lr * m_hat / (v_hat.mapv(f64::sqrt) + Self::EPS);
    }
}

/// Trains the net in place and leaves it in inference mode holding the
/// parameters (and running statistics) of the best validation epoch.
///
/// Each epoch shuffles the training pairs with a seeded generator, steps
/// once per mini-batch, and measures validation cost in inference
/// semantics. Stops when `patience` epochs pass without a new minimum, or
/// at `max_epochs`; with patience 0, exactly one epoch runs.
pub fn train(
    net: &mut MatchNet,
    train_pairs: &[LabeledPair],
    val_pairs: &[LabeledPair],
    features: &FeatureTable,
    rng_seed: u64,
) -> Result<TrainReport, MatchNetError> {
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(MatchNetError::EmptyBatch);
    }
    let started = std::time::Instant::now();
    let config = net.config().clone();

    let index: std::collections::BTreeMap<_, usize> = features
        .song_ids()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    let mut matrix = Array2::zeros((features.len(), features.dim()));
    for (song, &row) in &index {
        matrix
            .row_mut(row)
            .assign(&ndarray::ArrayView1::from(features.get(song).unwrap()));
    }
    let train_idx = resolve_pairs(train_pairs, &index)?;
    let val_idx = resolve_pairs(val_pairs, &index)?;
    let val_stacked = Stacked::from_indexed(&matrix, &val_idx);

    net.set_mode(Mode::Train);
    let mut adam = Adam::new(net.n_params(), config.learning_rate);
    let mut report = TrainReport {
        train_cost: Vec::new(),
        val_cost: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
        wall_secs: 0.0,
    };
    let mut best: Option<(f64, Array1<f64>, Array1<f64>)> = None;
    let mut streak = 0usize;

    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(substream(rng_seed, "shuffle", &epoch.to_string()));
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<IndexedPair> = chunk
                .iter()
                .map(|&i| IndexedPair {
                    rows: train_idx[i].rows.clone(),
                    cand: train_idx[i].cand,
                    label: train_idx[i].label,
                })
                .collect();
            let stacked = Stacked::from_indexed(&matrix, &batch);
            let mask_seed = substream(rng_seed, "dropout", &format!("{epoch}:{batch_no}"));
            let fwd = train_forward(net, &stacked, Some(mask_seed));
            let loss = bce(&fwd.probs, &stacked.labels);
            if !loss.total.is_finite() {
                return Err(MatchNetError::Diverged { epoch });
            }
            epoch_total += loss.total;
            let grads = train_backward(net, &stacked, &fwd);

            let mut params = net.params_flat();
            adam.step(&mut params, &grads.to_flat());
            net.set_params_flat(&params);

            if config.batch_norm {
                for (block, cache) in net.f.iter_mut().zip(&fwd.f_caches) {
                    let (mean, var) = cache.bn_stats.as_ref().expect("batch norm on");
                    block.bn.update_running(mean, var, config.bn_momentum);
                }
                let (mean, var) = fwd.g_cache.bn_stats.as_ref().expect("batch norm on");
                net.g.bn.update_running(mean, var, config.bn_momentum);
            }
        }
        report.train_cost.push(epoch_total / train_idx.len() as f64);

        let val_probs = infer_probs(net, &val_stacked);
        let val = bce(&val_probs, &val_stacked.labels).mean;
        if !val.is_finite() {
            return Err(MatchNetError::Diverged { epoch });
        }
        report.val_cost.push(val);
        report.epochs_run = epoch;

        let improved = best.as_ref().is_none_or(|(b, _, _)| val < *b);
        if improved {
            best = Some((val, net.params_flat(), net.running_stats_flat()));
            report.best_epoch = epoch;
            streak = 0;
        } else {
            streak += 1;
        }
        if streak >= config.patience {
            break;
        }
    }

    let (_, params, running) = best.expect("at least one epoch ran");
    net.set_params_flat(&params);
    net.set_running_stats_flat(&running);
    net.set_mode(Mode::Inference);
    report.wall_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SongId;
    use crate::matchnet::{init, MatchNetConfig};
    use crate::sampling::derive_pairs;
    use std::collections::BTreeSet;

    /// Two six-song "playlists" drawn from opposite corners of feature
    /// space: songs of group A sit near +e₁, group B near −e₁. Linearly
    /// separable, so the net should fit it almost perfectly.
    fn separable_fixture() -> (Vec<crate::dataset::Playlist>, FeatureTable, BTreeSet<SongId>) {
        let mut features = FeatureTable::new(6).unwrap();
        let mut groups = Vec::new();
        for (g, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            let mut entries = Vec::new();
            for j in 0..6 {
                let id = SongId::new(format!("g{g}s{j}")).unwrap();
                let mut row = vec![0.0; 6];
                row[0] = sign;
                row[1 + j % 5] = 0.3 * sign;
                features.insert(id.clone(), row).unwrap();
                entries.push((id, format!("g{g}a{j}")));
            }
            groups.push(
                crate::dataset::Playlist::from_entries(format!("p{g}"), entries)
                    .unwrap()
                    .0,
            );
        }
        let universe = features.song_set();
        (groups, features, universe)
    }

    fn fixture_config() -> MatchNetConfig {
        MatchNetConfig {
            hidden_dim: 8,
            f_blocks: 2,
            g_hidden: 8,
            dropout_rate: 0.0,
            learning_rate: 1e-2,
            batch_size: 8,
            max_epochs: 200,
            patience: 200,
            ..MatchNetConfig::new(6)
        }
    }

    #[test]
    fn separable_fixture_trains_below_threshold() {
        let (playlists, features, universe) = separable_fixture();
        let train_pairs = derive_pairs(&playlists, &universe, 1).unwrap();
        let val_pairs = derive_pairs(&playlists, &universe, 2).unwrap();
        let mut net = init(&fixture_config(), 3).unwrap();
        let report = train(&mut net, &train_pairs, &val_pairs, &features, 4).unwrap();
        let final_cost = *report.train_cost.last().unwrap();
        assert!(
            final_cost < 0.1,
            "mean train cost {final_cost} after {} epochs",
            report.epochs_run
        );
        assert_eq!(net.mode(), Mode::Inference);
    }

    #[test]
    fn patience_zero_runs_exactly_one_epoch() {
        let (playlists, features, universe) = separable_fixture();
        let pairs = derive_pairs(&playlists, &universe, 1).unwrap();
        let config = MatchNetConfig { patience: 0, ..fixture_config() };
        let mut net = init(&config, 3).unwrap();
        let report = train(&mut net, &pairs, &pairs, &features, 4).unwrap();
        assert_eq!(report.epochs_run, 1);
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.train_cost.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let (playlists, features, universe) = separable_fixture();
        let train_pairs = derive_pairs(&playlists, &universe, 1).unwrap();
        let val_pairs = derive_pairs(&playlists, &universe, 2).unwrap();
        let config = MatchNetConfig {
            max_epochs: 5,
            dropout_rate: 0.4,
            ..fixture_config()
        };
        let run = || {
            let mut net = init(&config, 3).unwrap();
            let report = train(&mut net, &train_pairs, &val_pairs, &features, 4).unwrap();
            (net.params_flat(), serde_json::to_string(&report).unwrap())
        };
        let (params_a, report_a) = run();
        let (params_b, report_b) = run();
        assert_eq!(params_a, params_b);
        assert_eq!(report_a, report_b);
    }

    #[test]
    fn snapshot_restores_the_minimum_validation_cost() {
        let (playlists, features, universe) = separable_fixture();
        let train_pairs = derive_pairs(&playlists, &universe, 1).unwrap();
        let val_pairs = derive_pairs(&playlists, &universe, 2).unwrap();
        let config = MatchNetConfig { max_epochs: 30, ..fixture_config() };
        let mut net = init(&config, 3).unwrap();
        let report = train(&mut net, &train_pairs, &val_pairs, &features, 4).unwrap();
        let best = report.val_cost[report.best_epoch - 1];
        for v in &report.val_cost {
            assert!(best <= *v);
        }
        // Re-measuring with the restored parameters reproduces the best cost.
        let examples: Vec<_> = val_pairs
            .iter()
            .map(|p| {
                let rows: Vec<Vec<f64>> = p
                    .playlist_songs
                    .iter()
                    .map(|s| features.get(s).unwrap().to_vec())
                    .collect();
                crate::matchnet::Example {
                    playlist: ndarray::Array2::from_shape_vec(
                        (rows.len(), 6),
                        rows.concat(),
                    )
                    .unwrap(),
                    song: ndarray::Array1::from(features.get(&p.candidate).unwrap().to_vec()),
                    label: p.label,
                }
            })
            .collect();
        let measured = net.loss(&examples, 0).unwrap().mean;
        approx::assert_abs_diff_eq!(measured, best, epsilon = 1e-12);
    }

    #[test]
    fn empty_pair_sets_are_rejected() {
        let (_, features, _) = separable_fixture();
        let mut net = init(&fixture_config(), 3).unwrap();
        assert!(matches!(
            train(&mut net, &[], &[], &features, 1),
            Err(MatchNetError::EmptyBatch)
        ));
    }

    #[test]
    fn missing_feature_is_reported_by_song() {
        let (playlists, features, universe) = separable_fixture();
        let mut bigger = universe.clone();
        bigger.insert(SongId::new("ghost").unwrap());
        let pairs = derive_pairs(&playlists, &bigger, 7).unwrap();
        // Some mismatch will eventually reference `ghost`; force one.
        let mut pairs = pairs;
        pairs[1].candidate = SongId::new("ghost").unwrap();
        let mut net = init(&fixture_config(), 3).unwrap();
        assert!(matches!(
            train(&mut net, &pairs, &pairs, &features, 1),
            Err(MatchNetError::MissingFeature(s)) if s == "ghost"
        ));
    }
}
