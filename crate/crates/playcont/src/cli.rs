//! Command-line pipeline: `synth` → `prepare` → `train` → `evaluate`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input error. Every
//! stochastic step derives its seed from `--seed`, and every artifact
//! echoes the configuration that produced it (`#` header lines, model-file
//! headers, or JSON fields), so reruns with identical flags are
//! byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::dataset::io::{load_features, load_playlists, write_features_to, write_playlists_to};
use crate::dataset::{
    filter_collection, generate_synthetic, split_strong, split_weak, CollectionStats,
    FeatureTable, FilterParams, SplitBundle, SplitMode, SyntheticParams,
};
use crate::evaluation::{
    run_experiment, write_bucket_table, write_report, Buckets, ReportFormat, Scorer,
};
use crate::matchnet::{self, MatchNet, MatchNetConfig};
use crate::rng::substream;
use crate::sampling::{derive_pairs, LabeledPair};
use crate::wmf::{als_fit, build_interaction_matrix, WmfConfig, WmfModel};

#[derive(Parser)]
#[command(
    name = "playcont",
    version,
    about = "Offline playlist-continuation experiments: data preparation, model training, ranking evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic collection (playlists + features).
    Synth(SynthArgs),
    /// Filter a collection and write a train/query split bundle.
    Prepare(PrepareArgs),
    /// Train a model on a bundle, optionally over a hyperparameter grid.
    Train(TrainArgs),
    /// Rank withheld continuations and write report files.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for playlists.pls and features.fvec.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 200)]
    songs_per_cluster: usize,
    #[arg(long, default_value_t = 400)]
    playlists: usize,
    #[arg(long, default_value_t = 18)]
    playlist_len: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Noise added around each song's cluster centroid.
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    /// Probability of drawing a playlist slot from a foreign cluster.
    #[arg(long, default_value_t = 0.1)]
    cross_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PrepareArgs {
    /// Playlist file (one playlist per line).
    #[arg(long)]
    playlists: PathBuf,
    /// Feature file (one song vector per line).
    #[arg(long)]
    features: PathBuf,
    /// weak: song-split every playlist; strong: withhold whole playlists.
    #[arg(long)]
    mode: String,
    /// Fraction of each split playlist's songs to withhold.
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    /// Fraction of playlists that become queries (strong mode only).
    #[arg(long, default_value_t = 0.2)]
    playlist_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bundle directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    min_artists: usize,
    #[arg(long, default_value_t = 2)]
    max_per_artist: usize,
    #[arg(long, default_value_t = 14)]
    min_linked: usize,
    #[arg(long, default_value_t = 5)]
    min_final: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Bundle directory written by `prepare`.
    #[arg(long)]
    bundle: PathBuf,
    /// Feature file (needed to validate the bundle and to train matchnet).
    #[arg(long)]
    features: PathBuf,
    /// Model family: matchnet or wmf.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the model file, training report and grid log.
    #[arg(long)]
    out: PathBuf,

    /// Matchnet hidden width H (comma list forms a grid).
    #[arg(long, value_delimiter = ',', default_value = "128")]
    hidden_dim: Vec<usize>,
    /// Matchnet dropout rate (comma list forms a grid).
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    dropout: Vec<f64>,
    /// Matchnet learning rate (comma list forms a grid).
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    lr: Vec<f64>,
    /// Discriminator hidden width; equals --hidden-dim when omitted.
    #[arg(long)]
    g_hidden: Option<usize>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Disable batch normalization in every block.
    #[arg(long)]
    no_batch_norm: bool,
    /// Share of training pairs withheld as the validation set.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,

    /// Factorization latent dimension k (comma list forms a grid).
    #[arg(long, value_delimiter = ',', default_value = "64")]
    factors: Vec<usize>,
    /// Confidence weight on observed cells (comma list forms a grid).
    #[arg(long, value_delimiter = ',', default_value = "40")]
    alpha: Vec<f64>,
    /// L2 regularization weight (comma list forms a grid).
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 15)]
    sweeps: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Bundle directory written by `prepare`.
    #[arg(long)]
    bundle: PathBuf,
    /// Feature file the bundle was prepared against.
    #[arg(long)]
    features: PathBuf,
    /// Model file (matchnet or factorization), or the literal `random`.
    #[arg(long)]
    model: String,
    /// Seed for the random scorer.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recall cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "10,30,100")]
    cutoffs: Vec<usize>,
    /// Training-frequency buckets for the breakdown table.
    #[arg(long, default_value = "0,1,2,3-4,5+")]
    buckets: String,
    /// Rank cutoff for the per-bucket recall column.
    #[arg(long, default_value_t = 100)]
    bucket_cutoff: usize,
    /// Directory for report.jsonl, report.csv and buckets.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Usage/input problems exit 2; failures while computing or writing exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(cli: Cli) -> ExitCode {
    if let Err(e) = configure_threads().and_then(|()| dispatch(cli)) {
        eprintln!("error: {e}");
        return ExitCode::from(match e {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        });
    }
    ExitCode::SUCCESS
}

/// `PLAYCONT_THREADS` caps worker parallelism; unset means one worker per
/// core.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PLAYCONT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| usage(format!("PLAYCONT_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(usage("PLAYCONT_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(runtime)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let params = SyntheticParams {
        n_clusters: args.clusters,
        songs_per_cluster: args.songs_per_cluster,
        n_playlists: args.playlists,
        playlist_len: args.playlist_len,
        dim: args.dim,
        noise_sd: args.noise_sd,
        cross_cluster_prob: args.cross_prob,
    };
    let data = generate_synthetic(&params, args.seed).map_err(usage)?;
    create_dir(&args.out)?;

    let echo = format!(
        "# playcont synth clusters={} songs_per_cluster={} playlists={} playlist_len={} dim={} noise_sd={} cross_prob={} seed={}\n",
        args.clusters,
        args.songs_per_cluster,
        args.playlists,
        args.playlist_len,
        args.dim,
        args.noise_sd,
        args.cross_prob,
        args.seed,
    );
    let mut playlist_buf = Vec::from(echo.as_bytes());
    write_playlists_to(&mut playlist_buf, &data.playlists).map_err(runtime)?;
    write_text(
        &args.out.join("playlists.pls"),
        std::str::from_utf8(&playlist_buf).expect("playlist text is UTF-8"),
    )?;
    let mut feature_buf = Vec::from(echo.as_bytes());
    write_features_to(&mut feature_buf, &data.features).map_err(runtime)?;
    write_text(
        &args.out.join("features.fvec"),
        std::str::from_utf8(&feature_buf).expect("feature text is UTF-8"),
    )?;

    println!(
        "wrote {} playlists over {} songs to {}",
        data.playlists.len(),
        data.features.len(),
        args.out.display()
    );
    Ok(())
}

fn load_inputs(
    playlists: &Path,
    features: &Path,
) -> Result<(Vec<crate::dataset::Playlist>, FeatureTable), CliError> {
    let features = load_features(features).map_err(usage)?;
    let loaded = load_playlists(playlists).map_err(usage)?;
    if loaded.duplicates_collapsed > 0 {
        println!(
            "# note: {} duplicate playlist entries collapsed",
            loaded.duplicates_collapsed
        );
    }
    Ok((loaded.playlists, features))
}

fn cmd_prepare(args: PrepareArgs) -> Result<(), CliError> {
    let mode: SplitMode = args.mode.parse().map_err(usage)?;
    let (playlists, features) = load_inputs(&args.playlists, &args.features)?;
    println!(
        "# playcont prepare mode={mode} holdout={} playlist_fraction={} seed={}",
        args.holdout, args.playlist_fraction, args.seed
    );

    let params = FilterParams {
        min_artists: args.min_artists,
        max_per_artist: args.max_per_artist,
        min_linked: args.min_linked,
        min_final: args.min_final,
    };
    let (kept, stats) = filter_collection(&playlists, &features, &params);
    println!("input playlists:      {}", stats.input);
    println!("  rejected, artists:  {}", stats.rejected_artist_rule);
    println!("  rejected, length:   {}", stats.rejected_min_linked);
    println!("  songs w/o features: {}", stats.songs_dropped);
    println!("  rejected, final:    {}", stats.rejected_min_final);
    println!("kept playlists:       {}", stats.kept);
    if kept.is_empty() {
        return Err(usage(
            "the collection filter rejected every playlist; relax --min-artists, \
             --max-per-artist, --min-linked or --min-final",
        ));
    }
    println!("{}", CollectionStats::describe(&kept));

    let universe = features.song_set();
    let bundle = match mode {
        SplitMode::Weak => split_weak(&kept, &universe, args.holdout, args.seed),
        SplitMode::Strong => split_strong(
            &kept,
            &universe,
            args.playlist_fraction,
            args.holdout,
            args.seed,
        ),
    }
    .map_err(usage)?;
    create_dir(&args.out)?;
    bundle
        .save(&args.out)
        .map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    println!(
        "bundle: {} train / {} query playlists, universe {} songs, checksum {:08x}",
        bundle.train_playlists().len(),
        bundle.query_playlists().len(),
        bundle.universe().len(),
        bundle.checksum()
    );
    Ok(())
}

fn load_bundle(dir: &Path, features: &FeatureTable) -> Result<SplitBundle, CliError> {
    SplitBundle::load(dir, features).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

/// Splits derived pairs into train and validation parts with a dedicated
/// shuffle seed.
fn validation_split(
    mut pairs: Vec<LabeledPair>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>), CliError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if !(0.0..1.0).contains(&fraction) || pairs.len() < 2 {
        return Err(usage(format!(
            "cannot split {} pairs with validation fraction {fraction}",
            pairs.len()
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let n_val = ((pairs.len() as f64 * fraction).round() as usize).clamp(1, pairs.len() - 1);
    let train = pairs.split_off(n_val);
    Ok((train, pairs))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let features = load_features(&args.features).map_err(usage)?;
    let bundle = load_bundle(&args.bundle, &features)?;
    create_dir(&args.out)?;
    match args.model.as_str() {
        "matchnet" => train_matchnet(&args, &bundle, &features),
        "wmf" => train_wmf(&args, &bundle),
        other => Err(usage(format!(
            "unknown model {other:?}; expected matchnet or wmf"
        ))),
    }
}

fn train_matchnet(
    args: &TrainArgs,
    bundle: &SplitBundle,
    features: &FeatureTable,
) -> Result<(), CliError> {
    let pairs = derive_pairs(
        bundle.train_playlists(),
        bundle.universe(),
        substream(args.seed, "pairs", "train"),
    )
    .map_err(usage)?;
    let (train_pairs, val_pairs) = validation_split(
        pairs,
        args.val_fraction,
        substream(args.seed, "validation-split", ""),
    )?;
    println!(
        "# playcont train model=matchnet seed={} pairs={} val_pairs={} epochs={} patience={} batch_size={} batch_norm={}",
        args.seed,
        train_pairs.len(),
        val_pairs.len(),
        args.epochs,
        args.patience,
        args.batch_size,
        !args.no_batch_norm,
    );

    let mut grid_log = String::from("hidden_dim,dropout,learning_rate,val_cost,epochs_run,selected\n");
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, MatchNet, matchnet::TrainReport, MatchNetConfig)> = None;
    let mut index = 0;
    for &hidden_dim in &args.hidden_dim {
        for &dropout in &args.dropout {
            for &lr in &args.lr {
                let config = MatchNetConfig {
                    hidden_dim,
                    g_hidden: args.g_hidden.unwrap_or(hidden_dim),
                    dropout_rate: dropout,
                    batch_norm: !args.no_batch_norm,
                    learning_rate: lr,
                    batch_size: args.batch_size,
                    max_epochs: args.epochs,
                    patience: args.patience,
                    ..MatchNetConfig::new(features.dim())
                };
                let tag = index.to_string();
                let mut net =
                    matchnet::init(&config, substream(args.seed, "init", &tag)).map_err(usage)?;
                let report = matchnet::train(
                    &mut net,
                    &train_pairs,
                    &val_pairs,
                    features,
                    substream(args.seed, "train", &tag),
                )
                .map_err(runtime)?;
                let val_cost = report.val_cost[report.best_epoch - 1];
                println!(
                    "grid[{index}] hidden_dim={hidden_dim} dropout={dropout} lr={lr} -> val_cost={val_cost} ({} epochs)",
                    report.epochs_run
                );
                rows.push((hidden_dim, dropout, lr, val_cost, report.epochs_run));
                if best.as_ref().is_none_or(|(_, b, ..)| val_cost < *b) {
                    best = Some((index, val_cost, net, report, config));
                }
                index += 1;
            }
        }
    }
    let (best_index, best_cost, net, report, config) = best.expect("grid is never empty");
    for (i, (h, d, l, v, e)) in rows.iter().enumerate() {
        let _ = writeln!(
            grid_log,
            "{h},{d},{l},{v},{e},{}",
            if i == best_index { 1 } else { 0 }
        );
    }

    let model_path = args.out.join("model.pmn");
    net.save(&model_path)
        .map_err(|e| runtime(format!("{}: {e}", model_path.display())))?;
    let report_json = serde_json::json!({
        "model": "matchnet",
        "seed": args.seed,
        "bundle_checksum": bundle.checksum(),
        "config": {
            "input_dim": config.input_dim,
            "hidden_dim": config.hidden_dim,
            "f_blocks": config.f_blocks,
            "g_hidden": config.g_hidden,
            "dropout_rate": config.dropout_rate,
            "batch_norm": config.batch_norm,
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "max_epochs": config.max_epochs,
            "patience": config.patience,
        },
        "report": report,
    });
    write_text(
        &args.out.join("train_report.json"),
        &format!("{}\n", serde_json::to_string_pretty(&report_json).expect("report serializes")),
    )?;
    write_text(
        &args.out.join("grid.csv"),
        &format!("# playcont train model=matchnet seed={}\n{grid_log}", args.seed),
    )?;
    println!(
        "selected grid[{best_index}]: val_cost={best_cost}, best_epoch={}, model {}",
        report.best_epoch,
        model_path.display()
    );
    Ok(())
}

fn train_wmf(args: &TrainArgs, bundle: &SplitBundle) -> Result<(), CliError> {
    if bundle.mode() == SplitMode::Strong {
        return Err(usage(
            "factorization embeds only training playlists and cannot be trained for a \
             strong-mode bundle; use --model matchnet",
        ));
    }
    // Hyperparameters are selected on a nested weak split of the training
    // playlists, scored by mean average precision; the winner is refit on
    // the full training side.
    let nested = split_weak(
        bundle.train_playlists(),
        bundle.universe(),
        bundle.meta().holdout_fraction,
        substream(args.seed, "nested-validation", ""),
    )
    .map_err(|e| usage(format!("nested validation split failed: {e}")))?;
    let nested_matrix = build_interaction_matrix(nested.train_playlists()).map_err(usage)?;
    println!(
        "# playcont train model=wmf seed={} sweeps={} nested_val_playlists={}",
        args.seed,
        args.sweeps,
        nested.query_playlists().len()
    );

    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, WmfConfig)> = None;
    let mut index = 0;
    for &factors in &args.factors {
        for &alpha in &args.alpha {
            for &lambda in &args.lambda {
                let config = WmfConfig {
                    factors,
                    alpha,
                    lambda,
                    sweeps: args.sweeps,
                    rng_seed: substream(args.seed, "fit", &index.to_string()),
                };
                let fit = als_fit(&nested_matrix, &config).map_err(runtime)?;
                let report = run_experiment(
                    &nested,
                    &Scorer::Factorization(&fit.model),
                    &[100],
                    &Buckets::default(),
                    100,
                )
                .map_err(runtime)?;
                let val_map = report.mean_average_precision;
                println!(
                    "grid[{index}] factors={factors} alpha={alpha} lambda={lambda} -> val_map={val_map}"
                );
                rows.push((factors, alpha, lambda, val_map));
                if best.as_ref().is_none_or(|(_, b, _)| val_map > *b) {
                    best = Some((index, val_map, config));
                }
                index += 1;
            }
        }
    }
    let (best_index, best_map, winner) = best.expect("grid is never empty");

    let mut grid_log = String::from("factors,alpha,lambda,val_map,selected\n");
    for (i, (k, a, l, m)) in rows.iter().enumerate() {
        let _ = writeln!(grid_log, "{k},{a},{l},{m},{}", if i == best_index { 1 } else { 0 });
    }

    let full_matrix = build_interaction_matrix(bundle.train_playlists()).map_err(usage)?;
    let final_config = WmfConfig {
        rng_seed: substream(args.seed, "fit", "final"),
        ..winner
    };
    let fit = als_fit(&full_matrix, &final_config).map_err(runtime)?;
    let model_path = args.out.join("model.pwmf");
    fit.model
        .save(&model_path)
        .map_err(|e| runtime(format!("{}: {e}", model_path.display())))?;
    let report_json = serde_json::json!({
        "model": "wmf",
        "seed": args.seed,
        "bundle_checksum": bundle.checksum(),
        "config": {
            "factors": final_config.factors,
            "alpha": final_config.alpha,
            "lambda": final_config.lambda,
            "sweeps": final_config.sweeps,
        },
        "validation_map": best_map,
        "objective_trace": fit.objective_trace,
    });
    write_text(
        &args.out.join("train_report.json"),
        &format!("{}\n", serde_json::to_string_pretty(&report_json).expect("report serializes")),
    )?;
    write_text(
        &args.out.join("grid.csv"),
        &format!("# playcont train model=wmf seed={}\n{grid_log}", args.seed),
    )?;
    println!(
        "selected grid[{best_index}]: val_map={best_map}, model {}",
        model_path.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let features = load_features(&args.features).map_err(usage)?;
    let bundle = load_bundle(&args.bundle, &features)?;
    let buckets: Buckets = args.buckets.parse().map_err(usage)?;

    // Owners for whichever model kind the file turns out to hold.
    let matchnet_model;
    let wmf_model;
    let scorer = if args.model == "random" {
        Scorer::Random { rng_seed: args.seed }
    } else {
        let path = Path::new(&args.model);
        let mut magic = [0u8; 4];
        {
            use std::io::Read;
            let mut f = std::fs::File::open(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            f.read_exact(&mut magic)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        match &magic {
            b"PMN1" => {
                matchnet_model = MatchNet::load(path).map_err(usage)?;
                Scorer::MatchNet(&matchnet_model, &features)
            }
            b"PWMF" => {
                wmf_model = WmfModel::load(path).map_err(usage)?;
                Scorer::Factorization(&wmf_model)
            }
            _ => {
                return Err(usage(format!(
                    "{}: not a model file (unknown magic bytes)",
                    path.display()
                )))
            }
        }
    };

    println!(
        "# playcont evaluate model={} seed={} cutoffs={:?} buckets={buckets} bucket_cutoff={}",
        scorer.name(),
        args.seed,
        args.cutoffs,
        args.bucket_cutoff
    );
    let report = run_experiment(&bundle, &scorer, &args.cutoffs, &buckets, args.bucket_cutoff)
        .map_err(usage)?;

    create_dir(&args.out)?;
    let jsonl = args.out.join("report.jsonl");
    write_report(&report, &jsonl, ReportFormat::JsonLines).map_err(runtime)?;
    write_report(&report, &args.out.join("report.csv"), ReportFormat::Csv).map_err(runtime)?;
    write_bucket_table(&report, &args.out.join("buckets.csv")).map_err(runtime)?;

    println!(
        "{} playlists, {} withheld songs, median rank {}, MAP {}",
        report.n_playlists,
        report.n_withheld_songs,
        report.median_rank,
        report.mean_average_precision
    );
    for (k, v) in &report.mean_recall_at {
        println!("recall@{k}: {v}");
    }
    println!("reports under {}", args.out.display());
    Ok(())
}
