//! Command-line entry point: `simulate`, `features`, `train`, `eval`,
//! `localize`, `tramp`, `bench`, and `grid` subcommands over one binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{
    benchmark, build_recurrent_cell, compute_metrics, host_description,
    recurrent_reference_forward, AccuracyMode, BenchSpec, SequenceResult, TimingReport,
};
use crate::features::{extract_features, frame_sequences, read_sldf, write_sldf, StftSpec};
use crate::grid::{DoaGrid, GridSpec};
use crate::model::{build_model, infer_sequence, load_model, save_model, Model, ModelConfig};
use crate::simulate::{build_dataset, read_manifest, DatasetConfig};
use crate::tramp::{tramp_localize, TrampConfig};
use crate::train::{load_dataset, train_loop, TrainConfig};
use crate::wav::{read_foa_wav, DEFAULT_SAMPLE_RATE};

/// Multi-speaker sound source localization toolkit.
#[derive(Debug, Parser)]
#[command(name = "ambiloc", version, about, disable_help_subcommand = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master random seed for anything stochastic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Bound on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity: error, warn, info, debug, or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic FOA dataset with ground-truth directions.
    Simulate(SimulateArgs),
    /// Convert a FOA WAV file into intensity-feature sequences.
    Features(FeaturesArgs),
    /// Train a localization model on a dataset manifest.
    Train(TrainArgs),
    /// Score a trained model against a labelled manifest.
    Eval(EvalArgs),
    /// Localize sources in one FOA recording with a trained model.
    Localize(LocalizeArgs),
    /// Localize sources with the DNN-free histogram baseline.
    Tramp(TrampArgs),
    /// Measure inference latency across worker counts.
    Bench(BenchArgs),
    /// Inspect the spherical classification grid.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of sequences to render.
    #[arg(long)]
    n: usize,
    /// Simultaneous speakers per sequence: "1", "2", "3", or a range like "1-3".
    #[arg(long)]
    sources: String,
    /// Output directory for WAV + feature + manifest files.
    #[arg(long)]
    out: PathBuf,
    /// Directory of 16 kHz mono speech WAVs (synthetic speech when omitted).
    #[arg(long)]
    speech_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// Input 4-channel FOA WAV file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output .sldf path; sequences are numbered from this stem.
    #[arg(long)]
    out: PathBuf,
    /// Frames per stored sequence.
    #[arg(long, default_value_t = crate::features::DEFAULT_SEQUENCE_FRAMES)]
    frames: usize,
    /// STFT size in samples.
    #[arg(long, default_value_t = 1024)]
    fft: usize,
    /// STFT hop in samples.
    #[arg(long, default_value_t = 512)]
    hop: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Validation manifest; the training manifest doubles as validation when
    /// omitted.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Where to store the trained checkpoint (.sldc).
    #[arg(long)]
    model_out: PathBuf,
    /// Architecture name, e.g. MH-1enc-1H or CMH-3enc-10H.
    #[arg(long, default_value = "MH-1enc-1H")]
    arch: String,
    /// Grid resolution in degrees.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Convolution channels (architecture default when omitted).
    #[arg(long)]
    channels: Option<usize>,
    /// Comma-separated per-block frequency pooling factors.
    #[arg(long, value_delimiter = ',')]
    pools: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Early-stopping patience in epochs.
    #[arg(long, default_value_t = 20)]
    patience: usize,
    /// Learning-rate halving patience in epochs.
    #[arg(long, default_value_t = 10)]
    lr_patience: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Trained checkpoint (.sldc).
    #[arg(long)]
    model: PathBuf,
    /// Labelled manifest to score.
    #[arg(long)]
    manifest: PathBuf,
    /// Accuracy tolerances in degrees.
    #[arg(long, value_delimiter = ',', default_value = "10,15")]
    tolerances: Vec<f64>,
    /// Grid resolution in degrees; must reproduce the model's class count.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// "all-sources" scores a sequence as correct only when every source is
    /// within tolerance; "per-source" counts sources individually.
    #[arg(long, default_value = "all-sources")]
    mode: String,
    /// Also write the metrics as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    /// Trained checkpoint (.sldc).
    #[arg(long)]
    model: PathBuf,
    /// Input 4-channel FOA WAV file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Number of sources to report.
    #[arg(long)]
    sources: usize,
    /// Grid resolution in degrees; must reproduce the model's class count.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct TrampArgs {
    /// Input 4-channel FOA WAV file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Number of sources to report.
    #[arg(long)]
    sources: usize,
    /// Grid resolution in degrees.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Trained checkpoint to time; a freshly initialized `--arch` model is
    /// timed when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Architecture to build when no checkpoint is given.
    #[arg(long, default_value = "MH-1enc-1H")]
    arch: String,
    /// Worker counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Frames per timed sequence.
    #[arg(long, default_value_t = 25)]
    frames: usize,
    /// Also write the timings as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Grid resolution in degrees.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Also print one line per elevation ring.
    #[arg(long)]
    rings: bool,
}

/// Parses argv, runs the requested subcommand, and maps the outcome to an
/// exit code: 0 on success, 1 on usage errors, 2 on runtime or data errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli.log_level);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("global thread pool already configured: {e}");
        }
    }
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            2
        }
    }
}

fn init_logging(level: &str) {
    let filter = match level.to_ascii_lowercase().as_str() {
        "error" => log::LevelFilter::Error,
        "warn" => log::LevelFilter::Warn,
        "debug" => log::LevelFilter::Debug,
        "trace" => log::LevelFilter::Trace,
        _ => log::LevelFilter::Info,
    };
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .try_init();
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    log::info!(
        "resolved config: seed={} threads={:?} {:?}",
        cli.seed,
        cli.threads,
        cli.command
    );
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, cli.seed, out),
        Command::Features(a) => cmd_features(a, out),
        Command::Train(a) => cmd_train(a, cli.seed, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Localize(a) => cmd_localize(a, out),
        Command::Tramp(a) => cmd_tramp(a, out),
        Command::Bench(a) => cmd_bench(a, cli.seed, out),
        Command::Grid(a) => cmd_grid(a, out),
    }
}

fn parse_source_range(text: &str) -> Result<(usize, usize)> {
    let parse_one = |s: &str| -> Result<usize> {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArg(format!("invalid source count '{s}'")))?;
        if (1..=3).contains(&n) {
            Ok(n)
        } else {
            Err(Error::InvalidArg(format!(
                "source count must be 1, 2, or 3, got {n}"
            )))
        }
    };
    if let Some((lo, hi)) = text.split_once('-') {
        let (lo, hi) = (parse_one(lo)?, parse_one(hi)?);
        if lo > hi {
            return Err(Error::InvalidArg(format!("empty source range '{text}'")));
        }
        Ok((lo, hi))
    } else {
        let n = parse_one(text)?;
        Ok((n, n))
    }
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let (min_sources, max_sources) = parse_source_range(&a.sources)?;
    let mut cfg = DatasetConfig::new(a.n, a.out.clone(), seed);
    cfg.min_sources = min_sources;
    cfg.max_sources = max_sources;
    cfg.speech_dir = a.speech_dir.clone();
    let records = build_dataset(&cfg)?;
    writeln!(
        out,
        "wrote {} sequences to {} (manifest.jsonl alongside)",
        records.len(),
        a.out.display()
    )?;
    Ok(())
}

fn cmd_features(a: &FeaturesArgs, out: &mut dyn Write) -> Result<()> {
    let spec = StftSpec {
        fft_size: a.fft,
        hop: a.hop,
    };
    let signal = read_foa_wav(&a.input)?;
    let features = extract_features(&signal, &spec)?;
    let sequences = frame_sequences(&features, a.frames)?;
    if sequences.is_empty() {
        return Err(Error::Audio(format!(
            "{} yields {} frames, fewer than the {} frames of one sequence",
            a.input.display(),
            features.shape()[0],
            a.frames
        )));
    }
    let stem = a
        .out
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArg(format!("bad output path {}", a.out.display())))?
        .to_string();
    let dir = a.out.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut index = String::new();
    for (i, seq) in sequences.iter().enumerate() {
        let name = format!("{stem}_{i:03}.sldf");
        write_sldf(&dir.join(&name), seq)?;
        index.push_str(&format!(
            "{{\"features_path\":\"{name}\",\"sequence\":{i},\"frames\":{}}}\n",
            seq.shape()[0]
        ));
    }
    let index_path = dir.join(format!("{stem}_index.jsonl"));
    fs::write(&index_path, index)?;
    writeln!(
        out,
        "wrote {} sequence(s) of {} frames to {} (index {})",
        sequences.len(),
        a.frames,
        dir.display(),
        index_path.display()
    )?;
    Ok(())
}

fn grid_for(alpha: f64) -> Result<DoaGrid> {
    DoaGrid::build(GridSpec { alpha_deg: alpha })
}

fn grid_matching_model(alpha: f64, model: &Model) -> Result<DoaGrid> {
    let grid = grid_for(alpha)?;
    if grid.len() != model.config.n_classes {
        return Err(Error::config(format!(
            "--alpha {alpha} builds {} classes but the checkpoint has {}; \
             pass the grid resolution the model was trained with",
            grid.len(),
            model.config.n_classes
        )));
    }
    Ok(grid)
}

/// STFT settings that reproduce the model's expected frequency-bin count.
fn stft_for_model(model: &Model) -> StftSpec {
    let fft_size = (model.config.freq_bins - 1) * 2;
    StftSpec {
        fft_size,
        hop: fft_size / 2,
    }
}

fn cmd_train(a: &TrainArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let grid = grid_for(a.alpha)?;
    let train_set = load_dataset(&a.manifest, &grid)?;
    let val_set = match &a.val_manifest {
        Some(p) => load_dataset(p, &grid)?,
        None => {
            log::warn!("no --val-manifest given; validating on the training set");
            train_set.clone()
        }
    };
    let shape = train_set.items[0].features.shape().to_vec();
    let mut config = ModelConfig::from_name(&a.arch)?;
    config.freq_bins = shape[1];
    config.n_frames = shape[0];
    config.n_classes = grid.len();
    if let Some(ch) = a.channels {
        config.conv_channels = ch;
    }
    if let Some(pools) = &a.pools {
        config.pools = pools.clone();
    }
    config.validate()?;
    let model = build_model(&config, seed)?;
    writeln!(
        out,
        "training {} ({} parameters) on {} sequences, validating on {}",
        config.name(),
        model.count_params(),
        train_set.len(),
        val_set.len()
    )?;
    let tc = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        early_stop_patience: a.patience,
        lr_patience: a.lr_patience,
        lr_factor: 0.5,
        seed,
    };
    let (trained, history) = train_loop(model, &train_set, &val_set, &grid, &tc)?;
    save_model(&a.model_out, &trained)?;
    let csv_path = a.model_out.with_extension("history.csv");
    let mut csv = String::from("epoch,train_loss,val_accuracy,learning_rate\n");
    for e in &history.epochs {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_accuracy, e.learning_rate
        ));
    }
    fs::write(&csv_path, csv)?;
    writeln!(
        out,
        "best validation accuracy {:.1}% at epoch {} of {}; checkpoint {} ; history {}",
        100.0 * history.best_val_accuracy,
        history.best_epoch,
        history.epochs.len(),
        a.model_out.display(),
        csv_path.display()
    )?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let grid = grid_matching_model(a.alpha, &model)?;
    let mode = match a.mode.as_str() {
        "all-sources" => AccuracyMode::AllSources,
        "per-source" => AccuracyMode::PerSource,
        other => {
            return Err(Error::InvalidArg(format!(
                "unknown accuracy mode '{other}' (expected all-sources or per-source)"
            )))
        }
    };
    let records = read_manifest(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut results = Vec::with_capacity(records.len());
    for rec in &records {
        let features = read_sldf(&base.join(&rec.features_path))?;
        let est = infer_sequence(&model, &features, rec.doas.len(), &grid)?;
        results.push(SequenceResult::from_directions(&est, &rec.doas));
    }
    let report = compute_metrics(&results, &a.tolerances, mode)?;
    writeln!(out, "sequences: {}", report.n_sequences)?;
    for (tol, acc) in &report.accuracy {
        writeln!(out, "acc < {tol:>5.1} deg : {:6.2}%", 100.0 * acc)?;
    }
    writeln!(out, "mean error   : {:6.2} deg", report.mean_error_deg)?;
    writeln!(out, "median error : {:6.2} deg", report.median_error_deg)?;
    writeln!(out, "std error    : {:6.2} deg", report.std_error_deg)?;
    if let Some(csv_path) = &a.out_csv {
        let mut header = String::from("n_sequences");
        let mut row = format!("{}", report.n_sequences);
        for (tol, acc) in &report.accuracy {
            header.push_str(&format!(",acc_{tol}"));
            row.push_str(&format!(",{acc}"));
        }
        header.push_str(",mean_deg,median_deg,std_deg\n");
        row.push_str(&format!(
            ",{},{},{}\n",
            report.mean_error_deg, report.median_error_deg, report.std_error_deg
        ));
        fs::write(csv_path, header + &row)?;
        writeln!(out, "metrics written to {}", csv_path.display())?;
    }
    Ok(())
}

fn cmd_localize(a: &LocalizeArgs, out: &mut dyn Write) -> Result<()> {
    if a.sources == 0 {
        return Err(Error::InvalidArg("--sources must be at least 1".into()));
    }
    let model = load_model(&a.model)?;
    let grid = grid_matching_model(a.alpha, &model)?;
    let signal = read_foa_wav(&a.input)?;
    let features = extract_features(&signal, &stft_for_model(&model))?;
    let directions = infer_sequence(&model, &features, a.sources, &grid)?;
    for d in directions {
        writeln!(out, "({:.2}, {:.2})", d.az_deg, d.el_deg)?;
    }
    Ok(())
}

fn cmd_tramp(a: &TrampArgs, out: &mut dyn Write) -> Result<()> {
    if a.sources == 0 {
        return Err(Error::InvalidArg("--sources must be at least 1".into()));
    }
    let grid = grid_for(a.alpha)?;
    let signal = read_foa_wav(&a.input)?;
    let features = extract_features(&signal, &StftSpec::default())?;
    let directions = tramp_localize(&features, &grid, &TrampConfig::default(), a.sources)?;
    for d in directions {
        writeln!(out, "({:.2}, {:.2})", d.az_deg, d.el_deg)?;
    }
    Ok(())
}

fn write_timing_table(
    out: &mut dyn Write,
    label: &str,
    reports: &[TimingReport],
    sequence_secs: f64,
) -> Result<()> {
    writeln!(out, "{label}:")?;
    writeln!(
        out,
        "{:>8} {:>12} {:>10} {:>10} {:>12}",
        "workers", "median_ms", "p25_ms", "p75_ms", "realtime_%"
    )?;
    for r in reports {
        writeln!(
            out,
            "{:>8} {:>12.3} {:>10.3} {:>10.3} {:>12.2}",
            r.workers,
            r.median_ms,
            r.p25_ms,
            r.p75_ms,
            r.realtime_percent(sequence_secs)
        )?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let model = match &a.model {
        Some(path) => load_model(path)?,
        None => {
            let mut config = ModelConfig::from_name(&a.arch)?;
            config.n_frames = a.frames;
            build_model(&config, seed)?
        }
    };
    let spec = BenchSpec {
        worker_counts: a.workers.clone(),
        warmup_iters: a.warmup,
        measured_iters: a.iters,
    };
    let stft = stft_for_model(&model);
    let sequence_secs = (a.frames * stft.hop) as f64 / f64::from(DEFAULT_SAMPLE_RATE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = crate::nn::Tensor::zeros(&[a.frames, model.config.freq_bins, 6]);
    for v in input.data_mut() {
        *v = rng.random_range(-0.8..0.8);
    }
    model.forward(&input)?; // validate shapes before the timed closure
    writeln!(out, "host: {}", host_description())?;
    writeln!(
        out,
        "model: {} ({} parameters), {} frames ({:.2} s of audio), {} iterations",
        model.config.name(),
        model.count_params(),
        a.frames,
        sequence_secs,
        a.iters
    )?;
    let encoder_reports = benchmark(
        || {
            model
                .forward(&input)
                .expect("validated before timing");
        },
        &spec,
    )?;
    write_timing_table(out, "encoder-stack inference", &encoder_reports, sequence_secs)?;

    let g = model.embed_dim();
    let cell = build_recurrent_cell(g, g, seed);
    let mut rec_input = crate::nn::Tensor::zeros(&[a.frames, g]);
    for v in rec_input.data_mut() {
        *v = rng.random_range(-0.8..0.8);
    }
    recurrent_reference_forward(&rec_input, &cell)?;
    let recurrent_reports = benchmark(
        || {
            recurrent_reference_forward(&rec_input, &cell).expect("validated before timing");
        },
        &spec,
    )?;
    write_timing_table(
        out,
        "recurrent reference (frame-sequential)",
        &recurrent_reports,
        sequence_secs,
    )?;

    if let Some(csv_path) = &a.out_csv {
        let mut csv =
            String::from("component,workers,median_ms,p25_ms,p75_ms,iqr_ms,realtime_percent\n");
        for (label, reports) in [
            ("encoder", &encoder_reports),
            ("recurrent", &recurrent_reports),
        ] {
            for r in reports {
                csv.push_str(&format!(
                    "{label},{},{},{},{},{},{}\n",
                    r.workers,
                    r.median_ms,
                    r.p25_ms,
                    r.p75_ms,
                    r.iqr_ms(),
                    r.realtime_percent(sequence_secs)
                ));
            }
        }
        fs::write(csv_path, csv)?;
        writeln!(out, "timings written to {}", csv_path.display())?;
    }
    Ok(())
}

fn cmd_grid(a: &GridArgs, out: &mut dyn Write) -> Result<()> {
    let grid = grid_for(a.alpha)?;
    writeln!(out, "C = {}", grid.len())?;
    if a.rings {
        writeln!(out, "{:>10} {:>8} {:>12}", "elev_deg", "classes", "first_index")?;
        for &(el, start, count) in grid.rings() {
            writeln!(out, "{el:>10.2} {count:>8} {start:>12}")?;
        }
    }
    Ok(())
}
