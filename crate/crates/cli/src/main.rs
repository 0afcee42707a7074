//! Command-line front end: synthetic data generation, splitting, training,
//! evaluation, ablations, sweeps, and streaming replay.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use swim_core::dataio::{
    load_dataset, save_dataset, split_every_trial, split_leave_speaker_out, split_leave_subject_out,
    synth_generate, windows_for_slices, Dataset, SplitSpec, SynthConfig,
};
use swim_core::evalkit::{
    accuracy, channel_importance, combined_predictor, swcnn_predictor, swim_predictor,
    trial_range_experiment, window_sweep, write_channel_importance, write_eval_report,
    write_trial_range, write_window_sweep, EvalRecord,
};
use swim_core::ssm::SsmConfig;
use swim_core::swcnn::{SwCnnConfig, SwCnnParams};
use swim_core::swim::{stream_init, stream_push, SwimConfig, SwimParams};
use swim_core::trainer::{
    load_checkpoint, save_checkpoint, train_swcnn, train_swim, write_history, TrainConfig,
};
use swim_core::{Error, Result};

#[derive(Parser)]
#[command(name = "swim", about = "Auditory spatial attention decoding from EEG", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth
    Synth(SynthArgs),
    /// Compute a train/val/test split and write it as JSON
    Split(SplitArgs),
    /// Train a model and write a run directory
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test partition
    Eval(EvalArgs),
    /// Evaluate the averaged posteriors of a decoder and a CNN checkpoint
    Combine(CombineArgs),
    /// Channel ablation: accuracy drop per zeroed channel
    AblateChannels(EvalArgs),
    /// Accuracy as a function of decision-window length
    SweepWindow(SweepArgs),
    /// Accuracy as a function of the within-trial training range
    TrialRange(TrialRangeArgs),
    /// Stream a trial sample-by-sample and log the evolving decision
    StreamReplay(StreamArgs),
    /// Quick internal consistency checks
    Selftest,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the manifest and data files
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    subjects: usize,
    #[arg(long, default_value_t = 2)]
    trials: usize,
    #[arg(long, default_value_t = 60.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 0.0)]
    snr_db: f64,
    /// Probability that a one-second block carries no evidence
    #[arg(long, default_value_t = 0.0)]
    silent_block_prob: f64,
    /// Crossfade evidence to a second channel set over the trial (0 disables)
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    /// Per-subject random mixing strength
    #[arg(long, default_value_t = 0.0)]
    mixing: f64,
}

#[derive(Args)]
struct SplitArgs {
    /// Path to manifest.json
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    protocol: String,
    /// Held-out speaker (1|2) or subject id, for the leave-out protocols
    #[arg(long)]
    held_out: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Resolved training configuration; a JSON file provides the base and
/// command-line flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    model: String,
    /// Decision-window length in seconds for training windows
    window_s: f64,
    /// Training-window overlap ratio
    alpha: f64,
    /// Time-mask strength
    beta: f64,
    /// Subject-head loss weight
    gamma: f64,
    train: TrainConfig,
    cnn: SwCnnConfig,
    swim: SwimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "swcnn".into(),
            window_s: 1.0,
            alpha: 0.75,
            beta: 1.0,
            gamma: 0.05,
            train: TrainConfig::default(),
            cnn: SwCnnConfig::default(),
            swim: SwimConfig::default(),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Split JSON from `swim split`
    #[arg(long)]
    split: PathBuf,
    /// Run directory (created; receives config.json, history.csv, model.ckpt)
    #[arg(long)]
    out: PathBuf,
    /// Base configuration JSON; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    window_s: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate for the pretrained CNN group when fine-tuning
    #[arg(long)]
    cnn_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// CNN checkpoint to initialize the decoder's feature extractor
    #[arg(long)]
    init_cnn: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decision-window length in seconds (defaults to the training value)
    #[arg(long)]
    window_s: Option<f64>,
}

#[derive(Args)]
struct CombineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    swim_ckpt: PathBuf,
    #[arg(long)]
    cnn_ckpt: PathBuf,
    #[arg(long)]
    window_s: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated window lengths in seconds
    #[arg(long, default_value = "1,2,5,10")]
    lengths_s: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrialRangeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated training ranges as lo:hi trial fractions, e.g. 0:0.35,0:0.7
    #[arg(long, default_value = "0:0.35,0:0.7")]
    ranges: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Index of the trial to replay
    #[arg(long, default_value_t = 0)]
    trial: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if std::env::var("SWIM_DETERMINISTIC").as_deref() == Ok("1") {
        // all parallel work is per-channel and deterministic anyway; this
        // removes even scheduling variation
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            let code = match e {
                Error::Config(_) | Error::InvalidArgument { .. } => 2,
                Error::DataFormat { .. } | Error::Io { .. } | Error::Json { .. } | Error::Checkpoint(_) => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Combine(a) => cmd_combine(a),
        Command::AblateChannels(a) => cmd_ablate(a),
        Command::SweepWindow(a) => cmd_sweep(a),
        Command::TrialRange(a) => cmd_trial_range(a),
        Command::StreamReplay(a) => cmd_stream(a),
        Command::Selftest => cmd_selftest(),
    }
}

fn load_split(path: &Path) -> Result<SplitSpec> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Json { path: path.into(), source: e })
}

fn load_normalized(path: &Path) -> Result<Dataset> {
    let mut ds = load_dataset(path)?;
    ds.normalize()?;
    Ok(ds)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let defaults = SynthConfig::default();
    let informative = if a.channels > *defaults.informative_channels.iter().max().unwrap() {
        defaults.informative_channels.clone()
    } else {
        // small montages: use the leading channels instead
        (0..a.channels.min(4)).collect()
    };
    let cfg = SynthConfig {
        n_subjects: a.subjects,
        trials_per_subject: a.trials,
        duration_s: a.duration_s,
        n_channels: a.channels,
        snr_db: a.snr_db,
        informative_channels: informative,
        silent_block_prob: a.silent_block_prob,
        drift: a.drift,
        subject_mixing: a.mixing,
        ..defaults
    };
    let ds = synth_generate(&cfg, a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let manifest = save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} trials ({} channels, {} samples each) to {}",
        ds.trials.len(),
        ds.n_channels(),
        ds.trials.first().map(|t| t.n_samples).unwrap_or(0),
        manifest.display()
    );
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let spec = match a.protocol.as_str() {
        "every-trial" => split_every_trial(&ds),
        "leave-one-speaker-out" => {
            let held = a.held_out.ok_or_else(|| Error::Config("--held-out required".into()))?;
            split_leave_speaker_out(&ds, held, a.seed)?
        }
        "leave-one-subject-out" => {
            let held = a.held_out.ok_or_else(|| Error::Config("--held-out required".into()))?;
            split_leave_subject_out(&ds, held as usize, a.seed)?
        }
        other => return Err(Error::Config(format!("unknown protocol {}", other))),
    };
    let json = serde_json::to_string_pretty(&spec)
        .map_err(|e| Error::Json { path: a.out.clone(), source: e })?;
    std::fs::write(&a.out, json).map_err(|e| Error::io(&a.out, e))?;
    println!(
        "{}: {} train / {} val / {} test slices -> {}",
        spec.protocol,
        spec.train.len(),
        spec.val.len(),
        spec.test.len(),
        a.out.display()
    );
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&s).map_err(|e| Error::Json { path: p.clone(), source: e })?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = a.window_s {
        cfg.window_s = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.cnn_lr {
        cfg.train.cnn_lr = Some(v);
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    cfg.train.beta = cfg.beta;
    cfg.train.gamma = cfg.gamma;
    if cfg.model != "swcnn" && cfg.model != "swim" {
        return Err(Error::Config(format!("model must be swcnn or swim, got {}", cfg.model)));
    }
    Ok(cfg)
}

fn ckpt_value<T: Serialize>(model: &str, config: &T) -> serde_json::Value {
    serde_json::json!({ "model": model, "config": config })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(&a)?;
    let ds = load_normalized(&a.data)?;
    let split = load_split(&a.split)?;
    let t = (cfg.window_s * ds.fs as f64).round() as usize;
    let n_subjects = ds.trials.iter().map(|t| t.subject_id).max().map(|m| m + 1).unwrap_or(1);
    cfg.cnn.in_channels = ds.n_channels();
    cfg.cnn.n_subjects = n_subjects;
    cfg.cnn.gamma = cfg.gamma;
    cfg.swim.cnn.in_channels = ds.n_channels();
    cfg.swim.cnn.n_subjects = n_subjects;

    let train_w = windows_for_slices(&ds, &split.train, t, cfg.alpha)?;
    let val_w = windows_for_slices(&ds, &split.val, t, 0.0)?;
    println!("{} training windows, {} validation windows (T = {})", train_w.len(), val_w.len(), t);

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let resolved = serde_json::to_string_pretty(&cfg)
        .map_err(|e| Error::Json { path: a.out.join("config.json"), source: e })?;
    std::fs::write(a.out.join("config.json"), resolved)
        .map_err(|e| Error::io(a.out.join("config.json"), e))?;

    let report = if cfg.model == "swcnn" {
        let params = SwCnnParams::<f32>::init(&cfg.cnn, cfg.train.seed)?;
        let report = train_swcnn(&params, &train_w, &val_w, &cfg.train)?;
        save_checkpoint(&a.out.join("model.ckpt"), &ckpt_value("swcnn", &cfg.cnn), &report.best_tensors)?;
        report
    } else {
        let params = SwimParams::<f32>::init(&cfg.swim, cfg.train.seed)?;
        if let Some(cnn_ckpt) = &a.init_cnn {
            let (meta, tensors) = load_checkpoint(cnn_ckpt)?;
            let cnn_cfg: SwCnnConfig = serde_json::from_value(meta["config"].clone())
                .map_err(|e| Error::Json { path: cnn_ckpt.clone(), source: e })?;
            if cnn_cfg.in_channels != cfg.swim.cnn.in_channels {
                return Err(Error::Config(format!(
                    "pretrained CNN expects {} channels, dataset has {}",
                    cnn_cfg.in_channels,
                    cfg.swim.cnn.in_channels
                )));
            }
            cfg.swim.cnn = cnn_cfg.clone();
            let cnn = import_swcnn(&cnn_cfg, &tensors)?;
            let mut p = SwimParams::<f32>::init(&cfg.swim, cfg.train.seed)?;
            p.cnn = cnn;
            let report = train_swim(&p, &train_w, &val_w, &cfg.train)?;
            save_checkpoint(&a.out.join("model.ckpt"), &ckpt_value("swim", &cfg.swim), &report.best_tensors)?;
            write_history(&a.out.join("history.csv"), &report.history)?;
            println!(
                "best val acc {:.4} at epoch {} -> {}",
                report.best_val_acc,
                report.best_epoch,
                a.out.join("model.ckpt").display()
            );
            return Ok(());
        }
        let report = train_swim(&params, &train_w, &val_w, &cfg.train)?;
        save_checkpoint(&a.out.join("model.ckpt"), &ckpt_value("swim", &cfg.swim), &report.best_tensors)?;
        report
    };
    write_history(&a.out.join("history.csv"), &report.history)?;
    println!(
        "best val acc {:.4} at epoch {} -> {}",
        report.best_val_acc,
        report.best_epoch,
        a.out.join("model.ckpt").display()
    );
    Ok(())
}

fn tensor_lookup(
    tensors: &[(String, Vec<usize>, Vec<f32>)],
) -> impl FnMut(&str) -> Result<(Vec<usize>, Vec<f32>)> + '_ {
    move |name: &str| {
        tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.clone(), d.clone()))
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", name)))
    }
}

fn import_swcnn(cfg: &SwCnnConfig, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<SwCnnParams<f32>> {
    SwCnnParams::import_tensors(cfg, tensor_lookup(tensors))
}

enum Model {
    Cnn(SwCnnParams<f32>),
    Swim(SwimParams<f32>),
}

fn load_model(path: &Path) -> Result<Model> {
    let (meta, tensors) = load_checkpoint(path)?;
    match meta["model"].as_str() {
        Some("swcnn") => {
            let cfg: SwCnnConfig = serde_json::from_value(meta["config"].clone())
                .map_err(|e| Error::Json { path: path.into(), source: e })?;
            Ok(Model::Cnn(import_swcnn(&cfg, &tensors)?))
        }
        Some("swim") => {
            let cfg: SwimConfig = serde_json::from_value(meta["config"].clone())
                .map_err(|e| Error::Json { path: path.into(), source: e })?;
            Ok(Model::Swim(SwimParams::import_tensors(&cfg, tensor_lookup(&tensors))?))
        }
        other => Err(Error::Checkpoint(format!("unknown model kind {:?} in {}", other, path.display()))),
    }
}

fn test_windows(ds: &Dataset, split: &SplitSpec, t: usize) -> Result<Vec<swim_core::dataio::DecisionWindow>> {
    let w = windows_for_slices(ds, &split.test, t, 0.0)?;
    if w.is_empty() {
        return Err(Error::Config(format!(
            "a {} sample decision window does not fit any test slice; pass a smaller --window-s",
            t
        )));
    }
    Ok(w)
}

fn default_window(model: &Model, fs: u32, window_s: Option<f64>) -> usize {
    let s = window_s.unwrap_or(match model {
        Model::Cnn(_) => 1.0,
        Model::Swim(p) => (p.config.window_len as f64 / fs as f64).max(1.0) * 5.0,
    });
    (s * fs as f64).round() as usize
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ds = load_normalized(&a.data)?;
    let split = load_split(&a.split)?;
    let model = load_model(&a.checkpoint)?;
    let t = default_window(&model, ds.fs, a.window_s);
    let windows = test_windows(&ds, &split, t)?;
    let (name, acc) = match &model {
        Model::Cnn(p) => ("swcnn", accuracy(&mut swcnn_predictor(p), &windows)?),
        Model::Swim(p) => ("swim", accuracy(&mut swim_predictor(p), &windows)?),
    };
    println!("{} test accuracy: {:.4} ({} windows)", name, acc, windows.len());
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_eval_report(
            &out.join("eval_report.csv"),
            &[EvalRecord { protocol: split.protocol.to_string(), model: name.into(), seed: 0, accuracy: acc }],
        )?;
    }
    Ok(())
}

fn cmd_combine(a: CombineArgs) -> Result<()> {
    let ds = load_normalized(&a.data)?;
    let split = load_split(&a.split)?;
    let Model::Swim(swim) = load_model(&a.swim_ckpt)? else {
        return Err(Error::Config("--swim-ckpt must hold a decoder checkpoint".into()));
    };
    let Model::Cnn(cnn) = load_model(&a.cnn_ckpt)? else {
        return Err(Error::Config("--cnn-ckpt must hold a CNN checkpoint".into()));
    };
    let t = a.window_s.map(|s| (s * ds.fs as f64).round() as usize).unwrap_or(5 * ds.fs as usize);
    let windows = test_windows(&ds, &split, t)?;
    let acc_swim = accuracy(&mut swim_predictor(&swim), &windows)?;
    let acc_cnn = accuracy(&mut swcnn_predictor(&cnn), &windows)?;
    let acc_comb = accuracy(&mut combined_predictor(&swim, &cnn), &windows)?;
    println!("swim {:.4}  swcnn {:.4}  combined {:.4}", acc_swim, acc_cnn, acc_comb);
    Ok(())
}

fn cmd_ablate(a: EvalArgs) -> Result<()> {
    let ds = load_normalized(&a.data)?;
    let split = load_split(&a.split)?;
    let model = load_model(&a.checkpoint)?;
    let t = default_window(&model, ds.fs, a.window_s);
    let windows = test_windows(&ds, &split, t)?;
    let rows = match &model {
        Model::Cnn(p) => channel_importance(&mut swcnn_predictor(p), &windows, &ds.channel_names)?,
        Model::Swim(p) => channel_importance(&mut swim_predictor(p), &windows, &ds.channel_names)?,
    };
    let out = a.out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_channel_importance(&out.join("channel_importance.csv"), &rows)?;
    let mut top: Vec<_> = rows.iter().collect();
    top.sort_by(|x, y| y.delta_acc.partial_cmp(&x.delta_acc).unwrap());
    for r in top.iter().take(5) {
        println!("{:>4} {:<6} delta {:+.4} importance {:.3}", r.channel, r.name, r.delta_acc, r.importance);
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let ds = load_normalized(&a.data)?;
    let split = load_split(&a.split)?;
    let lengths: Vec<f64> = a
        .lengths_s
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad length {}", s))))
        .collect::<Result<_>>()?;
    let model = load_model(&a.checkpoint)?;
    let rows = match &model {
        Model::Cnn(p) => {
            let mut pr = swcnn_predictor(p);
            window_sweep(&ds, &split.test, &lengths, &mut [("swcnn", &mut pr)])?
        }
        Model::Swim(p) => {
            let mut pr = swim_predictor(p);
            window_sweep(&ds, &split.test, &lengths, &mut [("swim", &mut pr)])?
        }
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_window_sweep(&a.out.join("window_sweep.csv"), &rows)?;
    for r in &rows {
        println!("{:>6.2} s  {}  {:.4}", r.length_s, r.model, r.accuracy);
    }
    Ok(())
}

fn cmd_trial_range(a: TrialRangeArgs) -> Result<()> {
    let ds = load_normalized(&a.data)?;
    let ranges: Vec<(f64, f64)> = a
        .ranges
        .split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad range {} (want lo:hi)", pair)))?;
            Ok((
                lo.trim().parse().map_err(|_| Error::Config(format!("bad range {}", pair)))?,
                hi.trim().parse().map_err(|_| Error::Config(format!("bad range {}", pair)))?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut cnn_cfg = SwCnnConfig {
        in_channels: ds.n_channels(),
        n_subjects: ds.trials.iter().map(|t| t.subject_id).max().map(|m| m + 1).unwrap_or(1),
        ..Default::default()
    };
    let mut tcfg = TrainConfig::default();
    if let Some(p) = &a.config {
        let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let rc: RunConfig = serde_json::from_str(&s).map_err(|e| Error::Json { path: p.clone(), source: e })?;
        cnn_cfg = SwCnnConfig { in_channels: cnn_cfg.in_channels, n_subjects: cnn_cfg.n_subjects, ..rc.cnn };
        tcfg = rc.train;
    }
    if let Some(e) = a.epochs {
        tcfg.epochs = e;
    }
    let t = ds.fs as usize; // 1-second windows
    let rows = trial_range_experiment(&ds, &ranges, t, 0.75, |train, val, test| {
        let params = SwCnnParams::<f32>::init(&cnn_cfg, tcfg.seed)?;
        train_swcnn(&params, train, val, &tcfg)?;
        let acc = accuracy(&mut swcnn_predictor(&params), test);
        acc
    })?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_trial_range(&a.out.join("trial_range.csv"), &rows)?;
    for r in &rows {
        println!("train {:.2}..{:.2} -> test acc {:.4}", r.lo_frac, r.hi_frac, r.accuracy);
    }
    Ok(())
}

fn cmd_stream(a: StreamArgs) -> Result<()> {
    let ds = load_normalized(&a.data)?;
    let Model::Swim(params) = load_model(&a.checkpoint)? else {
        return Err(Error::Config("stream-replay needs a decoder checkpoint".into()));
    };
    let trial = ds
        .trials
        .get(a.trial)
        .ok_or_else(|| Error::arg("stream-replay", format!("trial {} of {}", a.trial, ds.trials.len())))?;
    let hop = params.config.hop;
    let c = trial.n_channels;
    let mut state = stream_init(&params, c)?;
    let mut csv = String::from("step_index,time_s,posterior_left,posterior_right,decision\n");
    let mut step_index = 0usize;
    let mut pos = 0usize;
    while pos + hop <= trial.n_samples {
        let mut chunk = vec![0.0f32; c * hop];
        for ch in 0..c {
            chunk[ch * hop..(ch + 1) * hop].copy_from_slice(&trial.channel(ch)[pos..pos + hop]);
        }
        pos += hop;
        if let Some(out) = stream_push(&params, &mut state, &chunk)? {
            let time_s = pos as f64 / trial.fs as f64;
            csv.push_str(&format!(
                "{},{:.3},{:.4},{:.4},{}\n",
                step_index,
                time_s,
                out.posterior[0],
                out.posterior[1],
                if out.decision() == 0 { "left" } else { "right" }
            ));
            step_index += 1;
        }
    }
    std::fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))?;
    println!(
        "replayed trial {} (attended {}): {} decisions -> {}",
        a.trial,
        trial.attended_locus,
        step_index,
        a.out.display()
    );
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    use swim_core::ssm::{selective_scan, Discretization, ScanMode};
    use swim_core::tensor::{Graph, Tensor};

    // chunked scan against the sequential recurrence
    let g = Graph::<f32>::inference();
    let (n, d, s) = (64usize, 8usize, 4usize);
    let mk = |k: usize, lo: f32, hi: f32| {
        let data: Vec<f32> = (0..k).map(|i| lo + (hi - lo) * ((i * 37 % 101) as f32 / 101.0)).collect();
        data
    };
    let u = Tensor::from_data(&[n, d], mk(n * d, -1.0, 1.0))?;
    let delta = Tensor::from_data(&[n, d], mk(n * d, 0.01, 0.2))?;
    let aa = Tensor::from_data(&[d, s], mk(d * s, -4.0, -0.1))?;
    let b = Tensor::from_data(&[n, s], mk(n * s, -1.0, 1.0))?;
    let c = Tensor::from_data(&[n, s], mk(n * s, -1.0, 1.0))?;
    let dsk = Tensor::from_data(&[d], mk(d, -1.0, 1.0))?;
    let seq = selective_scan(&g, &u, &delta, &aa, &b, &c, &dsk, Discretization::ZohEuler, ScanMode::Sequential)?;
    let par = selective_scan(&g, &u, &delta, &aa, &b, &c, &dsk, Discretization::ZohEuler, ScanMode::Chunked(16))?;
    let max = seq
        .to_vec()
        .iter()
        .zip(par.to_vec())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    if max > 1e-5 {
        return Err(Error::NonFinite(format!("scan self-check deviation {}", max)));
    }
    println!("scan equivalence ok (max dev {:.2e})", max);

    // tiny forward through the full decoder
    let cfg = SwimConfig {
        cnn: SwCnnConfig { in_channels: 4, n_subjects: 2, ..Default::default() },
        ssm: SsmConfig { n_layers: 2, ..Default::default() },
        ..Default::default()
    };
    let params = SwimParams::<f32>::init(&cfg, 0)?;
    let x: Vec<f32> = mk(4 * 256, -1.0, 1.0);
    let logits = params.forward(&Graph::inference(), &x, 4, 256, swim_core::tensor::Mode::Train)?;
    if !logits.all_finite() {
        return Err(Error::NonFinite("decoder logits".into()));
    }
    println!("decoder forward ok ({} logits)", logits.numel());
    println!("selftest passed");
    Ok(())
}
