use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polartrack::config::RunConfig;
use polartrack::detections::{group_sequences, parse_detections, parse_tracks, write_detections, write_tracks, Detection, Sequence};
use polartrack::evaluation::{amota, write_report_csv};
use polartrack::experiment::{ablate, fit, model_grad_check, split_validation, synthetic_data, Axis, EvalSet};
use polartrack::model::DirectionMask;
use polartrack::synth::generate_dataset;
use polartrack::tracker::{track_all, Pipeline};
use polartrack::training::{write_log_csv, Checkpoint};
use polartrack::Error;

#[derive(Parser)]
#[command(name = "polartrack", version, about = "Graph-based 3D multi-object tracking")]
struct Cli {
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; falls back to the config file, then POLARTRACK_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset: gt.jsonl, detections.jsonl, config.toml.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sequences: Option<usize>,
    },
    /// Train a model on ground-truth tracks.
    Train {
        /// Ground-truth detections (JSONL with gt_track_id).
        #[arg(long)]
        data: PathBuf,
        /// Detections of the same sequences: thresholds are tuned on the
        /// held-out split, and class velocities are measured on the training
        /// split's true boxes.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Epoch log CSV (default: <out>.log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Track whole sequences at once.
    TrackOffline(TrackArgs),
    /// Track frame by frame on the evolving graph.
    TrackOnline(TrackArgs),
    /// Score tracks against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Report CSV (default: stdout).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare analytic and numeric gradients on a small labelled graph.
    GradCheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Parameters to probe; 0 probes all.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Retrain and evaluate along one axis on synthetic data.
    Ablate {
        /// feature_mode, gate_scale or connectivity.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        train_sequences: usize,
        #[arg(long, default_value_t = 20)]
        eval_sequences: usize,
    },
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Output tracks (JSONL).
    #[arg(long)]
    out: PathBuf,
}

fn read_detections(path: &Path) -> polartrack::Result<Vec<Detection>> {
    parse_detections(BufReader::new(open(path)?))
}

fn open(path: &Path) -> polartrack::Result<File> {
    File::open(path).map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> polartrack::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Record the resolved configuration next to an output.
fn write_resolved(cfg: &RunConfig, seed: u64, path: &Path) -> polartrack::Result<()> {
    let resolved = RunConfig {
        seed: Some(seed),
        ..cfg.clone()
    };
    let text = resolved.to_toml()?;
    create(path)?.write_all(text.as_bytes())?;
    eprintln!("seed {seed}; resolved config written to {}", path.display());
    Ok(())
}

fn track(cfg: &RunConfig, explicit_cfg: bool, args: &TrackArgs, online: bool) -> polartrack::Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    if explicit_cfg && cfg.feature_mode != ckpt.feature_mode {
        return Err(Error::Config(format!(
            "config feature_mode {} but checkpoint was trained with {}",
            cfg.feature_mode.name(),
            ckpt.feature_mode.name()
        )));
    }
    let expected = if online { DirectionMask::Online } else { DirectionMask::Offline };
    if ckpt.mask != expected {
        eprintln!("warning: checkpoint was trained with the {:?} mask", ckpt.mask);
    }
    let mut classes = match &ckpt.classes {
        Some(c) => c.clone(),
        None => cfg.class_config()?,
    };
    cfg.apply_vmax_overrides(&mut classes)?;
    let thresholds = match cfg.thresholds()? {
        Some(t) => t,
        None => ckpt.thresholds.clone().unwrap_or_default(),
    };
    let run = RunConfig {
        feature_mode: ckpt.feature_mode,
        ..cfg.clone()
    };
    let model = ckpt.model()?;
    let seqs = group_sequences(&read_detections(&args.detections)?);
    let pipeline = if online { Pipeline::Online(cfg.online) } else { Pipeline::Offline };
    let out = track_all(&model, &seqs, &classes, &run.graph_config(), &thresholds, pipeline)?;
    let mut w = create(&args.out)?;
    write_tracks(&mut w, &out)?;
    w.flush()?;
    let n_tracks: std::collections::HashSet<(&str, u64)> = out.iter().map(|d| (d.seq_id.as_str(), d.track_id)).collect();
    eprintln!("{} sequences, {} detections, {} tracks", seqs.len(), out.len(), n_tracks.len());
    Ok(())
}

fn run(cli: Cli) -> polartrack::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cfg.resolve_seed(cli.seed)?;
    match cli.cmd {
        Cmd::SynthGen { out, sequences } => {
            if let Some(n) = sequences {
                cfg.synth.sequences = n;
            }
            let s = &cfg.synth;
            let (gt, det) = generate_dataset(&s.prefix, s.sequences, &s.scene, &s.noise, seed)?;
            std::fs::create_dir_all(&out)?;
            let mut w = create(&out.join("gt.jsonl"))?;
            write_detections(&mut w, &gt)?;
            w.flush()?;
            let mut w = create(&out.join("detections.jsonl"))?;
            write_detections(&mut w, &det)?;
            w.flush()?;
            write_resolved(&cfg, seed, &out.join("config.toml"))?;
            eprintln!("{} sequences: {} gt boxes, {} detections", s.sequences, gt.len(), det.len());
        }
        Cmd::Train {
            data,
            detections,
            out,
            log,
            epochs,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let gt = read_detections(&data)?;
            let (train_seqs, held) = split_validation(group_sequences(&gt), cfg.train.val_fraction, seed);
            let dets = detections.as_deref().map(read_detections).transpose()?;
            let ids = |seqs: &[Sequence]| seqs.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
            let validation = match &dets {
                Some(d) if !held.is_empty() => Some(EvalSet::new(d, gt.clone()).restrict(&ids(&held))),
                _ => None,
            };
            let train_dets = match &dets {
                Some(d) => EvalSet::new(d, Vec::new()).restrict(&ids(&train_seqs)).detections,
                None => Vec::new(),
            };
            write_resolved(&cfg, seed, &with_suffix(&out, ".config.toml"))?;
            let fitted = fit(&cfg, &train_seqs, &train_dets, validation.as_ref(), seed, |l| {
                eprintln!(
                    "epoch {:>3} loss {:.5} precision {:.4} recall {:.4}",
                    l.epoch, l.loss, l.precision, l.recall
                )
            })?;
            Checkpoint::new(&fitted.model, cfg.feature_mode, cfg.train.mask, Some(fitted.optimizer))
                .with_decoding(fitted.classes, fitted.thresholds.clone())
                .save(&out)?;
            let log = log.unwrap_or_else(|| with_suffix(&out, ".log.csv"));
            let mut w = create(&log)?;
            write_log_csv(&mut w, &fitted.logs)?;
            w.flush()?;
            eprintln!("thresholds {:?}; checkpoint {}", fitted.thresholds, out.display());
        }
        Cmd::TrackOffline(args) => track(&cfg, cli.config.is_some(), &args, false)?,
        Cmd::TrackOnline(args) => track(&cfg, cli.config.is_some(), &args, true)?,
        Cmd::Eval { gt, pred, report } => {
            let gts = read_detections(&gt)?;
            let preds = parse_tracks(BufReader::new(open(&pred)?))?;
            let r = amota(&preds, &gts, &cfg.eval)?;
            match report {
                Some(p) => {
                    let mut w = create(&p)?;
                    write_report_csv(&mut w, &r)?;
                    w.flush()?;
                }
                None => write_report_csv(std::io::stdout().lock(), &r)?,
            }
            for c in &r.classes {
                eprintln!("class {} AMOTA {:.4}", c.class_id, c.amota);
            }
            eprintln!("AMOTA {:.4}", r.amota);
        }
        Cmd::GradCheck { eps, tol, samples } => {
            if !(eps > 0.0) || !(tol > 0.0) {
                return Err(Error::Config("--eps and --tol must be positive".into()));
            }
            let err = model_grad_check(&cfg.architecture(), seed, eps, samples)?;
            println!("max relative error {err:.3e} (tolerance {tol:.0e})");
            if !(err < tol) {
                return Err(Error::Validation(format!("gradient check failed: {err:.3e} >= {tol:.0e}")));
            }
        }
        Cmd::Ablate {
            axis,
            out,
            train_sequences,
            eval_sequences,
        } => {
            let axis: Axis = axis.parse()?;
            cfg.validate()?;
            let data = synthetic_data(&cfg, train_sequences, eval_sequences, seed)?;
            write_resolved(&cfg, seed, &with_suffix(&out, ".config.toml"))?;
            let rows = ablate(&cfg, axis, &data, seed)?;
            let mut w = create(&out)?;
            polartrack::experiment::write_ablation_csv(&mut w, &rows)?;
            w.flush()?;
            for r in &rows {
                eprintln!("{} = {}: AMOTA {:.4}", r.axis, r.value, r.amota);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
