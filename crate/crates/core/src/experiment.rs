//! End-to-end runs: fit a model from a run configuration, tune decoding
//! thresholds, evaluate a pipeline, and sweep ablation axes.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, OptimizerState, ParamGrads, ParameterSet};
use crate::config::RunConfig;
use crate::decoding::Thresholds;
use crate::detections::{group_sequences, ClassConfig, ClassSpec, Detection, Sequence};
use crate::error::{Error, Result};
use crate::evaluation::{amota, EvalReport};
use crate::graph::{build_graph_from_nodes, label_from_nodes, vmax_from_gt, ClipGraph, GraphConfig};
use crate::model::{Architecture, DirectionMask, Model, Topology};
use crate::online::Connectivity;
use crate::relgeom::FeatureMode;
use crate::synth::generate_dataset;
use crate::tracker::{track_all, Pipeline};
use crate::training::{make_clips, train, EpochLog, TrainSetup};

/// Edge thresholds tried when tuning on validation data.
pub const THRESHOLD_GRID: [f64; 7] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8];

/// Detections to track and the ground truth to score them against.
#[derive(Debug, Clone, Default)]
pub struct EvalSet {
    pub detections: Vec<Sequence>,
    pub gt: Vec<Detection>,
}

impl EvalSet {
    pub fn new(detections: &[Detection], gt: Vec<Detection>) -> Self {
        Self {
            detections: group_sequences(detections),
            gt,
        }
    }

    /// Only the sequences whose id is in `ids`.
    pub fn restrict(&self, ids: &[String]) -> Self {
        Self {
            detections: self.detections.iter().filter(|s| ids.contains(&s.id)).cloned().collect(),
            gt: self.gt.iter().filter(|d| ids.contains(&d.seq_id)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentData {
    /// Ground-truth training sequences.
    pub train: Vec<Sequence>,
    /// Detections of the training sequences, true boxes carrying their
    /// ground-truth ids.
    pub train_detections: Vec<Sequence>,
    /// Held-out training sequences used to tune thresholds.
    pub validation: Option<EvalSet>,
    pub eval: EvalSet,
}

/// Split sequences into (train, held-out) by a seeded shuffle of their ids;
/// at least one sequence stays in training.
pub fn split_validation(seqs: Vec<Sequence>, fraction: f64, seed: u64) -> (Vec<Sequence>, Vec<Sequence>) {
    let mut ids: Vec<String> = seqs.iter().map(|s| s.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((fraction * seqs.len() as f64).round() as usize).min(seqs.len().saturating_sub(1));
    let held: Vec<String> = ids[..n_val].to_vec();
    seqs.into_iter().partition(|s| !held.contains(&s.id))
}

/// Synthetic training, validation and evaluation data from the `synth`
/// section: `n_train` sequences (of which `train.val_fraction` are held
/// out) and `n_eval` fresh sequences.
pub fn synthetic_data(cfg: &RunConfig, n_train: usize, n_eval: usize, seed: u64) -> Result<ExperimentData> {
    let s = &cfg.synth;
    let (gt_tr, det_tr) = generate_dataset("train", n_train, &s.scene, &s.noise, seed)?;
    let (gt_ev, det_ev) = generate_dataset("eval", n_eval, &s.scene, &s.noise, seed ^ 0xE7A1)?;
    let (train, held) = split_validation(group_sequences(&gt_tr), cfg.train.val_fraction, seed);
    let all_tr = EvalSet::new(&det_tr, gt_tr);
    let validation = (!held.is_empty()).then(|| all_tr.restrict(&held.iter().map(|s| s.id.clone()).collect::<Vec<_>>()));
    let train_detections = all_tr.restrict(&train.iter().map(|s| s.id.clone()).collect::<Vec<_>>()).detections;
    Ok(ExperimentData {
        train,
        train_detections,
        validation,
        eval: EvalSet::new(&det_ev, gt_ev),
    })
}

/// A trained model with everything needed to run it.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub classes: ClassConfig,
    pub thresholds: Thresholds,
    pub optimizer: OptimizerState,
    pub logs: Vec<EpochLog>,
}

/// Pipeline matching a configuration's training mask.
pub fn pipeline_for(cfg: &RunConfig) -> Pipeline {
    match cfg.train.mask {
        DirectionMask::Offline => Pipeline::Offline,
        DirectionMask::Online => Pipeline::Online(cfg.online),
    }
}

/// Class table for a run: configured classes, optionally with velocities
/// measured on same-track pairs of `seqs`, then explicit overrides.
pub fn resolve_classes(cfg: &RunConfig, train_gt: &[Sequence]) -> Result<ClassConfig> {
    let mut classes = cfg.class_config()?;
    if cfg.vmax_from_data {
        classes = vmax_from_gt(train_gt, &classes, cfg.vmax_safety)?;
        cfg.apply_vmax_overrides(&mut classes)?;
    }
    Ok(classes)
}

/// Train a model per `cfg` and settle its decoding thresholds.
///
/// Velocities are measured on `train_detections` when given (the true boxes
/// carry ground-truth ids, so localization jitter widens the gate as it would
/// on annotated detector output), else on the ground truth.
pub fn fit(
    cfg: &RunConfig,
    train_gt: &[Sequence],
    train_detections: &[Sequence],
    validation: Option<&EvalSet>,
    seed: u64,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Fitted> {
    cfg.validate()?;
    let classes = resolve_classes(cfg, if train_detections.is_empty() { train_gt } else { train_detections })?;
    let graph = cfg.graph_config();
    let clips = make_clips(train_gt, cfg.train.clip_len, cfg.train.clip_stride)?;
    if clips.is_empty() {
        return Err(Error::InvalidInput("no training clip has two frames".into()));
    }
    let mut model = Model::new(cfg.architecture(), seed);
    let setup = TrainSetup {
        classes: &classes,
        graph: &graph,
        train: &cfg.train,
        augment: &cfg.augment,
        online: (cfg.train.mask == DirectionMask::Online).then_some(&cfg.online),
        seed,
    };
    let (optimizer, logs) = train(&mut model, &clips, &setup, None, on_epoch)?;
    let thresholds = match (cfg.thresholds()?, validation) {
        (Some(t), _) => t,
        (None, Some(val)) if cfg.decode.tune => tune_thresholds(&model, &classes, cfg, pipeline_for(cfg), val)?,
        _ => Thresholds::default(),
    };
    Ok(Fitted {
        model,
        classes,
        thresholds,
        optimizer,
        logs,
    })
}

/// Track and score an evaluation set.
pub fn evaluate_pipeline(
    model: &Model,
    classes: &ClassConfig,
    cfg: &RunConfig,
    thresholds: &Thresholds,
    pipeline: Pipeline,
    data: &EvalSet,
) -> Result<EvalReport> {
    let preds = track_all(model, &data.detections, classes, &cfg.graph_config(), thresholds, pipeline)?;
    amota(&preds, &data.gt, &cfg.eval)
}

/// Per class, the grid threshold with the best AMOTA on `val` (first on
/// ties).
pub fn tune_thresholds(
    model: &Model,
    classes: &ClassConfig,
    cfg: &RunConfig,
    pipeline: Pipeline,
    val: &EvalSet,
) -> Result<Thresholds> {
    let mut best: std::collections::BTreeMap<u32, (f64, f64)> = std::collections::BTreeMap::new();
    for &t in &THRESHOLD_GRID {
        let report = evaluate_pipeline(model, classes, cfg, &Thresholds::uniform(t), pipeline, val)?;
        for c in &report.classes {
            let e = best.entry(c.class_id).or_insert((t, c.amota));
            if c.amota > e.1 {
                *e = (t, c.amota);
            }
        }
    }
    let mut out = Thresholds::default();
    out.per_class = best.into_iter().map(|(c, (t, _))| (c, t)).collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    FeatureMode,
    GateScale,
    Connectivity,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature_mode" => Ok(Axis::FeatureMode),
            "gate_scale" => Ok(Axis::GateScale),
            "connectivity" => Ok(Axis::Connectivity),
            _ => Err(Error::Config(format!(
                "unknown ablation axis {s:?} (feature_mode, gate_scale, connectivity)"
            ))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::FeatureMode => "feature_mode",
            Axis::GateScale => "gate_scale",
            Axis::Connectivity => "connectivity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: &'static str,
    pub value: String,
    pub amota: f64,
    /// Counts at the best recall point, summed over classes.
    pub ids: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn row(axis: Axis, value: String, r: &EvalReport) -> AblationRow {
    let (mut ids, mut fp, mut fn_) = (0, 0, 0);
    for c in &r.classes {
        if let Some(b) = c.best() {
            ids += b.counts.ids;
            fp += b.counts.fp;
            fn_ += b.counts.fn_;
        }
    }
    AblationRow {
        axis: axis.name(),
        value,
        amota: r.amota,
        ids,
        fp,
        fn_,
    }
}

/// Retrain and evaluate along one axis, everything else fixed by `cfg`.
/// Feature modes and gate scales each train their own offline model; the
/// connectivity modes share one model trained with the online mask.
pub fn ablate(cfg: &RunConfig, axis: Axis, data: &ExperimentData, seed: u64) -> Result<Vec<AblationRow>> {
    let run = |c: &RunConfig, pipeline: Pipeline| -> Result<EvalReport> {
        let f = fit(c, &data.train, &data.train_detections, data.validation.as_ref(), seed, |_| {})?;
        evaluate_pipeline(&f.model, &f.classes, c, &f.thresholds, pipeline, &data.eval)
    };
    let mut rows = Vec::new();
    match axis {
        Axis::FeatureMode => {
            for mode in [FeatureMode::PolarTime, FeatureMode::PolarRaw, FeatureMode::CartesianTime] {
                let c = RunConfig {
                    feature_mode: mode,
                    ..cfg.clone()
                };
                rows.push(row(axis, mode.name().into(), &run(&c, pipeline_for(&c))?));
            }
        }
        Axis::GateScale => {
            for g in [0.5, 1.0, 2.0] {
                let c = RunConfig {
                    gate_scale: g,
                    ..cfg.clone()
                };
                rows.push(row(axis, format!("{g:.1}"), &run(&c, pipeline_for(&c))?));
            }
        }
        Axis::Connectivity => {
            // each policy gets a model trained on its own online graphs
            for conn in [Connectivity::PruneSkip, Connectivity::Consecutive, Connectivity::Dense] {
                let mut c = cfg.clone();
                c.train.mask = DirectionMask::Online;
                c.online.connectivity = conn;
                rows.push(row(axis, conn.name().into(), &run(&c, pipeline_for(&c))?));
            }
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: std::io::Write>(mut w: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "axis,value,amota,ids,fp,fn")?;
    for r in rows {
        writeln!(w, "{},{},{:.6},{},{},{}", r.axis, r.value, r.amota, r.ids, r.fp, r.fn_)?;
    }
    Ok(())
}

/// Six detections over two frames, three per frame, fully gated and
/// labelled: two tracks and a clutter box per frame.
pub fn toy_graph() -> Result<ClipGraph> {
    let det = |frame: u32, x: f64, y: f64, yaw: f64, id: u64| Detection {
        seq_id: "toy".into(),
        frame,
        t: frame as f64 * 0.5,
        x,
        y,
        yaw,
        class_id: 0,
        score: 0.9,
        gt_track_id: Some(id),
    };
    let nodes = vec![
        det(0, 0.0, 0.0, 0.1, 0),
        det(0, 3.0, 1.0, -0.4, 1),
        det(0, -2.0, 2.5, 2.0, 2),
        det(1, 1.2, 0.2, 0.15, 0),
        det(1, 3.1, 2.0, -0.2, 1),
        det(1, 0.5, -2.0, 1.0, 3),
    ];
    let classes = ClassConfig::new(vec![ClassSpec {
        id: 0,
        name: "car".into(),
        v_max: 20.0,
        score_threshold: 0.0,
    }])?;
    label_from_nodes(build_graph_from_nodes(nodes, &classes, &GraphConfig::default())?)
}

/// Largest relative error between analytic and central-difference
/// gradients of the deep-supervised focal loss on [`toy_graph`], over
/// `samples` random parameters (all when `samples` is 0).
pub fn model_grad_check(arch: &Architecture, seed: u64, eps: f64, samples: usize) -> Result<f64> {
    let g = toy_graph()?;
    let topo = Topology::new(&g)?;
    let labels = g.inter_labels().expect("labelled");
    let model = Model::new(arch.clone(), seed);
    let f = |p: &ParameterSet| -> Result<(f64, ParamGrads)> {
        let m = Model::from_params(arch.clone(), p.clone())?;
        let (loss, grads, _) = m.loss_and_grads(&topo, &labels, DirectionMask::Offline, 2.0, 0.25, true)?;
        Ok((loss, grads))
    };
    let n = if samples == 0 { usize::MAX } else { samples };
    grad_check(f, &model.params, eps, n, seed)
}
