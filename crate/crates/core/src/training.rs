//! Clip augmentation, the deep-supervised training loop and checkpoints.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{optimizer_step, sigmoid, CosineRestarts, OptimizerState, ParamGrads, ParameterSet, RAdamConfig};
use crate::decoding::{greedy_assign_online, OnlineCandidate, Thresholds};
use crate::detections::{split_clips, ClassConfig, Clip, Detection, Frame, Sequence};
use crate::error::{Error, Result};
use crate::graph::{build_clip_graph, label_from_nodes, ClipGraph, EdgeKind, GraphConfig};
use crate::model::{Architecture, DirectionMask, Model, Topology};
use crate::online::{OnlineConfig, TrackState};
use crate::relgeom::{wrap, FeatureMode, TAU_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Injected false positives per frame and class: round(frac · real) + fixed.
    pub fp_fraction: [f64; 2],
    pub fp_fixed: [u32; 2],
    /// Fraction of nodes dropped per frame.
    pub node_drop: [f64; 2],
    pub frame_drop: f64,
    /// Per-class noise stds are drawn once from these ranges.
    pub dist_std: [f64; 2],
    pub angle_std: [f64; 2],
    pub yaw_std: [f64; 2],
    pub edge_drop: f64,
    /// Online training only: fraction of past candidate scores replaced by a
    /// uniform draw while replaying ground truth, so that the retained
    /// topology carries tracking mistakes as it does at inference.
    pub decision_noise: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            fp_fraction: [0.7, 0.9],
            fp_fixed: [1, 3],
            node_drop: [0.4, 0.6],
            frame_drop: 0.05,
            dist_std: [0.05, 0.35],
            angle_std: [0.1, 0.25],
            yaw_std: [0.05, 0.25],
            edge_drop: 0.2,
            decision_noise: 0.1,
        }
    }
}

impl AugmentConfig {
    /// Augmentation that only injects false positives at the given rates.
    pub fn zero_noise(&self) -> Self {
        Self {
            node_drop: [0.0, 0.0],
            frame_drop: 0.0,
            dist_std: [0.0, 0.0],
            angle_std: [0.0, 0.0],
            yaw_std: [0.0, 0.0],
            edge_drop: 0.0,
            decision_noise: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |r: [f64; 2], hi: f64| 0.0 <= r[0] && r[0] <= r[1] && r[1] <= hi;
        let ok = range(self.fp_fraction, f64::INFINITY)
            && self.fp_fixed[0] <= self.fp_fixed[1]
            && range(self.node_drop, 1.0)
            && (0.0..1.0).contains(&self.frame_drop)
            && range(self.dist_std, f64::INFINITY)
            && range(self.angle_std, f64::INFINITY)
            && range(self.yaw_std, f64::INFINITY)
            && (0.0..=1.0).contains(&self.edge_drop)
            && (0.0..=1.0).contains(&self.decision_noise)
            && self.node_drop[1] < 1.0;
        if !ok {
            return Err(Error::Config(format!("invalid augmentation config {self:?}")));
        }
        Ok(())
    }
}

/// Per-class feature noise: (distance, polar angle, orientation) stds.
pub type ClassNoise = HashMap<u32, [f64; 3]>;

pub fn draw_class_noise<R: Rng>(classes: &ClassConfig, aug: &AugmentConfig, rng: &mut R) -> ClassNoise {
    let mut pick = |r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..=r[1]) };
    classes
        .classes
        .iter()
        .map(|c| (c.id, [pick(aug.dist_std), pick(aug.angle_std), pick(aug.yaw_std)]))
        .collect()
}

/// Give every detection without a ground-truth id a unique one, so that
/// unassociated boxes only ever take part in negative edges.
pub fn assign_unique_ids(clips: &mut [Clip]) {
    let mut next = u64::MAX / 2;
    for c in clips {
        for f in &mut c.frames {
            for d in &mut f.detections {
                if d.gt_track_id.is_none() {
                    d.gt_track_id = Some(next);
                    next += 1;
                }
            }
        }
    }
}

/// Labelled training clips from ground-truth sequences.
pub fn make_clips(seqs: &[Sequence], clip_len: usize, stride: usize) -> Result<Vec<Clip>> {
    let mut clips = Vec::new();
    for s in seqs {
        clips.extend(split_clips(s, clip_len, stride)?);
    }
    assign_unique_ids(&mut clips);
    Ok(clips)
}

fn uniform_in<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn bounds<'a>(dets: impl Iterator<Item = &'a Detection>) -> Option<[f64; 4]> {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    let mut any = false;
    for d in dets {
        any = true;
        b = [b[0].min(d.x), b[1].max(d.x), b[2].min(d.y), b[3].max(d.y)];
    }
    any.then_some(b)
}

/// Inject false positives and drop nodes and frames; returns the surviving
/// frames (at least two) or `None` if the clip keeps collapsing.
fn augment_boxes<R: Rng>(clip: &Clip, classes: &ClassConfig, aug: &AugmentConfig, rng: &mut R) -> Option<Vec<Frame>> {
    let clip_box = bounds(clip.detections()).unwrap_or([-1.0, 1.0, -1.0, 1.0]);
    let class_ids: BTreeSet<u32> = clip.detections().map(|d| d.class_id).collect();
    let mut next_fp = u64::MAX - 1_000_000_000;
    let mut injected: Vec<Frame> = Vec::with_capacity(clip.frames.len());
    for f in &clip.frames {
        let mut dets = f.detections.clone();
        for &c in &class_ids {
            if classes.get(c).is_err() {
                continue;
            }
            let real: Vec<&Detection> = f.detections.iter().filter(|d| d.class_id == c).collect();
            let b = bounds(real.iter().copied()).unwrap_or(clip_box);
            let frac = uniform_in(rng, aug.fp_fraction[0], aug.fp_fraction[1]);
            let fixed = rng.random_range(aug.fp_fixed[0]..=aug.fp_fixed[1]) as usize;
            let n = (frac * real.len() as f64).round() as usize + fixed;
            for _ in 0..n {
                dets.push(Detection {
                    seq_id: f.detections.first().map(|d| d.seq_id.clone()).unwrap_or_default(),
                    frame: f.index,
                    t: f.t,
                    x: uniform_in(rng, b[0], b[1]),
                    y: uniform_in(rng, b[2], b[3]),
                    yaw: wrap(uniform_in(rng, -std::f64::consts::PI, std::f64::consts::PI)),
                    class_id: c,
                    score: uniform_in(rng, 0.0, 1.0),
                    gt_track_id: Some(next_fp),
                });
                next_fp += 1;
            }
        }
        injected.push(Frame {
            index: f.index,
            t: f.t,
            detections: dets,
        });
    }
    for _attempt in 0..16 {
        let mut out = Vec::with_capacity(injected.len());
        for f in &injected {
            if rng.random_bool(aug.frame_drop) {
                continue;
            }
            let frac = uniform_in(rng, aug.node_drop[0], aug.node_drop[1]);
            let mut dets = f.detections.clone();
            dets.shuffle(rng);
            let keep = dets.len() - (frac * dets.len() as f64).round() as usize;
            dets.truncate(keep);
            // restore a stable order
            dets.sort_by(|a, b| {
                a.class_id
                    .cmp(&b.class_id)
                    .then(a.gt_track_id.cmp(&b.gt_track_id))
            });
            out.push(Frame {
                index: f.index,
                t: f.t,
                detections: dets,
            });
        }
        if out.len() >= 2 {
            return Some(out);
        }
    }
    None
}

fn perturb_features<R: Rng>(g: &mut ClipGraph, mode: FeatureMode, tau: f64, noise: &ClassNoise, rng: &mut R) {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    for e in &mut g.edges {
        let Some(s) = noise.get(&g.nodes[e.src].class_id) else {
            continue;
        };
        let f = &mut e.feature.0;
        let time_scale = match (mode, e.kind) {
            (FeatureMode::PolarRaw, _) => 1.0,
            (_, EdgeKind::IntraFrame) => tau,
            (_, EdgeKind::InterFrame) => f[3].max(TAU_EPS),
        };
        let mut n = || std_normal.sample(rng);
        match mode {
            FeatureMode::PolarTime | FeatureMode::PolarRaw => {
                f[0] = (f[0] + s[0] * n() / time_scale).abs();
                f[1] = wrap(f[1] + s[1] * n());
            }
            FeatureMode::CartesianTime => {
                f[0] += s[0] * n() / time_scale;
                f[1] += s[0] * n() / time_scale;
            }
        }
        f[2] = wrap(f[2] + s[2] * n());
    }
}

/// Augmented, labelled graph of one clip: injected false positives, dropped
/// nodes and frames, noisy edge features and dropped edges. Every node must
/// carry a ground-truth id.
pub fn augment_clip<R: Rng>(
    clip: &Clip,
    classes: &ClassConfig,
    graph_cfg: &GraphConfig,
    aug: &AugmentConfig,
    noise: &ClassNoise,
    rng: &mut R,
) -> Result<ClipGraph> {
    aug.validate()?;
    let frames = augment_boxes(clip, classes, aug, rng).unwrap_or_else(|| clip.frames.clone());
    let mut g = build_clip_graph(&Clip { frames }, classes, graph_cfg)?;
    perturb_features(&mut g, graph_cfg.mode, graph_cfg.frame_period, noise, rng);
    if aug.edge_drop > 0.0 {
        g.edges.retain(|_| !rng.random_bool(aug.edge_drop));
    }
    label_from_nodes(g)
}

/// Labelled graphs the online tracker hands the model as each frame after
/// the first arrives, each with the inter-frame indices of its candidate
/// edges. Frames are linked by ground truth once scored, except that a
/// `decision_noise` fraction of candidate scores is replaced by a uniform
/// draw, so past decisions enter the topology roughly as they would at
/// inference. Every node must carry a ground-truth id.
pub fn online_training_graphs<R: Rng>(
    frames: &[Frame],
    classes: &ClassConfig,
    graph_cfg: &GraphConfig,
    online_cfg: &OnlineConfig,
    decision_noise: f64,
    rng: &mut R,
) -> Result<Vec<(ClipGraph, Vec<usize>)>> {
    let mut state = TrackState::new(*online_cfg, *graph_cfg, classes.clone())?;
    let mut out = Vec::with_capacity(frames.len().saturating_sub(1));
    for (k, f) in frames.iter().enumerate() {
        let view = state.advance_frame(&f.detections, f.t)?;
        let z = crate::tracker::oracle_logits(&view.graph);
        let cands: Vec<OnlineCandidate> = view
            .candidates
            .iter()
            .map(|c| OnlineCandidate {
                score: if decision_noise > 0.0 && rng.random_bool(decision_noise) {
                    rng.random()
                } else {
                    sigmoid(z[c.edge])
                },
                ..*c
            })
            .collect();
        let decisions = greedy_assign_online(&cands, &Thresholds::default())?;
        state.commit(&view, &decisions)?;
        if k > 0 {
            let edges = view.candidates.iter().map(|c| c.edge).collect();
            out.push((label_from_nodes(view.graph)?, edges));
        }
    }
    Ok(out)
}

/// One supervised graph: topology, labels of every inter-frame edge and the
/// edges that enter the loss (all when `None`).
type Sample = (Topology, Vec<bool>, Option<Vec<usize>>);

/// Training graphs of one clip: the whole clip, or its online views
/// supervised on their candidate edges; with augmentation on, built from
/// augmented boxes with noisy features (and noisy past decisions). Online
/// views skip edge dropping since retained edges carry track history.
fn clip_graphs<R: Rng>(
    clip: &Clip,
    setup: &TrainSetup<'_>,
    noise: &ClassNoise,
    rng: &mut R,
) -> Result<Vec<(ClipGraph, Option<Vec<usize>>)>> {
    let aug = setup.augment;
    let Some(online) = setup.online else {
        let g = if aug.enabled {
            augment_clip(clip, setup.classes, setup.graph, aug, noise, rng)?
        } else {
            label_from_nodes(build_clip_graph(clip, setup.classes, setup.graph)?)?
        };
        return Ok(vec![(g, None)]);
    };
    let frames = if aug.enabled {
        augment_boxes(clip, setup.classes, aug, rng).unwrap_or_else(|| clip.frames.clone())
    } else {
        clip.frames.clone()
    };
    let flip = if aug.enabled { aug.decision_noise } else { 0.0 };
    let graphs = online_training_graphs(&frames, setup.classes, setup.graph, online, flip, rng)?;
    let mut out = Vec::with_capacity(graphs.len());
    for (mut g, edges) in graphs {
        if aug.enabled {
            perturb_features(&mut g, setup.graph.mode, setup.graph.frame_period, noise, rng);
        }
        out.push((g, Some(edges)));
    }
    Ok(out)
}

fn samples(graphs: Vec<(ClipGraph, Option<Vec<usize>>)>) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(graphs.len());
    for (g, edges) in graphs {
        let labels = g.inter_labels().expect("labelled");
        let empty = match &edges {
            Some(e) => e.is_empty(),
            None => labels.is_empty(),
        };
        if !empty {
            out.push((Topology::new(&g)?, labels, edges));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clips per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// First restart cycle, in epochs; later cycles are `restart_mult` times
    /// longer.
    pub restart_epochs: usize,
    pub restart_mult: u64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub deep_supervision: bool,
    pub clip_len: usize,
    pub clip_stride: usize,
    pub mask: DirectionMask,
    /// Fraction of training sequences held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            restart_epochs: 10,
            restart_mult: 2,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            deep_supervision: true,
            clip_len: 11,
            clip_stride: 5,
            mask: DirectionMask::Offline,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.clip_len < 2 || self.clip_stride == 0 || self.restart_epochs == 0 {
            return Err(Error::Config(
                "train.batch_size, train.clip_stride and train.restart_epochs must be >= 1, train.clip_len >= 2".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.focal_gamma >= 0.0) || !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::Config("train.lr > 0, train.focal_gamma >= 0, train.focal_alpha in (0,1) required".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("train.val_fraction must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Confusion counts of inter-frame edge classification at probability 0.5.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl EdgeMetrics {
    pub fn record(&mut self, logits: &[f64], labels: &[bool]) {
        for (&z, &l) in logits.iter().zip(labels) {
            match (z >= 0.0, l) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, false) => self.tn += 1,
                (false, true) => self.fn_ += 1,
            }
        }
    }

    pub fn add(&mut self, o: &EdgeMetrics) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }

    fn ratio(a: usize, b: usize) -> f64 {
        if b == 0 {
            0.0
        } else {
            a as f64 / b as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

/// Edge classification counts of `model` over labelled graphs.
pub fn edge_metrics(model: &Model, graphs: &[ClipGraph], mask: DirectionMask) -> Result<EdgeMetrics> {
    let per: Vec<Result<EdgeMetrics>> = graphs
        .par_iter()
        .map(|g| {
            let labels = g
                .inter_labels()
                .ok_or_else(|| Error::InvalidInput("graph has no labels".into()))?;
            let mut m = EdgeMetrics::default();
            m.record(&model.forward(g, mask)?, &labels);
            Ok(m)
        })
        .collect();
    let mut total = EdgeMetrics::default();
    for m in per {
        total.add(&m?);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over clips of the supervised focal loss.
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Seed of the random stream used for one clip in one epoch.
fn stream_seed(seed: u64, epoch: usize, clip: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (clip as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to run the loop besides the data.
#[derive(Debug, Clone)]
pub struct TrainSetup<'a> {
    pub classes: &'a ClassConfig,
    pub graph: &'a GraphConfig,
    pub train: &'a TrainConfig,
    pub augment: &'a AugmentConfig,
    /// Train on online graphs of this policy instead of whole clips.
    pub online: Option<&'a OnlineConfig>,
    pub seed: u64,
}

/// Train `model` on labelled clips. Each epoch shuffles the clips; each batch
/// runs every clip independently (per-edge focal loss averaged within the
/// clip, summed over supervised steps), averages gradients across the
/// batch's clips and takes one optimizer step. `on_epoch` sees every log row
/// as it is produced.
pub fn train(
    model: &mut Model,
    clips: &[Clip],
    setup: &TrainSetup<'_>,
    opt: Option<OptimizerState>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(OptimizerState, Vec<EpochLog>)> {
    let cfg = setup.train;
    cfg.validate()?;
    setup.augment.validate()?;
    setup.graph.validate()?;
    let batches_per_epoch = clips.len().div_ceil(cfg.batch_size).max(1) as u64;
    let mut opt = opt.unwrap_or_else(|| {
        OptimizerState::new(
            &model.params,
            RAdamConfig::default(),
            CosineRestarts::new(cfg.restart_epochs as u64 * batches_per_epoch, cfg.restart_mult),
        )
    });
    let mut run_rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let noise = draw_class_noise(setup.classes, setup.augment, &mut run_rng);
    let augment = setup.augment.enabled;

    let cached: Option<Vec<Vec<Sample>>> = if augment {
        None
    } else {
        let built: Vec<Result<Vec<Sample>>> = clips
            .par_iter()
            .map(|c| samples(clip_graphs(c, setup, &noise, &mut ChaCha8Rng::seed_from_u64(0))?))
            .collect();
        Some(built.into_iter().collect::<Result<_>>()?)
    };

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut run_rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut metrics = EdgeMetrics::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref = &*model;
            // one result per clip, averaged over its graphs
            let results: Vec<Result<Option<(f64, ParamGrads, EdgeMetrics)>>> = batch
                .par_iter()
                .map(|&ci| {
                    let owned;
                    let clip_samples = match &cached {
                        Some(c) => &c[ci],
                        None => {
                            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(setup.seed, epoch, ci));
                            owned = samples(clip_graphs(&clips[ci], setup, &noise, &mut rng)?)?;
                            &owned
                        }
                    };
                    if clip_samples.is_empty() {
                        return Ok(None);
                    }
                    let mut total = ParamGrads::zeros_like(&model_ref.params);
                    let mut loss_total = 0.0;
                    let mut m = EdgeMetrics::default();
                    for (topo, labels, edges) in clip_samples {
                        let (loss, grads, logits) = model_ref.loss_and_grads_on(
                            topo,
                            labels,
                            edges.as_deref(),
                            cfg.mask,
                            cfg.focal_gamma,
                            cfg.focal_alpha,
                            cfg.deep_supervision,
                        )?;
                        loss_total += loss;
                        total.add_assign(&grads);
                        match edges {
                            Some(e) => m.record(
                                &e.iter().map(|&k| logits[k]).collect::<Vec<_>>(),
                                &e.iter().map(|&k| labels[k]).collect::<Vec<_>>(),
                            ),
                            None => m.record(&logits, labels),
                        }
                    }
                    let k = clip_samples.len() as f64;
                    total.scale(1.0 / k);
                    Ok(Some((loss_total / k, total, m)))
                })
                .collect();
            let mut grads = ParamGrads::zeros_like(&model.params);
            let mut n = 0usize;
            for r in results {
                if let Some((loss, g, m)) = r? {
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
                    }
                    loss_sum += loss;
                    loss_n += 1;
                    grads.add_assign(&g);
                    metrics.add(&m);
                    n += 1;
                }
            }
            if n == 0 {
                continue;
            }
            grads.scale(1.0 / n as f64);
            optimizer_step(&mut model.params, &grads, &mut opt, cfg.lr)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let log = EpochLog {
            epoch,
            loss: if loss_n == 0 { 0.0 } else { loss_sum / loss_n as f64 },
            precision: metrics.precision(),
            recall: metrics.recall(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((opt, logs))
}

pub fn write_log_csv<W: std::io::Write>(mut w: W, logs: &[EpochLog]) -> Result<()> {
    writeln!(w, "epoch,loss,precision,recall")?;
    for l in logs {
        writeln!(w, "{},{:.9},{:.6},{:.6}", l.epoch, l.loss, l.precision, l.recall)?;
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub feature_mode: FeatureMode,
    pub mask: DirectionMask,
    pub arch: Architecture,
    pub params: ParameterSet,
    pub optimizer: Option<OptimizerState>,
    /// Class table (velocities) the model was trained with.
    pub classes: Option<ClassConfig>,
    /// Tuned decoding thresholds.
    pub thresholds: Option<Thresholds>,
}

impl Checkpoint {
    pub fn new(model: &Model, feature_mode: FeatureMode, mask: DirectionMask, optimizer: Option<OptimizerState>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            feature_mode,
            mask,
            arch: model.arch.clone(),
            params: model.params.clone(),
            optimizer,
            classes: None,
            thresholds: None,
        }
    }

    pub fn with_decoding(mut self, classes: ClassConfig, thresholds: Thresholds) -> Self {
        self.classes = Some(classes);
        self.thresholds = Some(thresholds);
        self
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.arch.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let c: Checkpoint = serde_json::from_reader(f)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        c.model()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::{group_sequences, ClassSpec};
    use crate::synth::{generate_scene, SceneConfig};

    fn classes() -> ClassConfig {
        ClassConfig::new(vec![ClassSpec {
            id: 0,
            name: "car".into(),
            v_max: 15.0,
            score_threshold: 0.0,
        }])
        .unwrap()
    }

    fn det(frame: u32, x: f64, id: u64) -> Detection {
        Detection {
            seq_id: "s".into(),
            frame,
            t: frame as f64 * 0.5,
            x,
            y: x * 0.5,
            yaw: 0.0,
            class_id: 0,
            score: 1.0,
            gt_track_id: Some(id),
        }
    }

    fn clip_of(frames: Vec<Vec<Detection>>) -> Clip {
        Clip {
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(i, d)| Frame {
                    index: i as u32,
                    t: i as f64 * 0.5,
                    detections: d,
                })
                .collect(),
        }
    }

    fn only_fp(frac: f64, fixed: u32) -> AugmentConfig {
        AugmentConfig {
            fp_fraction: [frac, frac],
            fp_fixed: [fixed, fixed],
            ..AugmentConfig::default()
        }
        .zero_noise()
    }

    #[test]
    fn injected_false_positive_counts() {
        let ten: Vec<Detection> = (0..10).map(|i| det(0, i as f64 * 3.0, i)).collect();
        let clip = clip_of(vec![ten, vec![det(1, 0.0, 0)]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = augment_boxes(&clip, &classes(), &only_fp(0.8, 2), &mut rng).unwrap();
        assert_eq!(frames[0].detections.len(), 10 + 10);
        // 1 real box: round(0.8) + 2
        assert_eq!(frames[1].detections.len(), 1 + 3);
    }

    #[test]
    fn empty_frame_gets_fixed_boxes() {
        let clip = clip_of(vec![vec![det(0, 0.0, 0), det(0, 5.0, 1)], vec![]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = augment_boxes(&clip, &classes(), &only_fp(0.8, 3), &mut rng).unwrap();
        assert_eq!(frames[1].detections.len(), 3);
    }

    #[test]
    fn zero_noise_keeps_real_labels() {
        let clip = clip_of(vec![
            vec![det(0, 0.0, 0), det(0, 4.0, 1)],
            vec![det(1, 1.0, 0), det(1, 5.0, 1)],
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = draw_class_noise(&classes(), &only_fp(0.8, 2), &mut rng);
        let cfg = GraphConfig::default();
        let g = augment_clip(&clip, &classes(), &cfg, &only_fp(0.8, 2), &noise, &mut rng).unwrap();
        let plain = label_from_nodes(build_clip_graph(&clip, &classes(), &cfg).unwrap()).unwrap();
        let real = |d: &Detection| d.gt_track_id.unwrap() < 2;
        let mut kept: Vec<(f64, f64, Option<bool>)> = g
            .edges
            .iter()
            .zip(g.labels.as_ref().unwrap())
            .filter(|(e, _)| real(&g.nodes[e.src]) && real(&g.nodes[e.dst]))
            .map(|(e, l)| (g.nodes[e.src].x, g.nodes[e.dst].x, *l))
            .collect();
        let mut want: Vec<(f64, f64, Option<bool>)> = plain
            .edges
            .iter()
            .zip(plain.labels.as_ref().unwrap())
            .map(|(e, l)| (plain.nodes[e.src].x, plain.nodes[e.dst].x, *l))
            .collect();
        kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(kept, want);
        // injected boxes never share an id with anything
        for (e, l) in g.edges.iter().zip(g.labels.as_ref().unwrap()) {
            if !real(&g.nodes[e.src]) || !real(&g.nodes[e.dst]) {
                assert_ne!(*l, Some(true));
            }
        }
    }

    #[test]
    fn node_drop_keeps_clip_usable() {
        let clip = clip_of((0..4).map(|f| (0..10).map(|i| det(f, i as f64 * 3.0 + f as f64, i)).collect()).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let aug = AugmentConfig::default();
        let frames = augment_boxes(&clip, &classes(), &aug, &mut rng).unwrap();
        assert!(frames.len() >= 2);
        for f in &frames {
            // 10 real + 7..9 + 1..3 injected, then 40–60% dropped
            assert!(f.detections.len() <= 13 && f.detections.len() >= 7, "{}", f.detections.len());
        }
    }

    fn tiny_data() -> Vec<Clip> {
        let scene = SceneConfig {
            n_agents: 5,
            n_frames: 6,
            ..SceneConfig::default()
        };
        let seqs: Vec<Sequence> = (0..3)
            .flat_map(|s| group_sequences(&generate_scene(&format!("s{s}"), &scene, s).unwrap()))
            .collect();
        make_clips(&seqs, 6, 5).unwrap()
    }

    fn small_setup<'a>(classes: &'a ClassConfig, g: &'a GraphConfig, t: &'a TrainConfig, a: &'a AugmentConfig) -> TrainSetup<'a> {
        TrainSetup {
            classes,
            graph: g,
            train: t,
            augment: a,
            online: None,
            seed: 11,
        }
    }

    #[test]
    fn training_is_reproducible_and_checkpoints_round_trip() {
        let clips = tiny_data();
        let classes = SceneConfig::default().class_config(1.1);
        let g = GraphConfig::default();
        let t = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = AugmentConfig::default();
        let setup = small_setup(&classes, &g, &t, &a);
        let mut m1 = Model::new(Architecture::default(), 5);
        let mut m2 = Model::new(Architecture::default(), 5);
        let (opt, l1) = train(&mut m1, &clips, &setup, None, |_| {}).unwrap();
        let (_, l2) = train(&mut m2, &clips, &setup, None, |_| {}).unwrap();
        assert_eq!(l1, l2);
        assert!(l1.iter().all(|l| l.loss.is_finite()));

        let ck = Checkpoint::new(&m1, FeatureMode::PolarTime, DirectionMask::Offline, Some(opt))
            .with_decoding(classes.clone(), Thresholds::uniform(0.6));
        let dir = std::env::temp_dir().join(format!("polartrack-ck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn online_views_replay_ground_truth() {
        use crate::online::Connectivity;
        // two far-apart tracks over five frames
        let clip = clip_of((0..5).map(|k| vec![det(k, k as f64 * 2.0, 0), det(k, 100.0 + k as f64 * 2.0, 1)]).collect());
        let online = OnlineConfig {
            connectivity: Connectivity::PruneSkip,
            ..OnlineConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let views = online_training_graphs(&clip.frames, &classes(), &GraphConfig::default(), &online, 0.0, &mut rng).unwrap();
        assert_eq!(views.len(), 4);
        for (k, (g, cands)) in views.iter().enumerate() {
            let labels = g.inter_labels().unwrap();
            assert_eq!(cands.len(), 2);
            assert!(cands.iter().all(|&e| labels[e]));
            // retained history is all positive and at most 3 nodes per track
            assert!(labels.iter().all(|&l| l));
            assert_eq!(g.nodes.len(), 2 * (k + 1).min(3) + 2);
        }
        let noisy = online_training_graphs(&clip.frames, &classes(), &GraphConfig::default(), &online, 1.0, &mut rng).unwrap();
        assert_eq!(noisy.len(), 4);
        assert!(online_training_graphs(&[], &classes(), &GraphConfig::default(), &online, 0.0, &mut rng)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn online_training_runs_on_candidate_edges() {
        let clips = tiny_data();
        let classes = SceneConfig::default().class_config(1.1);
        let g = GraphConfig::default();
        let t = TrainConfig {
            epochs: 2,
            batch_size: 2,
            mask: DirectionMask::Online,
            ..TrainConfig::default()
        };
        let a = AugmentConfig::default();
        let online = OnlineConfig::default();
        let setup = TrainSetup {
            online: Some(&online),
            ..small_setup(&classes, &g, &t, &a)
        };
        let mut m1 = Model::new(Architecture::default(), 5);
        let mut m2 = Model::new(Architecture::default(), 5);
        let (_, l1) = train(&mut m1, &clips, &setup, None, |_| {}).unwrap();
        let (_, l2) = train(&mut m2, &clips, &setup, None, |_| {}).unwrap();
        assert_eq!(l1, l2);
        assert!(l1.iter().all(|l| l.loss.is_finite() && l.loss > 0.0));
    }

    #[test]
    fn log_csv_header() {
        let mut buf = Vec::new();
        write_log_csv(
            &mut buf,
            &[EpochLog {
                epoch: 1,
                loss: 0.5,
                precision: 1.0,
                recall: 0.25,
            }],
        )
        .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("epoch,loss,precision,recall\n1,0.5"));
    }
}
