//! Offline sparse multiplex graph over a clip of detections.
//!
//! Inter-frame edges connect same-class detections of different frames that
//! are mutually reachable under the class's maximal velocity; intra-frame
//! edges connect same-class detections of one frame that could meet within
//! one frame period. Every edge is stored once, pole endpoint first.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::detections::{ClassConfig, Clip, Detection, Sequence};
use crate::error::{Error, Result};
use crate::relgeom::{edge_features_unchecked, pole_first, EdgeFeature, FeatureMode};

/// Lower bound on estimated class velocities, m/s.
pub const VMAX_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    InterFrame,
    IntraFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Pole endpoint (the earlier node for inter-frame edges).
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub feature: EdgeFeature,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipGraph {
    pub nodes: Vec<Detection>,
    pub edges: Vec<Edge>,
    /// Per-edge labels; `None` for intra-frame edges.
    pub labels: Option<Vec<Option<bool>>>,
}

impl ClipGraph {
    pub fn num_inter(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::InterFrame)
            .count()
    }

    /// Indices of inter-frame edges, in edge order.
    pub fn inter_edges(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EdgeKind::InterFrame)
            .map(|(i, _)| i)
            .collect()
    }

    /// Labels of the inter-frame edges, in [`ClipGraph::inter_edges`] order.
    pub fn inter_labels(&self) -> Option<Vec<bool>> {
        let labels = self.labels.as_ref()?;
        self.edges
            .iter()
            .zip(labels)
            .filter(|(e, _)| e.kind == EdgeKind::InterFrame)
            .map(|(_, l)| *l)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub mode: FeatureMode,
    /// Nominal frame period, seconds.
    pub frame_period: f64,
    /// Multiplier on every velocity gate.
    pub gate_scale: f64,
    /// Maximal frame-index gap of inter-frame edges; `None` links any two
    /// frames of the clip.
    pub max_frame_gap: Option<u32>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::PolarTime,
            frame_period: 0.5,
            gate_scale: 1.0,
            max_frame_gap: None,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_period > 0.0) {
            return Err(Error::Config(format!(
                "frame_period_s must be > 0, got {}",
                self.frame_period
            )));
        }
        if !(self.gate_scale > 0.0) {
            return Err(Error::Config(format!(
                "gate_scale must be > 0, got {}",
                self.gate_scale
            )));
        }
        Ok(())
    }

    /// Whether two same-class detections may be linked, and by which kind.
    pub fn admits(&self, a: &Detection, b: &Detection, v_max: f64) -> Option<EdgeKind> {
        let dist = (a.x - b.x).hypot(a.y - b.y);
        if a.frame == b.frame {
            (dist <= self.gate_scale * 2.0 * v_max * self.frame_period)
                .then_some(EdgeKind::IntraFrame)
        } else {
            if let Some(gap) = self.max_frame_gap {
                if a.frame.abs_diff(b.frame) > gap {
                    return None;
                }
            }
            (dist <= self.gate_scale * v_max * (a.t - b.t).abs()).then_some(EdgeKind::InterFrame)
        }
    }

    /// Edge between two admitted detections, oriented pole first.
    pub fn make_edge(&self, i: usize, a: &Detection, j: usize, b: &Detection, kind: EdgeKind) -> Edge {
        let (src, dst, p, o) = if pole_first(a, b) {
            (j, i, b, a)
        } else {
            (i, j, a, b)
        };
        Edge {
            src,
            dst,
            kind,
            feature: edge_features_unchecked(p, o, self.mode, self.frame_period),
        }
    }
}

/// Build the gated multiplex graph of one clip.
pub fn build_clip_graph(clip: &Clip, classes: &ClassConfig, cfg: &GraphConfig) -> Result<ClipGraph> {
    let nodes: Vec<Detection> = clip.detections().cloned().collect();
    build_graph_from_nodes(nodes, classes, cfg)
}

/// Build the gated graph over an arbitrary node list (frames may interleave).
pub fn build_graph_from_nodes(
    nodes: Vec<Detection>,
    classes: &ClassConfig,
    cfg: &GraphConfig,
) -> Result<ClipGraph> {
    cfg.validate()?;
    let mut vmax: HashMap<u32, f64> = HashMap::new();
    for n in &nodes {
        if !vmax.contains_key(&n.class_id) {
            vmax.insert(n.class_id, classes.v_max(n.class_id)?);
        }
    }
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        let a = &nodes[i];
        let v = vmax[&a.class_id];
        for (j, b) in nodes.iter().enumerate().skip(i + 1) {
            if b.class_id != a.class_id {
                continue;
            }
            if let Some(kind) = cfg.admits(a, b, v) {
                edges.push(cfg.make_edge(i, a, j, b, kind));
            }
        }
    }
    Ok(ClipGraph {
        nodes,
        edges,
        labels: None,
    })
}

/// Label inter-frame edges positive iff both endpoints share a ground-truth
/// track id; intra-frame edges stay unlabeled.
pub fn label_edges(mut g: ClipGraph, gt: &[Option<u64>]) -> Result<ClipGraph> {
    if gt.len() != g.nodes.len() {
        return Err(Error::InvalidInput(format!(
            "{} ground-truth ids for {} nodes",
            gt.len(),
            g.nodes.len()
        )));
    }
    let labels = g
        .edges
        .iter()
        .map(|e| match e.kind {
            EdgeKind::IntraFrame => Ok(None),
            EdgeKind::InterFrame => {
                let a = gt[e.src].ok_or(Error::MissingGroundTruth(e.src))?;
                let b = gt[e.dst].ok_or(Error::MissingGroundTruth(e.dst))?;
                Ok(Some(a == b))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    g.labels = Some(labels);
    Ok(g)
}

/// Label from the nodes' own `gt_track_id` fields.
pub fn label_from_nodes(g: ClipGraph) -> Result<ClipGraph> {
    let gt: Vec<Option<u64>> = g.nodes.iter().map(|n| n.gt_track_id).collect();
    label_edges(g, &gt)
}

/// Estimate per-class maximal velocities from ground-truth tracks.
///
/// For every class, the fastest displacement between consecutive detections of
/// one track, times `safety`, floored at [`VMAX_FLOOR`]. Classes without any
/// consecutive pair keep the configured value.
pub fn vmax_from_gt(seqs: &[Sequence], classes: &ClassConfig, safety: f64) -> Result<ClassConfig> {
    if !(safety > 0.0) {
        return Err(Error::Config(format!("vmax_safety must be > 0, got {safety}")));
    }
    let mut fastest: BTreeMap<u32, f64> = BTreeMap::new();
    for seq in seqs {
        let mut tracks: HashMap<u64, Vec<&Detection>> = HashMap::new();
        for d in seq.detections() {
            if let Some(id) = d.gt_track_id {
                tracks.entry(id).or_default().push(d);
            }
        }
        for dets in tracks.values_mut() {
            dets.sort_by_key(|d| d.frame);
            for w in dets.windows(2) {
                let dt = w[1].t - w[0].t;
                if dt <= 0.0 {
                    continue;
                }
                let v = (w[1].x - w[0].x).hypot(w[1].y - w[0].y) / dt;
                let e = fastest.entry(w[0].class_id).or_insert(0.0);
                *e = e.max(v);
            }
        }
    }
    let mut out = classes.clone();
    for c in &mut out.classes {
        if let Some(&v) = fastest.get(&c.id) {
            c.v_max = (v * safety).max(VMAX_FLOOR);
        }
    }
    Ok(out)
}
