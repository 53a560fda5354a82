//! Browser demo: pairwise features under rotation, the gated graph of a
//! synthetic clip, and the online graph evolving frame by frame.
//!
//! Everything crosses the JS boundary as flat `f64` arrays; the layouts are
//! documented on each function and mirrored in `www/index.html`.

use polartrack::decoding::{greedy_assign_online, OnlineCandidate, Thresholds};
use polartrack::detections::{group_sequences, Clip, ClassConfig, Detection, Sequence};
use polartrack::graph::{build_clip_graph, EdgeKind, GraphConfig};
use polartrack::online::{Connectivity, OnlineConfig, TrackState};
use polartrack::relgeom::{edge_features, FeatureMode};
use polartrack::synth::{generate_dataset, NoiseSpec, SceneConfig};
use polartrack::tracker::oracle_logits;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn pose(frame: u32, t: f64, p: &[f64]) -> Detection {
    Detection {
        seq_id: "demo".into(),
        frame,
        t,
        x: p.first().copied().unwrap_or(0.0),
        y: p.get(1).copied().unwrap_or(0.0),
        yaw: p.get(2).copied().unwrap_or(0.0),
        class_id: 0,
        score: 1.0,
        gt_track_id: None,
    }
}

fn rotate(d: &Detection, theta: f64) -> Detection {
    let (s, c) = theta.sin_cos();
    let yaw = d.yaw + theta;
    Detection {
        x: c * d.x - s * d.y,
        y: s * d.x + c * d.y,
        yaw: yaw.sin().atan2(yaw.cos()),
        ..d.clone()
    }
}

/// Features of box `b` (seen `dt` seconds after box `a`) for every feature
/// mode, before and after rotating the whole scene by `theta` about the
/// origin. Boxes are `[x, y, yaw]`.
///
/// Layout: for each mode in `polar_time, polar_raw, cartesian_time`, four
/// features of the original pair followed by four of the rotated pair.
pub fn features_under_rotation(a: &[f64], b: &[f64], dt: f64, theta: f64) -> polartrack::Result<Vec<f64>> {
    let (pa, pb) = (pose(0, 0.0, a), pose(1, dt, b));
    let (ra, rb) = (rotate(&pa, theta), rotate(&pb, theta));
    let mut out = Vec::with_capacity(24);
    for mode in FeatureMode::ALL {
        out.extend_from_slice(edge_features(&pa, &pb, mode, 0.5)?.as_array());
        out.extend_from_slice(edge_features(&ra, &rb, mode, 0.5)?.as_array());
    }
    Ok(out)
}

#[wasm_bindgen(js_name = featuresUnderRotation)]
pub fn features_under_rotation_js(a: &[f64], b: &[f64], dt: f64, theta: f64) -> Result<Vec<f64>, JsError> {
    features_under_rotation(a, b, dt, theta).map_err(js_err)
}

fn demo_sequence(seed: u32) -> polartrack::Result<(Sequence, ClassConfig)> {
    let scene = SceneConfig {
        n_agents: 10,
        ..SceneConfig::default()
    };
    let (_, det) = generate_dataset("demo", 1, &scene, &NoiseSpec::default(), seed as u64)?;
    let seq = group_sequences(&det).pop().unwrap_or(Sequence {
        id: "demo".into(),
        frames: Vec::new(),
    });
    Ok((seq, scene.class_config(1.1)))
}

/// One noisy synthetic sequence whose gated graphs can be inspected.
#[wasm_bindgen]
pub struct Scene {
    seq: Sequence,
    classes: ClassConfig,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Scene, JsError> {
        Scene::generate(seed).map_err(js_err)
    }

    #[wasm_bindgen(js_name = numFrames)]
    pub fn num_frames(&self) -> usize {
        self.seq.frames.len()
    }

    /// Graph over frames `first .. first + len` at the given gate scale.
    ///
    /// Layout: `[n_nodes, n_edges, nodes..., edges...]` with six values per
    /// node `(x, y, yaw, frame, class_id, is_clutter)` and four per edge
    /// `(src, dst, is_inter_frame, joins_same_object)`.
    pub fn graph(&self, first: usize, len: usize, gate_scale: f64) -> Result<Vec<f64>, JsError> {
        self.graph_flat(first, len, gate_scale).map_err(js_err)
    }
}

impl Scene {
    pub fn generate(seed: u32) -> polartrack::Result<Scene> {
        let (seq, classes) = demo_sequence(seed)?;
        Ok(Scene { seq, classes })
    }

    pub fn graph_flat(&self, first: usize, len: usize, gate_scale: f64) -> polartrack::Result<Vec<f64>> {
        let frames: Vec<_> = self.seq.frames.iter().skip(first).take(len.max(1)).cloned().collect();
        let clip = Clip { frames };
        let cfg = GraphConfig {
            gate_scale,
            max_frame_gap: None,
            ..GraphConfig::default()
        };
        let g = build_clip_graph(&clip, &self.classes, &cfg)?;
        let mut out = vec![g.nodes.len() as f64, g.edges.len() as f64];
        for d in &g.nodes {
            out.extend([d.x, d.y, d.yaw, d.frame as f64, d.class_id as f64, d.gt_track_id.is_none() as u8 as f64]);
        }
        for e in &g.edges {
            let (a, b) = (&g.nodes[e.src], &g.nodes[e.dst]);
            let same = a.gt_track_id.is_some() && a.gt_track_id == b.gt_track_id;
            out.extend([
                e.src as f64,
                e.dst as f64,
                (e.kind == EdgeKind::InterFrame) as u8 as f64,
                same as u8 as f64,
            ]);
        }
        Ok(out)
    }
}

/// Streams a noisy synthetic sequence through the online graph, linking
/// with ground-truth (oracle) edge scores so only the graph policy varies.
#[wasm_bindgen]
pub struct OnlineDemo {
    seq: Sequence,
    state: TrackState,
    next: usize,
}

#[wasm_bindgen]
impl OnlineDemo {
    /// `connectivity` is `prune_skip`, `consecutive` or `dense`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, connectivity: &str) -> Result<OnlineDemo, JsError> {
        OnlineDemo::create(seed, connectivity).map_err(js_err)
    }

    /// Process the next frame; false once the sequence is exhausted.
    pub fn step(&mut self) -> Result<bool, JsError> {
        self.advance().map_err(js_err)
    }

    #[wasm_bindgen(js_name = framesDone)]
    pub fn frames_done(&self) -> usize {
        self.next
    }

    /// Layout: `[n_nodes, n_edges, nodes..., edges...]` with five values per
    /// retained node `(id, x, y, track, frame)` and three per retained edge
    /// `(node_a, node_b, is_inter_frame)`.
    pub fn snapshot(&self) -> Vec<f64> {
        let nodes: Vec<(usize, &Detection)> = self.state.live_nodes().collect();
        let edges = self.state.edges();
        let mut out = vec![nodes.len() as f64, edges.len() as f64];
        for (id, d) in &nodes {
            let track = self.state.track_of(*id).unwrap_or(0);
            out.extend([*id as f64, d.x, d.y, track as f64, d.frame as f64]);
        }
        for (&(a, b), e) in edges {
            out.extend([a as f64, b as f64, (e.kind == EdgeKind::InterFrame) as u8 as f64]);
        }
        out
    }
}

impl OnlineDemo {
    pub fn create(seed: u32, connectivity: &str) -> polartrack::Result<OnlineDemo> {
        let (seq, classes) = demo_sequence(seed)?;
        let config = OnlineConfig {
            connectivity: connectivity.parse::<Connectivity>()?,
            ..OnlineConfig::default()
        };
        let state = TrackState::new(config, GraphConfig::default(), classes)?;
        Ok(OnlineDemo { seq, state, next: 0 })
    }

    pub fn advance(&mut self) -> polartrack::Result<bool> {
        let Some(frame) = self.seq.frames.get(self.next) else {
            return Ok(false);
        };
        let view = self.state.advance_frame(&frame.detections, frame.t)?;
        let z = oracle_logits(&view.graph);
        let cands: Vec<OnlineCandidate> = view
            .candidates
            .iter()
            .map(|c| OnlineCandidate {
                score: polartrack::autodiff::sigmoid(z[c.edge]),
                ..*c
            })
            .collect();
        let decisions = greedy_assign_online(&cands, &Thresholds::default())?;
        self.state.commit(&view, &decisions)?;
        self.next += 1;
        Ok(true)
    }

    pub fn state(&self) -> &TrackState {
        &self.state
    }
}
