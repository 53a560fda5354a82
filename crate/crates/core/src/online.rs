//! Frame-by-frame evolving graph for online tracking.
//!
//! Every live detection belongs to a track; a detection that has not been
//! linked yet is a one-node track. Each frame, new detections get candidate
//! edges to the existing tracks, the model scores them on the live graph
//! (past and present only), and the decisions are committed back.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoding::{Decision, EdgeDecision, OnlineCandidate};
use crate::detections::{ClassConfig, Detection, TrackedDetection};
use crate::error::{Error, Result};
use crate::graph::{ClipGraph, Edge, EdgeKind, GraphConfig};
use crate::relgeom::EdgeFeature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Keep every past edge and link new nodes to all retained nodes.
    Dense,
    /// Keep only edges between temporally consecutive track nodes.
    Consecutive,
    /// Drop negative edges; link each track's newest node to all of its
    /// retained nodes.
    #[default]
    PruneSkip,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [Connectivity::Dense, Connectivity::Consecutive, Connectivity::PruneSkip];

    pub fn name(self) -> &'static str {
        match self {
            Connectivity::Dense => "dense",
            Connectivity::Consecutive => "consecutive",
            Connectivity::PruneSkip => "prune_skip",
        }
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Connectivity::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown connectivity {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    pub connectivity: Connectivity,
    /// Retained nodes per track.
    pub history_len: usize,
    /// Frames a track survives without a new detection.
    pub max_age: usize,
    /// Frames a node stays in the dense graph.
    pub dense_window: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::PruneSkip,
            history_len: 3,
            max_age: 3,
            dense_window: 10,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history_len < 1 || self.dense_window < 1 {
            return Err(Error::Config("online.history_len and online.dense_window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LiveNode {
    det: Detection,
    track: u64,
    step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveEdge {
    pub kind: EdgeKind,
    pub feature: EdgeFeature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineTrack {
    pub class_id: u32,
    /// Live node ids, oldest first.
    pub nodes: VecDeque<usize>,
    pub last_step: usize,
}

/// The graph handed to the model for one frame.
#[derive(Debug, Clone)]
pub struct FrameView {
    pub graph: ClipGraph,
    /// Live node id of every graph node.
    pub live_ids: Vec<usize>,
    /// Graph indices of this frame's detections, in input order.
    pub new_nodes: Vec<usize>,
    /// Candidate links; `edge` indexes the model's logits (inter-frame edge
    /// order of `graph`).
    pub candidates: Vec<OnlineCandidate>,
    step: usize,
}

#[derive(Debug, Clone)]
pub struct TrackState {
    pub config: OnlineConfig,
    graph_cfg: GraphConfig,
    classes: ClassConfig,
    nodes: BTreeMap<usize, LiveNode>,
    /// Keyed by (pole, other) live ids.
    edges: BTreeMap<(usize, usize), LiveEdge>,
    tracks: BTreeMap<u64, OnlineTrack>,
    next_node: usize,
    next_track_id: u64,
    step: usize,
    last_t: Option<f64>,
    pending: Option<Vec<usize>>,
}

impl TrackState {
    pub fn new(config: OnlineConfig, graph_cfg: GraphConfig, classes: ClassConfig) -> Result<Self> {
        config.validate()?;
        graph_cfg.validate()?;
        classes.validate()?;
        Ok(Self {
            config,
            graph_cfg: GraphConfig {
                max_frame_gap: None,
                ..graph_cfg
            },
            classes,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            tracks: BTreeMap::new(),
            next_node: 0,
            next_track_id: 0,
            step: 0,
            last_t: None,
            pending: None,
        })
    }

    pub fn tracks(&self) -> &BTreeMap<u64, OnlineTrack> {
        &self.tracks
    }

    pub fn edges(&self) -> &BTreeMap<(usize, usize), LiveEdge> {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn track_of(&self, node: usize) -> Option<u64> {
        self.nodes.get(&node).map(|n| n.track)
    }

    /// Retained detections keyed by live node id.
    pub fn live_nodes(&self) -> impl Iterator<Item = (usize, &Detection)> {
        self.nodes.iter().map(|(&id, n)| (id, &n.det))
    }

    /// Add one frame of detections (all stamped `t`) and return the graph to
    /// score.
    pub fn advance_frame(&mut self, dets: &[Detection], t: f64) -> Result<FrameView> {
        if self.pending.is_some() {
            return Err(Error::InvalidInput("advance_frame called before committing the previous frame".into()));
        }
        if !t.is_finite() {
            return Err(Error::Validation(format!("non-finite frame time {t}")));
        }
        if let Some(last) = self.last_t {
            if t <= last {
                return Err(Error::Validation(format!("non-monotone frame time {t} after {last}")));
            }
        }
        if let Some(d) = dets.iter().find(|d| d.t != t) {
            return Err(Error::Validation(format!("detection at t={} in frame stamped {t}", d.t)));
        }
        for d in dets {
            self.classes.get(d.class_id)?;
        }
        self.step += 1;
        self.last_t = Some(t);

        let new_ids: Vec<usize> = dets
            .iter()
            .map(|d| {
                let id = self.next_node;
                self.next_node += 1;
                self.nodes.insert(
                    id,
                    LiveNode {
                        det: d.clone(),
                        track: u64::MAX,
                        step: self.step,
                    },
                );
                id
            })
            .collect();

        let mut extra: Vec<(usize, usize, Edge)> = Vec::new();
        for (a, &ia) in new_ids.iter().enumerate() {
            for &ib in &new_ids[a + 1..] {
                self.try_edge(ia, ib, &mut extra)?;
            }
        }
        // candidate links, each tagged with the past endpoint's track
        let mut cand_pairs: Vec<(usize, usize, u64)> = Vec::new();
        for &n in &new_ids {
            let class_id = self.nodes[&n].det.class_id;
            for (&tid, tr) in &self.tracks {
                if tr.class_id != class_id {
                    continue;
                }
                let targets: Vec<usize> = match self.config.connectivity {
                    Connectivity::Dense => tr.nodes.iter().copied().collect(),
                    _ => tr.nodes.back().copied().into_iter().collect(),
                };
                for p in targets {
                    cand_pairs.push((p, n, tid));
                }
            }
        }
        let mut cand_tracks = Vec::new();
        for (p, n, tid) in cand_pairs {
            if self.try_edge(p, n, &mut extra)? {
                cand_tracks.push((extra.len() - 1, n, tid));
            }
        }

        // assemble the view
        let live_ids: Vec<usize> = self.nodes.keys().copied().collect();
        let index: HashMap<usize, usize> = live_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut graph = ClipGraph {
            nodes: live_ids.iter().map(|id| self.nodes[id].det.clone()).collect(),
            edges: Vec::with_capacity(self.edges.len() + extra.len()),
            labels: None,
        };
        let mut logit_index = 0usize;
        for (&(s, d), e) in &self.edges {
            graph.edges.push(Edge {
                src: index[&s],
                dst: index[&d],
                kind: e.kind,
                feature: e.feature,
            });
            if e.kind == EdgeKind::InterFrame {
                logit_index += 1;
            }
        }
        let mut logit_of_extra = vec![usize::MAX; extra.len()];
        for (k, (s, d, e)) in extra.iter().enumerate() {
            graph.edges.push(Edge {
                src: index[s],
                dst: index[d],
                kind: e.kind,
                feature: e.feature,
            });
            if e.kind == EdgeKind::InterFrame {
                logit_of_extra[k] = logit_index;
                logit_index += 1;
            }
        }
        let candidates = cand_tracks
            .iter()
            .map(|&(k, n, tid)| OnlineCandidate {
                edge: logit_of_extra[k],
                new_node: index[&n],
                track: tid,
                class_id: self.nodes[&n].det.class_id,
                score: 0.0,
            })
            .collect();
        // stage the new intra edges; candidate edges are settled in commit
        for (s, d, e) in &extra {
            if e.kind == EdgeKind::IntraFrame {
                self.edges.insert(
                    (*s, *d),
                    LiveEdge {
                        kind: e.kind,
                        feature: e.feature,
                    },
                );
            }
        }
        let new_nodes = new_ids.iter().map(|id| index[id]).collect();
        self.pending = Some(new_ids);
        Ok(FrameView {
            graph,
            live_ids,
            new_nodes,
            candidates,
            step: self.step,
        })
    }

    /// Gate a pair of live nodes and, if admitted, record the edge.
    fn try_edge(&self, a: usize, b: usize, out: &mut Vec<(usize, usize, Edge)>) -> Result<bool> {
        let (da, db) = (&self.nodes[&a].det, &self.nodes[&b].det);
        if da.class_id != db.class_id {
            return Ok(false);
        }
        let v_max = self.classes.v_max(da.class_id)?;
        let Some(kind) = self.graph_cfg.admits(da, db, v_max) else {
            return Ok(false);
        };
        let e = self.graph_cfg.make_edge(a, da, b, db, kind);
        out.push((e.src, e.dst, e));
        Ok(true)
    }

    fn link(&mut self, a: usize, b: usize, kind: EdgeKind) {
        let e = self
            .graph_cfg
            .make_edge(a, &self.nodes[&a].det, b, &self.nodes[&b].det, kind);
        self.edges.insert(
            (e.src, e.dst),
            LiveEdge {
                kind,
                feature: e.feature,
            },
        );
    }

    fn retire_node(&mut self, id: usize) {
        self.nodes.remove(&id);
        self.edges.retain(|&(s, d), _| s != id && d != id);
    }

    /// Apply the decisions for the pending frame's candidates and return the
    /// track id of every new detection, in input order. Decisions index
    /// candidates by their `edge` (logit index); candidates without a
    /// decision count as negative.
    pub fn commit(&mut self, view: &FrameView, decisions: &[EdgeDecision]) -> Result<Vec<TrackedDetection>> {
        let Some(new_ids) = self.pending.take() else {
            return Err(Error::InvalidInput("commit without a pending frame".into()));
        };
        if view.step != self.step {
            self.pending = Some(new_ids);
            return Err(Error::InvalidInput("commit with a stale frame view".into()));
        }
        let by_edge: HashMap<usize, &OnlineCandidate> = view.candidates.iter().map(|c| (c.edge, c)).collect();
        let mut positives: Vec<&OnlineCandidate> = Vec::new();
        for d in decisions {
            let Some(c) = by_edge.get(&d.edge) else {
                self.pending = Some(new_ids);
                return Err(Error::InvalidInput(format!("decision for nonexistent candidate edge {}", d.edge)));
            };
            if d.decision == Decision::Positive {
                positives.push(c);
            }
        }
        let mut seen_nodes = HashSet::new();
        let mut seen_tracks = HashSet::new();
        for c in &positives {
            if !seen_nodes.insert(c.new_node) || !seen_tracks.insert(c.track) {
                self.pending = Some(new_ids);
                return Err(Error::Constraint(format!(
                    "more than one positive edge for detection {} or track {}",
                    c.new_node, c.track
                )));
            }
        }

        let mut joined: HashMap<usize, u64> = HashMap::new();
        for c in &positives {
            joined.insert(view.live_ids[c.new_node], c.track);
        }
        let mut out = Vec::with_capacity(new_ids.len());
        for &n in &new_ids {
            let tid = match joined.get(&n) {
                Some(&tid) => {
                    self.extend_track(tid, n);
                    tid
                }
                None => {
                    let tid = self.next_track_id;
                    self.next_track_id += 1;
                    self.tracks.insert(
                        tid,
                        OnlineTrack {
                            class_id: self.nodes[&n].det.class_id,
                            nodes: VecDeque::from([n]),
                            last_step: self.step,
                        },
                    );
                    tid
                }
            };
            let node = self.nodes.get_mut(&n).expect("new node is live");
            node.track = tid;
            out.push(TrackedDetection::new(&node.det, tid));
        }

        if self.config.connectivity == Connectivity::Dense {
            // negative candidate edges stay as context
            for c in &view.candidates {
                let e = &view.graph.edges[view.graph.inter_edges()[c.edge]];
                self.edges.insert(
                    (view.live_ids[e.src], view.live_ids[e.dst]),
                    LiveEdge {
                        kind: e.kind,
                        feature: e.feature,
                    },
                );
            }
        }
        self.age_out();
        Ok(out)
    }

    fn extend_track(&mut self, tid: u64, n: usize) {
        let step = self.step;
        let conn = self.config.connectivity;
        let h = self.config.history_len;
        let tr = self.tracks.get_mut(&tid).expect("candidate track is live");
        let newest = *tr.nodes.back().expect("tracks are never empty");
        tr.nodes.push_back(n);
        tr.last_step = step;
        let mut dropped = Vec::new();
        if conn != Connectivity::Dense {
            while tr.nodes.len() > h {
                dropped.extend(tr.nodes.pop_front());
            }
        }
        let older: Vec<usize> = tr.nodes.iter().copied().filter(|&m| m != n).collect();
        for d in dropped {
            self.retire_node(d);
        }
        match conn {
            Connectivity::PruneSkip => {
                for m in older {
                    self.link(m, n, EdgeKind::InterFrame);
                }
            }
            Connectivity::Consecutive | Connectivity::Dense => {
                if self.nodes.contains_key(&newest) {
                    self.link(newest, n, EdgeKind::InterFrame);
                }
            }
        }
    }

    fn age_out(&mut self) {
        let step = self.step;
        let stale: Vec<u64> = self
            .tracks
            .iter()
            .filter(|(_, t)| step - t.last_step > self.config.max_age)
            .map(|(&id, _)| id)
            .collect();
        for id in stale {
            let tr = self.tracks.remove(&id).expect("listed track");
            for n in tr.nodes {
                self.retire_node(n);
            }
        }
        if self.config.connectivity == Connectivity::Dense {
            let window = self.config.dense_window;
            let old: Vec<usize> = self
                .nodes
                .iter()
                .filter(|(_, n)| step - n.step >= window)
                .map(|(&id, _)| id)
                .collect();
            for id in old {
                let tid = self.nodes[&id].track;
                self.retire_node(id);
                if let Some(tr) = self.tracks.get_mut(&tid) {
                    tr.nodes.retain(|&m| m != id);
                    if tr.nodes.is_empty() {
                        self.tracks.remove(&tid);
                    }
                }
            }
        }
    }
}
