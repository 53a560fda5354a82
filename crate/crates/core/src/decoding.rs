//! Greedy constrained assignment of positive edges and track extraction.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::graph::{ClipGraph, EdgeKind};

pub const DEFAULT_THRESHOLD: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Positive,
    Negative,
    /// Above threshold but conflicting with a higher-scoring positive edge.
    Suppressed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDecision {
    /// Index into the graph's edge list.
    pub edge: usize,
    pub score: f64,
    pub decision: Decision,
}

/// Per-class edge score thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub default: f64,
    pub per_class: BTreeMap<u32, f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::uniform(DEFAULT_THRESHOLD)
    }
}

impl Thresholds {
    pub fn uniform(t: f64) -> Self {
        Self {
            default: t,
            per_class: BTreeMap::new(),
        }
    }

    pub fn get(&self, class_id: u32) -> f64 {
        self.per_class.get(&class_id).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |t: f64| (0.0..=1.0).contains(&t);
        if !ok(self.default) || !self.per_class.values().all(|&t| ok(t)) {
            return Err(Error::Config("decode thresholds must lie in [0,1]".into()));
        }
        Ok(())
    }
}

struct Components {
    parent: Vec<usize>,
    frames: Vec<BTreeSet<u32>>,
}

impl Components {
    fn new(frames: impl Iterator<Item = u32>) -> Self {
        let frames: Vec<BTreeSet<u32>> = frames.map(|f| BTreeSet::from([f])).collect();
        Self {
            parent: (0..frames.len()).collect(),
            frames,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Whether joining the components of `a` and `b` keeps one node per frame.
    fn compatible(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        ra == rb || self.frames[ra].is_disjoint(&self.frames[rb])
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.frames[ra].len() >= self.frames[rb].len() {
            (ra, rb)
        } else {
            (rb, ra)
        };
        let moved = std::mem::take(&mut self.frames[small]);
        self.frames[big].extend(moved);
        self.parent[small] = big;
    }
}

/// Threshold edge scores and greedily accept positives from the highest
/// score down, so that every node keeps at most one positive edge towards any
/// other frame.
///
/// `logits` follow [`ClipGraph::inter_edges`] order. An edge that would join
/// two partial tracks occupying a common frame is also suppressed, so the
/// accepted edges always decode into tracks with one detection per frame.
pub fn greedy_assign(logits: &[f64], g: &ClipGraph, thresholds: &Thresholds) -> Result<Vec<EdgeDecision>> {
    thresholds.validate()?;
    let inter = g.inter_edges();
    if logits.len() != inter.len() {
        return Err(Error::InvalidInput(format!(
            "{} logits for {} inter-frame edges",
            logits.len(),
            inter.len()
        )));
    }
    let mut decisions: Vec<EdgeDecision> = inter
        .iter()
        .zip(logits)
        .map(|(&edge, &z)| {
            let score = sigmoid(z);
            let class = g.nodes[g.edges[edge].src].class_id;
            let decision = if score >= thresholds.get(class) {
                Decision::Suppressed
            } else {
                Decision::Negative
            };
            EdgeDecision {
                edge,
                score,
                decision,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..decisions.len())
        .filter(|&i| decisions[i].decision != Decision::Negative)
        .collect();
    order.sort_by(|&a, &b| {
        decisions[b]
            .score
            .total_cmp(&decisions[a].score)
            .then(decisions[a].edge.cmp(&decisions[b].edge))
    });
    let mut taken: HashSet<(usize, u32)> = HashSet::new();
    let mut comps = Components::new(g.nodes.iter().map(|n| n.frame));
    for i in order {
        let e = &g.edges[decisions[i].edge];
        let (a, b) = (e.src, e.dst);
        let (fa, fb) = (g.nodes[a].frame, g.nodes[b].frame);
        if taken.contains(&(a, fb)) || taken.contains(&(b, fa)) || !comps.compatible(a, b) {
            continue;
        }
        taken.insert((a, fb));
        taken.insert((b, fa));
        comps.union(a, b);
        decisions[i].decision = Decision::Positive;
    }
    Ok(decisions)
}

/// Connected components over positive edges. Returns one track index per node;
/// indices are numbered by each component's smallest node.
pub fn extract_tracks(decisions: &[EdgeDecision], g: &ClipGraph) -> Result<Vec<usize>> {
    let mut taken: HashSet<(usize, u32)> = HashSet::new();
    let mut comps = Components::new(g.nodes.iter().map(|n| n.frame));
    for d in decisions.iter().filter(|d| d.decision == Decision::Positive) {
        let e = g
            .edges
            .get(d.edge)
            .ok_or(Error::IndexOutOfRange {
                index: d.edge,
                len: g.edges.len(),
            })?;
        if e.kind != EdgeKind::InterFrame {
            return Err(Error::Constraint(format!("edge {} is not inter-frame", d.edge)));
        }
        let (a, b) = (e.src, e.dst);
        let (fa, fb) = (g.nodes[a].frame, g.nodes[b].frame);
        if !taken.insert((a, fb)) || !taken.insert((b, fa)) {
            return Err(Error::Constraint(format!(
                "node has two positive edges to one frame (edge {})",
                d.edge
            )));
        }
        if !comps.compatible(a, b) {
            return Err(Error::Constraint(format!(
                "edge {} joins two detections of one frame into a track",
                d.edge
            )));
        }
        comps.union(a, b);
    }
    let mut label_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(g.nodes.len());
    for i in 0..g.nodes.len() {
        let r = comps.find(i);
        let next = label_of_root.len();
        out.push(*label_of_root.entry(r).or_insert(next));
    }
    Ok(out)
}

/// A candidate link from a new detection to an existing track (or to an
/// unassigned past detection) in online mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineCandidate {
    pub edge: usize,
    pub new_node: usize,
    /// Track the past endpoint belongs to.
    pub track: u64,
    pub class_id: u32,
    pub score: f64,
}

/// Greedy one-to-one assignment between new detections and tracks: edges are
/// visited from the highest score down and accepted when above threshold and
/// neither the detection nor the track holds a positive edge yet.
pub fn greedy_assign_online(cands: &[OnlineCandidate], thresholds: &Thresholds) -> Result<Vec<EdgeDecision>> {
    thresholds.validate()?;
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .score
            .total_cmp(&cands[a].score)
            .then(cands[a].edge.cmp(&cands[b].edge))
    });
    let mut out: Vec<EdgeDecision> = cands
        .iter()
        .map(|c| EdgeDecision {
            edge: c.edge,
            score: c.score,
            decision: Decision::Negative,
        })
        .collect();
    let mut used_nodes = HashSet::new();
    let mut used_tracks = HashSet::new();
    for i in order {
        let c = &cands[i];
        if c.score < thresholds.get(c.class_id) {
            continue;
        }
        if used_nodes.contains(&c.new_node) || used_tracks.contains(&c.track) {
            out[i].decision = Decision::Suppressed;
            continue;
        }
        used_nodes.insert(c.new_node);
        used_tracks.insert(c.track);
        out[i].decision = Decision::Positive;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::Detection;
    use crate::graph::Edge;
    use crate::relgeom::EdgeFeature;
    use proptest::prelude::*;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn node(frame: u32) -> Detection {
        Detection {
            seq_id: "s".into(),
            frame,
            t: frame as f64,
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            class_id: 0,
            score: 1.0,
            gt_track_id: None,
        }
    }

    fn graph(frames: &[u32], pairs: &[(usize, usize)]) -> ClipGraph {
        ClipGraph {
            nodes: frames.iter().map(|&f| node(f)).collect(),
            edges: pairs
                .iter()
                .map(|&(a, b)| Edge {
                    src: a,
                    dst: b,
                    kind: if frames[a] == frames[b] {
                        EdgeKind::IntraFrame
                    } else {
                        EdgeKind::InterFrame
                    },
                    feature: EdgeFeature::default(),
                })
                .collect(),
            labels: None,
        }
    }

    #[test]
    fn conflicting_edges_are_suppressed() {
        // a, b in frame 0; c in frame 1
        let g = graph(&[0, 0, 1], &[(0, 2), (1, 2)]);
        let d = greedy_assign(&[logit(0.9), logit(0.8)], &g, &Thresholds::uniform(0.5)).unwrap();
        assert_eq!(d[0].decision, Decision::Positive);
        assert_eq!(d[1].decision, Decision::Suppressed);
    }

    #[test]
    fn below_threshold_is_negative() {
        let g = graph(&[0, 1, 2], &[(0, 1), (1, 2)]);
        let d = greedy_assign(&[logit(0.3), logit(0.4)], &g, &Thresholds::uniform(0.5)).unwrap();
        assert!(d.iter().all(|d| d.decision == Decision::Negative));
        let tracks = extract_tracks(&d, &g).unwrap();
        assert_eq!(tracks, vec![0, 1, 2]);
    }

    #[test]
    fn constraint_is_per_frame() {
        let g = graph(&[0, 1, 2], &[(0, 1), (0, 2)]);
        let d = greedy_assign(&[logit(0.9), logit(0.7)], &g, &Thresholds::uniform(0.5)).unwrap();
        assert!(d.iter().all(|d| d.decision == Decision::Positive));
    }

    #[test]
    fn components_become_tracks() {
        let g = graph(&[0, 1, 5, 2], &[(0, 1), (1, 3), (0, 3)]);
        let pos = |edge| EdgeDecision {
            edge,
            score: 0.9,
            decision: Decision::Positive,
        };
        assert_eq!(extract_tracks(&[pos(0), pos(1)], &g).unwrap(), vec![0, 0, 1, 0]);
        assert_eq!(extract_tracks(&[pos(0), pos(1), pos(2)], &g).unwrap(), vec![0, 0, 1, 0]);
        let none: Vec<EdgeDecision> = vec![];
        assert_eq!(extract_tracks(&none, &g).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn extract_rejects_violations() {
        let g = graph(&[0, 0, 1], &[(0, 2), (1, 2)]);
        let pos = |edge| EdgeDecision {
            edge,
            score: 0.9,
            decision: Decision::Positive,
        };
        assert!(matches!(extract_tracks(&[pos(0), pos(1)], &g), Err(Error::Constraint(_))));
    }

    #[test]
    fn chain_collision_is_suppressed() {
        // a(0)-b(1), b(1)-c(2), c(2)-d(0) would put a and d into one track
        let g = graph(&[0, 1, 2, 0], &[(0, 1), (1, 2), (3, 2)]);
        let d = greedy_assign(&[logit(0.9), logit(0.85), logit(0.8)], &g, &Thresholds::uniform(0.5)).unwrap();
        assert_eq!(d[2].decision, Decision::Suppressed);
        extract_tracks(&d, &g).unwrap();
    }

    #[test]
    fn online_assignment_is_one_to_one() {
        let c = |edge, new_node, track, score| OnlineCandidate {
            edge,
            new_node,
            track,
            class_id: 0,
            score,
        };
        let cands = [c(0, 10, 1, 0.9), c(1, 10, 2, 0.8), c(2, 11, 1, 0.85), c(3, 11, 2, 0.4)];
        let d = greedy_assign_online(&cands, &Thresholds::uniform(0.5)).unwrap();
        let kinds: Vec<Decision> = d.iter().map(|d| d.decision).collect();
        assert_eq!(
            kinds,
            vec![Decision::Positive, Decision::Suppressed, Decision::Suppressed, Decision::Negative]
        );
    }

    fn arb_case() -> impl Strategy<Value = (Vec<u32>, Vec<(usize, usize)>, Vec<f64>, f64)> {
        (3usize..14).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u32..5, n),
                proptest::collection::vec((0..n, 0..n), 0..40),
                proptest::collection::vec(0.0f64..1.0, 40),
                0.3f64..0.9,
            )
        })
        .prop_map(|(frames, pairs, scores, thr)| {
            let pairs: Vec<(usize, usize)> = pairs
                .into_iter()
                .filter(|&(a, b)| frames[a] < frames[b])
                .collect();
            (frames, pairs, scores, thr)
        })
    }

    proptest! {
        #[test]
        fn decoded_edges_respect_frame_constraint((frames, pairs, scores, thr) in arb_case()) {
            let g = graph(&frames, &pairs);
            let logits: Vec<f64> = scores[..pairs.len()].iter().map(|&p| logit(p.clamp(1e-6, 1.0 - 1e-6))).collect();
            let d = greedy_assign(&logits, &g, &Thresholds::uniform(thr)).unwrap();
            let mut seen = HashSet::new();
            for x in d.iter().filter(|d| d.decision == Decision::Positive) {
                let e = &g.edges[x.edge];
                prop_assert!(seen.insert((e.src, frames[e.dst])));
                prop_assert!(seen.insert((e.dst, frames[e.src])));
            }
            prop_assert!(extract_tracks(&d, &g).is_ok());
            prop_assert_eq!(&greedy_assign(&logits, &g, &Thresholds::uniform(thr)).unwrap(), &d);
            let higher = greedy_assign(&logits, &g, &Thresholds::uniform((thr + 0.1).min(1.0))).unwrap();
            let count = |v: &[EdgeDecision]| v.iter().filter(|d| d.decision == Decision::Positive).count();
            let above = |t: f64| logits.iter().filter(|&&z| sigmoid(z) >= t).count();
            prop_assert!(above(thr + 0.1) <= above(thr));
            prop_assert!(count(&higher) <= above(thr + 0.1));
        }
    }
}
