//! Offline and online tracking pipelines.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::autodiff::sigmoid;
use crate::decoding::{extract_tracks, greedy_assign, greedy_assign_online, OnlineCandidate, Thresholds};
use crate::detections::{ClassConfig, Clip, Detection, Sequence, TrackedDetection};
use crate::error::Result;
use crate::graph::{build_clip_graph, ClipGraph, GraphConfig};
use crate::model::{DirectionMask, Model};
use crate::online::{FrameView, OnlineConfig, TrackState};

/// Replace every score by the mean detection score of its track.
pub fn score_by_track_mean(out: &mut [TrackedDetection]) {
    let mut acc: HashMap<(&str, u64), (f64, usize)> = HashMap::new();
    for d in out.iter() {
        let e = acc.entry((d.seq_id.as_str(), d.track_id)).or_default();
        e.0 += d.score;
        e.1 += 1;
    }
    let means: HashMap<(String, u64), f64> = acc
        .into_iter()
        .map(|((s, id), (sum, n))| ((s.to_string(), id), sum / n as f64))
        .collect();
    for d in out.iter_mut() {
        d.score = means[&(d.seq_id.clone(), d.track_id)];
    }
}

fn keep_scored(seq: &Sequence, classes: &ClassConfig) -> Result<Sequence> {
    let mut s = seq.clone();
    for f in &mut s.frames {
        let mut kept = Vec::with_capacity(f.detections.len());
        for d in f.detections.drain(..) {
            if d.score >= classes.get(d.class_id)?.score_threshold {
                kept.push(d);
            }
        }
        f.detections = kept;
    }
    Ok(s)
}

/// Logits that reproduce ground-truth identities: strongly positive for
/// edges joining nodes of one ground-truth track, strongly negative
/// otherwise.
pub fn oracle_logits(g: &ClipGraph) -> Vec<f64> {
    g.inter_edges()
        .into_iter()
        .map(|k| {
            let e = &g.edges[k];
            match (g.nodes[e.src].gt_track_id, g.nodes[e.dst].gt_track_id) {
                (Some(a), Some(b)) if a == b => 10.0,
                _ => -10.0,
            }
        })
        .collect()
}

/// Track a whole sequence as one graph, scoring its inter-frame edges with
/// `logits`.
pub fn track_offline_with<F>(
    seq: &Sequence,
    classes: &ClassConfig,
    graph_cfg: &GraphConfig,
    thresholds: &Thresholds,
    logits: F,
) -> Result<Vec<TrackedDetection>>
where
    F: FnOnce(&ClipGraph) -> Result<Vec<f64>>,
{
    let seq = keep_scored(seq, classes)?;
    let g = build_clip_graph(&Clip::from(&seq), classes, graph_cfg)?;
    let z = logits(&g)?;
    let decisions = greedy_assign(&z, &g, thresholds)?;
    let tracks = extract_tracks(&decisions, &g)?;
    let mut out: Vec<TrackedDetection> = g
        .nodes
        .iter()
        .zip(&tracks)
        .map(|(d, &t)| TrackedDetection::new(d, t as u64))
        .collect();
    score_by_track_mean(&mut out);
    Ok(out)
}

pub fn track_offline(
    model: &Model,
    seq: &Sequence,
    classes: &ClassConfig,
    graph_cfg: &GraphConfig,
    thresholds: &Thresholds,
) -> Result<Vec<TrackedDetection>> {
    track_offline_with(seq, classes, graph_cfg, thresholds, |g| {
        model.forward(g, DirectionMask::Offline)
    })
}

/// Stream a sequence frame by frame through the evolving graph, scoring each
/// frame's view with `logits`. Output scores are running means of each
/// track's detection scores, so they only depend on the past.
pub fn track_online_with<F>(
    seq: &Sequence,
    classes: &ClassConfig,
    graph_cfg: &GraphConfig,
    online_cfg: &OnlineConfig,
    thresholds: &Thresholds,
    mut logits: F,
) -> Result<Vec<TrackedDetection>>
where
    F: FnMut(&FrameView) -> Result<Vec<f64>>,
{
    thresholds.validate()?;
    let seq = keep_scored(seq, classes)?;
    let mut state = TrackState::new(*online_cfg, *graph_cfg, classes.clone())?;
    let mut running: HashMap<u64, (f64, usize)> = HashMap::new();
    let mut out = Vec::with_capacity(seq.num_detections());
    for frame in &seq.frames {
        let view = state.advance_frame(&frame.detections, frame.t)?;
        let z = if view.candidates.is_empty() {
            Vec::new()
        } else {
            logits(&view)?
        };
        let cands: Vec<OnlineCandidate> = view
            .candidates
            .iter()
            .map(|c| OnlineCandidate {
                score: sigmoid(z[c.edge]),
                ..*c
            })
            .collect();
        let decisions = greedy_assign_online(&cands, thresholds)?;
        for mut d in state.commit(&view, &decisions)? {
            let e = running.entry(d.track_id).or_default();
            e.0 += d.score;
            e.1 += 1;
            d.score = e.0 / e.1 as f64;
            out.push(d);
        }
    }
    Ok(out)
}

pub fn track_online(
    model: &Model,
    seq: &Sequence,
    classes: &ClassConfig,
    graph_cfg: &GraphConfig,
    online_cfg: &OnlineConfig,
    thresholds: &Thresholds,
) -> Result<Vec<TrackedDetection>> {
    track_online_with(seq, classes, graph_cfg, online_cfg, thresholds, |v| {
        model.forward(&v.graph, DirectionMask::Online)
    })
}

/// How sequences are tracked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pipeline {
    Offline,
    Online(OnlineConfig),
    NearestNeighbor { max_age: usize },
}

/// Track many sequences in parallel; output follows sequence order.
pub fn track_all(
    model: &Model,
    seqs: &[Sequence],
    classes: &ClassConfig,
    graph_cfg: &GraphConfig,
    thresholds: &Thresholds,
    pipeline: Pipeline,
) -> Result<Vec<TrackedDetection>> {
    let per_seq: Vec<Result<Vec<TrackedDetection>>> = seqs
        .par_iter()
        .map(|s| match pipeline {
            Pipeline::Offline => track_offline(model, s, classes, graph_cfg, thresholds),
            Pipeline::Online(o) => track_online(model, s, classes, graph_cfg, &o, thresholds),
            Pipeline::NearestNeighbor { max_age } => {
                crate::baseline::track_nearest_neighbor(s, classes, graph_cfg, max_age)
            }
        })
        .collect();
    let mut out = Vec::new();
    for r in per_seq {
        out.extend(r?);
    }
    Ok(out)
}

/// Ground-truth detections re-labelled with their own track ids.
pub fn gt_as_tracks(gts: &[Detection]) -> Vec<TrackedDetection> {
    gts.iter()
        .filter_map(|d| d.gt_track_id.map(|id| TrackedDetection::new(d, id)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::group_sequences;
    use crate::online::Connectivity;
    use crate::synth::{generate_scene, SceneConfig};

    fn partition(out: &[TrackedDetection], gt: &[Detection]) -> Vec<Vec<(u32, u64)>> {
        let id_of: HashMap<(u32, u64), u64> = gt
            .iter()
            .map(|d| ((d.frame, d.x.to_bits()), d.gt_track_id.unwrap()))
            .collect();
        let mut by: HashMap<u64, Vec<(u32, u64)>> = HashMap::new();
        for d in out {
            by.entry(d.track_id).or_default().push((d.frame, id_of[&(d.frame, d.x.to_bits())]));
        }
        let mut v: Vec<Vec<(u32, u64)>> = by.into_values().collect();
        for t in &mut v {
            t.sort();
        }
        v.sort();
        v
    }

    #[test]
    fn oracle_offline_and_online_agree_on_clean_ground_truth() {
        let scene = SceneConfig::default();
        let classes = scene.class_config(1.1);
        let cfg = GraphConfig {
            max_frame_gap: Some(10),
            ..GraphConfig::default()
        };
        for seed in 0..5 {
            let gt = generate_scene("s", &scene, seed).unwrap();
            let seq = group_sequences(&gt).pop().unwrap();
            let th = Thresholds::uniform(0.5);
            let off = track_offline_with(&seq, &classes, &cfg, &th, |g| Ok(oracle_logits(g))).unwrap();
            for conn in Connectivity::ALL {
                let o = OnlineConfig {
                    connectivity: conn,
                    ..OnlineConfig::default()
                };
                let on = track_online_with(&seq, &classes, &cfg, &o, &th, |v| Ok(oracle_logits(&v.graph))).unwrap();
                assert_eq!(partition(&off, &gt), partition(&on, &gt), "{conn:?}");
            }
            // one track per ground-truth id
            let p = partition(&off, &gt);
            assert!(p.iter().all(|t| t.iter().all(|&(_, g)| g == t[0].1)));
            let ids: std::collections::HashSet<u64> = gt.iter().map(|d| d.gt_track_id.unwrap()).collect();
            assert_eq!(p.len(), ids.len());
        }
    }

    #[test]
    fn track_mean_scores() {
        let d = |score, id| TrackedDetection {
            score,
            ..TrackedDetection::new(&generate_scene("s", &SceneConfig::default(), 0).unwrap()[0], id)
        };
        let mut v = vec![d(0.2, 1), d(0.4, 1), d(0.9, 2)];
        score_by_track_mean(&mut v);
        assert!((v[0].score - 0.3).abs() < 1e-12 && (v[1].score - 0.3).abs() < 1e-12);
        assert_eq!(v[2].score, 0.9);
    }
}
