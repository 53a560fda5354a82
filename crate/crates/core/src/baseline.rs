//! Greedy nearest-neighbour frame-to-frame tracker, used as a reference.

use crate::detections::{ClassConfig, Sequence, TrackedDetection};
use crate::error::Result;
use crate::graph::GraphConfig;
use crate::tracker::score_by_track_mean;

struct Active {
    id: u64,
    x: f64,
    y: f64,
    t: f64,
    class_id: u32,
    last_frame: u32,
}

/// Each frame, match detections to live tracks greedily by ascending
/// distance, same class only, within the velocity gate `gate_scale · v_max ·
/// Δt`. Unmatched detections start tracks; tracks unseen for more than
/// `max_age` frames end. Output scores are the mean detection score of each
/// track.
pub fn track_nearest_neighbor(
    seq: &Sequence,
    classes: &ClassConfig,
    graph_cfg: &GraphConfig,
    max_age: usize,
) -> Result<Vec<TrackedDetection>> {
    graph_cfg.validate()?;
    let mut active: Vec<Active> = Vec::new();
    let mut next_id = 0u64;
    let mut out = Vec::new();
    for frame in &seq.frames {
        let k = frame.index;
        active.retain(|a| (k - a.last_frame) as usize <= max_age + 1);
        let mut pairs = Vec::new();
        for (di, d) in frame.detections.iter().enumerate() {
            let v_max = classes.v_max(d.class_id)?;
            for (ai, a) in active.iter().enumerate() {
                if a.class_id != d.class_id {
                    continue;
                }
                let dist = (a.x - d.x).hypot(a.y - d.y);
                if dist <= graph_cfg.gate_scale * v_max * (d.t - a.t) {
                    pairs.push((dist, di, ai));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut det_track: Vec<Option<usize>> = vec![None; frame.detections.len()];
        let mut taken = vec![false; active.len()];
        for (_, di, ai) in pairs {
            if det_track[di].is_none() && !taken[ai] {
                det_track[di] = Some(ai);
                taken[ai] = true;
            }
        }
        for (di, d) in frame.detections.iter().enumerate() {
            let ai = match det_track[di] {
                Some(ai) => ai,
                None => {
                    active.push(Active {
                        id: next_id,
                        x: d.x,
                        y: d.y,
                        t: d.t,
                        class_id: d.class_id,
                        last_frame: k,
                    });
                    next_id += 1;
                    active.len() - 1
                }
            };
            let a = &mut active[ai];
            (a.x, a.y, a.t, a.last_frame) = (d.x, d.y, d.t, k);
            out.push(TrackedDetection::new(d, a.id));
        }
    }
    score_by_track_mean(&mut out);
    Ok(out)
}
