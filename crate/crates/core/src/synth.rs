//! Synthetic ground truth from unicycle agents, and a detector corruption
//! model (misses, clutter, pose noise, scores).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::detections::{ClassConfig, ClassSpec, Detection};
use crate::error::{Error, Result};
use crate::relgeom::wrap;

/// Motion envelope of one agent class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentClass {
    pub class_id: u32,
    pub name: String,
    /// Speed range, m/s.
    pub speed: [f64; 2],
    /// Yaw-rate range, rad/s.
    pub yaw_rate: [f64; 2],
    /// Relative spawn frequency.
    pub weight: f64,
}

/// One simulated agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub class_id: u32,
    pub speed: [f64; 2],
    pub yaw_rate: [f64; 2],
    pub spawn_frame: u32,
    /// First frame the agent is no longer present.
    pub despawn_frame: u32,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub n_agents: usize,
    pub n_frames: u32,
    pub frame_period: f64,
    /// Agents spawn uniformly in [-half_extent, half_extent]².
    pub half_extent: f64,
    /// Speed and yaw rate are redrawn every this many frames.
    pub resample_every: u32,
    /// Minimal number of frames an agent lives.
    pub min_lifetime: u32,
    pub classes: Vec<AgentClass>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_agents: 12,
            n_frames: 20,
            frame_period: 0.5,
            half_extent: 40.0,
            resample_every: 4,
            min_lifetime: 6,
            classes: vec![
                AgentClass {
                    class_id: 0,
                    name: "car".into(),
                    speed: [4.0, 12.0],
                    yaw_rate: [-0.3, 0.3],
                    weight: 0.6,
                },
                AgentClass {
                    class_id: 1,
                    name: "pedestrian".into(),
                    speed: [0.5, 1.8],
                    yaw_rate: [-0.6, 0.6],
                    weight: 0.4,
                },
            ],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::Config(format!("n_frames must be >= 2, got {}", self.n_frames)));
        }
        if !(self.frame_period > 0.0) || !(self.half_extent > 0.0) || self.resample_every == 0 {
            return Err(Error::Config(
                "frame_period, half_extent and resample_every must be positive".into(),
            ));
        }
        if self.classes.is_empty() || self.classes.iter().all(|c| c.weight <= 0.0) {
            return Err(Error::Config("scene needs at least one weighted class".into()));
        }
        for c in &self.classes {
            check_ranges(c.speed, c.yaw_rate, self.frame_period)
                .map_err(|e| Error::Config(format!("class {}: {e}", c.name)))?;
        }
        Ok(())
    }

    /// Class table whose v_max bounds every simulated speed.
    pub fn class_config(&self, safety: f64) -> ClassConfig {
        ClassConfig {
            classes: self
                .classes
                .iter()
                .map(|c| ClassSpec {
                    id: c.class_id,
                    name: c.name.clone(),
                    v_max: (c.speed[1] * safety).max(crate::graph::VMAX_FLOOR),
                    score_threshold: 0.0,
                })
                .collect(),
        }
    }
}

fn check_ranges(speed: [f64; 2], yaw_rate: [f64; 2], tau: f64) -> std::result::Result<(), String> {
    if !(0.0 <= speed[0] && speed[0] <= speed[1]) || !speed[1].is_finite() {
        return Err(format!("bad speed range {speed:?}"));
    }
    if !(yaw_rate[0] <= yaw_rate[1]) {
        return Err(format!("bad yaw-rate range {yaw_rate:?}"));
    }
    let max_turn = yaw_rate[0].abs().max(yaw_rate[1].abs()) * tau;
    if !(max_turn < std::f64::consts::FRAC_PI_2) {
        return Err(format!("per-frame heading change {max_turn} must stay below π/2"));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Simulate agents with unicycle kinematics. Frame `k` has time `k · τ`.
pub fn simulate_agents(
    seq_id: &str,
    agents: &[AgentSpec],
    n_frames: u32,
    frame_period: f64,
    resample_every: u32,
    seed: u64,
) -> Result<Vec<Detection>> {
    if n_frames < 2 || resample_every == 0 {
        return Err(Error::InvalidInput("need n_frames >= 2 and resample_every >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (id, a) in agents.iter().enumerate() {
        check_ranges(a.speed, a.yaw_rate, frame_period).map_err(Error::InvalidInput)?;
        if a.spawn_frame >= a.despawn_frame || a.despawn_frame > n_frames {
            return Err(Error::InvalidInput(format!(
                "agent {id}: spawn {} / despawn {} outside 0..{n_frames}",
                a.spawn_frame, a.despawn_frame
            )));
        }
        let (mut x, mut y, mut yaw) = (a.x, a.y, wrap(a.yaw));
        let (mut v, mut w) = (0.0, 0.0);
        for (k, frame) in (a.spawn_frame..a.despawn_frame).enumerate() {
            if k as u32 % resample_every == 0 {
                v = draw(&mut rng, a.speed);
                w = draw(&mut rng, a.yaw_rate);
            }
            out.push(Detection {
                seq_id: seq_id.to_string(),
                frame,
                t: frame as f64 * frame_period,
                x,
                y,
                yaw,
                class_id: a.class_id,
                score: 1.0,
                gt_track_id: Some(id as u64),
            });
            x += v * yaw.cos() * frame_period;
            y += v * yaw.sin() * frame_period;
            yaw = wrap(yaw + w * frame_period);
        }
    }
    out.sort_by_key(|d| (d.frame, d.gt_track_id));
    Ok(out)
}

/// Random agents for a scene, then their simulated ground truth.
pub fn generate_scene(seq_id: &str, cfg: &SceneConfig, seed: u64) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = cfg.classes.iter().map(|c| c.weight.max(0.0)).sum();
    let lifetime = cfg.min_lifetime.clamp(2, cfg.n_frames);
    let agents: Vec<AgentSpec> = (0..cfg.n_agents)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let class = cfg
                .classes
                .iter()
                .find(|c| {
                    pick -= c.weight.max(0.0);
                    pick < 0.0
                })
                .unwrap_or(&cfg.classes[cfg.classes.len() - 1]);
            let spawn = rng.random_range(0..=cfg.n_frames - lifetime);
            let despawn = rng.random_range(spawn + lifetime..=cfg.n_frames);
            AgentSpec {
                class_id: class.class_id,
                speed: class.speed,
                yaw_rate: class.yaw_rate,
                spawn_frame: spawn,
                despawn_frame: despawn,
                x: rng.random_range(-cfg.half_extent..cfg.half_extent),
                y: rng.random_range(-cfg.half_extent..cfg.half_extent),
                yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            }
        })
        .collect();
    simulate_agents(seq_id, &agents, cfg.n_frames, cfg.frame_period, cfg.resample_every, rng.random())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Mean clutter boxes per frame.
    pub fp_rate: f64,
    /// Probability of missing a true box.
    pub fn_prob: f64,
    pub pos_std: f64,
    pub yaw_std: f64,
    pub true_score: [f64; 2],
    pub clutter_score: [f64; 2],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            fp_rate: 1.0,
            fn_prob: 0.1,
            pos_std: 0.15,
            yaw_std: 0.05,
            true_score: [0.5, 1.0],
            clutter_score: [0.1, 0.6],
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            fp_rate: 0.0,
            fn_prob: 0.0,
            pos_std: 0.0,
            yaw_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |r: [f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0;
        if !(0.0..=1.0).contains(&self.fn_prob)
            || !(self.fp_rate >= 0.0)
            || !(self.pos_std >= 0.0)
            || !(self.yaw_std >= 0.0)
            || !unit(self.true_score)
            || !unit(self.clutter_score)
        {
            return Err(Error::Config(format!("invalid noise spec {self:?}")));
        }
        Ok(())
    }
}

/// Turn ground truth into detector-like output: misses, Gaussian pose noise,
/// Poisson clutter drawn uniformly over the ground truth's extent, and
/// scores that are higher on average for true boxes. `frames` lists every
/// frame of the sequence as `(index, t)`; clutter classes are drawn from
/// `class_ids`.
pub fn corrupt(
    gt: &[Detection],
    frames: &[(u32, f64)],
    class_ids: &[u32],
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<Detection>> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Normal::new(0.0, noise.pos_std).map_err(|e| Error::Config(e.to_string()))?;
    let yaw = Normal::new(0.0, noise.yaw_std).map_err(|e| Error::Config(e.to_string()))?;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for d in gt {
        lo = [lo[0].min(d.x), lo[1].min(d.y)];
        hi = [hi[0].max(d.x), hi[1].max(d.y)];
    }
    let seq_id = gt.first().map(|d| d.seq_id.clone()).unwrap_or_default();
    let mut out = Vec::new();
    for &(frame, t) in frames {
        for d in gt.iter().filter(|d| d.frame == frame) {
            if rng.random_bool(noise.fn_prob) {
                continue;
            }
            let mut c = d.clone();
            c.x += pos.sample(&mut rng);
            c.y += pos.sample(&mut rng);
            c.yaw = wrap(c.yaw + yaw.sample(&mut rng));
            c.score = draw(&mut rng, noise.true_score);
            out.push(c);
        }
        if noise.fp_rate > 0.0 && !class_ids.is_empty() && lo[0].is_finite() {
            let n = Poisson::new(noise.fp_rate)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(&mut rng) as usize;
            for _ in 0..n {
                out.push(Detection {
                    seq_id: seq_id.clone(),
                    frame,
                    t,
                    x: draw(&mut rng, [lo[0], hi[0]]),
                    y: draw(&mut rng, [lo[1], hi[1]]),
                    yaw: wrap(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
                    class_id: class_ids[rng.random_range(0..class_ids.len())],
                    score: draw(&mut rng, noise.clutter_score),
                    gt_track_id: None,
                });
            }
        }
    }
    Ok(out)
}

/// Every frame index of a simulated sequence with its timestamp.
pub fn frame_list(cfg: &SceneConfig) -> Vec<(u32, f64)> {
    (0..cfg.n_frames)
        .map(|k| (k, k as f64 * cfg.frame_period))
        .collect()
}

/// Ground truth plus corrupted detections for `n` sequences named
/// `{prefix}{i}`; sequence `i` derives its seeds from `seed` and `i`.
pub fn generate_dataset(
    prefix: &str,
    n: usize,
    scene: &SceneConfig,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(Vec<Detection>, Vec<Detection>)> {
    let class_ids: Vec<u32> = scene.classes.iter().map(|c| c.class_id).collect();
    let frames = frame_list(scene);
    let mut gt_all = Vec::new();
    let mut det_all = Vec::new();
    for i in 0..n {
        let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        let id = format!("{prefix}{i}");
        let gt = generate_scene(&id, scene, s)?;
        let dets = corrupt(&gt, &frames, &class_ids, noise, s ^ 0x5DEE_CE66)?;
        gt_all.extend(gt);
        det_all.extend(dets);
    }
    Ok((gt_all, det_all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::group_sequences;
    use crate::graph::{build_clip_graph, label_from_nodes, GraphConfig};
    use std::collections::HashMap;

    fn straight(v: f64, w: f64) -> AgentSpec {
        AgentSpec {
            class_id: 0,
            speed: [v, v],
            yaw_rate: [w, w],
            spawn_frame: 0,
            despawn_frame: 40,
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        }
    }

    #[test]
    fn straight_line_kinematics() {
        let d = simulate_agents("s", &[straight(5.0, 0.0)], 40, 0.5, 4, 0).unwrap();
        for (k, det) in d.iter().take(3).enumerate() {
            assert!((det.x - 2.5 * k as f64).abs() < 1e-12);
            assert_eq!(det.y, 0.0);
        }
    }

    #[test]
    fn constant_turn_rate_traces_a_circle() {
        let (v, w, tau) = (4.0, 0.2, 0.5);
        let d = simulate_agents("s", &[straight(v, w)], 40, tau, 4, 0).unwrap();
        // Discrete unicycle steps are chords of length v·τ turning by ω·τ;
        // their vertices lie on a circle of radius (v·τ/2)/sin(ω·τ/2).
        let chord_r = (v * tau / 2.0) / (w * tau / 2.0).sin();
        let continuous_r = v / w;
        assert!((chord_r - continuous_r).abs() / continuous_r < 1e-3);
        // center: perpendicular bisector of the first chord, rotated by half a turn
        let cy = chord_r * (w * tau / 2.0).cos();
        let cx = v * tau / 2.0;
        for p in &d {
            let r = (p.x - cx).hypot(p.y - cy);
            assert!((r - chord_r).abs() < 1e-9, "{r} vs {chord_r}");
        }
    }

    #[test]
    fn reproducible_and_validated() {
        let cfg = SceneConfig::default();
        let a = generate_scene("s", &cfg, 3).unwrap();
        let b = generate_scene("s", &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene("s", &cfg, 4).unwrap());
        let bad = SceneConfig {
            n_frames: 1,
            ..cfg.clone()
        };
        assert!(generate_scene("s", &bad, 0).is_err());
        let mut spin = cfg;
        spin.classes[0].yaw_rate = [-4.0, 4.0];
        assert!(generate_scene("s", &spin, 0).is_err());
    }

    #[test]
    fn zero_noise_is_identity_with_scores() {
        let cfg = SceneConfig::default();
        let gt = generate_scene("s", &cfg, 1).unwrap();
        let out = corrupt(&gt, &frame_list(&cfg), &[0, 1], &NoiseSpec::zero(), 2).unwrap();
        assert_eq!(out.len(), gt.len());
        for (o, g) in out.iter().zip(&gt) {
            let mut o = o.clone();
            assert!((0.5..=1.0).contains(&o.score));
            o.score = g.score;
            assert_eq!(&o, g);
        }
    }

    #[test]
    fn full_miss_rate_is_empty() {
        let cfg = SceneConfig::default();
        let gt = generate_scene("s", &cfg, 1).unwrap();
        let noise = NoiseSpec {
            fn_prob: 1.0,
            fp_rate: 0.0,
            ..NoiseSpec::default()
        };
        assert!(corrupt(&gt, &frame_list(&cfg), &[0, 1], &noise, 2).unwrap().is_empty());
    }

    #[test]
    fn clutter_count_is_poisson() {
        let cfg = SceneConfig {
            n_frames: 100,
            ..SceneConfig::default()
        };
        let gt = generate_scene("s", &cfg, 5).unwrap();
        let noise = NoiseSpec {
            fp_rate: 2.0,
            fn_prob: 0.0,
            ..NoiseSpec::default()
        };
        let out = corrupt(&gt, &frame_list(&cfg), &[0, 1], &noise, 6).unwrap();
        let clutter = out.iter().filter(|d| d.gt_track_id.is_none()).count() as f64;
        // mean 200, σ = √200
        assert!((clutter - 200.0).abs() <= 3.0 * 200f64.sqrt(), "{clutter}");
        let kept: HashMap<(u32, u64), ()> = out
            .iter()
            .filter_map(|d| d.gt_track_id.map(|id| ((d.frame, id), ())))
            .collect();
        assert_eq!(kept.len(), gt.len());
        for d in out.iter().filter(|d| d.gt_track_id.is_none()) {
            assert!((0.1..=0.6).contains(&d.score));
        }
    }

    #[test]
    fn true_tracks_pass_the_velocity_gate() {
        let cfg = SceneConfig::default();
        let classes = cfg.class_config(1.1);
        for seed in 0..5 {
            let gt = generate_scene("s", &cfg, seed).unwrap();
            let seq = group_sequences(&gt).pop().unwrap();
            let clip = crate::detections::Clip::from(&seq);
            let g = build_clip_graph(&clip, &classes, &GraphConfig::default()).unwrap();
            let g = label_from_nodes(g).unwrap();
            let positives = g.inter_labels().unwrap().iter().filter(|l| **l).count();
            // every same-track pair of a clip is reachable
            let mut per_track: HashMap<u64, usize> = HashMap::new();
            for d in &gt {
                *per_track.entry(d.gt_track_id.unwrap()).or_default() += 1;
            }
            let pairs: usize = per_track.values().map(|&n| n * (n - 1) / 2).sum();
            assert_eq!(positives, pairs);
        }
    }
}
