//! Pairwise relational features between two oriented detections.
//!
//! The default parametrization expresses the displacement between two
//! detections in the local polar frame of the pole (the earlier detection):
//! the pole's center is the origin and its heading is the polar axis. The
//! result depends only on the pair, so it is invariant to the choice of world
//! frame. Two ablation variants are provided: the same polar encoding with raw
//! distance instead of velocity, and world-frame Cartesian offsets normalized
//! by elapsed time.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::detections::Detection;
use crate::error::{Error, Result};

/// Guard against division by a (near) zero time gap.
pub const TAU_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// (velocity, polar angle, heading difference, time gap).
    #[default]
    PolarTime,
    /// (distance, polar angle, heading difference, time gap).
    PolarRaw,
    /// (Δx/Δt, Δy/Δt, heading difference, time gap) in the world frame.
    CartesianTime,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [
        FeatureMode::PolarTime,
        FeatureMode::PolarRaw,
        FeatureMode::CartesianTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::PolarTime => "polar_time",
            FeatureMode::PolarRaw => "polar_raw",
            FeatureMode::CartesianTime => "cartesian_time",
        }
    }

    pub fn is_polar(self) -> bool {
        !matches!(self, FeatureMode::CartesianTime)
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature_mode {s:?}")))
    }
}

/// The four-component initial edge feature.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeFeature(pub [f64; 4]);

impl EdgeFeature {
    pub fn as_array(&self) -> &[f64; 4] {
        &self.0
    }
}

/// Wrap an angle into (-π, π].
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite(format!("angle {a}")));
    }
    Ok(wrap(a))
}

pub(crate) fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Order two detections so that the first is the pole. Returns true when the
/// arguments have to be swapped.
///
/// Inter-frame pairs use the earlier detection as pole. Same-frame pairs pick
/// the endpoint whose own polar angle and heading difference towards the
/// other endpoint compare smaller; this depends only on the relative pose, so
/// the choice survives rigid transforms and node relabeling. Exact ties fall
/// back to the lexicographic world pose (x, y, yaw).
pub fn pole_first(a: &Detection, b: &Detection) -> bool {
    if a.frame != b.frame {
        return b.frame < a.frame;
    }
    let key = |p: &Detection, o: &Detection| {
        let f = edge_features_unchecked(p, o, FeatureMode::PolarRaw, 1.0).0;
        (f[1], f[2])
    };
    let (ka, kb) = (key(a, b), key(b, a));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then_with(|| lex_pose(a, b))
        == Ordering::Greater
}

fn lex_pose(a: &Detection, b: &Detection) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.yaw.total_cmp(&b.yaw))
}

/// Relational feature of `other` seen from `pole`.
///
/// `tau` is the nominal frame period used as the time scale of same-frame
/// pairs. The caller is responsible for passing the pair in pole order (see
/// [`pole_first`]).
pub fn edge_features(
    pole: &Detection,
    other: &Detection,
    mode: FeatureMode,
    tau: f64,
) -> Result<EdgeFeature> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("frame period must be > 0, got {tau}")));
    }
    Ok(edge_features_unchecked(pole, other, mode, tau))
}

pub(crate) fn edge_features_unchecked(
    pole: &Detection,
    other: &Detection,
    mode: FeatureMode,
    tau: f64,
) -> EdgeFeature {
    let intra = pole.frame == other.frame;
    let dt = if intra { 0.0 } else { other.t - pole.t };
    let time_scale = if intra { tau } else { dt.abs().max(TAU_EPS) };
    let d_yaw = wrap(pole.yaw - other.yaw);
    match mode {
        FeatureMode::PolarTime | FeatureMode::PolarRaw => {
            let dx = other.x - pole.x;
            let dy = other.y - pole.y;
            let dist = dx.hypot(dy);
            let angle = if dist == 0.0 {
                0.0
            } else {
                let (s, c) = pole.yaw.sin_cos();
                // signed CCW angle from heading (c, s) to displacement
                let cross = c * dy - s * dx;
                let dot = c * dx + s * dy;
                cross.atan2(dot)
            };
            let first = if mode == FeatureMode::PolarTime {
                dist / time_scale
            } else {
                dist
            };
            EdgeFeature([first, wrap(angle), d_yaw, dt])
        }
        FeatureMode::CartesianTime => {
            let dx = pole.x - other.x;
            let dy = pole.y - other.y;
            EdgeFeature([dx / time_scale, dy / time_scale, d_yaw, dt])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(frame: u32, t: f64, x: f64, y: f64, yaw: f64) -> Detection {
        Detection {
            seq_id: "s".into(),
            frame,
            t,
            x,
            y,
            yaw,
            class_id: 0,
            score: 1.0,
            gt_track_id: None,
        }
    }

    fn wrap_oracle(a: f64) -> f64 {
        a - 2.0 * PI * (a / (2.0 * PI)).round()
    }

    fn rigid(d: &Detection, theta: f64, tx: f64, ty: f64) -> Detection {
        let (s, c) = theta.sin_cos();
        let mut out = d.clone();
        out.x = c * d.x - s * d.y + tx;
        out.y = s * d.x + c * d.y + ty;
        out.yaw = wrap(d.yaw + theta);
        out
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        let r = wrap_angle(1.5 * PI).unwrap();
        assert!((r - wrap_oracle(1.5 * PI)).abs() < 1e-12);
        assert!((r + PI / 2.0).abs() < 1e-12);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn polar_time_hand_example() {
        let a = det(0, 0.0, 0.0, 0.0, 0.0);
        let b = det(1, 1.0, 3.0, 4.0, 0.5);
        let f = edge_features(&a, &b, FeatureMode::PolarTime, 0.5).unwrap().0;
        assert!((f[0] - 5.0).abs() < 1e-12);
        assert!((f[1] - 4f64.atan2(3.0)).abs() < 1e-12);
        assert!((f[1] - 0.927295218).abs() < 1e-8);
        assert!((f[2] + 0.5).abs() < 1e-12);
        assert_eq!(f[3], 1.0);
    }

    #[test]
    fn zero_displacement() {
        let a = det(0, 0.0, 2.0, 3.0, 0.7);
        let b = det(1, 1.0, 2.0, 3.0, 0.7);
        let f = edge_features(&a, &b, FeatureMode::PolarTime, 0.5).unwrap().0;
        assert_eq!(f, [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn intra_frame_uses_frame_period() {
        let a = det(2, 1.0, 0.0, 0.0, 0.0);
        let b = det(2, 1.0, 0.0, 2.0, 0.0);
        let f = edge_features(&a, &b, FeatureMode::PolarTime, 0.5).unwrap().0;
        assert_eq!(f[0], 4.0);
        assert!((f[1] - PI / 2.0).abs() < 1e-12);
        assert_eq!(f[3], 0.0);
        assert!(edge_features(&a, &b, FeatureMode::PolarTime, 0.0).is_err());
    }

    #[test]
    fn cartesian_uses_pole_minus_other() {
        let a = det(0, 0.0, 0.0, 0.0, 0.0);
        let b = det(1, 2.0, 3.0, 4.0, 0.5);
        let f = edge_features(&a, &b, FeatureMode::CartesianTime, 0.5).unwrap().0;
        assert_eq!(f, [-1.5, -2.0, -0.5, 2.0]);
    }

    #[test]
    fn rigid_transform_example() {
        let a = det(0, 0.0, 0.0, 0.0, 0.0);
        let b = det(1, 1.0, 3.0, 4.0, 0.5);
        let th = 37f64.to_radians();
        let (ta, tb) = (rigid(&a, th, 10.0, -5.0), rigid(&b, th, 10.0, -5.0));
        let p0 = edge_features(&a, &b, FeatureMode::PolarTime, 0.5).unwrap().0;
        let p1 = edge_features(&ta, &tb, FeatureMode::PolarTime, 0.5).unwrap().0;
        for k in 0..4 {
            assert!((p0[k] - p1[k]).abs() < 1e-9);
        }
        let c0 = edge_features(&a, &b, FeatureMode::CartesianTime, 0.5).unwrap().0;
        let c1 = edge_features(&ta, &tb, FeatureMode::CartesianTime, 0.5).unwrap().0;
        assert!((c0[0] - c1[0]).abs() > 1e-3 || (c0[1] - c1[1]).abs() > 1e-3);
    }

    #[test]
    fn pole_ordering() {
        let a = det(0, 0.0, 5.0, 0.0, 0.0);
        let b = det(1, 0.5, 0.0, 0.0, 0.0);
        assert!(!pole_first(&a, &b));
        assert!(pole_first(&b, &a));
        // b sees c at +90°, c sees b at -90°: c is the pole
        let c = det(1, 0.5, 0.0, 1.0, 0.0);
        assert!(pole_first(&b, &c));
        assert!(!pole_first(&c, &b));
        // coincident poses tie everywhere and keep their order
        let d = det(1, 0.5, 2.0, 0.0, 0.0);
        let e = det(1, 0.5, 2.0, 0.0, 0.0);
        assert!(!pole_first(&d, &e));
    }

    #[test]
    fn raw_matches_time_at_one_second() {
        let a = det(0, 0.0, 1.0, -2.0, 0.3);
        let b = det(1, 1.0, -4.0, 2.5, -2.0);
        let t = edge_features(&a, &b, FeatureMode::PolarTime, 0.5).unwrap();
        let r = edge_features(&a, &b, FeatureMode::PolarRaw, 0.5).unwrap();
        assert_eq!(t, r);
    }

    #[test]
    fn constant_velocity_consistency() {
        // dyadic coordinates keep the differences exact
        let step = (1.25, -0.75);
        let yaw = (step.1 as f64).atan2(step.0);
        let p: Vec<Detection> = (0..3)
            .map(|k| {
                let k = k as f64;
                det(k as u32, 0.5 * k, 3.0 + k * step.0, 8.0 + k * step.1, yaw)
            })
            .collect();
        let ab = edge_features(&p[0], &p[1], FeatureMode::PolarTime, 0.5).unwrap();
        let bc = edge_features(&p[1], &p[2], FeatureMode::PolarTime, 0.5).unwrap();
        assert_eq!(ab, bc);
    }

    proptest! {
        #[test]
        fn wrap_stays_in_range(a in -1e4f64..1e4) {
            let r = wrap_angle(a).unwrap();
            prop_assert!(r > -PI && r <= PI);
            let k = ((a - r) / (2.0 * PI)).round();
            prop_assert!((a - r - 2.0 * PI * k).abs() < 1e-9);
        }

        #[test]
        fn polar_se2_invariance(
            xa in -50.0f64..50.0, ya in -50.0f64..50.0, yawa in -PI..PI,
            xb in -50.0f64..50.0, yb in -50.0f64..50.0, yawb in -PI..PI,
            dt in 0.1f64..5.0, th in -PI..PI, tx in -100.0f64..100.0, ty in -100.0f64..100.0,
        ) {
            let a = det(0, 0.0, xa, ya, yawa);
            let b = det(1, dt, xb, yb, yawb);
            for mode in [FeatureMode::PolarTime, FeatureMode::PolarRaw] {
                let f0 = edge_features(&a, &b, mode, 0.5).unwrap().0;
                let f1 = edge_features(&rigid(&a, th, tx, ty), &rigid(&b, th, tx, ty), mode, 0.5).unwrap().0;
                for k in [0, 3] {
                    prop_assert!((f0[k] - f1[k]).abs() < 1e-9);
                }
                for k in [1, 2] {
                    prop_assert!(wrap(f0[k] - f1[k]).abs() < 1e-9);
                }
            }
        }
    }
}
