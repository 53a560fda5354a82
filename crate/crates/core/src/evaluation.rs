//! CLEAR-MOT counts, recall-normalized MOTA, and AMOTA over score sweeps.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::detections::{Detection, TrackedDetection};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Center-distance matching radius, meters.
    pub match_radius_m: f64,
    /// Number of recall operating points.
    pub n_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_radius_m: 2.0,
            n_points: 40,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius_m > 0.0) || self.n_points == 0 {
            return Err(Error::Config(format!(
                "eval.match_radius_m must be > 0 and eval.n_points >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatchResult {
    /// (gt track id, predicted track id, center distance).
    pub matches: Vec<(u64, u64, f64)>,
    pub fp: usize,
    pub fn_: usize,
}

/// Greedy one-to-one matching by ascending center distance among same-class
/// pairs within `radius`; equal distances go to the lower prediction index.
pub fn match_frame(preds: &[&TrackedDetection], gts: &[&Detection], radius: f64) -> Result<FrameMatchResult> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("match radius must be > 0, got {radius}")));
    }
    let mut pairs = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            if p.class_id != g.class_id {
                continue;
            }
            let d = (p.x - g.x).hypot(p.y - g.y);
            if d <= radius {
                pairs.push((d, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut out = FrameMatchResult::default();
    for (d, pi, gi) in pairs {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        let gid = gts[gi].gt_track_id.ok_or(Error::MissingGroundTruth(gi))?;
        out.matches.push((gid, preds[pi].track_id, d));
    }
    out.fp = preds.len() - out.matches.len();
    out.fn_ = gts.len() - out.matches.len();
    Ok(out)
}

/// Summed CLEAR-MOT counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MotCounts {
    pub gt: usize,
    pub matched: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
}

impl MotCounts {
    /// `None` when there is no ground truth.
    pub fn mota(&self) -> Option<f64> {
        (self.gt > 0).then(|| 1.0 - (self.fp + self.fn_ + self.ids) as f64 / self.gt as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.gt > 0).then(|| self.matched as f64 / self.gt as f64)
    }

    pub fn add(&mut self, o: &MotCounts) {
        self.gt += o.gt;
        self.matched += o.matched;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ids += o.ids;
    }

    /// Recall-normalized MOTA at target recall `r`, clamped to [0, 1].
    pub fn motar(&self, r: f64) -> f64 {
        if self.gt == 0 || r <= 0.0 {
            return 0.0;
        }
        let p = self.gt as f64;
        let errs = (self.ids + self.fp + self.fn_) as f64;
        (1.0 - (errs - (1.0 - r) * p) / (r * p)).clamp(0.0, 1.0)
    }
}

/// CLEAR-MOT counts over the frames of one sequence, in temporal order. An
/// identity switch is a ground-truth track whose matched prediction id
/// differs from the one at its previous matched frame.
pub fn clear_mot(frames: &[FrameMatchResult]) -> MotCounts {
    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut c = MotCounts::default();
    for f in frames {
        c.matched += f.matches.len();
        c.gt += f.matches.len() + f.fn_;
        c.fp += f.fp;
        c.fn_ += f.fn_;
        for &(g, p, _) in &f.matches {
            if let Some(prev) = last.insert(g, p) {
                if prev != p {
                    c.ids += 1;
                }
            }
        }
    }
    c
}

/// Ground truth and predictions of one class, indexed by sequence and frame.
struct Indexed<'a> {
    frames: BTreeMap<&'a str, BTreeMap<u32, (Vec<&'a Detection>, Vec<&'a TrackedDetection>)>>,
}

impl<'a> Indexed<'a> {
    fn new(preds: &'a [TrackedDetection], gts: &'a [Detection], class_id: Option<u32>) -> Self {
        let keep = |c: u32| class_id.is_none_or(|k| k == c);
        let mut frames: BTreeMap<&str, BTreeMap<u32, (Vec<&Detection>, Vec<&TrackedDetection>)>> = BTreeMap::new();
        for g in gts.iter().filter(|g| keep(g.class_id)) {
            frames.entry(&g.seq_id).or_default().entry(g.frame).or_default().0.push(g);
        }
        for p in preds.iter().filter(|p| keep(p.class_id)) {
            frames.entry(&p.seq_id).or_default().entry(p.frame).or_default().1.push(p);
        }
        Self { frames }
    }

    fn counts(&self, min_score: f64, radius: f64) -> Result<MotCounts> {
        let mut total = MotCounts::default();
        for seq in self.frames.values() {
            let mut results = Vec::with_capacity(seq.len());
            for (gts, preds) in seq.values() {
                let kept: Vec<&TrackedDetection> = preds.iter().copied().filter(|p| p.score >= min_score).collect();
                results.push(match_frame(&kept, gts, radius)?);
            }
            total.add(&clear_mot(&results));
        }
        Ok(total)
    }
}

/// CLEAR-MOT counts of all predictions against the ground truth, matched per
/// (sequence, frame).
pub fn evaluate(preds: &[TrackedDetection], gts: &[Detection], radius: f64) -> Result<MotCounts> {
    check_gt(gts)?;
    Indexed::new(preds, gts, None).counts(f64::NEG_INFINITY, radius)
}

fn check_gt(gts: &[Detection]) -> Result<()> {
    match gts.iter().position(|g| g.gt_track_id.is_none()) {
        Some(i) => Err(Error::MissingGroundTruth(i)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub target_recall: f64,
    /// Score threshold chosen for this point; `None` when unreachable.
    pub threshold: Option<f64>,
    pub counts: MotCounts,
    pub motar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub points: Vec<RecallPoint>,
    pub amota: f64,
    /// Counts with every prediction kept.
    pub all: MotCounts,
}

impl ClassReport {
    /// The reachable point with the highest MOTAR.
    pub fn best(&self) -> Option<&RecallPoint> {
        self.points
            .iter()
            .filter(|p| p.threshold.is_some())
            .max_by(|a, b| a.motar.total_cmp(&b.motar))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Mean of per-class AMOTA.
    pub amota: f64,
}

/// AMOTA per class and averaged over classes with ground truth.
///
/// Predictions are filtered by `score ≥ threshold`. For every target recall
/// r ∈ {1/n, …, 1} the largest threshold reaching recall ≥ r is used and
/// MOTAR is computed there; unreachable targets score 0. AMOTA is the mean
/// over all n targets.
pub fn amota(preds: &[TrackedDetection], gts: &[Detection], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_gt(gts)?;
    if let Some(p) = preds.iter().find(|p| !p.score.is_finite()) {
        return Err(Error::NonFinite(format!("prediction score {}", p.score)));
    }
    let class_ids: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    let mut classes = Vec::new();
    for &c in &class_ids {
        let idx = Indexed::new(preds, gts, Some(c));
        let mut scores: Vec<f64> = preds.iter().filter(|p| p.class_id == c).map(|p| p.score).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        scores.dedup();
        // counts at every distinct threshold, highest first
        let sweep: Vec<(f64, MotCounts)> = scores
            .iter()
            .map(|&s| idx.counts(s, cfg.match_radius_m).map(|m| (s, m)))
            .collect::<Result<_>>()?;
        let all = idx.counts(f64::NEG_INFINITY, cfg.match_radius_m)?;
        let n = cfg.n_points;
        let points: Vec<RecallPoint> = (1..=n)
            .map(|k| {
                let r = k as f64 / n as f64;
                match sweep.iter().find(|(_, m)| m.recall().unwrap_or(0.0) >= r - 1e-12) {
                    Some(&(s, m)) => RecallPoint {
                        target_recall: r,
                        threshold: Some(s),
                        counts: m,
                        motar: m.motar(r),
                    },
                    None => RecallPoint {
                        target_recall: r,
                        threshold: None,
                        counts: MotCounts::default(),
                        motar: 0.0,
                    },
                }
            })
            .collect();
        let amota = points.iter().map(|p| p.motar).sum::<f64>() / n as f64;
        classes.push(ClassReport {
            class_id: c,
            points,
            amota,
            all,
        });
    }
    let amota = if classes.is_empty() {
        0.0
    } else {
        classes.iter().map(|c| c.amota).sum::<f64>() / classes.len() as f64
    };
    Ok(EvalReport { classes, amota })
}

/// Report as CSV: one row per class and recall point, a `best` row per class,
/// and per-class and overall AMOTA summary rows.
pub fn write_report_csv<W: std::io::Write>(mut w: W, report: &EvalReport) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    writeln!(w, "class,row,recall_target,threshold,mota,motar,ids,fp,fn,recall,amota")?;
    for c in &report.classes {
        for p in &c.points {
            writeln!(
                w,
                "{},point,{:.4},{},{},{:.6},{},{},{},{},",
                c.class_id,
                p.target_recall,
                opt(p.threshold),
                opt(p.threshold.and(p.counts.mota())),
                p.motar,
                p.counts.ids,
                p.counts.fp,
                p.counts.fn_,
                opt(p.threshold.and(p.counts.recall())),
            )?;
        }
        if let Some(b) = c.best() {
            writeln!(
                w,
                "{},best,{:.4},{},{},{:.6},{},{},{},{},",
                c.class_id,
                b.target_recall,
                opt(b.threshold),
                opt(b.counts.mota()),
                b.motar,
                b.counts.ids,
                b.counts.fp,
                b.counts.fn_,
                opt(b.counts.recall()),
            )?;
        }
        writeln!(
            w,
            "{},all,,,{},,{},{},{},{},{:.6}",
            c.class_id,
            opt(c.all.mota()),
            c.all.ids,
            c.all.fp,
            c.all.fn_,
            opt(c.all.recall()),
            c.amota
        )?;
    }
    writeln!(w, "all,summary,,,,,,,,,{:.6}", report.amota)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(frame: u32, id: u64, x: f64) -> Detection {
        Detection {
            seq_id: "s".into(),
            frame,
            t: frame as f64 * 0.5,
            x,
            y: 0.0,
            yaw: 0.0,
            class_id: 0,
            score: 1.0,
            gt_track_id: Some(id),
        }
    }

    fn pred(frame: u32, id: u64, x: f64, score: f64) -> TrackedDetection {
        let mut d = gt(frame, 0, x);
        d.score = score;
        TrackedDetection::new(&d, id)
    }

    #[test]
    fn frame_matching_examples() {
        let g = gt(0, 1, 0.0);
        let m = match_frame(&[&pred(0, 5, 0.5, 1.0)], &[&g], 2.0).unwrap();
        assert_eq!(m.matches, vec![(1, 5, 0.5)]);
        let m = match_frame(&[&pred(0, 5, 3.0, 1.0)], &[&g], 2.0).unwrap();
        assert_eq!((m.fp, m.fn_), (1, 1));
        let (a, b) = (pred(0, 5, 1.0, 1.0), pred(0, 6, 0.2, 1.0));
        let m = match_frame(&[&a, &b], &[&g], 2.0).unwrap();
        assert_eq!((m.matches[0].1, m.fp), (6, 1));
        // equal distances: lower prediction index wins
        let (a, b) = (pred(0, 5, 1.0, 1.0), pred(0, 6, -1.0, 1.0));
        let m = match_frame(&[&a, &b], &[&g], 2.0).unwrap();
        assert_eq!(m.matches[0].1, 5);
    }

    #[test]
    fn mota_hand_arithmetic() {
        // 10 gt, 8 matched, 1 fp, 0 ids
        let frames = vec![FrameMatchResult {
            matches: (0..8).map(|i| (i, i, 0.0)).collect(),
            fp: 1,
            fn_: 2,
        }];
        let c = clear_mot(&frames);
        assert_eq!(c.gt, 10);
        assert!((c.mota().unwrap() - 0.7).abs() < 1e-12);
        assert!((c.recall().unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(MotCounts::default().mota(), None);
    }

    #[test]
    fn id_switch_counts_once() {
        let frames = vec![
            FrameMatchResult {
                matches: vec![(7, 1, 0.0)],
                ..Default::default()
            },
            FrameMatchResult {
                matches: vec![(7, 2, 0.0)],
                ..Default::default()
            },
        ];
        assert_eq!(clear_mot(&frames).ids, 1);
    }

    #[test]
    fn perfect_and_empty_trackers() {
        let gts: Vec<Detection> = (0..4).flat_map(|f| [gt(f, 1, f as f64), gt(f, 2, 50.0)]).collect();
        let perfect: Vec<TrackedDetection> = gts
            .iter()
            .map(|g| TrackedDetection::new(g, g.gt_track_id.unwrap() + 100))
            .collect();
        let r = amota(&perfect, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.amota, 1.0);
        let c = evaluate(&perfect, &gts, 2.0).unwrap();
        assert_eq!((c.mota(), c.ids), (Some(1.0), 0));
        let r = amota(&[], &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.amota, 0.0);
    }

    #[test]
    fn two_threshold_toy_matches_formula() {
        // gt: two tracks over two frames (P = 4). Predictions: track 1 with
        // score 0.9 (both frames), track 2 with score 0.4 plus a clutter box
        // with score 0.9.
        let gts = vec![gt(0, 1, 0.0), gt(1, 1, 1.0), gt(0, 2, 20.0), gt(1, 2, 21.0)];
        let preds = vec![
            pred(0, 10, 0.1, 0.9),
            pred(1, 10, 1.1, 0.9),
            pred(0, 20, 20.1, 0.4),
            pred(1, 20, 21.1, 0.4),
            pred(1, 30, -40.0, 0.9),
        ];
        let cfg = EvalConfig {
            match_radius_m: 2.0,
            n_points: 4,
        };
        let r = amota(&preds, &gts, &cfg).unwrap();
        // threshold 0.9: matched 2, fp 1, fn 2 → recall 0.5
        // threshold 0.4: matched 4, fp 1, fn 0 → recall 1.0
        let motar = |ids: f64, fp: f64, fn_: f64, r: f64| -> f64 {
            (1.0 - (ids + fp + fn_ - (1.0 - r) * 4.0) / (r * 4.0)).clamp(0.0, 1.0)
        };
        let expect = [
            motar(0.0, 1.0, 2.0, 0.25),
            motar(0.0, 1.0, 2.0, 0.5),
            motar(0.0, 1.0, 0.0, 0.75),
            motar(0.0, 1.0, 0.0, 1.0),
        ];
        for (p, e) in r.classes[0].points.iter().zip(expect) {
            assert!((p.motar - e).abs() < 1e-12, "{} vs {e}", p.motar);
        }
        let mean = expect.iter().sum::<f64>() / 4.0;
        assert!((r.amota - mean).abs() < 1e-12);
        assert_eq!(r.classes[0].points[1].threshold, Some(0.9));
        assert_eq!(r.classes[0].points[2].threshold, Some(0.4));
    }

    #[test]
    fn monotone_score_rescaling_is_invisible() {
        let gts: Vec<Detection> = (0..5).flat_map(|f| [gt(f, 1, f as f64), gt(f, 2, 30.0 - f as f64)]).collect();
        let preds: Vec<TrackedDetection> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let mut d = g.clone();
                d.score = 0.1 + 0.8 * (i as f64 / 10.0);
                TrackedDetection::new(&d, (i % 3) as u64)
            })
            .collect();
        let squashed: Vec<TrackedDetection> = preds
            .iter()
            .map(|p| TrackedDetection {
                score: p.score.powi(3),
                ..p.clone()
            })
            .collect();
        let cfg = EvalConfig::default();
        let a = amota(&preds, &gts, &cfg).unwrap().amota;
        let b = amota(&squashed, &gts, &cfg).unwrap().amota;
        assert_eq!(a, b);
    }

    #[test]
    fn mota_never_exceeds_one() {
        let gts = vec![gt(0, 1, 0.0)];
        for preds in [vec![], vec![pred(0, 1, 0.0, 1.0)], vec![pred(0, 1, 9.0, 1.0)]] {
            let c = evaluate(&preds, &gts, 2.0).unwrap();
            let m = c.mota().unwrap();
            assert!(m <= 1.0);
            assert_eq!(m == 1.0, c.fp + c.fn_ + c.ids == 0);
        }
    }

    #[test]
    fn report_has_summary_row() {
        let gts = vec![gt(0, 1, 0.0)];
        let preds = vec![pred(0, 1, 0.0, 1.0)];
        let r = amota(&preds, &gts, &EvalConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().last().unwrap().starts_with("all,summary"));
        assert!(text.lines().last().unwrap().ends_with("1.000000"));
    }
}
