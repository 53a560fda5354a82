//! Canonical detection and track files, validation, and clip slicing.
//!
//! Both formats are newline-delimited JSON objects, one detection per line.
//! Detection records carry `seq_id, frame, t, x, y, yaw, class_id, score` and
//! an optional `gt_track_id`; track records replace `gt_track_id` with a
//! required `track_id`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relgeom::wrap_angle;

/// One oriented planar object observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub seq_id: String,
    pub frame: u32,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub class_id: u32,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_track_id: Option<u64>,
}

/// A detection with an assigned output track id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackedDetection {
    pub seq_id: String,
    pub frame: u32,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub class_id: u32,
    pub score: f64,
    pub track_id: u64,
}

impl TrackedDetection {
    pub fn new(det: &Detection, track_id: u64) -> Self {
        Self {
            seq_id: det.seq_id.clone(),
            frame: det.frame,
            t: det.t,
            x: det.x,
            y: det.y,
            yaw: det.yaw,
            class_id: det.class_id,
            score: det.score,
            track_id,
        }
    }
}

/// All detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub t: f64,
    pub detections: Vec<Detection>,
}

/// Ordered frames of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.frames.iter().flat_map(|f| f.detections.iter())
    }

    pub fn num_detections(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }
}

/// A window of consecutive frames processed as one graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clip {
    pub frames: Vec<Frame>,
}

impl Clip {
    pub fn clip_len(&self) -> usize {
        self.frames.len()
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.frames.iter().flat_map(|f| f.detections.iter())
    }
}

impl From<&Sequence> for Clip {
    fn from(seq: &Sequence) -> Self {
        Clip {
            frames: seq.frames.clone(),
        }
    }
}

/// Per-class gating and thresholding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub id: u32,
    pub name: String,
    pub v_max: f64,
    /// Detections scoring below this are ignored.
    #[serde(default)]
    pub score_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassConfig {
    pub classes: Vec<ClassSpec>,
}

impl ClassConfig {
    pub fn new(classes: Vec<ClassSpec>) -> Result<Self> {
        let cfg = Self { classes };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.classes {
            if !(c.v_max > 0.0) || !c.v_max.is_finite() {
                return Err(Error::Config(format!(
                    "class {} ({}) needs v_max > 0, got {}",
                    c.id, c.name, c.v_max
                )));
            }
            if !(0.0..=1.0).contains(&c.score_threshold) {
                return Err(Error::Config(format!(
                    "class {} score_threshold {} outside [0,1]",
                    c.name, c.score_threshold
                )));
            }
        }
        let mut ids: Vec<u32> = self.classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.classes.len() {
            return Err(Error::Config("duplicate class id".into()));
        }
        Ok(())
    }

    pub fn get(&self, class_id: u32) -> Result<&ClassSpec> {
        self.classes
            .iter()
            .find(|c| c.id == class_id)
            .ok_or(Error::UnknownClass(class_id))
    }

    pub fn v_max(&self, class_id: u32) -> Result<f64> {
        self.get(class_id).map(|c| c.v_max)
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().map(|c| c.id)
    }
}

fn check_detection_fields(line: usize, t: f64, xs: [f64; 3], score: f64) -> Result<()> {
    if !t.is_finite() || xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse {
            line,
            msg: "non-finite number".into(),
        });
    }
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Parse {
            line,
            msg: format!("score {score} outside [0,1]"),
        });
    }
    Ok(())
}

fn parse_lines<T, R, F>(reader: R, mut normalize: F) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
    F: FnMut(usize, &mut T) -> Result<()>,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        normalize(line_no, &mut rec)?;
        out.push(rec);
    }
    Ok(out)
}

/// Parse newline-delimited detection records, wrap yaw, and validate
/// per-sequence frame ordering.
pub fn parse_detections<R: BufRead>(reader: R) -> Result<Vec<Detection>> {
    let dets = parse_lines(reader, |line, d: &mut Detection| {
        check_detection_fields(line, d.t, [d.x, d.y, d.yaw], d.score)?;
        d.yaw = wrap_angle(d.yaw)?;
        Ok(())
    })?;
    validate_order(dets.iter().map(|d| (d.seq_id.as_str(), d.frame, d.t)))?;
    Ok(dets)
}

/// Parse newline-delimited track records.
pub fn parse_tracks<R: BufRead>(reader: R) -> Result<Vec<TrackedDetection>> {
    let dets = parse_lines(reader, |line, d: &mut TrackedDetection| {
        check_detection_fields(line, d.t, [d.x, d.y, d.yaw], d.score)?;
        d.yaw = wrap_angle(d.yaw)?;
        Ok(())
    })?;
    validate_order(dets.iter().map(|d| (d.seq_id.as_str(), d.frame, d.t)))?;
    Ok(dets)
}

/// Within each sequence, records must come in non-decreasing frame order,
/// share one timestamp per frame, and have timestamps strictly increasing
/// with the frame index.
fn validate_order<'a>(records: impl Iterator<Item = (&'a str, u32, f64)>) -> Result<()> {
    let mut last: HashMap<&'a str, (u32, f64)> = HashMap::new();
    for (seq, frame, t) in records {
        if let Some(&(pf, pt)) = last.get(seq) {
            if frame < pf {
                return Err(Error::Validation(format!(
                    "non-monotone frames in sequence {seq}: {frame} after {pf}"
                )));
            }
            if frame == pf && t != pt {
                return Err(Error::Validation(format!(
                    "sequence {seq} frame {frame} has conflicting timestamps {pt} and {t}"
                )));
            }
            if frame > pf && t <= pt {
                return Err(Error::Validation(format!(
                    "non-monotone timestamps in sequence {seq}: frame {frame} t={t} after t={pt}"
                )));
            }
        }
        last.insert(seq, (frame, t));
    }
    Ok(())
}

fn write_lines<T: Serialize, W: Write>(mut w: W, recs: &[T]) -> Result<()> {
    for r in recs {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_detections<W: Write>(w: W, dets: &[Detection]) -> Result<()> {
    write_lines(w, dets)
}

pub fn write_tracks<W: Write>(w: W, dets: &[TrackedDetection]) -> Result<()> {
    write_lines(w, dets)
}

/// Group detections into sequences (first-appearance order) with frames
/// sorted by index.
pub fn group_sequences(dets: &[Detection]) -> Vec<Sequence> {
    let mut order: Vec<String> = Vec::new();
    let mut by_seq: HashMap<&str, Vec<&Detection>> = HashMap::new();
    for d in dets {
        by_seq
            .entry(d.seq_id.as_str())
            .or_insert_with(|| {
                order.push(d.seq_id.clone());
                Vec::new()
            })
            .push(d);
    }
    order
        .into_iter()
        .map(|id| {
            let mut recs = by_seq.remove(id.as_str()).unwrap_or_default();
            recs.sort_by_key(|d| d.frame);
            let mut frames: Vec<Frame> = Vec::new();
            for d in recs {
                match frames.last_mut() {
                    Some(f) if f.index == d.frame => f.detections.push(d.clone()),
                    _ => frames.push(Frame {
                        index: d.frame,
                        t: d.t,
                        detections: vec![d.clone()],
                    }),
                }
            }
            Sequence { id, frames }
        })
        .collect()
}

/// Group tracked detections by sequence, keyed by sequence id.
pub fn group_tracks(dets: &[TrackedDetection]) -> HashMap<String, Vec<TrackedDetection>> {
    let mut out: HashMap<String, Vec<TrackedDetection>> = HashMap::new();
    for d in dets {
        out.entry(d.seq_id.clone()).or_default().push(d.clone());
    }
    out
}

/// Sliding windows of `clip_len` frames every `stride` frames. The final
/// partial window is kept when it holds at least two frames.
pub fn split_clips(seq: &Sequence, clip_len: usize, stride: usize) -> Result<Vec<Clip>> {
    if clip_len < 2 || stride < 1 {
        return Err(Error::Config(format!(
            "clip_len must be >= 2 and stride >= 1 (got {clip_len}, {stride})"
        )));
    }
    let n = seq.frames.len();
    let mut clips = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + clip_len).min(n);
        if end - start >= 2 {
            clips.push(Clip {
                frames: seq.frames[start..end].to_vec(),
            });
        }
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(clips)
}
