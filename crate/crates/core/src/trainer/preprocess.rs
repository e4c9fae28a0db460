use nalgebra::DMatrix;

use super::clip::{ClipDetection, DetectionClip};
use crate::assoc_net::{iou, BoundingBox};
use crate::error::{Error, Result};
use crate::io::{crop_id, MotFrames};
use crate::tracker::solve_assignment;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;

/// Smallest IoU between an extrapolated box and a detection for them to be
/// considered the same object.
pub const MIN_MATCH_IOU: f64 = 0.1;

/// All detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub frame: u32,
    pub detections: Vec<ClipDetection>,
}

/// Frames `first..=last` of a detection file, including frames with no
/// detections. Crop ids follow [`crop_id`]; `truth`, when given, is parallel
/// to the rows in file order.
pub fn raw_frames_from_mot(frames: &MotFrames, truth: Option<&[Option<i64>]>) -> Vec<RawFrame> {
    let (Some(&first), Some(&last)) = (frames.keys().next(), frames.keys().next_back()) else {
        return Vec::new();
    };
    let mut row_index = 0;
    (first..=last)
        .map(|frame| {
            let rows = frames.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
            let detections = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let d = ClipDetection {
                        bbox: r.bbox(),
                        crop_id: Some(crop_id(frame, i)),
                        truth_id: truth.and_then(|t| t.get(row_index + i).copied().flatten()),
                        filled: false,
                    };
                    d
                })
                .collect();
            row_index += rows.len();
            RawFrame { frame, detections }
        })
        .collect()
}

/// Clips produced from one sequence plus a note for every skipped window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preprocessed {
    pub clips: Vec<DetectionClip>,
    pub warnings: Vec<String>,
}

struct Slot {
    last: BoundingBox,
    velocity: (f64, f64),
    crop_id: Option<String>,
    truth_id: Option<i64>,
}

impl Slot {
    fn predicted(&self) -> BoundingBox {
        self.last.translated(self.velocity.0, self.velocity.1)
    }
}

fn build_clip(sequence: &str, window: &[RawFrame], conf_threshold: f64) -> Option<DetectionClip> {
    let keep = |f: &RawFrame| -> Vec<ClipDetection> {
        f.detections
            .iter()
            .filter(|d| d.bbox.conf >= conf_threshold && d.bbox.is_valid())
            .cloned()
            .collect()
    };
    let first = keep(&window[0]);
    if first.is_empty() {
        return None;
    }
    let mut slots: Vec<Slot> = first
        .iter()
        .map(|d| Slot {
            last: d.bbox,
            velocity: (0.0, 0.0),
            crop_id: d.crop_id.clone(),
            truth_id: d.truth_id,
        })
        .collect();
    let mut frames = vec![first];
    for raw in &window[1..] {
        let dets = keep(raw);
        let preds: Vec<BoundingBox> = slots.iter().map(Slot::predicted).collect();
        let cost = DMatrix::from_fn(slots.len(), dets.len(), |i, j| {
            let o = iou(&preds[i], &dets[j].bbox);
            if o >= MIN_MATCH_IOU {
                -o
            } else {
                f64::INFINITY
            }
        });
        let matching = solve_assignment(&cost, 0.0);
        let mut matched = vec![false; dets.len()];
        for &(i, j) in &matching.pairs {
            matched[j] = true;
            let slot = &mut slots[i];
            let b = dets[j].bbox;
            slot.velocity = (b.cx - slot.last.cx, b.cy - slot.last.cy);
            slot.last = b;
            slot.crop_id = dets[j].crop_id.clone();
        }
        let mut frame: Vec<ClipDetection> = dets
            .into_iter()
            .zip(&matched)
            .filter(|(_, &m)| m)
            .map(|(d, _)| d)
            .collect();
        for &i in &matching.unmatched_rows {
            let slot = &mut slots[i];
            slot.last = preds[i];
            frame.push(ClipDetection {
                bbox: preds[i],
                crop_id: slot.crop_id.clone(),
                truth_id: slot.truth_id,
                filled: true,
            });
        }
        frames.push(frame);
    }
    DetectionClip::new(sequence, window.iter().map(|f| f.frame).collect(), frames).ok()
}

/// Cuts `frames` into consecutive non-overlapping windows of `clip_len`
/// frames and turns each into a clip with a constant number of objects.
///
/// The object count `K` of a clip is the number of detections with
/// confidence ≥ `conf_threshold` in its first frame. In later frames, each
/// object is matched by IoU against its constant-velocity extrapolation;
/// unmatched objects receive the extrapolated box and surplus detections are
/// dropped. Kept detections stay in file order, followed by the filled boxes.
/// A trailing window shorter than `clip_len` is ignored.
pub fn preprocess_clips(
    sequence: &str,
    frames: &[RawFrame],
    conf_threshold: f64,
    clip_len: usize,
) -> Result<Preprocessed> {
    if clip_len < 2 {
        return Err(Error::config("clip_len", "clips need at least two frames"));
    }
    let mut out = Preprocessed::default();
    for window in frames.chunks_exact(clip_len) {
        match build_clip(sequence, window, conf_threshold) {
            Some(clip) => out.clips.push(clip),
            None => out.warnings.push(format!(
                "{sequence}: skipped clip starting at frame {} (no detections above confidence {conf_threshold} in its first frame)",
                window[0].frame
            )),
        }
    }
    Ok(out)
}
