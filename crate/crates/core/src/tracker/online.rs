use nalgebra::DVector;

use super::assignment::solve_assignment;
use super::track::{cost_matrix, init_track, predict_tracks, update_track, Track, TrackerConfig};
use crate::assoc_net::{AppearanceHead, BoundingBox, EmbeddingProvider, ScorerParams};
use crate::error::Result;
use crate::io::{crop_id, evaluate, EvalReport, MotFrames, MotRow};

/// Grid searched by [`calibrate_c_miss`].
pub const C_MISS_GRID: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

/// One detection handed to the tracker, with its projected unit embedding
/// when appearance is in use.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetection {
    pub bbox: BoundingBox,
    pub embedding: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub frame: u32,
    pub detections: Vec<FrameDetection>,
}

/// Frames `first..=last` of a detection file, including empty ones. With
/// `appearance`, each detection is embedded through the head using its
/// `frame:index` crop id.
pub fn detection_frames(
    frames: &MotFrames,
    appearance: Option<(&AppearanceHead, &dyn EmbeddingProvider)>,
) -> Result<Vec<DetectionFrame>> {
    let (Some(&first), Some(&last)) = (frames.keys().next(), frames.keys().next_back()) else {
        return Ok(Vec::new());
    };
    (first..=last)
        .map(|frame| {
            let rows = frames.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
            let detections = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.is_valid())
                .map(|(i, r)| {
                    let embedding = match appearance {
                        Some((head, provider)) => Some(head.embed(provider, &crop_id(frame, i))?),
                        None => None,
                    };
                    Ok(FrameDetection {
                        bbox: r.bbox(),
                        embedding,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(DetectionFrame { frame, detections })
        })
        .collect()
}

/// Online tracker state for one sequence.
#[derive(Debug, Clone)]
pub struct Tracker<'a> {
    cfg: TrackerConfig,
    scorer: &'a ScorerParams,
    tracks: Vec<Track>,
    next_id: u64,
}

impl<'a> Tracker<'a> {
    pub fn new(scorer: &'a ScorerParams, cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            scorer,
            tracks: Vec::new(),
            next_id: 1,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Processes one frame and returns a row for every track matched or born
    /// in it, sorted by id. Coasting tracks are not reported.
    pub fn step(&mut self, frame: u32, detections: &[FrameDetection]) -> Result<Vec<MotRow>> {
        let cfg = &self.cfg;
        let preds = predict_tracks(&mut self.tracks, cfg)?;
        let pred_embeddings: Vec<Option<DVector<f64>>> =
            self.tracks.iter().map(|t| t.embedding.clone()).collect();
        let det_boxes: Vec<BoundingBox> = detections.iter().map(|d| d.bbox).collect();
        let det_embeddings: Vec<Option<DVector<f64>>> =
            detections.iter().map(|d| d.embedding.clone()).collect();
        let cost = cost_matrix(
            &preds,
            &pred_embeddings,
            &det_boxes,
            &det_embeddings,
            self.scorer,
            cfg,
        );
        let matching = solve_assignment(&cost, cfg.c_miss);

        let mut reported = Vec::with_capacity(detections.len());
        for &(i, j) in &matching.pairs {
            let det = &detections[j];
            update_track(&mut self.tracks[i], &det.bbox, det.embedding.as_ref(), cfg)?;
            reported.push(self.tracks[i].id);
        }
        for &i in &matching.unmatched_rows {
            self.tracks[i].misses += 1;
        }
        let tau = cfg.tau;
        self.tracks.retain(|t| t.misses <= tau);
        for t in &mut self.tracks {
            t.age += 1;
        }
        for &j in &matching.unmatched_cols {
            let det = &detections[j];
            if det.bbox.conf >= cfg.new_track_conf && det.bbox.is_valid() {
                let track = init_track(self.next_id, &det.bbox, det.embedding.clone(), cfg);
                reported.push(track.id);
                self.next_id += 1;
                self.tracks.push(track);
            }
        }

        reported.sort_unstable();
        Ok(reported
            .into_iter()
            .map(|id| {
                let track = self
                    .tracks
                    .iter()
                    .find(|t| t.id == id)
                    .expect("reported track exists");
                MotRow::new(frame, id as i64, &track.bbox())
            })
            .collect())
    }
}

/// Runs a fresh tracker over `frames` in order.
pub fn track_sequence(
    frames: &[DetectionFrame],
    scorer: &ScorerParams,
    cfg: &TrackerConfig,
) -> Result<Vec<MotRow>> {
    let mut tracker = Tracker::new(scorer, cfg.clone())?;
    let mut rows = Vec::new();
    for f in frames {
        rows.extend(tracker.step(f.frame, &f.detections)?);
    }
    Ok(rows)
}

/// Detections and ground truth of one validation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSequence {
    pub frames: Vec<DetectionFrame>,
    pub ground_truth: Vec<MotRow>,
}

/// Picks the `c_miss` in `grid` with the highest MOTA over `sequences`,
/// then the highest IDF1, then the earliest grid entry. Returns the choice
/// and the report for every candidate.
pub fn calibrate_c_miss(
    sequences: &[ValidationSequence],
    scorer: &ScorerParams,
    cfg: &TrackerConfig,
    grid: &[f64],
) -> Result<(f64, Vec<(f64, EvalReport)>)> {
    let mut reports = Vec::with_capacity(grid.len());
    for &c_miss in grid {
        let candidate = TrackerConfig {
            c_miss,
            ..cfg.clone()
        };
        let mut per_sequence = Vec::new();
        for (s, seq) in sequences.iter().enumerate() {
            let result = track_sequence(&seq.frames, scorer, &candidate)?;
            let report = evaluate(&seq.ground_truth, &result, 0.5);
            per_sequence.extend(report.sequences.into_iter().map(|mut r| {
                r.name = format!("{s}");
                r
            }));
        }
        reports.push((c_miss, EvalReport::from_sequences(per_sequence)));
    }
    let best = reports
        .iter()
        .enumerate()
        .max_by(|(ia, (_, a)), (ib, (_, b))| {
            a.mota
                .total_cmp(&b.mota)
                .then(a.idf1.total_cmp(&b.idf1))
                .then(ib.cmp(ia))
        })
        .map_or(cfg.c_miss, |(_, (c, _))| *c);
    Ok((best, reports))
}
