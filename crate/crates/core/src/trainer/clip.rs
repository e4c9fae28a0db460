use crate::assoc_net::BoundingBox;
use crate::error::{Error, Result};

/// One detection inside a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipDetection {
    pub bbox: BoundingBox,
    pub crop_id: Option<String>,
    /// Ground-truth identity when known (synthetic data); never read by
    /// training, only by evaluation helpers.
    pub truth_id: Option<i64>,
    /// Whether the box was filled in by gap extrapolation.
    pub filled: bool,
}

impl ClipDetection {
    pub fn new(bbox: BoundingBox) -> Self {
        Self {
            bbox,
            crop_id: None,
            truth_id: None,
            filled: false,
        }
    }
}

/// `T` frames with exactly `K` detections each.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionClip {
    pub sequence: String,
    pub frame_indices: Vec<u32>,
    pub detections: Vec<Vec<ClipDetection>>,
}

impl DetectionClip {
    pub fn new(
        sequence: impl Into<String>,
        frame_indices: Vec<u32>,
        detections: Vec<Vec<ClipDetection>>,
    ) -> Result<Self> {
        let clip = Self {
            sequence: sequence.into(),
            frame_indices,
            detections,
        };
        clip.validate()?;
        Ok(clip)
    }

    /// Clip from plain boxes, frame indices starting at 1.
    pub fn from_boxes(frames: Vec<Vec<BoundingBox>>) -> Result<Self> {
        let t = frames.len();
        Self::new(
            "clip",
            (1..=t as u32).collect(),
            frames
                .into_iter()
                .map(|f| f.into_iter().map(ClipDetection::new).collect())
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.detections.len() < 2 {
            return Err(Error::config("clip", "a clip needs at least two frames"));
        }
        if self.frame_indices.len() != self.detections.len() {
            return Err(Error::shape(
                "clip frame indices",
                self.detections.len(),
                self.frame_indices.len(),
            ));
        }
        let k = self.detections[0].len();
        if k == 0 {
            return Err(Error::Empty("clip has no objects"));
        }
        for (t, frame) in self.detections.iter().enumerate() {
            if frame.len() != k {
                return Err(Error::config(
                    "clip",
                    format!("frame {t} has {} detections, expected {k}", frame.len()),
                ));
            }
            if let Some(d) = frame.iter().find(|d| !d.bbox.is_valid()) {
                return Err(Error::config("clip", format!("invalid box {:?}", d.bbox)));
            }
        }
        Ok(())
    }

    pub fn num_objects(&self) -> usize {
        self.detections[0].len()
    }

    pub fn num_frames(&self) -> usize {
        self.detections.len()
    }

    pub fn boxes(&self, t: usize) -> Vec<BoundingBox> {
        self.detections[t].iter().map(|d| d.bbox).collect()
    }

    /// Reorders detections of every frame by `order[t]`.
    pub fn permuted(&self, orders: &[Vec<usize>]) -> Self {
        let detections = self
            .detections
            .iter()
            .zip(orders)
            .map(|(frame, order)| order.iter().map(|&i| frame[i].clone()).collect())
            .collect();
        Self {
            sequence: self.sequence.clone(),
            frame_indices: self.frame_indices.clone(),
            detections,
        }
    }
}
