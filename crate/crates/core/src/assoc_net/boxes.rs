use serde::{Deserialize, Serialize};

/// Axis-aligned box given by its center and size, plus detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, conf: f64) -> Self {
        Self { cx, cy, w, h, conf }
    }

    pub fn from_ltwh(left: f64, top: f64, w: f64, h: f64, conf: f64) -> Self {
        Self::new(left + 0.5 * w, top + 0.5 * h, w, h, conf)
    }

    pub fn left(&self) -> f64 {
        self.cx - 0.5 * self.w
    }
    pub fn top(&self) -> f64 {
        self.cy - 0.5 * self.h
    }
    pub fn right(&self) -> f64 {
        self.cx + 0.5 * self.w
    }
    pub fn bottom(&self) -> f64 {
        self.cy + 0.5 * self.h
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

/// Intersection-over-union from corner geometry (no pixel offsets).
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub const FEATURE_DIM: usize = 5;

/// `(2Δx/(h_i+h_j), 2Δy/(h_i+h_j), log h_i/h_j, log w_i/w_j, IoU)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseFeature(pub [f64; FEATURE_DIM]);

pub fn pairwise_features(a: &BoundingBox, b: &BoundingBox) -> PairwiseFeature {
    debug_assert!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0);
    let hs = a.h + b.h;
    PairwiseFeature([
        2.0 * (b.cx - a.cx) / hs,
        2.0 * (b.cy - a.cy) / hs,
        (a.h / b.h).ln(),
        (a.w / b.w).ln(),
        iou(a, b),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_pair() {
        let a = BoundingBox::new(5.0, 7.0, 3.0, 9.0, 1.0);
        assert_eq!(pairwise_features(&a, &a).0, [0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn shifted_pair() {
        let a = BoundingBox::new(10.0, 10.0, 4.0, 2.0, 1.0);
        let b = BoundingBox::new(12.0, 11.0, 4.0, 2.0, 1.0);
        let f = pairwise_features(&a, &b).0;
        assert!((f[0] - 1.0).abs() < 1e-15);
        assert!((f[1] - 0.5).abs() < 1e-15);
        assert_eq!(f[2], 0.0);
        assert_eq!(f[3], 0.0);
        // a spans [8,12]x[9,11], b spans [10,14]x[10,12]: overlap 2x1, union 8+8-2
        assert!((f[4] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_boxes() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 4.0, 1.0);
        let b = BoundingBox::new(10.0, 0.0, 1.0, 2.0, 1.0);
        let f = pairwise_features(&a, &b).0;
        assert_eq!(f[4], 0.0);
        assert!((f[0] - 20.0 / 6.0).abs() < 1e-15);
        assert!((f[2] - 2f64.ln()).abs() < 1e-15);
        assert!((f[3] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn touching_edges_have_zero_iou() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0, 1.0);
        let b = BoundingBox::new(2.0, 0.0, 2.0, 2.0, 1.0);
        assert_eq!(iou(&a, &b), 0.0);
    }
}
