use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::boxes::{pairwise_features, BoundingBox, PairwiseFeature, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::sinkhorn::ScoreMatrix;

pub const DEFAULT_HIDDEN: usize = 64;

/// Two-layer perceptron `w₂ · relu(W₁ f + b₁) + b₂` over pairwise features.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    /// `hidden × 5`
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl ScorerParams {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, FEATURE_DIM),
            b1: DVector::zeros(hidden),
            w2: DVector::zeros(hidden),
            b2: 0.0,
        }
    }

    /// Uniform `[−1/√fan_in, 1/√fan_in]` initialization per layer.
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let a1 = 1.0 / (FEATURE_DIM as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let w1 = DMatrix::from_fn(hidden, FEATURE_DIM, |_, _| rng.random_range(-a1..=a1));
        let b1 = DVector::from_fn(hidden, |_, _| rng.random_range(-a1..=a1));
        let w2 = DVector::from_fn(hidden, |_, _| rng.random_range(-a2..=a2));
        let b2 = rng.random_range(-a2..=a2);
        Self { w1, b1, w2, b2 }
    }

    /// Hidden layer as in [`ScorerParams::init`], output layer zero. Every
    /// score matrix is then constant and the first soft associations are
    /// uniform.
    pub fn init_zero_output<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let a1 = 1.0 / (FEATURE_DIM as f64).sqrt();
        let w1 = DMatrix::from_fn(hidden, FEATURE_DIM, |_, _| rng.random_range(-a1..=a1));
        let b1 = DVector::from_fn(hidden, |_, _| rng.random_range(-a1..=a1));
        Self {
            w1,
            b1,
            w2: DVector::zeros(hidden),
            b2: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn num_params(&self) -> usize {
        self.hidden() * (FEATURE_DIM + 2) + 1
    }

    /// Flattened as `W₁` (row-major), `b₁`, `w₂`, `b₂`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for i in 0..self.hidden() {
            out.extend(self.w1.row(i).iter());
        }
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.push(self.b2);
        out
    }

    pub fn from_vec(hidden: usize, values: &[f64]) -> Result<Self> {
        let expected = hidden * (FEATURE_DIM + 2) + 1;
        if values.len() != expected {
            return Err(Error::shape(
                "scorer parameter vector",
                expected,
                values.len(),
            ));
        }
        let (w1, rest) = values.split_at(hidden * FEATURE_DIM);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, rest) = rest.split_at(hidden);
        Ok(Self {
            w1: DMatrix::from_row_slice(hidden, FEATURE_DIM, w1),
            b1: DVector::from_column_slice(b1),
            w2: DVector::from_column_slice(w2),
            b2: rest[0],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    /// `w₂ · relu(W₁ f + b₁)`, the output without its bias.
    pub fn forward_unbiased(&self, f: &PairwiseFeature) -> f64 {
        let mut out = 0.0;
        for k in 0..self.hidden() {
            let mut pre = self.b1[k];
            for (c, v) in f.0.iter().enumerate() {
                pre += self.w1[(k, c)] * v;
            }
            if pre > 0.0 {
                out += self.w2[k] * pre;
            }
        }
        out
    }
}

pub fn mlp_forward(params: &ScorerParams, f: &PairwiseFeature) -> f64 {
    params.forward_unbiased(f) + params.b2
}

/// `S[i][j] = g(prev_i, cur_j)`.
pub fn score_matrix(
    params: &ScorerParams,
    prev: &[BoundingBox],
    cur: &[BoundingBox],
) -> Result<ScoreMatrix> {
    if prev.len() != cur.len() {
        return Err(Error::shape(
            "score_matrix frame sizes",
            prev.len(),
            cur.len(),
        ));
    }
    Ok(ScoreMatrix(rect_scores(params, prev, cur)))
}

/// Rectangular score table, used by the tracker where `N ≠ M` is allowed.
pub fn rect_scores(
    params: &ScorerParams,
    rows: &[BoundingBox],
    cols: &[BoundingBox],
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        mlp_forward(params, &pairwise_features(&rows[i], &cols[j]))
    })
}

/// Scores as fed to Sinkhorn during training. The output bias adds the same
/// constant to every entry and cancels under row normalization, so it is left
/// out of this path.
pub fn association_scores(
    params: &ScorerParams,
    prev: &[BoundingBox],
    cur: &[BoundingBox],
) -> Result<ScoreMatrix> {
    if prev.len() != cur.len() {
        return Err(Error::shape(
            "score_matrix frame sizes",
            prev.len(),
            cur.len(),
        ));
    }
    Ok(ScoreMatrix(DMatrix::from_fn(
        prev.len(),
        cur.len(),
        |i, j| params.forward_unbiased(&pairwise_features(&prev[i], &cur[j])),
    )))
}
