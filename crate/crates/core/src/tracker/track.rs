use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assoc_net::{mlp_forward, pairwise_features, BoundingBox, ScorerParams};
use crate::error::{Error, Result};
use crate::gaussian::{kf_predict, kf_update, GaussianBelief, KalmanParams};

/// Smallest width or height, in pixels, used to scale the noise terms.
const MIN_SIZE: f64 = 1.0;

/// Online tracker settings. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Weight of the appearance term.
    pub kappa: f64,
    /// Cosine similarity at which the appearance term is zero.
    pub s_min: f64,
    /// Consecutive misses tolerated before a track ends.
    pub tau: usize,
    /// Cost of leaving a track or a detection unmatched.
    pub c_miss: f64,
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    /// Minimum confidence for an unmatched detection to start a track.
    pub new_track_conf: f64,
    pub use_appearance: bool,
    /// Weight of the old embedding in the running track embedding.
    pub ema_momentum: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            kappa: 5.0,
            s_min: 0.85,
            tau: 60,
            c_miss: 1.0,
            sigma_pos: 1.0 / 20.0,
            sigma_vel: 1.0 / 160.0,
            new_track_conf: 0.6,
            use_appearance: false,
            ema_momentum: 0.9,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::config("kappa", "must be finite and non-negative"));
        }
        if !(self.s_min > -1.0 && self.s_min < 1.0) {
            return Err(Error::config("s_min", "must lie in (-1, 1)"));
        }
        if self.tau < 1 {
            return Err(Error::config("tau", "must be at least 1"));
        }
        if !self.c_miss.is_finite() {
            return Err(Error::config("c_miss", "must be finite"));
        }
        if !(self.sigma_pos > 0.0 && self.sigma_vel > 0.0) {
            return Err(Error::config("sigma_pos", "noise scales must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::config("ema_momentum", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One tracked object with its 8-D `(x, y, w, h, ẋ, ẏ, ẇ, ḣ)` belief.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub belief: GaussianBelief,
    /// Unit-norm running appearance embedding.
    pub embedding: Option<DVector<f64>>,
    /// Consecutive frames without a matched detection.
    pub misses: usize,
    /// Frames since birth.
    pub age: usize,
    /// Confidence of the last matched detection.
    pub conf: f64,
}

impl Track {
    /// Box at the current belief mean.
    pub fn bbox(&self) -> BoundingBox {
        let m = &self.belief.mean;
        BoundingBox::new(
            m[0],
            m[1],
            m[2].max(MIN_SIZE),
            m[3].max(MIN_SIZE),
            self.conf,
        )
    }
}

fn diag(values: [f64; 8]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(&values))
}

fn transition() -> DMatrix<f64> {
    let mut f = DMatrix::identity(8, 8);
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> DMatrix<f64> {
    DMatrix::identity(4, 8)
}

pub(crate) fn initial_cov(w: f64, h: f64, cfg: &TrackerConfig) -> DMatrix<f64> {
    let (pw, ph) = (2.0 * cfg.sigma_pos * w, 2.0 * cfg.sigma_pos * h);
    let (vw, vh) = (10.0 * cfg.sigma_vel * w, 10.0 * cfg.sigma_vel * h);
    diag([
        pw * pw,
        ph * ph,
        pw * pw,
        ph * ph,
        vw * vw,
        vh * vh,
        vw * vw,
        vh * vh,
    ])
}

pub(crate) fn process_cov(w: f64, h: f64, cfg: &TrackerConfig) -> DMatrix<f64> {
    let (pw, ph) = (cfg.sigma_pos * w, cfg.sigma_pos * h);
    let (vw, vh) = (cfg.sigma_vel * w, cfg.sigma_vel * h);
    diag([
        pw * pw,
        ph * ph,
        pw * pw,
        ph * ph,
        vw * vw,
        vh * vh,
        vw * vw,
        vh * vh,
    ])
}

pub(crate) fn obs_cov(w: f64, h: f64, cfg: &TrackerConfig) -> DMatrix<f64> {
    let (pw, ph) = (cfg.sigma_pos * w, cfg.sigma_pos * h);
    DMatrix::from_diagonal(&DVector::from_row_slice(&[
        pw * pw,
        ph * ph,
        pw * pw,
        ph * ph,
    ]))
}

fn size_of(belief: &GaussianBelief) -> (f64, f64) {
    (belief.mean[2].max(MIN_SIZE), belief.mean[3].max(MIN_SIZE))
}

fn unit(v: &DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    (n > 0.0 && n.is_finite()).then(|| v / n)
}

/// New track at `det` with zero velocity.
pub fn init_track(
    id: u64,
    det: &BoundingBox,
    embedding: Option<DVector<f64>>,
    cfg: &TrackerConfig,
) -> Track {
    let mean = DVector::from_row_slice(&[det.cx, det.cy, det.w, det.h, 0.0, 0.0, 0.0, 0.0]);
    Track {
        id,
        belief: GaussianBelief {
            mean,
            cov: initial_cov(det.w, det.h, cfg),
        },
        embedding: embedding.as_ref().and_then(unit),
        misses: 0,
        age: 0,
        conf: det.conf,
    }
}

/// Advances every track one frame under constant velocity, with process
/// noise scaled by the track's current size. Returns the predicted boxes.
pub fn predict_tracks(tracks: &mut [Track], cfg: &TrackerConfig) -> Result<Vec<BoundingBox>> {
    tracks
        .iter_mut()
        .map(|track| {
            let (w, h) = size_of(&track.belief);
            let params = KalmanParams::new(
                1,
                transition(),
                process_cov(w, h, cfg),
                observation(),
                obs_cov(w, h, cfg),
            )?;
            track.belief = kf_predict(&track.belief, &params)?;
            Ok(track.bbox())
        })
        .collect()
}

/// Kalman update of `track` with a matched detection.
pub fn update_track(
    track: &mut Track,
    det: &BoundingBox,
    embedding: Option<&DVector<f64>>,
    cfg: &TrackerConfig,
) -> Result<()> {
    let (w, h) = size_of(&track.belief);
    let z = DVector::from_row_slice(&[det.cx, det.cy, det.w, det.h]);
    let (posterior, _) = kf_update(&track.belief, &z, &observation(), &obs_cov(w, h, cfg))?;
    track.belief = posterior;
    track.misses = 0;
    track.conf = det.conf;
    if let Some(new) = embedding.and_then(unit) {
        track.embedding = match track.embedding.take() {
            Some(old) => {
                unit(&(old * cfg.ema_momentum + &new * (1.0 - cfg.ema_momentum))).or(Some(new))
            }
            None => Some(new),
        };
    }
    Ok(())
}

/// `c_ij = −g(ẑ_i, z_j) − κ (cos(e_i, e_j) − s_min)`; the appearance term is
/// used only when `cfg.use_appearance` is set and both embeddings exist.
pub fn cost_matrix(
    preds: &[BoundingBox],
    pred_embeddings: &[Option<DVector<f64>>],
    dets: &[BoundingBox],
    det_embeddings: &[Option<DVector<f64>>],
    scorer: &ScorerParams,
    cfg: &TrackerConfig,
) -> DMatrix<f64> {
    DMatrix::from_fn(preds.len(), dets.len(), |i, j| {
        let motion = -mlp_forward(scorer, &pairwise_features(&preds[i], &dets[j]));
        let appearance = match (
            cfg.use_appearance,
            pred_embeddings.get(i).and_then(Option::as_ref),
            det_embeddings.get(j).and_then(Option::as_ref),
        ) {
            (true, Some(a), Some(b)) => -cfg.kappa * (a.dot(b) - cfg.s_min),
            _ => 0.0,
        };
        motion + appearance
    })
}
