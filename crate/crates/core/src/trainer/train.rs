use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::clip::DetectionClip;
use crate::assoc_net::{
    association_scores, AppearanceHead, ScorerParams, DEFAULT_HIDDEN, DEFAULT_TEMPERATURE,
};
use crate::error::{Error, Result};
use crate::grad::{loss_and_grad, LossConfig};
use crate::rng::{stream_rng, Stream};
use crate::sinkhorn::DEFAULT_SINKHORN_ITERS;
use crate::tracker::hungarian;

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Training hyperparameters. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stops association training after this many updates when set.
    pub max_steps: Option<usize>,
    pub appearance_learning_rate: f64,
    pub appearance_epochs: usize,
    pub sinkhorn_iters: usize,
    /// Frames per clip.
    pub clip_len: usize,
    pub sigma_q: f64,
    pub sigma_r: f64,
    pub initial_variance: f64,
    pub seed: u64,
    pub hidden: usize,
    pub optimizer: Optimizer,
    pub conf_threshold: f64,
    /// Softmax temperature of the appearance distribution.
    pub temperature: f64,
    /// Fine-tunes an appearance head after association training.
    pub appearance: bool,
    /// Output size of the appearance head; the embedding size when unset.
    pub appearance_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            epochs: 10,
            max_steps: None,
            appearance_learning_rate: 1e-4,
            appearance_epochs: 3,
            sinkhorn_iters: DEFAULT_SINKHORN_ITERS,
            clip_len: 10,
            sigma_q: 150.0,
            sigma_r: 5.0,
            initial_variance: 300.0,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            optimizer: Optimizer::Sgd,
            conf_threshold: 0.5,
            temperature: DEFAULT_TEMPERATURE,
            appearance: false,
            appearance_dim: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} must be positive")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} must be non-negative")))
            }
        };
        non_negative("learning_rate", self.learning_rate)?;
        non_negative("appearance_learning_rate", self.appearance_learning_rate)?;
        positive("sigma_q", self.sigma_q)?;
        positive("sigma_r", self.sigma_r)?;
        positive("initial_variance", self.initial_variance)?;
        positive("temperature", self.temperature)?;
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::config("conf_threshold", "must lie in [0, 1]"));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::config("sinkhorn_iters", "must be at least 1"));
        }
        if self.clip_len < 2 {
            return Err(Error::config("clip_len", "must be at least 2"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if self.appearance_dim == Some(0) {
            return Err(Error::config("appearance_dim", "must be at least 1"));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            sigma_q: self.sigma_q,
            sigma_r: self.sigma_r,
            initial_variance: self.initial_variance,
            sinkhorn_iters: self.sinkhorn_iters,
        }
    }
}

/// Adam moment estimates over a flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub(crate) fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Applies one update of `optimizer` in place.
pub(crate) fn apply_update(
    optimizer: Optimizer,
    adam: &mut AdamState,
    theta: &mut [f64],
    grad: &[f64],
    lr: f64,
) {
    match optimizer {
        Optimizer::Sgd => {
            for (p, g) in theta.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam => adam.step(theta, grad, lr),
    }
}

/// Trained scorer and the loss recorded before every update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ScorerParams,
    pub losses: Vec<f64>,
}

/// Scorer initialization drawn from the `init` stream of `cfg.seed`.
pub fn initial_params(cfg: &TrainConfig) -> ScorerParams {
    ScorerParams::init_zero_output(cfg.hidden, &mut stream_rng(cfg.seed, Stream::Init))
}

/// Random appearance head for embeddings of size `in_dim`, drawn from the
/// init stream after the scorer.
pub fn initial_head(in_dim: usize, cfg: &TrainConfig) -> AppearanceHead {
    let mut rng = stream_rng(cfg.seed, Stream::Init);
    ScorerParams::init_zero_output(cfg.hidden, &mut rng);
    AppearanceHead {
        temperature: cfg.temperature,
        ..AppearanceHead::init(in_dim, cfg.appearance_dim.unwrap_or(in_dim), &mut rng)
    }
}

/// Trains the scorer from [`initial_params`].
pub fn train_association(clips: &[DetectionClip], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_association_from(initial_params(cfg), clips, cfg)
}

/// Gradient descent on the negative smoothed observation log-likelihood,
/// one clip per update, clips visited in a seeded shuffled order each epoch.
pub fn train_association_from(
    init: ScorerParams,
    clips: &[DetectionClip],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Empty("training needs at least one clip"));
    }
    let loss_cfg = cfg.loss_config();
    let hidden = init.hidden();
    let mut theta = init.to_vec();
    let mut adam = AdamState::new(theta.len());
    let mut rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut losses = Vec::new();
    let budget = cfg.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &c in &order {
            if losses.len() >= budget {
                break 'epochs;
            }
            let iteration = losses.len();
            let params = ScorerParams::from_vec(hidden, &theta)?;
            let report = match loss_and_grad(&params, &clips[c], &loss_cfg) {
                Ok(r) => r,
                Err(e @ (Error::NonFinite(_) | Error::SingularInnovation { .. })) => {
                    return Err(Error::Diverged {
                        iteration,
                        detail: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            };
            let grad = report.grad.to_vec();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    iteration,
                    detail: "non-finite gradient".to_string(),
                });
            }
            log::debug!("epoch {epoch} step {iteration} loss {:.6}", report.loss);
            losses.push(report.loss);
            apply_update(
                cfg.optimizer,
                &mut adam,
                &mut theta,
                &grad,
                cfg.learning_rate,
            );
        }
    }
    Ok(TrainOutcome {
        params: ScorerParams::from_vec(hidden, &theta)?,
        losses,
    })
}

/// Fraction of frame-to-frame pairs whose hard assignment (Hungarian on the
/// score matrix) links detections of the same ground-truth identity. Pairs
/// whose earlier detection has no known identity are not counted.
pub fn association_accuracy(params: &ScorerParams, clips: &[DetectionClip]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for clip in clips {
        for t in 1..clip.num_frames() {
            let s = association_scores(params, &clip.boxes(t - 1), &clip.boxes(t))?;
            let assignment = hungarian(&(-&s.0)).expect("square matrix has a full assignment");
            for (i, &j) in assignment.iter().enumerate() {
                let Some(prev) = clip.detections[t - 1][i].truth_id else {
                    continue;
                };
                total += 1;
                if clip.detections[t][j].truth_id == Some(prev) {
                    correct += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("no labelled detections to score"));
    }
    Ok(correct as f64 / total as f64)
}
