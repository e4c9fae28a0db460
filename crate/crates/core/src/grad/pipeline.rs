//! Differentiable association objective: pairwise features → scorer →
//! Sinkhorn → permutation products → Kalman filter and smoother → negative
//! smoothed observation log-likelihood.

use nalgebra::{DMatrix, DVector};

use super::tape::{Tape, Var};
use crate::assoc_net::{association_scores, pairwise_features, ScorerParams, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::gaussian::{
    filter_sequence, rts_smooth, smoothed_obs_loglik, GaussianBelief, KalmanParams,
};
use crate::linalg::{condition_from_factor, LOG_2PI, MAX_CONDITION};
use crate::sinkhorn::{
    cumulative_permutations, lift_permutation, sinkhorn_normalize, SoftPermutation,
    DEFAULT_SINKHORN_ITERS,
};
use crate::trainer::DetectionClip;

/// Noise levels and Sinkhorn depth of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub sigma_q: f64,
    pub sigma_r: f64,
    pub initial_variance: f64,
    pub sinkhorn_iters: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            sigma_q: 150.0,
            sigma_r: 5.0,
            initial_variance: 300.0,
            sinkhorn_iters: DEFAULT_SINKHORN_ITERS,
        }
    }
}

impl LossConfig {
    pub fn kalman(&self, num_objects: usize) -> Result<KalmanParams> {
        KalmanParams::constant_velocity_2d(num_objects, self.sigma_q, self.sigma_r)
    }
}

/// Loss value and its gradient with respect to the scorer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub loss: f64,
    pub grad: ScorerParams,
}

impl GradientReport {
    pub fn grad_norm(&self) -> f64 {
        self.grad.to_vec().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Stacked `(cx, cy)` of every detection in frame `t`.
pub fn frame_observation(clip: &DetectionClip, t: usize) -> DVector<f64> {
    let mut v = Vec::with_capacity(2 * clip.num_objects());
    for d in &clip.detections[t] {
        v.push(d.bbox.cx);
        v.push(d.bbox.cy);
    }
    DVector::from_vec(v)
}

/// `N((z₁, 0), σ₀·I)` over the stacked `(x, y, ẋ, ẏ)` state.
pub fn initial_belief(clip: &DetectionClip, initial_variance: f64) -> GaussianBelief {
    let k = clip.num_objects();
    let mut mean = DVector::zeros(4 * k);
    for (i, d) in clip.detections[0].iter().enumerate() {
        mean[4 * i] = d.bbox.cx;
        mean[4 * i + 1] = d.bbox.cy;
    }
    GaussianBelief {
        mean,
        cov: DMatrix::identity(4 * k, 4 * k) * initial_variance,
    }
}

/// Association matrices `[A_1, …, A_T]` with `A_1 = I` and `A_t` the
/// transposed Sinkhorn output, so rows index detections of frame `t` and
/// columns those of frame `t−1`.
pub fn association_matrices(
    params: &ScorerParams,
    clip: &DetectionClip,
    iters: usize,
) -> Result<Vec<SoftPermutation>> {
    let k = clip.num_objects();
    let mut out = vec![SoftPermutation::identity(k)];
    for t in 1..clip.num_frames() {
        let s = association_scores(params, &clip.boxes(t - 1), &clip.boxes(t))?;
        out.push(sinkhorn_normalize(&s, iters)?.transpose());
    }
    Ok(out)
}

/// Forward-only evaluation of the objective, without a tape.
pub fn association_loss(
    params: &ScorerParams,
    clip: &DetectionClip,
    cfg: &LossConfig,
) -> Result<f64> {
    clip.validate()?;
    let kalman = cfg.kalman(clip.num_objects())?;
    let assocs = association_matrices(params, clip, cfg.sinkhorn_iters)?;
    let perms = cumulative_permutations(&assocs)?;
    let observations: Vec<_> = (0..clip.num_frames())
        .map(|t| frame_observation(clip, t))
        .collect();
    let h_effs = perms
        .iter()
        .map(|p| lift_permutation(p, kalman.obs_block()))
        .collect::<Result<Vec<_>>>()?;
    let filtered = filter_sequence(
        &initial_belief(clip, cfg.initial_variance),
        &observations,
        &h_effs,
        &kalman,
    )?;
    let smoothed = rts_smooth(&filtered, &kalman)?;
    let ll = smoothed_obs_loglik(&smoothed, &perms, &kalman, &observations)?;
    Ok(-ll)
}

struct ParamVars {
    w1: Var,
    b1: Var,
    w2: Var,
}

struct BeliefVars {
    mean: Var,
    cov: Var,
}

fn checked_cholesky(tape: &mut Tape, m: Var, context: &'static str) -> Result<Var> {
    let l = tape
        .cholesky(m, context)
        .map_err(|_| Error::SingularInnovation {
            condition: f64::INFINITY,
        })?;
    let condition = condition_from_factor(tape.value(l));
    if condition > MAX_CONDITION {
        return Err(Error::SingularInnovation { condition });
    }
    Ok(tape.label(l, context))
}

/// Feature table with row `i + K·j` holding the features of pair
/// `(prev_i, cur_j)`, matching a column-major `K×K` reshape.
fn feature_table(clip: &DetectionClip, t: usize) -> DMatrix<f64> {
    let prev = clip.boxes(t - 1);
    let cur = clip.boxes(t);
    let k = prev.len();
    let mut m = DMatrix::zeros(k * k, FEATURE_DIM);
    for j in 0..k {
        for i in 0..k {
            let f = pairwise_features(&prev[i], &cur[j]);
            for c in 0..FEATURE_DIM {
                m[(i + k * j, c)] = f.0[c];
            }
        }
    }
    m
}

/// Records the objective on `tape`, returning the scalar loss node.
fn record_loss(
    tape: &mut Tape,
    vars: &ParamVars,
    clip: &DetectionClip,
    kalman: &KalmanParams,
    cfg: &LossConfig,
) -> Result<Var> {
    let k = clip.num_objects();
    let t_len = clip.num_frames();
    let w1t = tape.transpose(vars.w1);

    // Soft permutations P_1..P_T.
    let mut perms = vec![tape.leaf(DMatrix::identity(k, k))];
    for t in 1..t_len {
        let features = tape.leaf(feature_table(clip, t));
        let pre = tape.matmul(features, w1t);
        let pre = tape.add_row(pre, vars.b1);
        let hidden = tape.relu(pre);
        let out = tape.matmul(hidden, vars.w2);
        let scores = tape.reshape(out, k, k);
        let scores = tape.label(scores, "score matrix");
        let mut log_x = scores;
        for _ in 0..cfg.sinkhorn_iters {
            log_x = tape.log_normalize_rows(log_x);
            log_x = tape.log_normalize_cols(log_x);
        }
        let sinkhorn = tape.exp(log_x);
        let assoc = tape.transpose(sinkhorn);
        let prev = *perms.last().expect("non-empty");
        let p = tape.matmul(assoc, prev);
        perms.push(tape.label(p, "permutation product"));
    }

    let obs_block = kalman.obs_block().clone();
    let h_effs: Vec<Var> = perms
        .iter()
        .map(|&p| tape.kron_const(p, &obs_block))
        .collect();
    let h_effs_t: Vec<Var> = h_effs.iter().map(|&h| tape.transpose(h)).collect();
    let observations: Vec<Var> = (0..t_len)
        .map(|t| {
            tape.leaf(DMatrix::from_column_slice(
                2 * k,
                1,
                frame_observation(clip, t).as_slice(),
            ))
        })
        .collect();

    let f = tape.leaf(kalman.transition().clone());
    let ft = tape.leaf(kalman.transition().transpose());
    let q = tape.leaf(kalman.process_cov().clone());
    let r = tape.leaf(kalman.obs_cov().clone());

    // Forward filter; frame 1 keeps the initial belief.
    let init = initial_belief(clip, cfg.initial_variance);
    let m = init.mean.len();
    let first = BeliefVars {
        mean: tape.leaf(DMatrix::from_column_slice(m, 1, init.mean.as_slice())),
        cov: tape.leaf(init.cov),
    };
    let mut predicted: Vec<BeliefVars> = vec![BeliefVars {
        mean: first.mean,
        cov: first.cov,
    }];
    let mut updated: Vec<BeliefVars> = vec![first];
    for t in 1..t_len {
        let prev = updated.last().expect("non-empty");
        let mean = tape.matmul(f, prev.mean);
        let fs = tape.matmul(f, prev.cov);
        let fsf = tape.matmul(fs, ft);
        let cov = tape.add(fsf, q);
        let cov = tape.symmetrize(cov);
        let cov = tape.label(cov, "predicted covariance");

        let h = h_effs[t];
        let hs = tape.matmul(h, cov);
        let hsh = tape.matmul(hs, h_effs_t[t]);
        let s = tape.add(hsh, r);
        let s = tape.symmetrize(s);
        let l = checked_cholesky(tape, s, "innovation covariance")?;
        let hm = tape.matmul(h, mean);
        let resid = tape.sub(observations[t], hm);
        let w = tape.solve_lower(l, hs);
        let alpha = tape.solve_lower(l, resid);
        let wt = tape.transpose(w);
        let gain_step = tape.matmul(wt, alpha);
        let new_mean = tape.add(mean, gain_step);
        let wtw = tape.matmul(wt, w);
        let new_cov = tape.sub(cov, wtw);
        let new_cov = tape.symmetrize(new_cov);
        let new_cov = tape.label(new_cov, "filtered covariance");

        predicted.push(BeliefVars { mean, cov });
        updated.push(BeliefVars {
            mean: new_mean,
            cov: new_cov,
        });
    }

    // Rauch–Tung–Striebel backward pass.
    let last = updated.last().expect("non-empty");
    let mut smoothed = vec![BeliefVars {
        mean: last.mean,
        cov: last.cov,
    }];
    for t in (0..t_len - 1).rev() {
        let cur = &updated[t];
        let next_pred = &predicted[t + 1];
        let next_smooth = smoothed.last().expect("non-empty");
        let l = checked_cholesky(tape, next_pred.cov, "smoother predicted covariance")?;
        let f_sigma = tape.matmul(f, cur.cov);
        let half = tape.solve_lower(l, f_sigma);
        let gain_t = tape.solve_lower_t(l, half);
        let gain = tape.transpose(gain_t);
        let dm = tape.sub(next_smooth.mean, next_pred.mean);
        let corr = tape.matmul(gain, dm);
        let mean = tape.add(cur.mean, corr);
        let dc = tape.sub(next_smooth.cov, next_pred.cov);
        let jd = tape.matmul(gain, dc);
        let jdj = tape.matmul(jd, gain_t);
        let cov = tape.add(cur.cov, jdj);
        let cov = tape.symmetrize(cov);
        let cov = tape.label(cov, "smoothed covariance");
        smoothed.push(BeliefVars { mean, cov });
    }
    smoothed.reverse();

    // −Σ_t log N(z_t; H P_t μ̃_t, H P_t Σ̃_t (H P_t)ᵀ + R)
    let obs_dim = (2 * k) as f64;
    let mut total: Option<Var> = None;
    for t in 0..t_len {
        let b = &smoothed[t];
        let h = h_effs[t];
        let hs = tape.matmul(h, b.cov);
        let hsh = tape.matmul(hs, h_effs_t[t]);
        let c = tape.add(hsh, r);
        let c = tape.symmetrize(c);
        let l = checked_cholesky(tape, c, "smoothed observation covariance")?;
        let hm = tape.matmul(h, b.mean);
        let resid = tape.sub(observations[t], hm);
        let alpha = tape.solve_lower(l, resid);
        let alpha_t = tape.transpose(alpha);
        let quad = tape.matmul(alpha_t, alpha);
        let half_quad = tape.scale(quad, 0.5);
        let logdet_half = tape.sum_log_diag(l);
        let term = tape.add(half_quad, logdet_half);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let total = total.expect("at least one frame");
    let constant = tape.leaf(DMatrix::from_element(
        1,
        1,
        0.5 * obs_dim * LOG_2PI * t_len as f64,
    ));
    let loss = tape.add(total, constant);
    Ok(tape.label(loss, "loss"))
}

/// Loss and exact reverse-mode gradient for one clip.
pub fn loss_and_grad(
    params: &ScorerParams,
    clip: &DetectionClip,
    cfg: &LossConfig,
) -> Result<GradientReport> {
    clip.validate()?;
    let kalman = cfg.kalman(clip.num_objects())?;
    let mut tape = Tape::new();
    let vars = ParamVars {
        w1: tape.leaf(params.w1.clone()),
        b1: tape.leaf(DMatrix::from_row_slice(
            1,
            params.hidden(),
            params.b1.as_slice(),
        )),
        w2: tape.leaf(DMatrix::from_column_slice(
            params.hidden(),
            1,
            params.w2.as_slice(),
        )),
    };
    let loss = record_loss(&mut tape, &vars, clip, &kalman, cfg)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        let detail = tape
            .first_non_finite()
            .unwrap_or_else(|| "loss node".to_string());
        return Err(Error::NonFinite(format!(
            "association loss, first at {detail}"
        )));
    }
    let grads = tape.backward(loss)?;
    let grad = ScorerParams {
        w1: grads.wrt(vars.w1),
        b1: grads.wrt(vars.b1).transpose().column(0).into_owned(),
        w2: grads.wrt(vars.w2).column(0).into_owned(),
        // The output bias cancels in Sinkhorn normalization.
        b2: 0.0,
    };
    Ok(GradientReport { loss: value, grad })
}

/// Summed loss and gradient over several clips.
pub fn batch_loss_and_grad(
    params: &ScorerParams,
    clips: &[DetectionClip],
    cfg: &LossConfig,
) -> Result<GradientReport> {
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    for clip in clips {
        let r = loss_and_grad(params, clip, cfg)?;
        loss += r.loss;
        for (g, v) in grad.iter_mut().zip(r.grad.to_vec()) {
            *g += v;
        }
    }
    Ok(GradientReport {
        loss,
        grad: ScorerParams::from_vec(params.hidden(), &grad)?,
    })
}

/// Multiple of the central-difference round-off used as the denominator
/// floor in [`fd_check`].
pub const FD_NOISE_MARGIN: f64 = 1e6;

/// Largest coordinatewise relative error
/// `|g_ad − g_fd| / max(floor, |g_ad| + |g_fd|)` between reverse mode and
/// central differences with the given step. The floor is `1e-8` or, when
/// larger, `FD_NOISE_MARGIN` times the cancellation error `ε·|L|/step` of
/// the central difference, so coordinates with zero gradient (dead hidden
/// units) are compared against round-off rather than against zero.
pub fn fd_check(
    params: &ScorerParams,
    clip: &DetectionClip,
    cfg: &LossConfig,
    step: f64,
) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::config("step", "must be positive"));
    }
    let report = loss_and_grad(params, clip, cfg)?;
    let ad = report.grad.to_vec();
    let floor = (FD_NOISE_MARGIN * f64::EPSILON * report.loss.abs().max(1.0) / step).max(1e-8);
    let base = params.to_vec();
    let hidden = params.hidden();
    let mut worst = 0.0_f64;
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus[k] += step;
        let mut minus = base.clone();
        minus[k] -= step;
        let lp = association_loss(&ScorerParams::from_vec(hidden, &plus)?, clip, cfg)?;
        let lm = association_loss(&ScorerParams::from_vec(hidden, &minus)?, clip, cfg)?;
        let fd = (lp - lm) / (2.0 * step);
        let err = (ad[k] - fd).abs() / (ad[k].abs() + fd.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Divergence `Σ p log p − Σ p log softmax_row(cos/τ)` and its gradient with
/// respect to the head weights. `p_t` is held fixed.
pub fn appearance_loss_and_grad(
    weights: &DMatrix<f64>,
    temperature: f64,
    p_t: &DMatrix<f64>,
    raw_last: &DMatrix<f64>,
    raw_first: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    let k = p_t.nrows();
    if p_t.ncols() != k || raw_last.ncols() != k || raw_first.ncols() != k {
        return Err(Error::shape(
            "appearance loss inputs",
            format!("{k} crops per frame"),
            format!("{} and {}", raw_last.ncols(), raw_first.ncols()),
        ));
    }
    let mut tape = Tape::new();
    let w = tape.leaf(weights.clone());
    let last = tape.leaf(raw_last.clone());
    let first = tape.leaf(raw_first.clone());
    let pl = tape.matmul(w, last);
    let pf = tape.matmul(w, first);
    let ul = tape.normalize_cols(pl);
    let uf = tape.normalize_cols(pf);
    let ult = tape.transpose(ul);
    let cos = tape.matmul(ult, uf);
    let logits = tape.scale(cos, 1.0 / temperature);
    let log_u = tape.log_normalize_rows(logits);
    let p = tape.leaf(p_t.clone());
    let cross = tape.hadamard(p, log_u);
    let cross = tape.sum_all(cross);
    let neg = tape.scale(cross, -1.0);
    let entropy: f64 = p_t.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
    let c = tape.leaf(DMatrix::from_element(1, 1, entropy));
    let loss = tape.add(neg, c);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        let detail = tape
            .first_non_finite()
            .unwrap_or_else(|| "loss node".to_string());
        return Err(Error::NonFinite(format!(
            "appearance loss, first at {detail}"
        )));
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads.wrt(w)))
}
