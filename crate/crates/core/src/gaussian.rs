//! Linear-Gaussian state estimation over the stacked multi-object state.
//!
//! All `K` objects share one dense state vector of length `K·d` and one dense
//! covariance, because soft permutations couple every object with every
//! observation. The filter, the Rauch–Tung–Striebel smoother and the smoothed
//! observation marginal used as the training signal live here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_with_jitter, condition_from_factor, logpdf_with_factor, solve_lower,
    solve_lower_transpose, symmetrize, MAX_CONDITION,
};
use crate::sinkhorn::{lift_permutation, SoftPermutation};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::shape(
                "belief covariance",
                format!("{n}x{n}"),
                format!("{}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Largest absolute asymmetry `max |Σ − Σᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.cov - self.cov.transpose()).amax()
    }

    /// Smallest eigenvalue of the (symmetrized) covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        symmetrize(&self.cov)
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Symmetric within 1e-9 and PSD within `-1e-9 · trace`.
    pub fn is_valid(&self) -> bool {
        let tol = 1e-9 * self.cov.trace().abs().max(1.0);
        self.asymmetry() <= 1e-9 && self.min_eigenvalue() >= -tol
    }
}

/// Transition, process noise, per-object observation selector and
/// observation noise for `K` objects with `d`-dimensional states.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanParams {
    num_objects: usize,
    transition: DMatrix<f64>,
    process_cov: DMatrix<f64>,
    obs_block: DMatrix<f64>,
    obs_cov: DMatrix<f64>,
}

fn check_square(m: &DMatrix<f64>, n: usize, context: &'static str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::shape(
            context,
            format!("{n}x{n}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn check_diagonal(m: &DMatrix<f64>, strictly_positive: bool, field: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite(field.to_string()));
            }
            if i != j && v != 0.0 {
                return Err(Error::config(field, "must be diagonal"));
            }
            if i == j && (v < 0.0 || (strictly_positive && v == 0.0)) {
                return Err(Error::config(field, "diagonal entries must be positive"));
            }
        }
    }
    Ok(())
}

impl KalmanParams {
    /// `transition` and `process_cov` act on the stacked `K·d` state,
    /// `obs_block` is the `d′×d` selector applied to each object and
    /// `obs_cov` is the `K·d′` observation covariance.
    pub fn new(
        num_objects: usize,
        transition: DMatrix<f64>,
        process_cov: DMatrix<f64>,
        obs_block: DMatrix<f64>,
        obs_cov: DMatrix<f64>,
    ) -> Result<Self> {
        if num_objects == 0 {
            return Err(Error::Empty("kalman parameters need at least one object"));
        }
        let n = num_objects * obs_block.ncols();
        let m = num_objects * obs_block.nrows();
        check_square(&transition, n, "transition")?;
        check_square(&process_cov, n, "process covariance")?;
        check_square(&obs_cov, m, "observation covariance")?;
        check_diagonal(&process_cov, false, "process_cov")?;
        check_diagonal(&obs_cov, true, "obs_cov")?;
        Ok(Self {
            num_objects,
            transition,
            process_cov,
            obs_block,
            obs_cov,
        })
    }

    /// Constant-velocity model over `(x, y, ẋ, ẏ)` per object observing
    /// `(x, y)`, with `Q = σ_q·I` and `R = σ_r·I`.
    pub fn constant_velocity_2d(num_objects: usize, sigma_q: f64, sigma_r: f64) -> Result<Self> {
        let per_object = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        let selector = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let n = 4 * num_objects;
        let m = 2 * num_objects;
        Self::new(
            num_objects,
            DMatrix::<f64>::identity(num_objects, num_objects).kronecker(&per_object),
            DMatrix::identity(n, n) * sigma_q,
            selector,
            DMatrix::identity(m, m) * sigma_r,
        )
    }

    pub fn num_objects(&self) -> usize {
        self.num_objects
    }
    pub fn state_dim(&self) -> usize {
        self.obs_block.ncols()
    }
    pub fn obs_dim(&self) -> usize {
        self.obs_block.nrows()
    }
    pub fn stacked_state_dim(&self) -> usize {
        self.num_objects * self.state_dim()
    }
    pub fn stacked_obs_dim(&self) -> usize {
        self.num_objects * self.obs_dim()
    }
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }
    pub fn process_cov(&self) -> &DMatrix<f64> {
        &self.process_cov
    }
    pub fn obs_block(&self) -> &DMatrix<f64> {
        &self.obs_block
    }
    pub fn obs_cov(&self) -> &DMatrix<f64> {
        &self.obs_cov
    }
}

/// Predicted and updated beliefs of one filtering step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub predicted: GaussianBelief,
    pub updated: GaussianBelief,
}

/// Smoothed beliefs `N(μ̃_t, Σ̃_t)` for `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrajectory {
    pub beliefs: Vec<GaussianBelief>,
}

impl SmoothedTrajectory {
    pub fn len(&self) -> usize {
        self.beliefs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }
}

/// `N(Fμ, FΣFᵀ + Q)`, covariance symmetrized.
pub fn kf_predict(belief: &GaussianBelief, params: &KalmanParams) -> Result<GaussianBelief> {
    let n = params.stacked_state_dim();
    if belief.dim() != n {
        return Err(Error::shape("kf_predict state dimension", n, belief.dim()));
    }
    let f = params.transition();
    let mean = f * &belief.mean;
    let cov = symmetrize(&(f * &belief.cov * f.transpose() + params.process_cov()));
    Ok(GaussianBelief { mean, cov })
}

/// Kalman update against `z` with an effective observation matrix.
///
/// Returns the posterior and `log N(z; H μ, H Σ Hᵀ + R)`.
pub fn kf_update(
    belief: &GaussianBelief,
    z: &DVector<f64>,
    h_eff: &DMatrix<f64>,
    obs_cov: &DMatrix<f64>,
) -> Result<(GaussianBelief, f64)> {
    let n = belief.dim();
    let m = z.len();
    if h_eff.nrows() != m || h_eff.ncols() != n {
        return Err(Error::shape(
            "kf_update observation matrix",
            format!("{m}x{n}"),
            format!("{}x{}", h_eff.nrows(), h_eff.ncols()),
        ));
    }
    check_square(obs_cov, m, "kf_update observation covariance")?;

    let hs = h_eff * &belief.cov;
    let innovation_cov = symmetrize(&(&hs * h_eff.transpose() + obs_cov));
    let (l, _) = cholesky_with_jitter(&innovation_cov, "innovation covariance").map_err(|_| {
        Error::SingularInnovation {
            condition: f64::INFINITY,
        }
    })?;
    let condition = condition_from_factor(&l);
    if condition > MAX_CONDITION {
        return Err(Error::SingularInnovation { condition });
    }

    let residual = z - h_eff * &belief.mean;
    let log_marginal = logpdf_with_factor(&residual, &l);

    // W = L⁻¹ H Σ, so that the gain term Σ Hᵀ S⁻¹ H Σ = Wᵀ W.
    let w = solve_lower(&l, &hs);
    let alpha = solve_lower(&l, &DMatrix::from_column_slice(m, 1, residual.as_slice()));
    let mean = &belief.mean + (w.transpose() * alpha).column(0);
    let cov = symmetrize(&(&belief.cov - w.transpose() * &w));
    Ok((GaussianBelief { mean, cov }, log_marginal))
}

/// Runs the forward filter. The first belief is used as both the predicted
/// and filtered belief of frame 1; frames `2..T` are predicted and then
/// updated with their effective observation matrices.
pub fn filter_sequence(
    initial: &GaussianBelief,
    observations: &[DVector<f64>],
    h_effs: &[DMatrix<f64>],
    params: &KalmanParams,
) -> Result<Vec<FilterStep>> {
    if observations.is_empty() {
        return Err(Error::Empty("filter_sequence observations"));
    }
    if h_effs.len() != observations.len() {
        return Err(Error::shape(
            "filter_sequence observation matrices",
            observations.len(),
            h_effs.len(),
        ));
    }
    let mut steps = Vec::with_capacity(observations.len());
    steps.push(FilterStep {
        predicted: initial.clone(),
        updated: initial.clone(),
    });
    for (z, h) in observations.iter().zip(h_effs).skip(1) {
        let prev = &steps.last().expect("non-empty").updated;
        let predicted = kf_predict(prev, params)?;
        let (updated, _) = kf_update(&predicted, z, h, params.obs_cov())?;
        steps.push(FilterStep { predicted, updated });
    }
    Ok(steps)
}

/// Rauch–Tung–Striebel backward pass with gain `J_t = Σ_t Fᵀ Σ̂_{t+1}⁻¹`.
pub fn rts_smooth(filtered: &[FilterStep], params: &KalmanParams) -> Result<SmoothedTrajectory> {
    let last = filtered
        .last()
        .ok_or(Error::Empty("rts_smooth needs at least one filtered step"))?;
    let n = params.stacked_state_dim();
    if last.updated.dim() != n {
        return Err(Error::shape(
            "rts_smooth state dimension",
            n,
            last.updated.dim(),
        ));
    }
    let f = params.transition();
    let mut beliefs = vec![last.updated.clone()];
    for t in (0..filtered.len() - 1).rev() {
        let current = &filtered[t].updated;
        let next_pred = &filtered[t + 1].predicted;
        let next_smooth = beliefs.last().expect("non-empty");

        let (l, _) = cholesky_with_jitter(&next_pred.cov, "smoother predicted covariance")?;
        // Jᵀ = Σ̂⁻¹ F Σ_t
        let f_sigma = f * &current.cov;
        let gain_t = solve_lower_transpose(&l, &solve_lower(&l, &f_sigma));
        let gain = gain_t.transpose();

        let mean = &current.mean + &gain * (&next_smooth.mean - &next_pred.mean);
        let cov =
            symmetrize(&(&current.cov + &gain * (&next_smooth.cov - &next_pred.cov) * &gain_t));
        beliefs.push(GaussianBelief { mean, cov });
    }
    beliefs.reverse();
    Ok(SmoothedTrajectory { beliefs })
}

/// `Σ_t log N(z_t; H P_t μ̃_t, (H P_t) Σ̃_t (H P_t)ᵀ + R)`.
pub fn smoothed_obs_loglik(
    smoothed: &SmoothedTrajectory,
    perms: &[SoftPermutation],
    params: &KalmanParams,
    observations: &[DVector<f64>],
) -> Result<f64> {
    let t_len = smoothed.len();
    if perms.len() != t_len || observations.len() != t_len {
        return Err(Error::shape(
            "smoothed_obs_loglik sequence lengths",
            t_len,
            format!(
                "{} permutations, {} observations",
                perms.len(),
                observations.len()
            ),
        ));
    }
    let mut total = 0.0;
    for ((belief, perm), z) in smoothed.beliefs.iter().zip(perms).zip(observations) {
        let h = lift_permutation(perm, params.obs_block())?;
        total += obs_marginal_logpdf(belief, z, &h, params.obs_cov())?;
    }
    Ok(total)
}

/// `log N(z; H μ, H Σ Hᵀ + R)` for one belief.
pub fn obs_marginal_logpdf(
    belief: &GaussianBelief,
    z: &DVector<f64>,
    h_eff: &DMatrix<f64>,
    obs_cov: &DMatrix<f64>,
) -> Result<f64> {
    if h_eff.ncols() != belief.dim() || h_eff.nrows() != z.len() {
        return Err(Error::shape(
            "observation marginal",
            format!("{}x{}", z.len(), belief.dim()),
            format!("{}x{}", h_eff.nrows(), h_eff.ncols()),
        ));
    }
    let cov = symmetrize(&(h_eff * &belief.cov * h_eff.transpose() + obs_cov));
    let (l, _) = cholesky_with_jitter(&cov, "observation marginal covariance").map_err(|_| {
        Error::SingularInnovation {
            condition: f64::INFINITY,
        }
    })?;
    let condition = condition_from_factor(&l);
    if condition > MAX_CONDITION {
        return Err(Error::SingularInnovation { condition });
    }
    Ok(logpdf_with_factor(&(z - h_eff * &belief.mean), &l))
}
