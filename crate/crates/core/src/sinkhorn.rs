//! Sinkhorn normalization of score matrices into doubly stochastic
//! association matrices, and their composition into soft permutations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default number of row/column normalization sweeps.
pub const DEFAULT_SINKHORN_ITERS: usize = 20;

/// Square matrix of pairwise scores `s_ij = g(z_{t-1}^i, z_t^j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub DMatrix<f64>);

/// Non-negative matrix whose rows and columns sum to one (approximately).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPermutation(pub DMatrix<f64>);

impl SoftPermutation {
    pub fn identity(k: usize) -> Self {
        SoftPermutation(DMatrix::identity(k, k))
    }

    /// Hard permutation with `P[i][perm[i]] = 1`.
    pub fn from_assignment(perm: &[usize]) -> Self {
        let k = perm.len();
        let mut m = DMatrix::zeros(k, k);
        for (i, &j) in perm.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        SoftPermutation(m)
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        SoftPermutation(self.0.transpose())
    }

    /// `max(max_i |Σ_j p_ij − 1|, max_j |Σ_i p_ij − 1|)`
    pub fn marginal_error(&self) -> f64 {
        let rows = self
            .0
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        let cols = self
            .0
            .column_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        rows.max(cols)
    }

    /// `max |row_sum − 1| + max |col_sum − 1|`
    pub fn marginal_error_sum(&self) -> f64 {
        let rows = self
            .0
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        let cols = self
            .0
            .column_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        rows + cols
    }

    pub fn is_doubly_stochastic(&self, eps: f64) -> bool {
        self.0.iter().all(|&v| v >= 0.0) && self.marginal_error() <= eps
    }
}

fn log_sum_exp<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let max = values.clone().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Subtracts each row's log-sum-exp in place.
pub(crate) fn log_normalize_rows(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().cloned().collect();
        let lse = log_sum_exp(row.iter());
        for j in 0..m.ncols() {
            m[(i, j)] -= lse;
        }
    }
}

/// Subtracts each column's log-sum-exp in place.
pub(crate) fn log_normalize_cols(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let lse = log_sum_exp(m.column(j).iter());
        for i in 0..m.nrows() {
            m[(i, j)] -= lse;
        }
    }
}

/// `exp(S)` followed by `iters` alternating row and column normalizations,
/// carried out in log space.
pub fn sinkhorn_normalize(scores: &ScoreMatrix, iters: usize) -> Result<SoftPermutation> {
    let s = &scores.0;
    if s.nrows() != s.ncols() {
        return Err(Error::shape(
            "sinkhorn score matrix",
            "square",
            format!("{}x{}", s.nrows(), s.ncols()),
        ));
    }
    if iters == 0 {
        return Err(Error::config("iters", "at least one iteration is required"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn score matrix".into()));
    }
    let mut log_x = s.clone();
    for _ in 0..iters {
        log_normalize_rows(&mut log_x);
        log_normalize_cols(&mut log_x);
    }
    Ok(SoftPermutation(log_x.map(f64::exp)))
}

/// `P_t = A_t · A_{t−1} ⋯ A_1` for `assocs = [A_1, …, A_t]`.
pub fn compose_permutations(assocs: &[SoftPermutation]) -> Result<SoftPermutation> {
    let first = assocs.first().ok_or(Error::Empty(
        "compose_permutations needs at least one matrix",
    ))?;
    let k = first.size();
    let mut acc = first.0.clone();
    for a in &assocs[1..] {
        if a.0.nrows() != k || a.0.ncols() != k {
            return Err(Error::shape(
                "compose_permutations",
                format!("{k}x{k}"),
                format!("{}x{}", a.0.nrows(), a.0.ncols()),
            ));
        }
        acc = &a.0 * acc;
    }
    Ok(SoftPermutation(acc))
}

/// Running products `[P_1, …, P_T]` for `assocs = [A_1, …, A_T]`.
pub fn cumulative_permutations(assocs: &[SoftPermutation]) -> Result<Vec<SoftPermutation>> {
    let mut out: Vec<SoftPermutation> = Vec::with_capacity(assocs.len());
    for a in assocs {
        let next = match out.last() {
            None => a.clone(),
            Some(prev) => compose_permutations(&[prev.clone(), a.clone()])?,
        };
        out.push(next);
    }
    Ok(out)
}

/// Effective observation matrix `P ⊗ H` of shape `(K·d′)×(K·d)`: row block
/// `i` observes `Σ_j p_ij H x^j`.
pub fn lift_permutation(perm: &SoftPermutation, obs_block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &perm.0;
    if p.nrows() != p.ncols() {
        return Err(Error::shape(
            "lift_permutation",
            "square",
            format!("{}x{}", p.nrows(), p.ncols()),
        ));
    }
    Ok(p.kronecker(obs_block))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scores_give_uniform() {
        let a = sinkhorn_normalize(&ScoreMatrix(DMatrix::zeros(2, 2)), 20).unwrap();
        for v in a.0.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn doubly_stochastic_input_is_fixed_point() {
        let m = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        let a = sinkhorn_normalize(&ScoreMatrix(m.map(f64::ln)), 20).unwrap();
        assert!((a.0 - m).amax() < 1e-14);
    }

    #[test]
    fn confident_diagonal_saturates() {
        let s = DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 10.0]);
        let a = sinkhorn_normalize(&ScoreMatrix(s), 20).unwrap();
        assert!(a.0[(0, 1)] < 1e-4 && a.0[(1, 0)] < 1e-4);
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let s = DMatrix::from_row_slice(2, 2, &[700.0, -700.0, 3.0, 690.0]);
        let a = sinkhorn_normalize(&ScoreMatrix(s), 20).unwrap();
        assert!(a.0.iter().all(|v| v.is_finite()));
        assert!(a.is_doubly_stochastic(1e-6));
    }

    #[test]
    fn non_finite_scores_rejected() {
        let mut s = DMatrix::zeros(2, 2);
        s[(0, 1)] = f64::NAN;
        assert!(matches!(
            sinkhorn_normalize(&ScoreMatrix(s), 20),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn product_of_identities() {
        let p = compose_permutations(&vec![SoftPermutation::identity(3); 4]).unwrap();
        assert_eq!(p, SoftPermutation::identity(3));
    }

    #[test]
    fn hard_permutations_compose() {
        // A_1 maps 0→1→2→0, A_2 swaps 0 and 1.
        let a1 = SoftPermutation::from_assignment(&[1, 2, 0]);
        let a2 = SoftPermutation::from_assignment(&[1, 0, 2]);
        let p = compose_permutations(&[a1.clone(), a2.clone()]).unwrap();
        assert_eq!(p.0, &a2.0 * &a1.0);
        assert!(p.is_doubly_stochastic(0.0));
        assert!(p.0.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn compose_rejects_mismatch() {
        let r = compose_permutations(&[SoftPermutation::identity(2), SoftPermutation::identity(3)]);
        assert!(r.is_err());
    }

    #[test]
    fn lift_identity_is_block_selector() {
        let h = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let lifted = lift_permutation(&SoftPermutation::identity(2), &h).unwrap();
        let mut expected = DMatrix::zeros(4, 8);
        expected.view_mut((0, 0), (2, 4)).copy_from(&h);
        expected.view_mut((2, 4), (2, 4)).copy_from(&h);
        assert_eq!(lifted, expected);
    }

    #[test]
    fn lift_swap_selects_other_object() {
        let h = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let lifted = lift_permutation(&SoftPermutation::from_assignment(&[1, 0]), &h).unwrap();
        let x = nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!((lifted * x).as_slice(), &[5.0, 6.0, 1.0, 2.0]);
    }
}
