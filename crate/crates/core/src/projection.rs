//! Exact single-block integer solvers.
//!
//! Projection onto the integer box `{0, ..., tau}`, the optimally scaled
//! column update for a rank-1 block, and the positive-integer weight update.
//! Each solver is certified by the exhaustive oracles at the bottom of this
//! module: the box is small enough at test scale to enumerate outright.
//!
//! Rounding ties at `.5` go away from zero (the semantics of `f64::round`).
//! The oracles use the same rule, so argument-level comparisons are exact;
//! where a tie makes two candidates equally good only the objective is
//! guaranteed to match.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// The integer box `{0, 1, ..., tau}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxSet {
    pub tau: u32,
}

impl BoxSet {
    pub fn new(tau: u32) -> Result<Self> {
        if tau == 0 {
            return Err(Error::InvalidInput("tau must be at least 1".to_string()));
        }
        Ok(Self { tau })
    }

    pub fn contains(&self, v: i64) -> bool {
        v >= 0 && v <= self.tau as i64
    }
}

/// Round-and-clamp in `f64`, shared by the solvers so every caller applies
/// the identical tie rule.
#[inline]
pub(crate) fn clamp_round(alpha: f64, tau: f64) -> f64 {
    alpha.round().clamp(0.0, tau)
}

/// Nearest point of `{0, ..., tau}` to `alpha`.
pub fn project_scalar(alpha: f64, box_set: BoxSet) -> Result<i64> {
    if alpha.is_nan() {
        return Err(Error::InvalidInput("cannot project NaN".to_string()));
    }
    Ok(clamp_round(alpha, box_set.tau as f64) as i64)
}

/// Coordinatewise projection onto `{0, ..., tau}^N`.
pub fn project_vector(beta: &[f64], box_set: BoxSet) -> Result<Vec<i64>> {
    beta.iter().map(|&b| project_scalar(b, box_set)).collect()
}

/// Optimal integer-box column for a rank-1 block, from the expanded form.
///
/// Minimizes `||R_k - lambda_k x b^T||_F^2` over `b` in the box, where the
/// residual block is supplied implicitly: `current` is the column being
/// replaced, `m_col` the data-side column, `coupling` the model-side column
/// `F (lambda * C(:,k))` (already reflecting `lambda_k`), and `c_kk` the
/// Gram diagonal of the fixed side. The unconstrained solution
/// `current + (m_col - coupling) / (c_kk lambda_k)` is projected
/// coordinatewise, which is exact because the box is a Cartesian product.
pub fn optimal_scaled_column(
    current: ArrayView1<f64>,
    m_col: ArrayView1<f64>,
    coupling: ArrayView1<f64>,
    c_kk: f64,
    lambda_k: i64,
    box_set: BoxSet,
) -> Result<Array1<f64>> {
    let denom = c_kk * lambda_k as f64;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::DegenerateColumn(format!(
            "column denominator {denom} must be positive"
        )));
    }
    let tau = box_set.tau as f64;
    let mut out = Array1::<f64>::zeros(current.len());
    for i in 0..current.len() {
        let b = current[i] + (m_col[i] - coupling[i]) / denom;
        if b.is_nan() {
            return Err(Error::InvalidInput(
                "NaN encountered in column update".to_string(),
            ));
        }
        out[i] = clamp_round(b, tau);
    }
    Ok(out)
}

/// Optimal positive-integer weight for a rank-1 block, from the expanded
/// form.
///
/// The unconstrained optimum is `current_lambda +
/// f_col . (m_col - coupling) / (c_kk ||f_col||^2)`; the quadratic is convex
/// in the weight, so the integer optimum is its rounding clamped to at
/// least 1 (which also covers a nonpositive numerator, where 1 is optimal).
pub fn optimal_lambda(
    current_lambda: i64,
    f_col: ArrayView1<f64>,
    m_col: ArrayView1<f64>,
    coupling: ArrayView1<f64>,
    c_kk: f64,
) -> Result<i64> {
    let col_norm_sq: f64 = f_col.iter().map(|v| v * v).sum();
    let denom = c_kk * col_norm_sq;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::DegenerateColumn(format!(
            "weight denominator {denom} must be positive"
        )));
    }
    let mut num = 0.0;
    for i in 0..f_col.len() {
        num += f_col[i] * (m_col[i] - coupling[i]);
    }
    let alpha = current_lambda as f64 + num / denom;
    if alpha.is_nan() {
        return Err(Error::InvalidInput("NaN in weight update".to_string()));
    }
    let rounded = alpha.round();
    // Weights live in f64 during sweeps; past 2^53 adjacent integers are no
    // longer representable, so treat that as overflow.
    if rounded >= 9_007_199_254_740_992.0 {
        return Err(Error::LambdaOverflow { value: alpha });
    }
    Ok((rounded as i64).max(1))
}

/// Cap on the number of candidates an exhaustive oracle may enumerate.
pub const ORACLE_CANDIDATE_CAP: u128 = 1_000_000;

/// Exhaustive minimizer of `||R_k - lambda_k x b^T||_F^2` over the box.
///
/// Enumerates every `b` in `{0..tau}^N`; returns the argmin and its
/// objective value. Intended purely as a test oracle.
pub fn brute_force_column_oracle(
    r_k: &Array2<f64>,
    x: ArrayView1<f64>,
    lambda_k: i64,
    box_set: BoxSet,
) -> Result<(Vec<i64>, f64)> {
    let (rows, cols) = r_k.dim();
    if x.len() != rows {
        return Err(Error::Dimension(format!(
            "x has length {}, residual block has {rows} rows",
            x.len()
        )));
    }
    let n = cols;
    let base = box_set.tau as u128 + 1;
    let count = base.checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > ORACLE_CANDIDATE_CAP {
        return Err(Error::SearchSpaceTooLarge {
            size: count,
            cap: ORACLE_CANDIDATE_CAP,
        });
    }

    // J(b) = ||R_k||^2 - 2 lambda sum_j b_j w_j + lambda^2 ||x||^2 sum_j b_j^2
    // with w = R_k^T x, so each candidate costs O(N).
    let r_norm_sq: f64 = r_k.iter().map(|v| v * v).sum();
    let x_norm_sq: f64 = x.iter().map(|v| v * v).sum();
    let lam = lambda_k as f64;
    let w: Vec<f64> = (0..n)
        .map(|j| (0..rows).map(|i| r_k[[i, j]] * x[i]).sum())
        .collect();

    let mut best_obj = f64::INFINITY;
    let mut best = vec![0i64; n];
    let mut cand = vec![0i64; n];
    loop {
        let mut lin = 0.0;
        let mut quad = 0.0;
        for (j, &b) in cand.iter().enumerate() {
            let bf = b as f64;
            lin += bf * w[j];
            quad += bf * bf;
        }
        let obj = r_norm_sq - 2.0 * lam * lin + lam * lam * x_norm_sq * quad;
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&cand);
        }
        // Odometer increment over the box.
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok((best, best_obj));
            }
            if cand[pos] < box_set.tau as i64 {
                cand[pos] += 1;
                break;
            }
            cand[pos] = 0;
            pos += 1;
        }
    }
}

/// Exhaustive positive-integer weight for `||R_k - lambda u v^T||_F^2`.
///
/// The objective is a convex 1-D quadratic in the weight, so searching the
/// window `{1, ..., ceil(2 * unconstrained optimum) + 2}` certifies the
/// global integer optimum.
pub fn brute_force_lambda_oracle(
    r_k: &Array2<f64>,
    u: ArrayView1<f64>,
    v: ArrayView1<f64>,
) -> Result<(i64, f64)> {
    let (rows, cols) = r_k.dim();
    if u.len() != rows || v.len() != cols {
        return Err(Error::Dimension(
            "u/v lengths do not match the residual block".to_string(),
        ));
    }
    let u_norm_sq: f64 = u.iter().map(|a| a * a).sum();
    let v_norm_sq: f64 = v.iter().map(|a| a * a).sum();
    if u_norm_sq == 0.0 || v_norm_sq == 0.0 {
        return Err(Error::DegenerateColumn(
            "zero-norm column in weight oracle".to_string(),
        ));
    }
    let mut corr = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            corr += u[i] * r_k[[i, j]] * v[j];
        }
    }
    let unconstrained = corr / (u_norm_sq * v_norm_sq);
    let cap = ((2.0 * unconstrained).ceil() as i64 + 2).max(3);
    let r_norm_sq: f64 = r_k.iter().map(|a| a * a).sum();
    let objective =
        |lam: f64| r_norm_sq - 2.0 * lam * corr + lam * lam * u_norm_sq * v_norm_sq;

    let mut best = 1i64;
    let mut best_obj = objective(1.0);
    for lam in 2..=cap {
        let obj = objective(lam as f64);
        if obj < best_obj {
            best_obj = obj;
            best = lam;
        }
    }
    Ok((best, best_obj))
}
