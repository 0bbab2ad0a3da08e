//! Brute-force dense reference implementations.
//!
//! Everything here trades memory and time for obviousness: tensors are
//! densified, Khatri-Rao products are materialized, residuals are formed
//! explicitly. These routines exist to certify the streaming kernels and the
//! solvers on small instances; they must stay independent of the fast paths
//! they check.

use ndarray::{Array1, Array2, ArrayD, Dimension};

use crate::error::{Error, Result};
use crate::tensor::{self, SparseTensor, DEFAULT_DENSE_CAP};

/// Densifies a sparse tensor (small instances only).
pub fn dense_from_sparse(x: &SparseTensor) -> Result<ArrayD<f64>> {
    let size = x.dense_size();
    if size > DEFAULT_DENSE_CAP {
        return Err(Error::DenseCapExceeded {
            size,
            cap: DEFAULT_DENSE_CAP,
        });
    }
    let mut out = ArrayD::<f64>::zeros(ndarray::IxDyn(x.dims()));
    for (idx, v) in x.iter() {
        out[ndarray::IxDyn(idx)] = v;
    }
    Ok(out)
}

/// Column index of the mode-`mode` unfolding for one index tuple.
///
/// Coordinates of modes other than `mode` are mixed with the earlier-mode
/// index varying fastest, matching the Khatri-Rao ordering used by
/// [`khatri_rao_excluding`].
fn unfolding_column(idx: &[usize], dims: &[usize], mode: usize) -> usize {
    let mut col = 0;
    let mut stride = 1;
    for m in 0..dims.len() {
        if m == mode {
            continue;
        }
        col += idx[m] * stride;
        stride *= dims[m];
    }
    col
}

/// Mode-`mode` matricization of a dense tensor.
pub fn matricize(dense: &ArrayD<f64>, mode: usize) -> Array2<f64> {
    let dims = dense.shape().to_vec();
    let rows = dims[mode];
    let cols: usize = dims
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != mode)
        .map(|(_, &d)| d)
        .product();
    let mut out = Array2::<f64>::zeros((rows, cols));
    for (idx, &v) in dense.indexed_iter() {
        let idx = idx.slice();
        out[[idx[mode], unfolding_column(idx, &dims, mode)]] = v;
    }
    out
}

/// Materialized Khatri-Rao product of all factors except `mode`.
///
/// Row `j` corresponds to the same mixed index as column `j` of the
/// matricization, so `matricize(X, n) . khatri_rao_excluding(A, n)` is the
/// MTTKRP.
pub fn khatri_rao_excluding(factors: &[Array2<f64>], mode: usize) -> Array2<f64> {
    let rank = factors[0].ncols();
    let involved: Vec<&Array2<f64>> = factors
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != mode)
        .map(|(_, f)| f)
        .collect();
    let rows: usize = involved.iter().map(|f| f.nrows()).product();
    let mut out = Array2::<f64>::zeros((rows, rank));
    for j in 0..rows {
        // Decode the mixed row index, first involved mode fastest.
        let mut rem = j;
        let mut coords = Vec::with_capacity(involved.len());
        for f in &involved {
            coords.push(rem % f.nrows());
            rem /= f.nrows();
        }
        for r in 0..rank {
            let mut p = 1.0;
            for (f, &i) in involved.iter().zip(&coords) {
                p *= f[[i, r]];
            }
            out[[j, r]] = p;
        }
    }
    out
}

/// MTTKRP computed the expensive way: densify, matricize, multiply by the
/// materialized Khatri-Rao product.
pub fn mttkrp_dense_oracle(
    x: &SparseTensor,
    factors: &[Array2<f64>],
    mode: usize,
) -> Result<Array2<f64>> {
    let dense = dense_from_sparse(x)?;
    let unfolded = matricize(&dense, mode);
    let krp = khatri_rao_excluding(factors, mode);
    Ok(unfolded.dot(&krp))
}

/// Squared residual norm via explicit dense reconstruction.
pub fn dense_residual_norm_sq(
    x: &SparseTensor,
    factors: &[Array2<f64>],
    lambda: &[f64],
) -> Result<f64> {
    let data = dense_from_sparse(x)?;
    let model = tensor::reconstruct_dense(x.dims(), factors, lambda, DEFAULT_DENSE_CAP)?;
    Ok((&data - &model).mapv(|v| v * v).sum())
}

/// Exhaustive best rank-1 integer model for a small matrix.
///
/// Enumerates every nonzero pair of box columns; for each pair the optimal
/// positive integer weight has a closed form (the objective is a convex
/// quadratic in it). Returns `(u, v, lambda, objective)`.
pub fn exhaustive_rank1_matrix(
    x: &SparseTensor,
    tau: u32,
) -> Result<(Array1<f64>, Array1<f64>, i64, f64)> {
    if x.order() != 2 {
        return Err(Error::Dimension("rank-1 oracle needs order 2".to_string()));
    }
    let (rows, cols) = (x.dims()[0], x.dims()[1]);
    let base = tau as u128 + 1;
    let pairs = base
        .checked_pow(rows as u32)
        .and_then(|a| a.checked_mul(base.pow(cols as u32)))
        .unwrap_or(u128::MAX);
    if pairs > 10_000_000 {
        return Err(Error::SearchSpaceTooLarge {
            size: pairs,
            cap: 10_000_000,
        });
    }
    let dense = dense_from_sparse(x)?
        .into_dimensionality::<ndarray::Ix2>()
        .expect("order checked above");
    let x_norm_sq: f64 = dense.iter().map(|v| v * v).sum();

    let enumerate = |len: usize| -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let total = (tau as usize + 1).pow(len as u32);
        for code in 0..total {
            let mut v = vec![0.0; len];
            let mut c = code;
            for slot in v.iter_mut() {
                *slot = (c % (tau as usize + 1)) as f64;
                c /= tau as usize + 1;
            }
            if v.iter().any(|&e| e != 0.0) {
                out.push(v);
            }
        }
        out
    };
    let us = enumerate(rows);
    let vs = enumerate(cols);

    let mut best = (vec![0.0; rows], vec![0.0; cols], 1i64, f64::INFINITY);
    for u in &us {
        let u_norm_sq: f64 = u.iter().map(|a| a * a).sum();
        // w = X^T u
        let mut w = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                w[j] += dense[[i, j]] * u[i];
            }
        }
        for v in &vs {
            let v_norm_sq: f64 = v.iter().map(|a| a * a).sum();
            let corr: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            let lam_star = corr / (u_norm_sq * v_norm_sq);
            let lam = (lam_star.round() as i64).max(1);
            let lam_f = lam as f64;
            let obj = x_norm_sq - 2.0 * lam_f * corr + lam_f * lam_f * u_norm_sq * v_norm_sq;
            if obj < best.3 {
                best = (u.clone(), v.clone(), lam, obj);
            }
        }
    }
    Ok((
        Array1::from_vec(best.0),
        Array1::from_vec(best.1),
        best.2,
        best.3,
    ))
}

/// One factor update computed without intermediate reuse.
///
/// Mirrors the fast per-column sweep but recomputes the coupling vector
/// `F (lambda * C(:,k))` from scratch both before the weight update and
/// again before the column update, instead of adjusting it in place. Used
/// to certify that the adjustment path changes nothing.
pub fn reference_update_factor(
    factor: &mut Array2<f64>,
    m: &Array2<f64>,
    c: &Array2<f64>,
    lambda: &mut [i64],
    tau: u32,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<usize> {
    let rank = factor.ncols();
    let rows = factor.nrows();
    let mut repairs = 0;
    for k in 0..rank {
        let coupling = |factor: &Array2<f64>, lambda: &[i64]| -> Array1<f64> {
            let mut t = Array1::<f64>::zeros(rows);
            for r in 0..rank {
                let w = lambda[r] as f64 * c[[r, k]];
                for i in 0..rows {
                    t[i] += factor[[i, r]] * w;
                }
            }
            t
        };

        let t = coupling(factor, lambda);
        let col_norm_sq: f64 = factor.column(k).iter().map(|v| v * v).sum();
        let denom = c[[k, k]] * col_norm_sq;
        if denom <= 0.0 {
            return Err(Error::DegenerateColumn(format!(
                "zero denominator at column {k} in reference sweep"
            )));
        }
        let num: f64 = factor
            .column(k)
            .iter()
            .enumerate()
            .map(|(i, &f)| f * (m[[i, k]] - t[i]))
            .sum();
        let alpha = lambda[k] as f64 + num / denom;
        lambda[k] = (alpha.round() as i64).max(1);

        let t = coupling(factor, lambda);
        let scale = c[[k, k]] * lambda[k] as f64;
        let mut all_zero = true;
        for i in 0..rows {
            let b = factor[[i, k]] + (m[[i, k]] - t[i]) / scale;
            let v = b.round().clamp(0.0, tau as f64);
            factor[[i, k]] = v;
            if v != 0.0 {
                all_zero = false;
            }
        }
        if all_zero {
            let pick = rand::Rng::random_range(rng, 0..rows);
            factor[[pick, k]] = 1.0;
            repairs += 1;
        }
    }
    Ok(repairs)
}
