//! Sparse COO tensors and the dense/sparse kernels every solver consumes.
//!
//! A [`SparseTensor`] stores nonnegative entries of an order-`d` array
//! (matrices are order 2) as lexicographically sorted coordinate tuples.
//! The kernels here — MTTKRP, Gram matrices, streaming residuals — never
//! materialize a Khatri-Rao product or a dense residual; dense
//! reconstruction exists only for small instances behind an element cap.

use ndarray::{Array2, ArrayD, Dimension, IxDyn};

use crate::error::{Error, Result};

/// Default cap on the number of elements a dense materialization may hold.
pub const DEFAULT_DENSE_CAP: u128 = 10_000_000;

/// Order-`d` sparse array in coordinate form.
///
/// Invariants maintained by construction: entries are unique, sorted
/// lexicographically by index tuple, strictly positive and finite; all
/// indices lie within `dims`. Duplicate coordinates passed to [`Self::new`]
/// are summed; explicit zeros are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    /// Flattened `nnz * order` index storage, entry-major.
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensor {
    /// Builds a tensor from `(index tuple, value)` pairs, summing duplicates.
    pub fn new(dims: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "tensor order must be at least 2, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "every dimension must be positive, got {dims:?}"
            )));
        }
        let order = dims.len();
        let mut sorted = entries;
        for (idx, v) in &sorted {
            if idx.len() != order {
                return Err(Error::Dimension(format!(
                    "index tuple {idx:?} has {} coordinates, expected {order}",
                    idx.len()
                )));
            }
            for (m, (&i, &dim)) in idx.iter().zip(&dims).enumerate() {
                if i >= dim {
                    return Err(Error::InvalidInput(format!(
                        "index {i} out of range for mode {m} (size {dim})"
                    )));
                }
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite value at {idx:?}")));
            }
            if *v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "negative value {v} at {idx:?}"
                )));
            }
        }
        sorted.sort_by(|a, b| a.0.cmp(&b.0));

        let mut indices = Vec::with_capacity(sorted.len() * order);
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        for (idx, v) in sorted {
            let merged = !indices.is_empty() && indices[indices.len() - order..] == idx[..];
            if merged {
                *values.last_mut().unwrap() += v;
            } else {
                indices.extend_from_slice(&idx);
                values.push(v);
            }
        }
        // Drop explicit (or merged-to) zeros so nnz counts true support.
        let mut w = 0;
        for e in 0..values.len() {
            if values[e] != 0.0 {
                if w != e {
                    values[w] = values[e];
                    let (dst, src) = (w * order, e * order);
                    for m in 0..order {
                        indices[dst + m] = indices[src + m];
                    }
                }
                w += 1;
            }
        }
        values.truncate(w);
        indices.truncate(w * order);

        Ok(Self { dims, indices, values })
    }

    /// Empty tensor of the given shape.
    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, Vec::new())
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index tuple of the `e`-th stored entry.
    pub fn entry_index(&self, e: usize) -> &[usize] {
        let d = self.order();
        &self.indices[e * d..(e + 1) * d]
    }

    /// Iterates `(index tuple, value)` in canonical (sorted) order.
    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> {
        let d = self.order();
        self.indices.chunks_exact(d).zip(self.values.iter().copied())
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dense_size(&self) -> u128 {
        self.dims.iter().map(|&d| d as u128).product()
    }
}

/// Checks that `factors` matches `dims` mode-for-mode and returns the shared
/// column count.
pub(crate) fn validate_factors(dims: &[usize], factors: &[Array2<f64>]) -> Result<usize> {
    if factors.len() != dims.len() {
        return Err(Error::Dimension(format!(
            "{} factor matrices for order-{} tensor",
            factors.len(),
            dims.len()
        )));
    }
    let rank = factors[0].ncols();
    for (m, f) in factors.iter().enumerate() {
        if f.nrows() != dims[m] {
            return Err(Error::Dimension(format!(
                "factor {m} has {} rows, mode size is {}",
                f.nrows(),
                dims[m]
            )));
        }
        if f.ncols() != rank {
            return Err(Error::Dimension(format!(
                "factor {m} has {} columns, expected rank {rank}",
                f.ncols()
            )));
        }
    }
    Ok(rank)
}

/// Matricized-tensor times Khatri-Rao product for mode `mode`.
///
/// Returns the `I_mode x R` matrix whose `(i, r)` entry sums, over nonzeros
/// with mode-`mode` index `i`, the value times the product of the remaining
/// factors' entries. The Khatri-Rao product is never formed. Nonzeros are
/// reduced sequentially in canonical order, which fixes the result bit for
/// bit.
pub fn mttkrp(x: &SparseTensor, factors: &[Array2<f64>], mode: usize) -> Result<Array2<f64>> {
    let rank = validate_factors(x.dims(), factors)?;
    if mode >= x.order() {
        return Err(Error::Dimension(format!(
            "mode {mode} out of range for order {}",
            x.order()
        )));
    }
    let d = x.order();
    let mut out = Array2::<f64>::zeros((x.dims()[mode], rank));
    for (idx, v) in x.iter() {
        let row = idx[mode];
        for r in 0..rank {
            let mut p = v;
            for m in 0..d {
                if m != mode {
                    p *= factors[m][[idx[m], r]];
                }
            }
            out[[row, r]] += p;
        }
    }
    Ok(out)
}

/// Gram matrix `F^T F`.
pub fn gram(f: &Array2<f64>) -> Array2<f64> {
    f.t().dot(f)
}

/// Hadamard product of the Gram matrices of all factors except `mode`.
///
/// For order 2 this is just the Gram of the single other factor. The
/// diagonal entry `(k, k)` equals the squared norm of column `k` of the
/// implicit Khatri-Rao product of the excluded-mode factors.
pub fn gram_hadamard_excluding(factors: &[Array2<f64>], mode: usize) -> Result<Array2<f64>> {
    if factors.len() < 2 {
        return Err(Error::Dimension(
            "need at least two factors".to_string(),
        ));
    }
    if mode >= factors.len() {
        return Err(Error::Dimension(format!(
            "mode {mode} out of range for {} factors",
            factors.len()
        )));
    }
    let rank = factors[0].ncols();
    let mut out = Array2::<f64>::ones((rank, rank));
    for (m, f) in factors.iter().enumerate() {
        if m == mode {
            continue;
        }
        if f.ncols() != rank {
            return Err(Error::Dimension(format!(
                "factor {m} has {} columns, expected {rank}",
                f.ncols()
            )));
        }
        out = out * gram(f);
    }
    Ok(out)
}

/// Value of the rank-`R` model at one index tuple.
#[inline]
pub(crate) fn model_entry(factors: &[Array2<f64>], lambda: &[f64], idx: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (r, &l) in lambda.iter().enumerate() {
        let mut p = l;
        for (m, f) in factors.iter().enumerate() {
            p *= f[[idx[m], r]];
        }
        acc += p;
    }
    acc
}

/// Densifies the model's reconstruction, for small instances only.
pub fn reconstruct_dense(
    dims: &[usize],
    factors: &[Array2<f64>],
    lambda: &[f64],
    cap: u128,
) -> Result<ArrayD<f64>> {
    validate_factors(dims, factors)?;
    let size: u128 = dims.iter().map(|&d| d as u128).product();
    if size > cap {
        return Err(Error::DenseCapExceeded { size, cap });
    }
    let mut out = ArrayD::<f64>::zeros(IxDyn(dims));
    for (idx, slot) in out.indexed_iter_mut() {
        *slot = model_entry(factors, lambda, idx.slice());
    }
    Ok(out)
}

/// Inner product between a sparse tensor and the model's reconstruction,
/// streamed over the nonzeros.
pub fn inner_product(x: &SparseTensor, factors: &[Array2<f64>], lambda: &[f64]) -> Result<f64> {
    validate_factors(x.dims(), factors)?;
    let mut acc = 0.0;
    for (idx, v) in x.iter() {
        acc += v * model_entry(factors, lambda, idx);
    }
    Ok(acc)
}

/// Squared Frobenius norm of the reconstruction: `lambda^T (* of all Grams) lambda`.
pub fn model_norm_sq(factors: &[Array2<f64>], lambda: &[f64]) -> f64 {
    let rank = lambda.len();
    let mut had = Array2::<f64>::ones((rank, rank));
    for f in factors {
        had = had * gram(f);
    }
    let mut acc = 0.0;
    for i in 0..rank {
        for j in 0..rank {
            acc += lambda[i] * had[[i, j]] * lambda[j];
        }
    }
    acc
}

/// Squared residual norm `||X - Xhat||_F^2` without densifying the residual.
///
/// Uses the expansion `||X||^2 - 2 <X, Xhat> + ||Xhat||^2`; tiny negative
/// results from floating-point cancellation are clamped to zero.
pub fn residual_norm_sq(
    x: &SparseTensor,
    factors: &[Array2<f64>],
    lambda: &[f64],
) -> Result<f64> {
    let ip = inner_product(x, factors, lambda)?;
    let res = x.norm_sq() - 2.0 * ip + model_norm_sq(factors, lambda);
    Ok(res.max(0.0))
}

/// Proportion of data explained by the model: `1 - ||X - Xhat||^2 / ||X||^2`.
///
/// At most 1, possibly negative. Undefined (an error) for an empty tensor.
pub fn fit(x: &SparseTensor, factors: &[Array2<f64>], lambda: &[f64]) -> Result<f64> {
    let norm_sq = x.norm_sq();
    if norm_sq == 0.0 {
        return Err(Error::MetricUndefined(
            "fit undefined for empty tensor".to_string(),
        ));
    }
    Ok(1.0 - residual_norm_sq(x, factors, lambda)? / norm_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(dims: &[usize], nnz: usize, rng: &mut ChaCha8Rng) -> SparseTensor {
        let entries = (0..nnz)
            .map(|_| {
                let idx: Vec<usize> = dims.iter().map(|&d| rng.random_range(0..d)).collect();
                (idx, rng.random_range(1..=9) as f64)
            })
            .collect();
        SparseTensor::new(dims.to_vec(), entries).unwrap()
    }

    fn random_factor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn duplicates_are_summed_and_zeros_dropped() {
        let t = SparseTensor::new(
            vec![2, 2],
            vec![
                (vec![0, 0], 1.0),
                (vec![0, 0], 2.0),
                (vec![1, 1], 0.0),
                (vec![1, 0], 5.0),
            ],
        )
        .unwrap();
        assert_eq!(t.nnz(), 2);
        let entries: Vec<_> = t.iter().collect();
        assert_eq!(entries[0], (&[0usize, 0][..], 3.0));
        assert_eq!(entries[1], (&[1usize, 0][..], 5.0));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(SparseTensor::new(vec![3], vec![]).is_err());
        assert!(SparseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(SparseTensor::new(vec![2, 2], vec![(vec![2, 0], 1.0)]).is_err());
        assert!(SparseTensor::new(vec![2, 2], vec![(vec![0], 1.0)]).is_err());
        assert!(SparseTensor::new(vec![2, 2], vec![(vec![0, 0], f64::NAN)]).is_err());
        assert!(SparseTensor::new(vec![2, 2], vec![(vec![0, 0], -1.0)]).is_err());
    }

    #[test]
    fn mttkrp_single_nonzero() {
        // One nonzero X(0,1,0)=3 against all-ones 2x1 factors.
        let t = SparseTensor::new(vec![2, 2, 2], vec![(vec![0, 1, 0], 3.0)]).unwrap();
        let ones = Array2::<f64>::ones((2, 1));
        let factors = vec![ones.clone(), ones.clone(), ones.clone()];
        let m = mttkrp(&t, &factors, 0).unwrap();
        assert_eq!(m, array![[3.0], [0.0]]);
    }

    #[test]
    fn mttkrp_order2_is_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor(&[4, 3], 6, &mut rng);
        let u = random_factor(4, 2, &mut rng);
        let v = random_factor(3, 2, &mut rng);
        let dense = reference::dense_from_sparse(&x).unwrap();
        let xd = dense.into_dimensionality::<ndarray::Ix2>().unwrap();

        let m0 = mttkrp(&x, &[u.clone(), v.clone()], 0).unwrap();
        let m1 = mttkrp(&x, &[u.clone(), v.clone()], 1).unwrap();
        let xv = xd.dot(&v);
        let xtu = xd.t().dot(&u);
        for (a, b) in m0.iter().zip(xv.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in m1.iter().zip(xtu.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mttkrp_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [3usize, 4, 5];
        let x = random_tensor(&dims, 10, &mut rng);
        let factors: Vec<_> = dims.iter().map(|&d| random_factor(d, 2, &mut rng)).collect();
        for mode in 0..3 {
            let fast = mttkrp(&x, &factors, mode).unwrap();
            let slow = reference::mttkrp_dense_oracle(&x, &factors, mode).unwrap();
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() <= 1e-12, "mode {mode}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mttkrp_shape_mismatch_errors() {
        let t = SparseTensor::new(vec![2, 2], vec![(vec![0, 0], 1.0)]).unwrap();
        let bad = vec![Array2::<f64>::ones((3, 1)), Array2::<f64>::ones((2, 1))];
        assert!(mttkrp(&t, &bad, 0).is_err());
        let good = vec![Array2::<f64>::ones((2, 1)), Array2::<f64>::ones((2, 1))];
        assert!(mttkrp(&t, &good, 2).is_err());
    }

    #[test]
    fn gram_examples() {
        let eye = Array2::<f64>::eye(2);
        assert_eq!(gram(&eye), Array2::<f64>::eye(2));
        let col = array![[1.0], [2.0]];
        assert_eq!(gram(&col), array![[5.0]]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_factor(6, 3, &mut rng);
        let g = gram(&f);
        for i in 0..3 {
            for j in 0..3 {
                let naive: f64 = (0..6).map(|t| f[[t, i]] * f[[t, j]]).sum();
                assert!((g[[i, j]] - naive).abs() < 1e-12);
                assert!((g[[i, j]] - g[[j, i]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_hadamard_excluding_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_factor(4, 2, &mut rng);
        let v = random_factor(3, 2, &mut rng);
        let c = gram_hadamard_excluding(&[u.clone(), v.clone()], 0).unwrap();
        assert_eq!(c, gram(&v));

        let eyes = vec![Array2::<f64>::eye(2); 3];
        assert_eq!(
            gram_hadamard_excluding(&eyes, 1).unwrap(),
            Array2::<f64>::eye(2)
        );

        // Random order-3 case against the materialized Khatri-Rao product.
        let dims = [4usize, 3, 5];
        let factors: Vec<_> = dims.iter().map(|&d| random_factor(d, 2, &mut rng)).collect();
        for mode in 0..3 {
            let c = gram_hadamard_excluding(&factors, mode).unwrap();
            let krp = reference::khatri_rao_excluding(&factors, mode);
            let explicit = krp.t().dot(&krp);
            for (a, b) in c.iter().zip(explicit.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
            // Diagonal equals squared KRP column norms.
            for k in 0..2 {
                let norm: f64 = krp.column(k).iter().map(|x| x * x).sum();
                assert!((c[[k, k]] - norm).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reconstruct_outer_product() {
        let factors = vec![array![[1.0], [0.0]], array![[0.0], [3.0]]];
        let out = reconstruct_dense(&[2, 2], &factors, &[2.0], DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(out[[0, 0]], 0.0);
        assert_eq!(out[[0, 1]], 6.0);
        assert_eq!(out[[1, 0]], 0.0);
        assert_eq!(out[[1, 1]], 0.0);
    }

    #[test]
    fn reconstruct_respects_cap() {
        let factors = vec![Array2::<f64>::ones((10, 1)), Array2::<f64>::ones((10, 1))];
        let err = reconstruct_dense(&[10, 10], &factors, &[1.0], 50).unwrap_err();
        assert!(matches!(err, Error::DenseCapExceeded { .. }));
    }

    #[test]
    fn fit_is_one_for_exact_model() {
        let factors = vec![array![[1.0], [2.0]], array![[1.0], [3.0]]];
        let lambda = [2.0];
        let dense = reconstruct_dense(&[2, 2], &factors, &lambda, DEFAULT_DENSE_CAP).unwrap();
        let entries: Vec<_> = dense
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(idx, &v)| (idx.slice().to_vec(), v))
            .collect();
        let x = SparseTensor::new(vec![2, 2], entries).unwrap();
        assert_eq!(fit(&x, &factors, &lambda).unwrap(), 1.0);
        assert_eq!(residual_norm_sq(&x, &factors, &lambda).unwrap(), 0.0);
    }

    #[test]
    fn fit_disjoint_support_is_pythagorean() {
        // Data lives on (0, *) rows, the unit rank-1 model on (1, 1).
        let x = SparseTensor::new(vec![2, 2], vec![(vec![0, 0], 2.0), (vec![0, 1], 1.0)]).unwrap();
        let factors = vec![array![[0.0], [1.0]], array![[0.0], [1.0]]];
        let lambda = [1.0];
        let model_sq = model_norm_sq(&factors, &lambda);
        assert_eq!(model_sq, 1.0);
        let expected = 1.0 - (x.norm_sq() + model_sq) / x.norm_sq();
        let got = fit(&x, &factors, &lambda).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn fit_empty_tensor_is_undefined() {
        let x = SparseTensor::zeros(vec![2, 2]).unwrap();
        let factors = vec![array![[1.0], [0.0]], array![[1.0], [0.0]]];
        assert!(matches!(
            fit(&x, &factors, &[1.0]),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn streaming_residual_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let dims = [4usize, 3, 3];
            let x = random_tensor(&dims, 8, &mut rng);
            let factors: Vec<_> = dims
                .iter()
                .map(|&d| Array2::from_shape_fn((d, 2), |_| rng.random_range(0.0..2.0)))
                .collect();
            let lambda = [rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)];
            let streaming = residual_norm_sq(&x, &factors, &lambda).unwrap();
            let dense = reference::dense_residual_norm_sq(&x, &factors, &lambda).unwrap();
            let scale = dense.abs().max(1.0);
            assert!(
                (streaming - dense).abs() / scale < 1e-10,
                "{streaming} vs {dense}"
            );
        }
    }
}
