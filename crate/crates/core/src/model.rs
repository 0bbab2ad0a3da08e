//! Integer factor models: score-valued factor matrices plus component weights.

use ndarray::{Array2, ArrayD};

use crate::error::{Error, Result};
use crate::tensor::{self, SparseTensor, DEFAULT_DENSE_CAP};

/// A rank-`R` model with factor entries in `{0, ..., tau}` and positive
/// integer component weights.
///
/// Factor matrices are stored as `f64` arrays whose entries are exact
/// integers; weights are `i64`. Construction validates integrality, the
/// `[0, tau]` box, weight positivity and the zero-lock invariant (no factor
/// column may be entirely zero).
#[derive(Debug, Clone, PartialEq)]
pub struct IntegerFactorModel {
    pub factors: Vec<Array2<f64>>,
    pub lambda: Vec<i64>,
    pub tau: u32,
}

impl IntegerFactorModel {
    pub fn new(factors: Vec<Array2<f64>>, lambda: Vec<i64>, tau: u32) -> Result<Self> {
        let model = Self { factors, lambda, tau };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::InvalidInput("tau must be at least 1".to_string()));
        }
        if self.factors.len() < 2 {
            return Err(Error::InvalidInput(
                "a model needs at least two factor matrices".to_string(),
            ));
        }
        let rank = self.lambda.len();
        if rank == 0 {
            return Err(Error::InvalidInput("rank must be at least 1".to_string()));
        }
        for (r, &l) in self.lambda.iter().enumerate() {
            if l < 1 {
                return Err(Error::InvalidInput(format!(
                    "lambda({r}) = {l}, weights must be positive integers"
                )));
            }
        }
        for (n, f) in self.factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(Error::Dimension(format!(
                    "factor {n} has {} columns, lambda has length {rank}",
                    f.ncols()
                )));
            }
            for &v in f.iter() {
                if !v.is_finite() || v.fract() != 0.0 || v < 0.0 || v > self.tau as f64 {
                    return Err(Error::InvalidInput(format!(
                        "factor {n} entry {v} is not an integer in [0, {}]",
                        self.tau
                    )));
                }
            }
            for k in 0..rank {
                if f.column(k).iter().all(|&v| v == 0.0) {
                    return Err(Error::DegenerateColumn(format!(
                        "factor {n} column {k} is all zero"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn lambda_f64(&self) -> Vec<f64> {
        self.lambda.iter().map(|&l| l as f64).collect()
    }

    /// Densifies the reconstruction, subject to the default element cap.
    pub fn reconstruct(&self) -> Result<ArrayD<f64>> {
        self.reconstruct_with_cap(DEFAULT_DENSE_CAP)
    }

    pub fn reconstruct_with_cap(&self, cap: u128) -> Result<ArrayD<f64>> {
        tensor::reconstruct_dense(&self.dims(), &self.factors, &self.lambda_f64(), cap)
    }

    /// Streaming `||X - Xhat||_F^2` against this model.
    pub fn residual_norm_sq(&self, x: &SparseTensor) -> Result<f64> {
        tensor::residual_norm_sq(x, &self.factors, &self.lambda_f64())
    }

    /// Streaming fit against this model.
    pub fn fit(&self, x: &SparseTensor) -> Result<f64> {
        tensor::fit(x, &self.factors, &self.lambda_f64())
    }

    /// Nonzero count of each factor matrix.
    pub fn factor_nnz(&self) -> Vec<usize> {
        self.factors
            .iter()
            .map(|f| f.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }
}
