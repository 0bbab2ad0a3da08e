//! Comparison methods: real-valued nonnegative factorization, rounding
//! heuristics, and alternating box-constrained integer least squares.
//!
//! The real-valued solvers reuse the integer solver's alternating driver
//! with projection onto the nonnegative reals instead of the integer box,
//! so both share one monotonicity argument. Rounding and scale-and-round
//! turn a real model into a valid integer model; AILS solves every row
//! subproblem to global optimality with a box-constrained integer
//! least-squares search.

mod ils;

pub use ils::{box_ils_solve, IlsProblem, IlsSolution};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::IntegerFactorModel;
use crate::projection::clamp_round;
use crate::solver::{
    self, run_alternating, DriverParams, SolverConfig, SolverTrace, UpdateRule,
};
use crate::tensor::{self, SparseTensor};

/// Columns are floored at this value instead of exactly zero, which keeps
/// every Gram diagonal positive without disturbing the solution.
const REAL_FLOOR: f64 = 1e-16;

/// Nonnegative real factor matrices with nonnegative real weights
/// (all ones for the matrix factorization; column norms for the tensor one).
#[derive(Debug, Clone, PartialEq)]
pub struct RealFactorModel {
    pub factors: Vec<Array2<f64>>,
    pub lambda: Vec<f64>,
}

impl RealFactorModel {
    pub fn new(factors: Vec<Array2<f64>>, lambda: Vec<f64>) -> Result<Self> {
        let model = Self { factors, lambda };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.len() < 2 {
            return Err(Error::InvalidInput(
                "a model needs at least two factor matrices".to_string(),
            ));
        }
        let rank = self.lambda.len();
        for &l in &self.lambda {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidInput(format!("invalid weight {l}")));
            }
        }
        for (n, f) in self.factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(Error::Dimension(format!(
                    "factor {n} has {} columns, expected {rank}",
                    f.ncols()
                )));
            }
            if f.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "factor {n} has a negative or non-finite entry"
                )));
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

    pub fn fit(&self, x: &SparseTensor) -> Result<f64> {
        tensor::fit(x, &self.factors, &self.lambda)
    }
}

fn random_positive_factors(x: &SparseTensor, rank: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    let mean = x.values().iter().sum::<f64>() / x.dense_size() as f64;
    let scale = (mean / rank as f64).sqrt().max(REAL_FLOOR);
    x.dims()
        .iter()
        .map(|&rows| {
            Array2::from_shape_fn((rows, rank), |_| {
                REAL_FLOOR + rng.random::<f64>() * scale
            })
        })
        .collect()
}

fn run_real(
    x: &SparseTensor,
    rank: usize,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<(Vec<Array2<f64>>, Vec<f64>, SolverTrace)> {
    if rank == 0 {
        return Err(Error::InvalidInput("rank must be at least 1".to_string()));
    }
    if x.nnz() == 0 {
        return Err(Error::InvalidInput(
            "cannot factor an empty tensor".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = random_positive_factors(x, rank, &mut rng);
    let mut lambda = vec![1.0; rank];
    let params = DriverParams {
        tol,
        max_iters,
        normalized_tol: true,
        track_objective: true,
    };
    let trace = run_alternating(
        x,
        &mut factors,
        &mut lambda,
        UpdateRule::NonnegativeReal { floor: REAL_FLOOR },
        &params,
        &mut rng,
    )?;
    Ok((factors, lambda, trace))
}

/// Nonnegative matrix factorization fit with alternating exact column
/// updates; weights stay at one.
pub fn nmf_hals(
    x: &SparseTensor,
    rank: usize,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<(RealFactorModel, SolverTrace)> {
    if x.order() != 2 {
        return Err(Error::Dimension(format!(
            "matrix factorization requires order 2, got {}",
            x.order()
        )));
    }
    let (factors, lambda, trace) = run_real(x, rank, tol, max_iters, seed)?;
    Ok((RealFactorModel::new(factors, lambda)?, trace))
}

/// Nonnegative CP fit for tensors of any order; factor columns are
/// normalized to unit length at the end with the norms collected into the
/// weight vector.
pub fn cp_als_nonneg(
    x: &SparseTensor,
    rank: usize,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<(RealFactorModel, SolverTrace)> {
    let (mut factors, mut lambda, trace) = run_real(x, rank, tol, max_iters, seed)?;
    for r in 0..rank {
        for f in factors.iter_mut() {
            let norm = f.column(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                lambda[r] *= norm;
                f.column_mut(r).mapv_inplace(|v| v / norm);
            }
        }
    }
    Ok((RealFactorModel::new(factors, lambda)?, trace))
}

fn nth_root(value: f64, d: usize) -> f64 {
    match d {
        2 => value.sqrt(),
        3 => value.cbrt(),
        _ => value.powf(1.0 / d as f64),
    }
}

/// Absorbs each weight into the factors as its order-th root, returning the
/// rescaled factor list.
fn absorb_lambda(real: &RealFactorModel) -> Vec<Array2<f64>> {
    let d = real.order();
    let roots: Vec<f64> = real.lambda.iter().map(|&l| nth_root(l, d)).collect();
    real.factors
        .iter()
        .map(|f| {
            let mut scaled = f.clone();
            for (j, &root) in roots.iter().enumerate() {
                scaled.column_mut(j).mapv_inplace(|v| v * root);
            }
            scaled
        })
        .collect()
}

/// Rounds a real model into the integer box.
///
/// Weights are first spread across the modes (order-th root per factor),
/// then every entry is rounded and clamped into `{0..tau}` and the weights
/// are reset to one. Columns that round to all zero get a +1 repair at a
/// random coordinate, the same repair the solver uses.
pub fn round_model(
    real: &RealFactorModel,
    tau: u32,
    rng: &mut ChaCha8Rng,
) -> Result<IntegerFactorModel> {
    real.validate()?;
    let rank = real.rank();
    let mut factors = absorb_lambda(real);
    for f in factors.iter_mut() {
        f.mapv_inplace(|v| clamp_round(v, tau as f64));
        for k in 0..rank {
            solver::zero_lock_repair(f.column_mut(k), rng);
        }
    }
    IntegerFactorModel::new(factors, vec![1; rank], tau)
}

/// Scale-and-round: rescales each factor column so its maximum hits `tau`
/// before rounding, then absorbs the inverse scaling into the weights.
///
/// The weight `round(1 / prod of column scale factors)` can round to zero;
/// it is clamped to one to stay a positive integer.
pub fn scale_and_round_model(
    real: &RealFactorModel,
    tau: u32,
    rng: &mut ChaCha8Rng,
) -> Result<IntegerFactorModel> {
    real.validate()?;
    let rank = real.rank();
    let scaled = absorb_lambda(real);
    let mut gamma_product = vec![1.0; rank];
    let mut factors = Vec::with_capacity(scaled.len());
    for f in &scaled {
        let mut out = Array2::<f64>::zeros(f.dim());
        for j in 0..rank {
            let max = f.column(j).iter().cloned().fold(0.0, f64::max);
            let gamma = if max > 0.0 { tau as f64 / max } else { 1.0 };
            gamma_product[j] *= gamma;
            for i in 0..f.nrows() {
                out[[i, j]] = clamp_round(gamma * f[[i, j]], tau as f64);
            }
        }
        for k in 0..rank {
            solver::zero_lock_repair(out.column_mut(k), rng);
        }
        factors.push(out);
    }
    let lambda: Vec<i64> = gamma_product
        .iter()
        .map(|&g| ((1.0 / g).round() as i64).max(1))
        .collect();
    IntegerFactorModel::new(factors, lambda, tau)
}

/// Alternating integer least squares for order-2 input.
///
/// Each outer sweep solves every row of the first factor (fixing the rest),
/// then every row of the second, then the weight vector, each to global
/// optimality within its box, so the objective never increases. The
/// reduction (Cholesky of the Gram matrix) is computed once per batch of
/// row problems.
pub fn ails_matrix(
    x: &SparseTensor,
    config: &SolverConfig,
) -> Result<(IntegerFactorModel, SolverTrace)> {
    if x.order() != 2 {
        return Err(Error::Dimension(format!(
            "AILS requires order 2, got {}",
            x.order()
        )));
    }
    config.validate()?;
    if x.nnz() == 0 {
        return Err(Error::InvalidInput(
            "cannot factor an empty tensor".to_string(),
        ));
    }
    if config.rank > ils::MAX_ILS_DIMENSION {
        return Err(Error::InvalidInput(format!(
            "AILS rank {} exceeds the enumeration cap {}",
            config.rank,
            ils::MAX_ILS_DIMENSION
        )));
    }
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut factors, lambda) = solver::initialize_parts(x, config, &mut rng)?;
    let mut lambda: Vec<i64> = lambda;
    let rank = config.rank;
    let tau = config.tau;
    let (m_rows, n_cols) = (x.dims()[0], x.dims()[1]);
    let norm_sq = x.norm_sq();

    // Per-row squared norms of the data, reused as the constant term of
    // every row problem.
    let mut row_norm_sq = vec![0.0; m_rows];
    let mut col_norm_sq = vec![0.0; n_cols];
    for (idx, v) in x.iter() {
        row_norm_sq[idx[0]] += v * v;
        col_norm_sq[idx[1]] += v * v;
    }

    let mut trace = SolverTrace::default();
    let initial_obj = tensor::residual_norm_sq(x, &factors, &to_f64(&lambda))?;
    if config.track_objective {
        trace.sweeps.push(crate::solver::SweepRecord {
            sweep: 0,
            objective: initial_obj,
            fit: 1.0 - initial_obj / norm_sq,
            seconds: 0.0,
            zero_lock_repairs: 0,
            flops: 0,
        });
    }
    trace.final_objective = initial_obj;
    trace.final_fit = 1.0 - initial_obj / norm_sq;
    let mut prev_obj = initial_obj;

    for sweep in 1..=config.max_iters {
        let sweep_start = std::time::Instant::now();

        // Rows of the first factor: targets are rows of X, basis is the
        // second factor scaled by the weights.
        solve_factor_rows(x, &mut factors, &lambda, 0, &row_norm_sq, tau)?;
        // Rows of the second factor against the updated first.
        solve_factor_rows(x, &mut factors, &lambda, 1, &col_norm_sq, tau)?;
        // Vectorized weight problem: Gram is the Hadamard product of the
        // factor Grams, the target projection is computed sparsely.
        solve_lambda_ils(x, &factors, &mut lambda, norm_sq)?;

        let objective = tensor::residual_norm_sq(x, &factors, &to_f64(&lambda))?;
        let seconds = sweep_start.elapsed().as_secs_f64();
        if config.track_objective {
            trace.sweeps.push(crate::solver::SweepRecord {
                sweep,
                objective,
                fit: 1.0 - objective / norm_sq,
                seconds,
                zero_lock_repairs: 0,
                flops: 0,
            });
        }
        trace.sweeps_run = sweep;
        trace.final_objective = objective;
        trace.final_fit = 1.0 - objective / norm_sq;

        let diff = (prev_obj - objective).abs();
        let measure = if config.normalized_tol {
            diff / norm_sq
        } else {
            diff
        };
        prev_obj = objective;
        if measure < config.tol {
            trace.converged = true;
            break;
        }
    }

    // Exact row solves may legitimately zero out a column; repair before
    // handing back a model so the invariant holds.
    for f in factors.iter_mut() {
        for k in 0..rank {
            if solver::zero_lock_repair(f.column_mut(k), &mut rng).is_some() {
                trace.total_zero_lock_repairs += 1;
                log::warn!("repaired an all-zero column in the AILS result");
            }
        }
    }
    trace.total_seconds = start.elapsed().as_secs_f64();
    let model = IntegerFactorModel::new(factors, lambda, tau)?;
    Ok((model, trace))
}

fn to_f64(lambda: &[i64]) -> Vec<f64> {
    lambda.iter().map(|&l| l as f64).collect()
}

/// Solves every row of factor `mode` as a box ILS against the other factor
/// scaled by the weights. One reduction serves the whole batch.
fn solve_factor_rows(
    x: &SparseTensor,
    factors: &mut [Array2<f64>],
    lambda: &[i64],
    mode: usize,
    row_norms: &[f64],
    tau: u32,
) -> Result<()> {
    let rank = lambda.len();
    let other = 1 - mode;
    // Basis Gram: (F_other diag(lambda))^T (F_other diag(lambda)).
    let g_other = tensor::gram(&factors[other]);
    let mut gram = Array2::<f64>::zeros((rank, rank));
    for i in 0..rank {
        for j in 0..rank {
            gram[[i, j]] = g_other[[i, j]] * lambda[i] as f64 * lambda[j] as f64;
        }
    }
    let basis = ils::ReducedBasis::new(&gram)?;
    // G^T y for every row at once: lambda * (X F_other) rows.
    let proj = tensor::mttkrp(x, factors, mode)?;
    let rows = factors[mode].nrows();
    for i in 0..rows {
        let mut gty = Array1::<f64>::zeros(rank);
        for r in 0..rank {
            gty[r] = lambda[r] as f64 * proj[[i, r]];
        }
        let (z, _) = basis.solve(gty.view(), row_norms[i], 0, tau as i64)?;
        for r in 0..rank {
            factors[mode][[i, r]] = z[r] as f64;
        }
    }
    Ok(())
}

/// Globally optimal weight vector over `{1..cap}^R` via the vectorized
/// formulation; the implicit Khatri-Rao basis only enters through its Gram
/// matrix and its projection of the data, both computed without
/// materializing it.
fn solve_lambda_ils(
    x: &SparseTensor,
    factors: &[Array2<f64>],
    lambda: &mut Vec<i64>,
    norm_sq: f64,
) -> Result<()> {
    let rank = lambda.len();
    let gram = &tensor::gram(&factors[0]) * &tensor::gram(&factors[1]);
    let mut gty = Array1::<f64>::zeros(rank);
    for (idx, v) in x.iter() {
        for r in 0..rank {
            gty[r] += v * factors[0][[idx[0], r]] * factors[1][[idx[1], r]];
        }
    }
    let basis = ils::ReducedBasis::new(&gram)?;
    // The box must contain both the unconstrained optimum's neighborhood and
    // the current weights, otherwise a sweep could go uphill.
    let unconstrained = basis.back_substitute(gty.view())?;
    let from_opt = unconstrained
        .iter()
        .map(|&l| (2.0 * l.abs()).ceil() as i64 + 2)
        .max()
        .unwrap_or(3);
    let cap = from_opt.max(lambda.iter().copied().max().unwrap_or(1)).max(3);
    let (z, _) = basis.solve(gty.view(), norm_sq, 1, cap)?;
    *lambda = z;
    Ok(())
}
