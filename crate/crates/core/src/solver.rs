//! Alternating integer fitting.
//!
//! One sweep updates each factor matrix in mode order; within a factor,
//! weights and columns are updated one rank-1 component at a time, each
//! block solved exactly. The per-column coupling vector `F (lambda * C(:,k))`
//! is adjusted in place after the weight update instead of being recomputed,
//! and the data-side matrix `M` from the final mode doubles as the inner
//! product needed for the objective, so a sweep costs little beyond its
//! MTTKRP calls.
//!
//! All randomness (initialization, zero-lock repairs) comes from a single
//! ChaCha8 stream seeded from the config, drawn in a fixed order:
//! initialization first (factor entries mode by mode, row-major; then any
//! scheme-specific draws), then zero-lock repairs as encountered during
//! sweeps. Identical config and seed reproduce a run bit for bit.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayViewMut1};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines;
use crate::error::{Error, Result};
use crate::model::IntegerFactorModel;
use crate::projection::{self, BoxSet};
use crate::tensor::{self, SparseTensor};

/// How the starting model is chosen.
#[derive(Debug, Clone)]
pub enum InitScheme {
    /// Uniform integer entries in `{0, ..., tau}`, all-ones weights.
    Random,
    /// Random first-mode factor; remaining factors populated by sampling
    /// rows/slices of the input. Defined for orders 2 and 3 only.
    RandomSampling,
    /// Round the result of a real-valued nonnegative factorization.
    RoundSeed,
    /// Scale-and-round the result of a real-valued nonnegative factorization.
    ScaleRoundSeed,
    /// Start from the given model.
    Explicit(IntegerFactorModel),
}

/// Solver parameters.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub rank: usize,
    pub tau: u32,
    /// Convergence threshold on the successive objective difference.
    pub tol: f64,
    pub max_iters: usize,
    pub init: InitScheme,
    pub seed: u64,
    /// Keep per-sweep trace records (the summary fields are always filled).
    pub track_objective: bool,
    /// Divide the objective difference by `||X||_F^2` before comparing to
    /// `tol` (scale-free); set false for the raw difference.
    pub normalized_tol: bool,
}

impl SolverConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            tau: 5,
            tol: 1e-4,
            max_iters: 200,
            init: InitScheme::Random,
            seed: 0,
            track_objective: true,
            normalized_tol: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: InitScheme) -> Self {
        self.init = init;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidInput("rank must be at least 1".to_string()));
        }
        if self.tau == 0 {
            return Err(Error::InvalidInput("tau must be at least 1".to_string()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidInput("tol must be positive".to_string()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput(
                "max_iters must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// State of the run after one full sweep (entry 0 is the initial model).
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub objective: f64,
    pub fit: f64,
    pub seconds: f64,
    pub zero_lock_repairs: usize,
    /// Counted multiply/add operations for this sweep.
    pub flops: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverTrace {
    pub sweeps: Vec<SweepRecord>,
    pub converged: bool,
    pub sweeps_run: usize,
    pub final_objective: f64,
    pub final_fit: f64,
    pub total_seconds: f64,
    pub total_zero_lock_repairs: usize,
}

/// Sets one coordinate of an all-zero column to 1, chosen uniformly from the
/// solver's RNG stream; non-zero columns are left untouched.
///
/// Returns the repaired coordinate, if any.
pub fn zero_lock_repair(mut column: ArrayViewMut1<f64>, rng: &mut ChaCha8Rng) -> Option<usize> {
    if column.iter().any(|&v| v != 0.0) {
        return None;
    }
    let pick = rng.random_range(0..column.len());
    column[pick] = 1.0;
    Some(pick)
}

/// Which constraint set a sweep projects onto.
#[derive(Debug, Clone, Copy)]
pub(crate) enum UpdateRule {
    /// Integer box `{0..tau}` columns, positive integer weights, zero-lock
    /// repair after each column projection.
    IntegerBox { tau: u32 },
    /// Nonnegative real columns floored at `floor` (which keeps every column
    /// norm positive), weights left untouched.
    NonnegativeReal { floor: f64 },
}

pub(crate) struct UpdateStats {
    pub zero_lock_repairs: usize,
    pub flops: u64,
}

/// One full pass over the columns of `factor` given the data-side matrix
/// `m` and coefficient matrix `c` (Gram, or Hadamard product of Grams).
///
/// `lambda` holds exact integers when the rule is the integer box.
pub(crate) fn update_factor_generic(
    factor: &mut Array2<f64>,
    m: &Array2<f64>,
    c: &Array2<f64>,
    lambda: &mut [f64],
    rule: UpdateRule,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let (rows, rank) = factor.dim();
    if m.dim() != (rows, rank) {
        return Err(Error::Dimension(format!(
            "data-side matrix is {:?}, factor is {:?}",
            m.dim(),
            factor.dim()
        )));
    }
    if c.dim() != (rank, rank) || lambda.len() != rank {
        return Err(Error::Dimension(
            "coefficient matrix or lambda length does not match rank".to_string(),
        ));
    }

    let mut repairs = 0usize;
    let mut flops = 0u64;
    let mut t = Array1::<f64>::zeros(rows);
    let mut t_k = Array1::<f64>::zeros(rows);

    for k in 0..rank {
        // A column that arrives all-zero would make the weight denominator
        // vanish; repair it before using it.
        if matches!(rule, UpdateRule::IntegerBox { .. })
            && zero_lock_repair(factor.column_mut(k), rng).is_some()
        {
            repairs += 1;
        }

        // t = F (lambda * C(:,k))
        t.fill(0.0);
        for r in 0..rank {
            let w = lambda[r] * c[[r, k]];
            for i in 0..rows {
                t[i] += factor[[i, r]] * w;
            }
        }
        flops += (2 * rows * rank + rank) as u64;

        if let UpdateRule::IntegerBox { .. } = rule {
            // t_k = F(:,k) * lambda(k) C(k,k)
            let lam_c = lambda[k] * c[[k, k]];
            for i in 0..rows {
                t_k[i] = factor[[i, k]] * lam_c;
            }
            let new_lambda = projection::optimal_lambda(
                lambda[k] as i64,
                factor.column(k),
                m.column(k),
                t.view(),
                c[[k, k]],
            )?;
            lambda[k] = new_lambda as f64;
            // Only the k-th component's contribution to t changed.
            let new_lam_c = lambda[k] * c[[k, k]];
            for i in 0..rows {
                t[i] = t[i] - t_k[i] + factor[[i, k]] * new_lam_c;
            }
            flops += (9 * rows) as u64 + 4;

            #[cfg(debug_assertions)]
            {
                for i in 0..rows {
                    let mut fresh = 0.0;
                    for r in 0..rank {
                        fresh += factor[[i, r]] * lambda[r] * c[[r, k]];
                    }
                    debug_assert!(
                        (t[i] - fresh).abs() <= 1e-10 * (1.0 + fresh.abs()),
                        "adjusted coupling diverged from a fresh recomputation"
                    );
                }
            }
        }

        match rule {
            UpdateRule::IntegerBox { tau } => {
                let col = projection::optimal_scaled_column(
                    factor.column(k),
                    m.column(k),
                    t.view(),
                    c[[k, k]],
                    lambda[k] as i64,
                    BoxSet { tau },
                )?;
                let mut all_zero = true;
                for i in 0..rows {
                    factor[[i, k]] = col[i];
                    if col[i] != 0.0 {
                        all_zero = false;
                    }
                }
                flops += (3 * rows) as u64;
                // Repair immediately so later denominators stay positive.
                if all_zero {
                    let pick = rng.random_range(0..rows);
                    factor[[pick, k]] = 1.0;
                    repairs += 1;
                }
            }
            UpdateRule::NonnegativeReal { floor } => {
                let denom = c[[k, k]];
                if denom.is_nan() || denom <= 0.0 {
                    return Err(Error::DegenerateColumn(format!(
                        "coefficient diagonal {denom} at column {k}"
                    )));
                }
                for i in 0..rows {
                    let b = factor[[i, k]] + (m[[i, k]] - t[i]) / denom;
                    factor[[i, k]] = b.max(floor);
                }
                flops += (3 * rows) as u64;
            }
        }
    }

    Ok(UpdateStats {
        zero_lock_repairs: repairs,
        flops,
    })
}

/// Updates one integer factor and the weight vector in place.
///
/// Each weight and column is block-optimal at the moment of its update, so
/// the full objective cannot increase across the sweep (zero-lock repairs,
/// which perturb an annihilated column by +1, are the logged exception).
pub fn update_factor(
    factor: &mut Array2<f64>,
    m: &Array2<f64>,
    c: &Array2<f64>,
    lambda: &mut [i64],
    tau: u32,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let mut lambda_f: Vec<f64> = lambda.iter().map(|&l| l as f64).collect();
    let stats = update_factor_generic(
        factor,
        m,
        c,
        &mut lambda_f,
        UpdateRule::IntegerBox { tau },
        rng,
    )?;
    for (dst, &src) in lambda.iter_mut().zip(&lambda_f) {
        *dst = src as i64;
    }
    Ok(stats.zero_lock_repairs)
}

/// Whether the alternating driver stops on the normalized or raw objective
/// difference.
pub(crate) struct DriverParams {
    pub tol: f64,
    pub max_iters: usize,
    pub normalized_tol: bool,
    pub track_objective: bool,
}

/// Shared alternating driver: sweeps modes in order until the successive
/// objective difference drops below tolerance.
pub(crate) fn run_alternating(
    x: &SparseTensor,
    factors: &mut [Array2<f64>],
    lambda: &mut [f64],
    rule: UpdateRule,
    params: &DriverParams,
    rng: &mut ChaCha8Rng,
) -> Result<SolverTrace> {
    let start = Instant::now();
    let d = x.order();
    let rank = lambda.len();
    let nnz = x.nnz();
    let norm_sq = x.norm_sq();

    let mut trace = SolverTrace::default();
    let initial_obj = tensor::residual_norm_sq(x, factors, lambda)?;
    if params.track_objective {
        trace.sweeps.push(SweepRecord {
            sweep: 0,
            objective: initial_obj,
            fit: 1.0 - initial_obj / norm_sq,
            seconds: 0.0,
            zero_lock_repairs: 0,
            flops: 0,
        });
    }
    let mut prev_obj = initial_obj;
    trace.final_objective = initial_obj;
    trace.final_fit = 1.0 - initial_obj / norm_sq;

    for sweep in 1..=params.max_iters {
        let sweep_start = Instant::now();
        let mut repairs = 0usize;
        let mut flops = 0u64;
        let mut last_m: Option<Array2<f64>> = None;
        let mut last_c: Option<Array2<f64>> = None;

        for mode in 0..d {
            let m = tensor::mttkrp(x, factors, mode)?;
            flops += (nnz * rank * d) as u64;
            let c = tensor::gram_hadamard_excluding(factors, mode)?;
            let other_rows: usize = (0..d).filter(|&mm| mm != mode).map(|mm| factors[mm].nrows()).sum();
            flops += (2 * rank * rank * other_rows + (d - 1) * rank * rank) as u64;

            let stats = update_factor_generic(&mut factors[mode], &m, &c, lambda, rule, rng)?;
            repairs += stats.zero_lock_repairs;
            flops += stats.flops;

            if mode == d - 1 {
                last_m = Some(m);
                last_c = Some(c);
            }
        }

        // Objective from the final mode's intermediates: M^(d) stays valid
        // after updating A^(d) because it never involves A^(d) itself.
        let m_last = last_m.unwrap();
        let c_last = last_c.unwrap();
        let a_last = &factors[d - 1];
        let rows_last = a_last.nrows();
        let mut inner = 0.0;
        for r in 0..rank {
            let mut acc = 0.0;
            for i in 0..rows_last {
                acc += m_last[[i, r]] * a_last[[i, r]];
            }
            inner += lambda[r] * acc;
        }
        let had_all = &c_last * &tensor::gram(a_last);
        let mut model_sq = 0.0;
        for i in 0..rank {
            for j in 0..rank {
                model_sq += lambda[i] * had_all[[i, j]] * lambda[j];
            }
        }
        flops += (2 * rows_last * rank + 2 * rank * rank * rows_last + 2 * rank * rank) as u64;
        let objective = (norm_sq - 2.0 * inner + model_sq).max(0.0);

        let seconds = sweep_start.elapsed().as_secs_f64();
        if params.track_objective {
            trace.sweeps.push(SweepRecord {
                sweep,
                objective,
                fit: 1.0 - objective / norm_sq,
                seconds,
                zero_lock_repairs: repairs,
                flops,
            });
        }
        trace.sweeps_run = sweep;
        trace.final_objective = objective;
        trace.final_fit = 1.0 - objective / norm_sq;
        trace.total_zero_lock_repairs += repairs;

        let diff = (prev_obj - objective).abs();
        let measure = if params.normalized_tol {
            diff / norm_sq
        } else {
            diff
        };
        prev_obj = objective;
        if measure < params.tol {
            trace.converged = true;
            break;
        }
    }

    trace.total_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

fn run_integer(
    x: &SparseTensor,
    config: &SolverConfig,
) -> Result<(IntegerFactorModel, SolverTrace)> {
    config.validate()?;
    if x.nnz() == 0 {
        return Err(Error::InvalidInput(
            "cannot factor an empty tensor".to_string(),
        ));
    }
    if let Some(&min_dim) = x.dims().iter().min() {
        if config.rank > min_dim {
            log::warn!(
                "rank {} exceeds the smallest mode size {min_dim}",
                config.rank
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut factors, lambda) = initialize_parts(x, config, &mut rng)?;
    let mut lambda_f: Vec<f64> = lambda.iter().map(|&l| l as f64).collect();
    let params = DriverParams {
        tol: config.tol,
        max_iters: config.max_iters,
        normalized_tol: config.normalized_tol,
        track_objective: config.track_objective,
    };
    let trace = run_alternating(
        x,
        &mut factors,
        &mut lambda_f,
        UpdateRule::IntegerBox { tau: config.tau },
        &params,
        &mut rng,
    )?;
    let lambda_i: Vec<i64> = lambda_f.iter().map(|&l| l as i64).collect();
    let model = IntegerFactorModel::new(factors, lambda_i, config.tau)?;
    Ok((model, trace))
}

/// Fits an integer-score model to an order-2 input.
pub fn sustain_m(x: &SparseTensor, config: &SolverConfig) -> Result<(IntegerFactorModel, SolverTrace)> {
    if x.order() != 2 {
        return Err(Error::Dimension(format!(
            "matrix solver requires order 2, got order {}",
            x.order()
        )));
    }
    run_integer(x, config)
}

/// Fits an integer-score model to a tensor of any order at least 2.
///
/// For order-2 input this produces bit-identical output to [`sustain_m`]
/// under the same config.
pub fn sustain_t(x: &SparseTensor, config: &SolverConfig) -> Result<(IntegerFactorModel, SolverTrace)> {
    run_integer(x, config)
}

/// Builds the starting model for a config without running any sweeps.
pub fn initialize(x: &SparseTensor, config: &SolverConfig) -> Result<IntegerFactorModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (factors, lambda) = initialize_parts(x, config, &mut rng)?;
    IntegerFactorModel::new(factors, lambda, config.tau)
}

/// Scales a nonnegative vector so its maximum fits under `tau` (if it
/// overshoots), rounds into the box, and repairs an all-zero result.
fn scale_into_box(
    values: &[f64],
    tau: u32,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, usize) {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let gamma = if max > tau as f64 { tau as f64 / max } else { 1.0 };
    let mut out: Vec<f64> = values
        .iter()
        .map(|&v| projection::clamp_round(gamma * v, tau as f64))
        .collect();
    let mut repairs = 0;
    if out.iter().all(|&v| v == 0.0) {
        let pick = rng.random_range(0..out.len());
        out[pick] = 1.0;
        repairs = 1;
    }
    (out, repairs)
}

fn random_integer_factor(
    rows: usize,
    rank: usize,
    tau: u32,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let mut f = Array2::<f64>::zeros((rows, rank));
    for i in 0..rows {
        for r in 0..rank {
            f[[i, r]] = rng.random_range(0..=tau) as f64;
        }
    }
    for k in 0..rank {
        zero_lock_repair(f.column_mut(k), rng);
    }
    f
}

pub(crate) fn initialize_parts(
    x: &SparseTensor,
    config: &SolverConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Array2<f64>>, Vec<i64>)> {
    let d = x.order();
    let rank = config.rank;
    let tau = config.tau;
    match &config.init {
        InitScheme::Random => {
            let factors: Vec<Array2<f64>> = x
                .dims()
                .iter()
                .map(|&rows| random_integer_factor(rows, rank, tau, rng))
                .collect();
            Ok((factors, vec![1i64; rank]))
        }
        InitScheme::RandomSampling => match d {
            2 => {
                let (m_rows, n_cols) = (x.dims()[0], x.dims()[1]);
                let u = random_integer_factor(m_rows, rank, tau, rng);
                let mut v = Array2::<f64>::zeros((n_cols, rank));
                for j in 0..rank {
                    let patient = rng.random_range(0..m_rows);
                    let mut row = vec![0.0; n_cols];
                    for (idx, val) in x.iter() {
                        if idx[0] == patient {
                            row[idx[1]] = val;
                        }
                    }
                    let (col, _) = scale_into_box(&row, tau, rng);
                    for i in 0..n_cols {
                        v[[i, j]] = col[i];
                    }
                }
                Ok((vec![u, v], vec![1i64; rank]))
            }
            3 => {
                let dims = x.dims();
                let a1 = random_integer_factor(dims[0], rank, tau, rng);
                let mut a2 = Array2::<f64>::zeros((dims[1], rank));
                let mut a3 = Array2::<f64>::zeros((dims[2], rank));
                for j in 0..rank {
                    let patient = rng.random_range(0..dims[0]);
                    let mut slice = Array2::<f64>::zeros((dims[1], dims[2]));
                    for (idx, val) in x.iter() {
                        if idx[0] == patient {
                            slice[[idx[1], idx[2]]] = val;
                        }
                    }
                    // Max-sum column (a mode-2 fiber) and row (a mode-3 fiber)
                    // of the sampled slice; first index wins ties.
                    let mut best_col = 0;
                    let mut best_col_sum = f64::NEG_INFINITY;
                    for c in 0..dims[2] {
                        let s: f64 = slice.column(c).sum();
                        if s > best_col_sum {
                            best_col_sum = s;
                            best_col = c;
                        }
                    }
                    let mut best_row = 0;
                    let mut best_row_sum = f64::NEG_INFINITY;
                    for r in 0..dims[1] {
                        let s: f64 = slice.row(r).sum();
                        if s > best_row_sum {
                            best_row_sum = s;
                            best_row = r;
                        }
                    }
                    let col_vec: Vec<f64> = slice.column(best_col).to_vec();
                    let row_vec: Vec<f64> = slice.row(best_row).to_vec();
                    let (c2, _) = scale_into_box(&col_vec, tau, rng);
                    let (c3, _) = scale_into_box(&row_vec, tau, rng);
                    for i in 0..dims[1] {
                        a2[[i, j]] = c2[i];
                    }
                    for i in 0..dims[2] {
                        a3[[i, j]] = c3[i];
                    }
                }
                Ok((vec![a1, a2, a3], vec![1i64; rank]))
            }
            other => Err(Error::UnsupportedScheme(format!(
                "sampling initialization is defined for orders 2 and 3, got {other}"
            ))),
        },
        InitScheme::RoundSeed | InitScheme::ScaleRoundSeed => {
            let inner_seed = rng.next_u64();
            let (real, _) = if d == 2 {
                baselines::nmf_hals(x, rank, config.tol, config.max_iters, inner_seed)?
            } else {
                baselines::cp_als_nonneg(x, rank, config.tol, config.max_iters, inner_seed)?
            };
            let model = match config.init {
                InitScheme::RoundSeed => baselines::round_model(&real, tau, rng)?,
                _ => baselines::scale_and_round_model(&real, tau, rng)?,
            };
            Ok((model.factors, model.lambda))
        }
        InitScheme::Explicit(model) => {
            model.validate()?;
            if model.dims() != x.dims() {
                return Err(Error::Dimension(
                    "explicit initial model does not match the input shape".to_string(),
                ));
            }
            if model.rank() != rank || model.tau != tau {
                return Err(Error::InvalidInput(
                    "explicit initial model disagrees with config rank or tau".to_string(),
                ));
            }
            Ok((model.factors.clone(), model.lambda.clone()))
        }
    }
}
