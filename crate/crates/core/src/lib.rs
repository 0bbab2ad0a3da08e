//! Integer-constrained factorization of sparse count matrices and tensors.
//!
//! Given a nonnegative integer matrix or tensor, the solvers here fit a
//! low-rank model whose factor entries are integer scores in `{0, ..., tau}`
//! and whose component weights are positive integers. Each block subproblem
//! (one factor column, or one weight) is solved exactly, and the update
//! order reuses shared intermediates so a sweep costs little more than the
//! sparse MTTKRP kernels it is built on.
//!
//! The crate also ships the comparison baselines (real-valued HALS
//! factorization with rounding or scale-and-round post-processing, and
//! alternating box-constrained integer least squares), stability-based rank
//! selection, planted-instance generators, and brute-force reference
//! implementations used to certify the fast paths.
//!
//! ```
//! use sustain_core::{solver, SolverConfig, SparseTensor};
//!
//! // A tiny 3x3 count matrix with four nonzeros.
//! let x = SparseTensor::new(
//!     vec![3, 3],
//!     vec![
//!         (vec![0, 0], 4.0),
//!         (vec![0, 2], 2.0),
//!         (vec![1, 1], 3.0),
//!         (vec![2, 0], 1.0),
//!     ],
//! )
//! .unwrap();
//! let config = SolverConfig::new(2).with_seed(7);
//! let (model, trace) = solver::sustain_m(&x, &config).unwrap();
//! assert!(model.factors[0].iter().all(|&v| (0.0..=5.0).contains(&v)));
//! assert!(model.lambda.iter().all(|&l| l >= 1));
//! assert!(trace.final_fit <= 1.0);
//! ```

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod projection;
pub mod reference;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use model::IntegerFactorModel;
pub use solver::{sustain_m, sustain_t, InitScheme, SolverConfig, SolverTrace};
pub use tensor::SparseTensor;
