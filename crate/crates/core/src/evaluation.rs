//! Metrics, stability-driven rank selection, and planted-instance
//! generation.
//!
//! Rank selection runs the solver several times per candidate rank from
//! perturbed starting points and scores each rank by the average pairwise
//! dissimilarity of a designated factor across runs: reproducible factors
//! mean a trustworthy rank. The planted generators build ground-truth
//! integer models and assemble their data exactly, so every oracle-backed
//! test can start from a known optimum.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::baselines::{self, RealFactorModel};
use crate::error::{Error, Result};
use crate::model::IntegerFactorModel;
use crate::solver::{self, SolverConfig};
use crate::tensor::SparseTensor;

/// Pearson correlation between two equal-length slices.
///
/// Errors when either slice has zero variance.
fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::MetricUndefined(
            "zero-variance column in correlation".to_string(),
        ));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Dissimilarity between two factor matrices, in `[0, 1]`.
///
/// Builds the column cross-correlation matrix and scores how well each
/// column of one matrix is matched by some column of the other:
/// `(2R - sum_j best_match(j) - sum_k best_match(k)) / 2R`, where a best
/// match below zero counts as no match. Zero exactly when the matrices
/// agree up to column permutation; one when all correlations vanish.
pub fn dissimilarity(d1: &Array2<f64>, d2: &Array2<f64>) -> Result<f64> {
    if d1.dim() != d2.dim() {
        return Err(Error::Dimension(format!(
            "factor shapes {:?} and {:?} differ",
            d1.dim(),
            d2.dim()
        )));
    }
    let rank = d1.ncols();
    let mut corr = Array2::<f64>::zeros((rank, rank));
    let cols1: Vec<Vec<f64>> = (0..rank).map(|k| d1.column(k).to_vec()).collect();
    let cols2: Vec<Vec<f64>> = (0..rank).map(|j| d2.column(j).to_vec()).collect();
    for k in 0..rank {
        for j in 0..rank {
            corr[[k, j]] = pearson(&cols1[k], &cols2[j])?;
        }
    }
    let mut sum_j = 0.0;
    for j in 0..rank {
        let best = (0..rank).map(|k| corr[[k, j]]).fold(f64::NEG_INFINITY, f64::max);
        sum_j += best.max(0.0);
    }
    let mut sum_k = 0.0;
    for k in 0..rank {
        let best = (0..rank).map(|j| corr[[k, j]]).fold(f64::NEG_INFINITY, f64::max);
        sum_k += best.max(0.0);
    }
    let diss = (2.0 * rank as f64 - sum_j - sum_k) / (2.0 * rank as f64);
    Ok(diss.clamp(0.0, 1.0))
}

/// One rank's stability score and its supporting pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankStability {
    pub rank: usize,
    /// Average pairwise dissimilarity over the valid pairs.
    pub score: f64,
    pub pairs: Vec<PairDissimilarity>,
    /// Pairs skipped because the correlation was undefined.
    pub excluded_pairs: usize,
    pub run_seeds: Vec<u64>,
    pub run_fits: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairDissimilarity {
    pub run_a: usize,
    pub run_b: usize,
    pub diss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ranks: Vec<RankStability>,
    pub repetitions: usize,
    /// Mode whose factor is compared across runs.
    pub assess_mode: usize,
    pub selected_rank: usize,
    pub selected_seed: u64,
    pub selected_fit: f64,
}

/// Builds the worker pool for independent solver runs; `SUSTAIN_THREADS`
/// caps its size.
fn worker_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("SUSTAIN_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n > 0 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder.build().expect("worker pool construction cannot fail")
}

/// Runs the solver `reps` times per candidate rank and scores each rank by
/// factor reproducibility; returns the report and the highest-fit model at
/// the selected rank.
///
/// Run `b` of rank index `i` uses seed `config.seed + i * reps + b`, so the
/// whole fan-out is reproducible. Runs execute on a bounded worker pool;
/// results are assembled in `(rank, seed)` order regardless of scheduling.
pub fn stability_select(
    x: &SparseTensor,
    ranks: &[usize],
    reps: usize,
    config: &SolverConfig,
    assess_mode: usize,
) -> Result<(StabilityReport, IntegerFactorModel)> {
    if reps < 2 {
        return Err(Error::InvalidInput(
            "stability needs at least two repetitions".to_string(),
        ));
    }
    if ranks.is_empty() {
        return Err(Error::InvalidInput("no candidate ranks".to_string()));
    }
    if assess_mode >= x.order() {
        return Err(Error::InvalidInput(format!(
            "assess mode {assess_mode} out of range for order {}",
            x.order()
        )));
    }

    let jobs: Vec<(usize, usize)> = (0..ranks.len())
        .flat_map(|i| (0..reps).map(move |b| (i, b)))
        .collect();
    let pool = worker_pool();
    let results: Result<Vec<(IntegerFactorModel, f64, u64)>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(i, b)| {
                let mut run_config = config.clone();
                run_config.rank = ranks[i];
                run_config.seed = config.seed.wrapping_add((i * reps + b) as u64);
                run_config.track_objective = false;
                let (model, trace) = solver::sustain_t(x, &run_config)?;
                Ok((model, trace.final_fit, run_config.seed))
            })
            .collect()
    });
    let results = results?;

    let mut rank_reports = Vec::with_capacity(ranks.len());
    for (i, &rank) in ranks.iter().enumerate() {
        let runs = &results[i * reps..(i + 1) * reps];
        let mut pairs = Vec::new();
        let mut excluded = 0;
        for a in 0..reps {
            for b in a + 1..reps {
                match dissimilarity(
                    &runs[a].0.factors[assess_mode],
                    &runs[b].0.factors[assess_mode],
                ) {
                    Ok(d) => pairs.push(PairDissimilarity { run_a: a, run_b: b, diss: d }),
                    Err(Error::MetricUndefined(_)) => {
                        excluded += 1;
                        log::warn!(
                            "rank {rank}: dissimilarity undefined for runs {a}/{b}, excluded"
                        );
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let score = if pairs.is_empty() {
            f64::NAN
        } else {
            pairs.iter().map(|p| p.diss).sum::<f64>() / pairs.len() as f64
        };
        rank_reports.push(RankStability {
            rank,
            score,
            pairs,
            excluded_pairs: excluded,
            run_seeds: runs.iter().map(|r| r.2).collect(),
            run_fits: runs.iter().map(|r| r.1).collect(),
        });
    }

    let selected_idx = rank_reports
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.score.is_nan())
        .min_by(|(_, a), (_, b)| a.score.total_cmp(&b.score))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::MetricUndefined("no rank had a defined stability score".to_string())
        })?;
    let selected_rank = rank_reports[selected_idx].rank;
    // Among that rank's runs, keep the highest fit.
    let runs = &results[selected_idx * reps..(selected_idx + 1) * reps];
    let best = runs
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.1.total_cmp(&b.1))
        .map(|(b, _)| b)
        .unwrap();
    let report = StabilityReport {
        ranks: rank_reports,
        repetitions: reps,
        assess_mode,
        selected_rank,
        selected_seed: runs[best].2,
        selected_fit: runs[best].1,
    };
    Ok((report, runs[best].0.clone()))
}

/// Additive integer noise applied to the assembled nonzeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    None,
    Poisson { rate: f64 },
}

/// A ground-truth model together with the data assembled from it.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub truth: IntegerFactorModel,
    pub tensor: SparseTensor,
    pub noise: NoiseSpec,
}

/// Generates a planted integer model and its (optionally noised) data.
///
/// Column supports are sampled so the assembled tensor's expected density
/// matches `density`; every factor column keeps at least one nonzero.
/// Weights are uniform over `lambda_range`. Without noise the tensor equals
/// the model's reconstruction exactly, so the truth has fit 1.
pub fn generate_planted(
    dims: &[usize],
    rank: usize,
    tau: u32,
    lambda_range: (i64, i64),
    density: f64,
    noise: NoiseSpec,
    seed: u64,
) -> Result<PlantedInstance> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidInput(format!("invalid dims {dims:?}")));
    }
    if rank == 0 || tau == 0 {
        return Err(Error::InvalidInput(
            "rank and tau must be at least 1".to_string(),
        ));
    }
    let (lo, hi) = lambda_range;
    if lo < 1 || hi < lo {
        return Err(Error::InvalidInput(format!(
            "invalid lambda range {lo}..{hi}"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "density {density} must lie in (0, 1]"
        )));
    }
    let size: u128 = dims.iter().map(|&d| d as u128).product();
    if size > u64::MAX as u128 {
        return Err(Error::InvalidInput(
            "tensor too large for the generator".to_string(),
        ));
    }
    if let NoiseSpec::Poisson { rate } = noise {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Poisson rate {rate} must be positive"
            )));
        }
    }

    let d = dims.len();
    // Probability that one cell is covered by one component is the product
    // of its per-mode support probabilities; solving the union over rank
    // independent components for the target density gives the per-mode rate.
    let per_component = 1.0 - (1.0 - density).powf(1.0 / rank as f64);
    let q = per_component.powf(1.0 / d as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = Vec::with_capacity(d);
    for &rows in dims {
        let mut f = Array2::<f64>::zeros((rows, rank));
        for r in 0..rank {
            let mut any = false;
            for i in 0..rows {
                if rng.random::<f64>() < q {
                    f[[i, r]] = rng.random_range(1..=tau) as f64;
                    any = true;
                }
            }
            if !any {
                let i = rng.random_range(0..rows);
                f[[i, r]] = rng.random_range(1..=tau) as f64;
            }
        }
        factors.push(f);
    }
    let lambda: Vec<i64> = (0..rank).map(|_| rng.random_range(lo..=hi)).collect();
    let truth = IntegerFactorModel::new(factors, lambda, tau)?;

    // Assemble exactly over the support of each component.
    let strides: Vec<u64> = {
        let mut s = vec![1u64; d];
        for m in (0..d - 1).rev() {
            s[m] = s[m + 1] * dims[m + 1] as u64;
        }
        s
    };
    let mut cells: HashMap<u64, f64> = HashMap::new();
    let supports: Vec<Vec<Vec<usize>>> = (0..d)
        .map(|n| {
            (0..rank)
                .map(|r| {
                    (0..dims[n])
                        .filter(|&i| truth.factors[n][[i, r]] != 0.0)
                        .collect()
                })
                .collect()
        })
        .collect();
    for r in 0..rank {
        let mut pos = vec![0usize; d];
        'outer: loop {
            let mut key = 0u64;
            let mut val = truth.lambda[r] as f64;
            for n in 0..d {
                let i = supports[n][r][pos[n]];
                key += i as u64 * strides[n];
                val *= truth.factors[n][[i, r]];
            }
            *cells.entry(key).or_insert(0.0) += val;
            let mut n = d - 1;
            loop {
                pos[n] += 1;
                if pos[n] < supports[n][r].len() {
                    break;
                }
                pos[n] = 0;
                if n == 0 {
                    break 'outer;
                }
                n -= 1;
            }
        }
    }

    let mut keys: Vec<u64> = cells.keys().copied().collect();
    keys.sort_unstable();
    let mut entries = Vec::with_capacity(keys.len());
    for key in keys {
        let mut value = cells[&key];
        if let NoiseSpec::Poisson { rate } = noise {
            let poisson = Poisson::new(rate).expect("validated rate");
            value += poisson.sample(&mut rng).round();
        }
        let mut idx = vec![0usize; d];
        let mut rem = key;
        for n in 0..d {
            idx[n] = (rem / strides[n]) as usize;
            rem %= strides[n];
        }
        entries.push((idx, value));
    }
    let tensor = SparseTensor::new(dims.to_vec(), entries)?;

    if matches!(noise, NoiseSpec::None) {
        debug_assert_eq!(truth.residual_norm_sq(&tensor).unwrap(), 0.0);
    }
    Ok(PlantedInstance { truth, tensor, noise })
}

/// Keeps the `k` largest entries of each column (or of each row for the
/// first mode, whose rows are the per-sample memberships); ties keep the
/// lower index.
pub fn truncate_top_k(real: &RealFactorModel, ks: &[usize]) -> Result<RealFactorModel> {
    if ks.len() != real.order() {
        return Err(Error::Dimension(
            "one truncation size per mode required".to_string(),
        ));
    }
    let mut factors = Vec::with_capacity(real.order());
    for (n, f) in real.factors.iter().enumerate() {
        let mut out = f.clone();
        let k = ks[n];
        if n == 0 {
            for i in 0..f.nrows() {
                let mut order: Vec<usize> = (0..f.ncols()).collect();
                order.sort_by(|&a, &b| f[[i, b]].total_cmp(&f[[i, a]]).then(a.cmp(&b)));
                for &j in order.iter().skip(k) {
                    out[[i, j]] = 0.0;
                }
            }
        } else {
            for j in 0..f.ncols() {
                let mut order: Vec<usize> = (0..f.nrows()).collect();
                order.sort_by(|&a, &b| f[[b, j]].total_cmp(&f[[a, j]]).then(a.cmp(&b)));
                for &i in order.iter().skip(k) {
                    out[[i, j]] = 0.0;
                }
            }
        }
        factors.push(out);
    }
    RealFactorModel::new(factors, real.lambda.clone())
}

/// Head-to-head sparsity/fit comparison between the integer model and a
/// truncated real-valued model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsityFitReport {
    pub integer_factor_nnz: Vec<usize>,
    pub integer_fit: f64,
    pub k_per_factor: Vec<usize>,
    pub truncated_factor_nnz: Vec<usize>,
    pub truncated_real_fit: f64,
    pub full_real_fit: f64,
}

/// Fits both models at rank `config.rank`, truncates the real model to the
/// integer model's sparsity level (top-k per column for feature factors,
/// top-k per row for the first mode), and reports both fits.
pub fn sparsity_vs_fit_comparison(
    x: &SparseTensor,
    config: &SolverConfig,
) -> Result<SparsityFitReport> {
    let (int_model, _) = solver::sustain_t(x, config)?;
    let (real_model, _) = if x.order() == 2 {
        baselines::nmf_hals(x, config.rank, config.tol, config.max_iters, config.seed)?
    } else {
        baselines::cp_als_nonneg(x, config.rank, config.tol, config.max_iters, config.seed)?
    };

    let int_nnz = int_model.factor_nnz();
    let rank = config.rank;
    let ks: Vec<usize> = int_nnz
        .iter()
        .enumerate()
        .map(|(n, &nnz)| {
            let groups = if n == 0 { x.dims()[0] } else { rank };
            ((nnz as f64 / groups as f64).round() as usize).max(1)
        })
        .collect();
    let truncated = truncate_top_k(&real_model, &ks)?;
    let truncated_nnz: Vec<usize> = truncated
        .factors
        .iter()
        .map(|f| f.iter().filter(|&&v| v != 0.0).count())
        .collect();

    Ok(SparsityFitReport {
        integer_fit: int_model.fit(x)?,
        integer_factor_nnz: int_nnz,
        k_per_factor: ks,
        truncated_factor_nnz: truncated_nnz,
        truncated_real_fit: truncated.fit(x)?,
        full_real_fit: real_model.fit(x)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::InitScheme;
    use ndarray::array;

    #[test]
    fn dissimilarity_identical_and_permuted_is_zero() {
        let d1 = array![[1.0, 0.0], [2.0, 1.0], [0.0, 3.0], [1.0, 1.0]];
        assert_eq!(dissimilarity(&d1, &d1).unwrap(), 0.0);
        // Swap the two columns.
        let mut d2 = d1.clone();
        for i in 0..d1.nrows() {
            d2[[i, 0]] = d1[[i, 1]];
            d2[[i, 1]] = d1[[i, 0]];
        }
        assert_eq!(dissimilarity(&d1, &d2).unwrap(), 0.0);
    }

    #[test]
    fn dissimilarity_uncorrelated_is_one() {
        // Columns of d2 are exactly uncorrelated with both columns of d1.
        let d1 = array![[1.0, 2.0], [0.0, 1.0], [1.0, 2.0], [0.0, 1.0]];
        let d2 = array![[1.0, 0.0], [1.0, 2.0], [0.0, 2.0], [0.0, 0.0]];
        let diss = dissimilarity(&d1, &d2).unwrap();
        assert!((diss - 1.0).abs() < 1e-12, "diss = {diss}");
    }

    #[test]
    fn dissimilarity_is_symmetric() {
        let d1 = array![[1.0, 0.0], [2.0, 1.0], [0.0, 3.0]];
        let d2 = array![[0.5, 1.0], [1.0, 0.0], [2.0, 1.0]];
        let forward = dissimilarity(&d1, &d2).unwrap();
        let backward = dissimilarity(&d2, &d1).unwrap();
        assert!((forward - backward).abs() < 1e-12);
    }

    #[test]
    fn dissimilarity_rejects_constant_column() {
        let d1 = array![[1.0, 1.0], [1.0, 2.0]];
        let d2 = array![[1.0, 0.0], [0.0, 2.0]];
        assert!(matches!(
            dissimilarity(&d1, &d2),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn planted_noiseless_reconstructs_exactly() {
        let inst = generate_planted(&[8, 6, 5], 2, 5, (1, 5), 0.4, NoiseSpec::None, 42).unwrap();
        assert_eq!(inst.truth.fit(&inst.tensor).unwrap(), 1.0);
    }

    #[test]
    fn planted_truth_reconstruction_matches_assembled_data() {
        let inst = generate_planted(&[4, 3, 2], 2, 5, (1, 4), 0.6, NoiseSpec::None, 17).unwrap();
        let dense = crate::reference::dense_from_sparse(&inst.tensor).unwrap();
        let rebuilt = inst.truth.reconstruct().unwrap();
        assert_eq!(dense, rebuilt);
    }

    #[test]
    fn planted_generation_is_deterministic() {
        let a = generate_planted(&[10, 7], 3, 5, (1, 5), 0.3, NoiseSpec::None, 9).unwrap();
        let b = generate_planted(&[10, 7], 3, 5, (1, 5), 0.3, NoiseSpec::None, 9).unwrap();
        assert_eq!(a.tensor, b.tensor);
        assert_eq!(a.truth.factors, b.truth.factors);
        assert_eq!(a.truth.lambda, b.truth.lambda);
    }

    #[test]
    fn planted_density_is_roughly_honored() {
        let inst =
            generate_planted(&[100, 100], 4, 5, (1, 5), 0.1, NoiseSpec::None, 3).unwrap();
        let nnz = inst.tensor.nnz() as f64;
        assert!(
            (800.0..=1200.0).contains(&nnz),
            "nnz {nnz} far from the 1000 target"
        );
    }

    #[test]
    fn poisson_noise_keeps_data_integral() {
        let inst = generate_planted(
            &[10, 8],
            2,
            5,
            (1, 3),
            0.4,
            NoiseSpec::Poisson { rate: 1.0 },
            7,
        )
        .unwrap();
        assert!(inst.tensor.values().iter().all(|v| v.fract() == 0.0));
    }

    #[test]
    fn truncation_with_full_length_is_identity() {
        let real = RealFactorModel::new(
            vec![
                array![[0.3, 1.0], [2.0, 0.1], [0.4, 0.7]],
                array![[1.0, 0.2], [0.6, 1.4]],
            ],
            vec![1.0, 1.0],
        )
        .unwrap();
        let same = truncate_top_k(&real, &[2, 3]).unwrap();
        assert_eq!(same.factors, real.factors);
    }

    #[test]
    fn truncation_keeps_largest_entries() {
        let real = RealFactorModel::new(
            vec![
                array![[0.3, 1.0], [2.0, 0.1]],
                array![[1.0, 0.2], [0.6, 1.4], [0.9, 0.3]],
            ],
            vec![1.0, 1.0],
        )
        .unwrap();
        let t = truncate_top_k(&real, &[1, 1]).unwrap();
        // Mode 0: per-row top-1.
        assert_eq!(t.factors[0], array![[0.0, 1.0], [2.0, 0.0]]);
        // Mode 1: per-column top-1.
        assert_eq!(t.factors[1], array![[1.0, 0.0], [0.0, 1.4], [0.0, 0.0]]);
    }

    #[test]
    fn stability_counts_pairs() {
        let inst = generate_planted(&[20, 12], 2, 5, (1, 3), 0.5, NoiseSpec::None, 11).unwrap();
        let config = SolverConfig::new(2).with_init(InitScheme::Random);
        let (report, _) =
            stability_select(&inst.tensor, &[2, 3], 3, &config, 1).unwrap();
        for rank in &report.ranks {
            assert_eq!(rank.pairs.len() + rank.excluded_pairs, 3);
        }
        assert_eq!(report.repetitions, 3);
    }

    #[test]
    fn stability_with_two_reps_averages_one_pair() {
        let inst = generate_planted(&[18, 12], 2, 5, (1, 3), 0.5, NoiseSpec::None, 23).unwrap();
        let config = SolverConfig::new(2).with_init(InitScheme::Random);
        let (report, _) = stability_select(&inst.tensor, &[2], 2, &config, 1).unwrap();
        assert_eq!(report.ranks[0].pairs.len() + report.ranks[0].excluded_pairs, 1);
    }

    #[test]
    fn stability_of_identical_runs_is_zero() {
        // An explicit starting point makes every repetition identical, so
        // the average dissimilarity vanishes exactly.
        let inst = generate_planted(&[20, 14], 2, 5, (1, 3), 0.5, NoiseSpec::None, 31).unwrap();
        let (seed_model, _) =
            solver::sustain_m(&inst.tensor, &SolverConfig::new(2).with_seed(5)).unwrap();
        let config = SolverConfig::new(2).with_init(InitScheme::Explicit(seed_model));
        let (report, _) = stability_select(&inst.tensor, &[2], 4, &config, 1).unwrap();
        assert_eq!(report.ranks[0].score, 0.0);
        assert_eq!(report.ranks[0].pairs.len(), 6);
    }

    #[test]
    fn sparsity_comparison_reports_consistent_fields() {
        let inst =
            generate_planted(&[30, 20], 2, 5, (1, 5), 0.3, NoiseSpec::Poisson { rate: 0.5 }, 37)
                .unwrap();
        let mut config = SolverConfig::new(2).with_seed(3);
        config.max_iters = 100;
        let report = sparsity_vs_fit_comparison(&inst.tensor, &config).unwrap();
        assert_eq!(report.integer_factor_nnz.len(), 2);
        assert_eq!(report.k_per_factor.len(), 2);
        // Feature-mode truncation keeps about nnz/rank entries per column.
        let expected_k = ((report.integer_factor_nnz[1] as f64 / 2.0).round() as usize).max(1);
        assert_eq!(report.k_per_factor[1], expected_k);
        assert!(report.truncated_real_fit <= report.full_real_fit + 1e-9);
        assert!(report.integer_fit <= 1.0);
    }

    #[test]
    fn integer_model_usually_beats_truncated_real_at_equal_sparsity() {
        let mut wins = 0;
        for trial in 0..20u64 {
            let inst = generate_planted(
                &[30, 20],
                2,
                5,
                (1, 5),
                0.3,
                NoiseSpec::Poisson { rate: 1.0 },
                600 + trial,
            )
            .unwrap();
            let mut config = SolverConfig::new(2).with_seed(trial);
            config.max_iters = 100;
            let report = sparsity_vs_fit_comparison(&inst.tensor, &config).unwrap();
            if report.integer_fit >= report.truncated_real_fit {
                wins += 1;
            }
        }
        assert!(wins > 10, "integer model won only {wins}/20 trials");
    }

    #[test]
    fn stability_identical_runs_score_zero() {
        // Same seed for every run makes the factors identical, so every
        // pairwise dissimilarity is zero.
        let inst = generate_planted(&[15, 10], 2, 5, (1, 3), 0.5, NoiseSpec::None, 13).unwrap();
        let config = SolverConfig::new(2).with_init(InitScheme::Random);
        let run = |seed: u64| {
            let c = config.clone().with_seed(seed);
            solver::sustain_m(&inst.tensor, &c).unwrap().0
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(
            dissimilarity(&a.factors[1], &b.factors[1]).unwrap(),
            0.0
        );
    }
}
