//! Box-constrained integer least squares.
//!
//! Minimizes `||G z - y||^2` over integer vectors with per-coordinate bounds
//! by reducing to an upper-triangular system (Cholesky of the Gram matrix)
//! and running a depth-first Schnorr-Euchner enumeration: at each level
//! candidates are visited in order of increasing distance from the real
//! center, so the first pruned candidate prunes the rest of the level.
//! The search is exact; the worst case is exponential in the dimension,
//! which is capped.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Enumeration is refused above this dimension.
pub const MAX_ILS_DIMENSION: usize = 24;

/// One box-constrained integer least-squares instance.
///
/// Only the normal-equation view of the basis is kept: the Gram matrix
/// `G^T G`, the projection `G^T y`, and `||y||^2`. Problems whose basis is
/// only available implicitly (e.g. a Khatri-Rao product) can be posed
/// directly in that form.
#[derive(Debug, Clone)]
pub struct IlsProblem {
    pub gram: Array2<f64>,
    pub gty: Array1<f64>,
    pub y_norm_sq: f64,
    pub lower: i64,
    pub upper: i64,
}

impl IlsProblem {
    /// Builds the problem from a dense basis and target.
    pub fn from_dense(g: &Array2<f64>, y: ArrayView1<f64>, lower: i64, upper: i64) -> Result<Self> {
        if g.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "basis has {} rows, target has length {}",
                g.nrows(),
                y.len()
            )));
        }
        let gram = g.t().dot(g);
        let gty = g.t().dot(&y);
        let y_norm_sq = y.iter().map(|v| v * v).sum();
        Self::from_normal_equations(gram, gty, y_norm_sq, lower, upper)
    }

    /// Builds the problem from precomputed normal equations.
    pub fn from_normal_equations(
        gram: Array2<f64>,
        gty: Array1<f64>,
        y_norm_sq: f64,
        lower: i64,
        upper: i64,
    ) -> Result<Self> {
        if gram.nrows() != gram.ncols() || gram.nrows() != gty.len() {
            return Err(Error::Dimension(
                "gram matrix and projection sizes disagree".to_string(),
            ));
        }
        if lower > upper {
            return Err(Error::InvalidInput(format!(
                "empty box [{lower}, {upper}]"
            )));
        }
        Ok(Self { gram, gty, y_norm_sq, lower, upper })
    }
}

/// Solution of a box ILS instance.
#[derive(Debug, Clone, PartialEq)]
pub struct IlsSolution {
    pub z: Vec<i64>,
    pub objective: f64,
    /// The Gram matrix was rank deficient and had its diagonal regularized.
    pub regularized: bool,
}

/// Globally minimizes `||G z - y||^2` over the box.
pub fn box_ils_solve(problem: &IlsProblem) -> Result<IlsSolution> {
    let basis = ReducedBasis::new(&problem.gram)?;
    let (z, objective) = basis.solve(
        problem.gty.view(),
        problem.y_norm_sq,
        problem.lower,
        problem.upper,
    )?;
    Ok(IlsSolution {
        z,
        objective,
        regularized: basis.regularized,
    })
}

/// Upper-triangular reduction of one Gram matrix, reusable across all
/// targets sharing the same basis.
pub(crate) struct ReducedBasis {
    /// Upper-triangular factor with `gram = U^T U`.
    u: Array2<f64>,
    pub(crate) regularized: bool,
}

impl ReducedBasis {
    pub(crate) fn new(gram: &Array2<f64>) -> Result<Self> {
        let n = gram.nrows();
        if n > MAX_ILS_DIMENSION {
            return Err(Error::InvalidInput(format!(
                "ILS dimension {n} exceeds cap {MAX_ILS_DIMENSION}"
            )));
        }
        if let Some(u) = upper_cholesky(gram) {
            return Ok(Self { u, regularized: false });
        }
        // Rank-deficient basis: nudge the diagonal and flag it.
        let trace: f64 = (0..n).map(|i| gram[[i, i]]).sum();
        let mut bumped = gram.clone();
        let bump = 1e-10 * trace.max(1.0);
        for i in 0..n {
            bumped[[i, i]] += bump;
        }
        match upper_cholesky(&bumped) {
            Some(u) => Ok(Self { u, regularized: true }),
            None => Err(Error::InvalidInput(
                "gram matrix is not positive semidefinite".to_string(),
            )),
        }
    }

    /// Unconstrained real solution `gram^{-1} gty`.
    pub(crate) fn back_substitute(&self, gty: ArrayView1<f64>) -> Result<Array1<f64>> {
        let ybar = self.forward(gty)?;
        let n = self.u.nrows();
        let mut z = Array1::<f64>::zeros(n);
        for k in (0..n).rev() {
            let mut acc = ybar[k];
            for j in k + 1..n {
                acc -= self.u[[k, j]] * z[j];
            }
            z[k] = acc / self.u[[k, k]];
        }
        Ok(z)
    }

    /// `U^{-T} gty`, the rotated target.
    fn forward(&self, gty: ArrayView1<f64>) -> Result<Array1<f64>> {
        let n = self.u.nrows();
        if gty.len() != n {
            return Err(Error::Dimension(
                "projection length does not match basis".to_string(),
            ));
        }
        let mut ybar = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut acc = gty[i];
            for k in 0..i {
                acc -= self.u[[k, i]] * ybar[k];
            }
            ybar[i] = acc / self.u[[i, i]];
        }
        Ok(ybar)
    }

    /// Exact argmin of `||G z - y||^2` over the box for one target, given as
    /// `(z, objective)`.
    pub(crate) fn solve(
        &self,
        gty: ArrayView1<f64>,
        y_norm_sq: f64,
        lower: i64,
        upper: i64,
    ) -> Result<(Vec<i64>, f64)> {
        if lower > upper {
            return Err(Error::InvalidInput(format!(
                "empty box [{lower}, {upper}]"
            )));
        }
        let ybar = self.forward(gty)?;
        // ||G z - y||^2 = ||U z - ybar||^2 + ||y||^2 - ||ybar||^2.
        let constant = y_norm_sq - ybar.iter().map(|v| v * v).sum::<f64>();
        let n = self.u.nrows();
        let mut search = Search {
            u: &self.u,
            ybar: &ybar,
            lower,
            upper,
            z: vec![0i64; n],
            best_z: vec![lower; n],
            best: f64::INFINITY,
        };
        search.descend(n - 1, 0.0);
        Ok((search.best_z, (constant + search.best).max(0.0)))
    }
}

struct Search<'a> {
    u: &'a Array2<f64>,
    ybar: &'a Array1<f64>,
    lower: i64,
    upper: i64,
    z: Vec<i64>,
    best_z: Vec<i64>,
    best: f64,
}

impl Search<'_> {
    /// Depth-first over levels `n-1 .. 0`; `partial` is the accumulated
    /// squared distance of the levels above.
    fn descend(&mut self, level: usize, partial: f64) {
        let n = self.z.len();
        let mut center = self.ybar[level];
        for j in level + 1..n {
            center -= self.u[[level, j]] * self.z[j] as f64;
        }
        center /= self.u[[level, level]];
        let diag = self.u[[level, level]];

        // Zig-zag around the center, clamped to the box: distances are
        // nondecreasing, so the first pruned candidate ends the level.
        let first = (center.round() as i64).clamp(self.lower, self.upper);
        let mut low = first - 1;
        let mut high = first + 1;
        let mut cand = Some(first);
        while let Some(c) = cand {
            let diff = diag * (c as f64 - center);
            let cost = partial + diff * diff;
            if cost >= self.best {
                break;
            }
            self.z[level] = c;
            if level == 0 {
                self.best = cost;
                self.best_z.copy_from_slice(&self.z);
            } else {
                self.descend(level - 1, cost);
            }
            let take_low = low >= self.lower
                && (high > self.upper || center - low as f64 <= high as f64 - center);
            cand = if take_low {
                low -= 1;
                Some(low + 1)
            } else if high <= self.upper {
                high += 1;
                Some(high - 1)
            } else {
                None
            };
        }
    }
}

/// Column-wise upper Cholesky; `None` when a pivot is not safely positive.
fn upper_cholesky(gram: &Array2<f64>) -> Option<Array2<f64>> {
    let n = gram.nrows();
    let scale: f64 = (0..n).map(|i| gram[[i, i]].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(1.0);
    let mut u = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = gram[[j, j]];
        for k in 0..j {
            d -= u[[k, j]] * u[[k, j]];
        }
        if d <= tol {
            return None;
        }
        u[[j, j]] = d.sqrt();
        for i in j + 1..n {
            let mut acc = gram[[j, i]];
            for k in 0..j {
                acc -= u[[k, j]] * u[[k, i]];
            }
            u[[j, i]] = acc / u[[j, j]];
        }
    }
    Some(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_objective(g: &Array2<f64>, y: &Array1<f64>, z: &[i64]) -> f64 {
        let zf = Array1::from_iter(z.iter().map(|&v| v as f64));
        let r = g.dot(&zf) - y;
        r.iter().map(|v| v * v).sum()
    }

    fn exhaustive(g: &Array2<f64>, y: &Array1<f64>, lower: i64, upper: i64) -> (Vec<i64>, f64) {
        let n = g.ncols();
        let mut best = vec![lower; n];
        let mut best_obj = f64::INFINITY;
        let width = (upper - lower + 1) as usize;
        let total = width.pow(n as u32);
        for code in 0..total {
            let mut z = vec![0i64; n];
            let mut c = code;
            for slot in z.iter_mut() {
                *slot = lower + (c % width) as i64;
                c /= width;
            }
            let obj = dense_objective(g, y, &z);
            if obj < best_obj {
                best_obj = obj;
                best = z;
            }
        }
        (best, best_obj)
    }

    #[test]
    fn orthogonal_basis_decouples() {
        // Orthogonal columns: optimum is per-coordinate rounding of the
        // scaled projections.
        let g = array![[2.0, 0.0], [0.0, 3.0]];
        let y = array![4.6, 7.4];
        let problem = IlsProblem::from_dense(&g, y.view(), 0, 5).unwrap();
        let sol = box_ils_solve(&problem).unwrap();
        // 4.6/2 = 2.3 -> 2; 7.4/3 = 2.466 -> 2.
        assert_eq!(sol.z, vec![2, 2]);
        assert!(!sol.regularized);
    }

    #[test]
    fn exact_point_has_zero_residual() {
        let g = array![[1.0, 2.0], [0.0, 1.0], [3.0, 1.0]];
        let z_star = [2i64, 1];
        let y = array![
            1.0 * 2.0 + 2.0 * 1.0,
            0.0 * 2.0 + 1.0 * 1.0,
            3.0 * 2.0 + 1.0 * 1.0
        ];
        let problem = IlsProblem::from_dense(&g, y.view(), 0, 3).unwrap();
        let sol = box_ils_solve(&problem).unwrap();
        assert_eq!(sol.z, z_star.to_vec());
        assert!(sol.objective.abs() < 1e-9);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for case in 0..100 {
            let g = Array2::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
            let y = Array1::from_shape_fn(5, |_| rng.random_range(-4.0..8.0));
            let problem = IlsProblem::from_dense(&g, y.view(), 0, 2).unwrap();
            let sol = box_ils_solve(&problem).unwrap();
            let (_, best_obj) = exhaustive(&g, &y, 0, 2);
            let got = dense_objective(&g, &y, &sol.z);
            assert!(
                (got - best_obj).abs() <= 1e-9 * (1.0 + best_obj),
                "case {case}: {got} vs {best_obj}"
            );
        }
    }

    #[test]
    fn nontrivial_lower_bound_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let g = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
            let y = Array1::from_shape_fn(4, |_| rng.random_range(-4.0..8.0));
            let problem = IlsProblem::from_dense(&g, y.view(), 1, 4).unwrap();
            let sol = box_ils_solve(&problem).unwrap();
            assert!(sol.z.iter().all(|&v| (1..=4).contains(&v)));
            let (_, best_obj) = exhaustive(&g, &y, 1, 4);
            let got = dense_objective(&g, &y, &sol.z);
            assert!((got - best_obj).abs() <= 1e-9 * (1.0 + best_obj));
        }
    }

    #[test]
    fn rank_deficient_basis_is_regularized() {
        // Two identical columns.
        let g = array![[1.0, 1.0], [2.0, 2.0]];
        let y = array![1.0, 2.0];
        let problem = IlsProblem::from_dense(&g, y.view(), 0, 3).unwrap();
        let sol = box_ils_solve(&problem).unwrap();
        assert!(sol.regularized);
        let (_, best_obj) = exhaustive(&g, &y, 0, 3);
        let got = dense_objective(&g, &y, &sol.z);
        assert!((got - best_obj).abs() <= 1e-6 * (1.0 + best_obj));
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let n = MAX_ILS_DIMENSION + 1;
        let gram = Array2::<f64>::eye(n);
        let gty = Array1::<f64>::zeros(n);
        let problem = IlsProblem::from_normal_equations(gram, gty, 0.0, 0, 5).unwrap();
        assert!(box_ils_solve(&problem).is_err());
    }
}
