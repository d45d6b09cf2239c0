//! Global solve, evaluation of the blended approximant and 1-norm condition
//! estimation.

use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, SolveCore};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, MatMut};

use crate::assembly::{CsrMatrix, Discretization, GlobalSystem};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{Covering, Point};
use crate::kernels::KernelModel;
use crate::weights::evaluate_weights;

/// Relative residual accepted from the global solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// A square matrix available through solves with it and its transpose.
pub trait Factored {
    fn dim(&self) -> usize;
    /// 1-norm of the original matrix.
    fn norm_one(&self) -> f64;
    fn solve_in_place(&self, b: &mut [f64]);
    fn solve_transpose_in_place(&self, b: &mut [f64]);
}

fn with_column(b: &mut [f64], f: impl FnOnce(MatMut<'_, f64>)) {
    let mut m = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    f(m.as_mut());
    for (i, v) in b.iter_mut().enumerate() {
        *v = m[(i, 0)];
    }
}

/// Sparse LU of the global collocation matrix.
pub struct SparseFactor {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
    norm_one: f64,
}

impl SparseFactor {
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        let n = matrix.dim();
        let triplets: Vec<_> = matrix.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::SolveFailure(format!("building sparse matrix: {e:?}")))?;
        let lu = csc.sp_lu().map_err(|e| Error::SolveFailure(format!("sparse LU: {e:?}")))?;
        Ok(Self { lu, n, norm_one: matrix.norm_one() })
    }
}

impl Factored for SparseFactor {
    fn dim(&self) -> usize {
        self.n
    }

    fn norm_one(&self) -> f64 {
        self.norm_one
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        with_column(b, |m| self.lu.solve_in_place_with_conj(Conj::No, m));
    }

    fn solve_transpose_in_place(&self, b: &mut [f64]) {
        with_column(b, |m| self.lu.solve_transpose_in_place_with_conj(Conj::No, m));
    }
}

/// Dense LU with partial pivoting.
pub struct DenseFactor {
    lu: PartialPivLu<f64>,
    n: usize,
    norm_one: f64,
}

impl DenseFactor {
    pub fn new(matrix: &Mat<f64>) -> Self {
        let norm_one = (0..matrix.ncols())
            .map(|j| (0..matrix.nrows()).map(|i| matrix[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Self { lu: matrix.partial_piv_lu(), n: matrix.nrows(), norm_one }
    }
}

impl Factored for DenseFactor {
    fn dim(&self) -> usize {
        self.n
    }

    fn norm_one(&self) -> f64 {
        self.norm_one
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        with_column(b, |m| self.lu.solve_in_place_with_conj(Conj::No, m));
    }

    fn solve_transpose_in_place(&self, b: &mut [f64]) {
        with_column(b, |m| self.lu.solve_transpose_in_place_with_conj(Conj::No, m));
    }
}

const CONDEST_MAX_ITERATIONS: usize = 5;

fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Lower-bound estimate of `‖A⁻¹‖₁` by Hager's method with Higham's
/// refinements: a sign-vector power iteration on `A⁻¹` / `A⁻ᵀ`, capped at
/// five steps, followed by the alternating-sign extra test vector.
pub fn estimate_inverse_norm_one<F: Factored + ?Sized>(factor: &F) -> f64 {
    let n = factor.dim();
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![1.0 / n as f64; n];
    let mut estimate = 0.0;
    let mut signs: Vec<f64> = Vec::new();
    let mut last_j = usize::MAX;
    for iter in 0..CONDEST_MAX_ITERATIONS {
        let mut y = x.clone();
        factor.solve_in_place(&mut y);
        if y.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let est = norm1(&y);
        let new_signs: Vec<f64> = y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
        if iter > 0 && (new_signs == signs || est <= estimate) {
            estimate = estimate.max(est);
            break;
        }
        estimate = est;
        signs = new_signs;
        let mut z = signs.clone();
        factor.solve_transpose_in_place(&mut z);
        let (j, zmax) = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
        let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        if iter > 0 && (zmax <= ztx || j == last_j) {
            break;
        }
        last_j = j;
        x = vec![0.0; n];
        x[j] = 1.0;
    }
    // extra vector guards against the power method stalling on structured matrices
    let mut alt: Vec<f64> = (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + i as f64 / (n.max(2) - 1) as f64)
        })
        .collect();
    let alt_norm = norm1(&alt);
    factor.solve_in_place(&mut alt);
    if alt.iter().all(|v| v.is_finite()) {
        estimate = estimate.max(norm1(&alt) / alt_norm);
    }
    estimate
}

/// 1-norm condition estimate `‖A‖₁ · est(‖A⁻¹‖₁)`; `+∞` when the matrix
/// cannot be factored.
pub fn condition_estimate<F: Factored + ?Sized>(factor: &F) -> f64 {
    let inv = estimate_inverse_norm_one(factor);
    if inv.is_finite() {
        factor.norm_one() * inv
    } else {
        f64::INFINITY
    }
}

pub fn estimate_condition(system: &GlobalSystem) -> f64 {
    match SparseFactor::new(&system.matrix) {
        Ok(f) => condition_estimate(&f),
        Err(_) => f64::INFINITY,
    }
}

/// The local RBF interpolant of one patch: `x ↦ Σ c_i φ(‖x - x_i‖)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalInterpolant {
    pub nodes: Vec<Point>,
    pub coefficients: Vec<f64>,
}

impl LocalInterpolant {
    pub fn value(&self, kernel: &KernelModel, x: Point) -> f64 {
        self.nodes
            .iter()
            .zip(&self.coefficients)
            .map(|(p, c)| c * kernel.radial((x[0] - p[0]).hypot(x[1] - p[1])).value)
            .sum()
    }
}

/// Nodal values of the collocation solution and the per-patch interpolants
/// blended by the Shepard weights.
#[derive(Debug, Clone)]
pub struct Solution {
    pub nodal: Vec<f64>,
    pub locals: Vec<LocalInterpolant>,
    pub covering: Arc<Covering>,
    pub kernel: KernelModel,
}

impl Solution {
    /// Builds the interpolants of arbitrary nodal data on a discretization.
    pub fn from_nodal(disc: &Discretization, covering: Arc<Covering>, nodal: Vec<f64>, exec: Execution) -> Self {
        let locals = exec.map(&disc.locals, |local| {
            let values: Vec<f64> = local.members.iter().map(|&k| nodal[k]).collect();
            LocalInterpolant { nodes: local.nodes.clone(), coefficients: local.coefficients(&values) }
        });
        Self { nodal, locals, covering, kernel: disc.kernel }
    }

    /// Value of patch `j`'s interpolant at `x`.
    pub fn local_value(&self, j: usize, x: Point) -> f64 {
        self.locals[j].value(&self.kernel, x)
    }

    pub fn value_at(&self, x: Point) -> Result<f64> {
        let w = evaluate_weights(x, &self.covering)?;
        Ok(w.active.iter().zip(&w.values).map(|(&j, &wj)| wj * self.local_value(j, x)).sum())
    }

    pub fn evaluate(&self, points: &[Point], exec: Execution) -> Result<Vec<f64>> {
        exec.try_map(points, |&x| self.value_at(x))
    }
}

/// Solve outcome with the condition estimate from the same factorization.
#[derive(Debug, Clone)]
pub struct Solved {
    pub solution: Solution,
    pub condition: f64,
    pub residual: f64,
}

fn residual_inf(matrix: &CsrMatrix, z: &[f64], rhs: &[f64]) -> f64 {
    matrix.mul_vec(z).iter().zip(rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `L z = rhs` by sparse LU, with up to two steps of iterative
/// refinement if the residual bound is not met at once.
pub fn solve_system(system: &GlobalSystem) -> Result<(Vec<f64>, SparseFactor)> {
    let factor = SparseFactor::new(&system.matrix)?;
    let mut z = system.rhs.clone();
    factor.solve_in_place(&mut z);
    let bound = |z: &[f64]| RESIDUAL_TOLERANCE * (system.matrix.norm_inf() * max_abs(z) + max_abs(&system.rhs));
    for _ in 0..2 {
        if z.iter().any(|v| !v.is_finite()) {
            break;
        }
        let r = residual_inf(&system.matrix, &z, &system.rhs);
        if r <= bound(&z) {
            return Ok((z, factor));
        }
        let mut d: Vec<f64> = system.matrix.mul_vec(&z).iter().zip(&system.rhs).map(|(a, b)| b - a).collect();
        factor.solve_in_place(&mut d);
        for (zi, di) in z.iter_mut().zip(&d) {
            *zi += di;
        }
    }
    let finite = z.iter().all(|v| v.is_finite());
    if finite && residual_inf(&system.matrix, &z, &system.rhs) <= bound(&z) {
        return Ok((z, factor));
    }
    let cond = condition_estimate(&factor);
    Err(Error::SolveFailure(format!("collocation matrix is singular or too ill-conditioned (condition estimate {cond:e})")))
}

pub fn solve(disc: &Discretization, covering: Arc<Covering>, system: &GlobalSystem, exec: Execution) -> Result<Solved> {
    let (z, factor) = solve_system(system)?;
    let residual = residual_inf(&system.matrix, &z, &system.rhs);
    let condition = condition_estimate(&factor);
    Ok(Solved { solution: Solution::from_nodal(disc, covering, z, exec), condition, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::linalg::solvers::Solve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact_cond_one(m: &Mat<f64>) -> f64 {
        let n = m.nrows();
        let inv = m.partial_piv_lu().solve(Mat::<f64>::identity(n, n));
        let col_norm = |a: &Mat<f64>| {
            (0..n).map(|j| (0..n).map(|i| a[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
        };
        col_norm(m) * col_norm(&inv)
    }

    #[test]
    fn condition_of_identity_and_diagonal() {
        let id = DenseFactor::new(&Mat::identity(7, 7));
        assert_eq!(condition_estimate(&id), 1.0);
        let d = Mat::from_fn(2, 2, |i, j| if i != j { 0.0 } else if i == 0 { 1.0 } else { 1e6 });
        assert!((condition_estimate(&DenseFactor::new(&d)) - 1e6).abs() <= 1e-6);
        let sparse = SparseFactor::new(&CsrMatrix::identity(5)).unwrap();
        assert_eq!(condition_estimate(&sparse), 1.0);
    }

    #[test]
    fn condition_within_factor_ten_of_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let m = Mat::from_fn(30, 30, |_, _| rng.gen_range(-1.0..1.0));
            let exact = exact_cond_one(&m);
            let est = condition_estimate(&DenseFactor::new(&m));
            assert!(est <= exact * (1.0 + 1e-10), "{est} > {exact}");
            assert!(est >= 0.1 * exact, "{est} << {exact}");
        }
    }

    #[test]
    fn sparse_and_dense_estimates_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<(usize, f64)>> = (0..40)
            .map(|i| {
                let mut r = vec![(i, 4.0 + rng.gen::<f64>())];
                for _ in 0..3 {
                    r.push((rng.gen_range(0..40), rng.gen_range(-1.0..1.0)));
                }
                r
            })
            .collect();
        let csr = CsrMatrix::from_rows(rows);
        let dense = csr.to_dense();
        let a = condition_estimate(&SparseFactor::new(&csr).unwrap());
        let b = condition_estimate(&DenseFactor::new(&dense));
        assert!((a - b).abs() <= 1e-8 * b);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let csr = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]]);
        let sys = GlobalSystem {
            matrix: csr,
            rhs: vec![1.0, 2.0],
            row_kind: vec![crate::geometry::PointKind::Interior; 2],
        };
        assert!(matches!(solve_system(&sys), Err(Error::SolveFailure(_))));
        assert_eq!(estimate_condition(&sys), f64::INFINITY);
    }

    #[test]
    fn residual_bound_on_random_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<Vec<(usize, f64)>> = (0..50)
            .map(|i| {
                let mut r = vec![(i, 10.0)];
                r.extend((0..50).map(|j| (j, rng.gen_range(-1.0..1.0))));
                r
            })
            .collect();
        let matrix = CsrMatrix::from_rows(rows);
        let rhs: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let sys = GlobalSystem { matrix, rhs, row_kind: vec![crate::geometry::PointKind::Interior; 50] };
        let (z, _) = solve_system(&sys).unwrap();
        let r = residual_inf(&sys.matrix, &z, &sys.rhs);
        assert!(r <= RESIDUAL_TOLERANCE * (sys.matrix.norm_inf() * max_abs(&z) + max_abs(&sys.rhs)));
    }
}
