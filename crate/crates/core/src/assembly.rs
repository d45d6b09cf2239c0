//! Per-patch RBF matrices, the local discrete operators `L̄_j` for `-Δ(w_j ũ_j)`
//! and their scatter into the sparse global collocation matrix.

use std::io::Write;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{Covering, Point, PointKind, PointSet};
use crate::kernels::KernelModel;
use crate::problems::PoissonProblem;
use crate::weights::{evaluate_weights, WeightEvaluation};

/// Relative pivot size below which a local kernel matrix counts as singular.
pub const LOCAL_PIVOT_TOLERANCE: f64 = 1e-14;

/// Matrices of one patch. Indices are local: row/column `a` refers to the
/// global point `members[a]`.
pub struct LocalSystem {
    pub patch_index: usize,
    pub members: Vec<usize>,
    pub nodes: Vec<Point>,
    /// `A[k][i] = φ(‖x_k - x_i‖)`
    pub a: Mat<f64>,
    /// `∂/∂x` and `∂/∂y` of `φ(‖x - x_i‖)` at `x = x_k`.
    pub a_grad: [Mat<f64>; 2],
    pub a_lap: Mat<f64>,
    /// Diagonals of `W`, `W^∇` (both components) and `W^Δ`.
    pub w: Vec<f64>,
    pub w_grad: Vec<Point>,
    pub w_lap: Vec<f64>,
    /// `-(W^Δ A + 2 W^∇·A^∇ + W A^Δ) A⁻¹`
    pub l_bar: Mat<f64>,
    lu: PartialPivLu<f64>,
}

impl std::fmt::Debug for LocalSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalSystem")
            .field("patch_index", &self.patch_index)
            .field("members", &self.members)
            .finish_non_exhaustive()
    }
}

impl LocalSystem {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Interpolation coefficients `A⁻¹ values` through the stored factorization.
    pub fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(values.len(), 1, |i, _| values[i]);
        let c = self.lu.solve(&rhs);
        (0..values.len()).map(|i| c[(i, 0)]).collect()
    }
}

fn inf_norm(m: &Mat<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Builds the local system of patch `patch_index`.
///
/// `node_weights[k]` holds the Shepard weights at global point `k`; only the
/// entries for this patch's members are read.
pub fn build_local_system(
    patch_index: usize,
    covering: &Covering,
    points: &[Point],
    kernel: &KernelModel,
    node_weights: &[WeightEvaluation],
) -> Result<LocalSystem> {
    let patch = &covering.patches()[patch_index];
    let members = patch.members.clone();
    let n = members.len();
    let nodes: Vec<Point> = members.iter().map(|&k| points[k]).collect();

    let mut a = Mat::<f64>::zeros(n, n);
    let mut ax = Mat::<f64>::zeros(n, n);
    let mut ay = Mat::<f64>::zeros(n, n);
    let mut al = Mat::<f64>::zeros(n, n);
    for k in 0..n {
        for i in 0..=k {
            let d = [nodes[k][0] - nodes[i][0], nodes[k][1] - nodes[i][1]];
            let t = kernel.radial(d[0].hypot(d[1]));
            a[(k, i)] = t.value;
            a[(i, k)] = t.value;
            al[(k, i)] = t.laplacian;
            al[(i, k)] = t.laplacian;
            // gradient in the evaluation point is odd in the displacement
            ax[(k, i)] = t.slope_over_r * d[0];
            ax[(i, k)] = -t.slope_over_r * d[0];
            ay[(k, i)] = t.slope_over_r * d[1];
            ay[(i, k)] = -t.slope_over_r * d[1];
        }
    }

    let mut w = Vec::with_capacity(n);
    let mut w_grad = Vec::with_capacity(n);
    let mut w_lap = Vec::with_capacity(n);
    for &k in &members {
        let (v, g, l) = node_weights[k].get(patch_index);
        w.push(v);
        w_grad.push(g);
        w_lap.push(l);
    }

    let lu = a.partial_piv_lu();
    let norm = inf_norm(&a);
    let u = lu.U();
    let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if n == 0 || !(min_pivot >= LOCAL_PIVOT_TOLERANCE * norm) {
        return Err(Error::LocalConditioning { patch: patch_index, pivot: min_pivot });
    }

    // B = -(W^Δ A + 2 (W^∂x A^∂x + W^∂y A^∂y) + W A^Δ); L̄ = B A⁻¹.
    // A is symmetric, so L̄ᵀ = A⁻¹ Bᵀ.
    let bt = Mat::<f64>::from_fn(n, n, |i, k| {
        -(w_lap[k] * a[(k, i)]
            + 2.0 * (w_grad[k][0] * ax[(k, i)] + w_grad[k][1] * ay[(k, i)])
            + w[k] * al[(k, i)])
    });
    let l_bar_t = lu.solve(&bt);
    let l_bar = l_bar_t.transpose().to_owned();

    Ok(LocalSystem {
        patch_index,
        members,
        nodes,
        a,
        a_grad: [ax, ay],
        a_lap: al,
        w,
        w_grad,
        w_lap,
        l_bar,
        lu,
    })
}

/// Weights at every collocation point. Boundary points outside every open
/// patch disc (only possible with overlap exactly 1) get empty evaluations;
/// their operator rows are never used.
pub fn node_weights(points: &PointSet, covering: &Covering, exec: Execution) -> Result<Vec<WeightEvaluation>> {
    let all = points.to_vec();
    let n_interior = points.n_interior();
    exec.map_range(all.len(), |k| match evaluate_weights(all[k], covering) {
        Err(Error::Uncovered(_)) if k >= n_interior => Ok(WeightEvaluation::default()),
        other => other,
    })
    .into_iter()
    .collect()
}

/// Points, covering, kernel and the local systems of every patch.
#[derive(Debug)]
pub struct Discretization {
    pub points: PointSet,
    pub covering: Covering,
    pub kernel: KernelModel,
    pub locals: Vec<LocalSystem>,
}

impl Discretization {
    pub fn new(points: PointSet, covering: Covering, kernel: KernelModel, exec: Execution) -> Result<Self> {
        let weights = node_weights(&points, &covering, exec)?;
        let all = points.to_vec();
        let locals = exec.try_map_range(covering.len(), |j| {
            build_local_system(j, &covering, &all, &kernel, &weights)
        })?;
        Ok(Self { points, covering, kernel, locals })
    }
}

/// Square sparse matrix in compressed-row form with sorted, unique columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// From per-row `(column, value)` lists; duplicates are summed in list order.
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                assert!(c < n, "column {c} out of range");
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|p| v[p]).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn norm_one(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        for (c, v) in self.cols.iter().zip(&self.values) {
            sums[*c] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &a)| (i, j, a))
        })
    }

    /// Coordinate dump, one `row,col,value` line per stored entry.
    pub fn write_coo<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "row,col,value")?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i},{j},{v:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub row_kind: Vec<PointKind>,
}

impl GlobalSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }
}

/// Interior row `k` is the sum over the patches containing point `k` of the
/// matching `L̄_j` row, scattered through the patch member map; boundary rows
/// are identity rows. Patches are visited in index order.
pub fn assemble_global(disc: &Discretization, problem: &PoissonProblem) -> Result<GlobalSystem> {
    let points = &disc.points;
    let n = points.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut covered = vec![false; n];
    for local in &disc.locals {
        for (a, &k) in local.members.iter().enumerate() {
            covered[k] = true;
            if points.is_boundary(k) {
                continue;
            }
            let row = &mut rows[k];
            for (b, &i) in local.members.iter().enumerate() {
                row.push((i, local.l_bar[(a, b)]));
            }
        }
    }
    if let Some(k) = covered.iter().position(|c| !c) {
        return Err(Error::Uncovered(points.point(k)));
    }
    let mut rhs = Vec::with_capacity(n);
    let mut row_kind = Vec::with_capacity(n);
    for k in 0..n {
        let p = points.point(k);
        if points.is_boundary(k) {
            rows[k] = vec![(k, 1.0)];
            rhs.push(problem.boundary(p));
            row_kind.push(PointKind::Boundary);
        } else {
            rhs.push(problem.source(p));
            row_kind.push(PointKind::Interior);
        }
    }
    Ok(GlobalSystem { matrix: CsrMatrix::from_rows(rows), rhs, row_kind })
}
