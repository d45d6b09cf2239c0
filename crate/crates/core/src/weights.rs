//! Shepard partition-of-unity weights built from Wendland W2 generators.
//!
//! Patch `j` uses the generator `ψ_j(x) = W2(‖x - c_j‖ / δ_j)`, so its support
//! is exactly the open disc of the patch. With `S = Σ_k ψ_k`,
//!
//! ```text
//! w_j   = ψ_j / S
//! ∇w_j  = (∇ψ_j - w_j ∇S) / S
//! Δw_j  = (Δψ_j - 2 ∇w_j·∇S - w_j ΔS) / S
//! ```

use crate::error::{Error, Result};
use crate::geometry::{Covering, Point};
use crate::kernels::KernelModel;

/// Weights at one point, stored only for the patches with `w_j(x) > 0`.
/// Patches not listed in `active` have zero weight and derivatives there.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightEvaluation {
    pub active: Vec<usize>,
    pub values: Vec<f64>,
    pub gradients: Vec<Point>,
    pub laplacians: Vec<f64>,
}

impl WeightEvaluation {
    /// Terms for patch `j`, or zeros if `j` is inactive at this point.
    pub fn get(&self, j: usize) -> (f64, Point, f64) {
        match self.active.binary_search(&j) {
            Ok(i) => (self.values[i], self.gradients[i], self.laplacians[i]),
            Err(_) => (0.0, [0.0, 0.0], 0.0),
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

pub fn evaluate_weights(x: Point, covering: &Covering) -> Result<WeightEvaluation> {
    let mut eval = WeightEvaluation::default();
    let (mut s, mut gs, mut ls) = (0.0, [0.0, 0.0], 0.0);
    for j in covering.containing(x) {
        let patch = &covering.patches()[j];
        let generator = KernelModel::wendland2(1.0 / patch.radius)?;
        let dx = [x[0] - patch.center[0], x[1] - patch.center[1]];
        let t = generator.radial(dx[0].hypot(dx[1]));
        if t.value <= 0.0 {
            continue;
        }
        let g = [t.slope_over_r * dx[0], t.slope_over_r * dx[1]];
        s += t.value;
        gs[0] += g[0];
        gs[1] += g[1];
        ls += t.laplacian;
        eval.active.push(j);
        eval.values.push(t.value);
        eval.gradients.push(g);
        eval.laplacians.push(t.laplacian);
    }
    if eval.active.is_empty() {
        return Err(Error::Uncovered(x));
    }
    for i in 0..eval.active.len() {
        let w = eval.values[i] / s;
        let g = eval.gradients[i];
        let gw = [(g[0] - w * gs[0]) / s, (g[1] - w * gs[1]) / s];
        let lw = (eval.laplacians[i] - 2.0 * (gw[0] * gs[0] + gw[1] * gs[1]) - w * ls) / s;
        eval.values[i] = w;
        eval.gradients[i] = gw;
        eval.laplacians[i] = lw;
    }
    Ok(eval)
}
