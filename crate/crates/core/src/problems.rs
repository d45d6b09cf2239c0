//! Poisson test problems `-Δu = f` on the unit square with `u = g` on the
//! boundary, given by manufactured exact solutions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemName {
    /// `u = e^{4x} cos(2x + y) / 20`
    U1,
    /// `u = y cos⁴(4x² + y² - 1) / 2 + x / 4`, steep along the ellipse `4x² + y² = 1`.
    U2,
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemName::U1 => "u1",
            ProblemName::U2 => "u2",
        })
    }
}

impl FromStr for ProblemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "u1" => Ok(ProblemName::U1),
            "u2" => Ok(ProblemName::U2),
            other => Err(Error::Config(format!("unknown problem `{other}`"))),
        }
    }
}

/// A named Poisson problem. All problems here carry their exact solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoissonProblem {
    name: ProblemName,
}

pub fn make_problem(name: ProblemName) -> PoissonProblem {
    PoissonProblem { name }
}

impl PoissonProblem {
    pub fn name(&self) -> ProblemName {
        self.name
    }

    pub fn has_exact(&self) -> bool {
        true
    }

    pub fn exact(&self, p: Point) -> f64 {
        let [x, y] = p;
        match self.name {
            ProblemName::U1 => 0.05 * (4.0 * x).exp() * (2.0 * x + y).cos(),
            ProblemName::U2 => {
                let c = (4.0 * x * x + y * y - 1.0).cos();
                let c2 = c * c;
                0.5 * y * c2 * c2 + 0.25 * x
            }
        }
    }

    /// Source term `f = -Δu`.
    pub fn source(&self, p: Point) -> f64 {
        let [x, y] = p;
        match self.name {
            ProblemName::U1 => {
                // Δ of Re e^{(4+2i)x + iy} is Re (11 + 16i) e^{...}
                let t = 2.0 * x + y;
                0.05 * (4.0 * x).exp() * (16.0 * t.sin() - 11.0 * t.cos())
            }
            ProblemName::U2 => {
                // F(q) = cos⁴ q with q = 4x² + y² - 1
                let q = 4.0 * x * x + y * y - 1.0;
                let (s, c) = q.sin_cos();
                let c2 = c * c;
                let f1 = -4.0 * c2 * c * s;
                let f2 = 12.0 * c2 * s * s - 4.0 * c2 * c2;
                let grad_q_sq = 64.0 * x * x + 4.0 * y * y;
                let lap_f = f2 * grad_q_sq + 10.0 * f1;
                // Δ(yF) = y ΔF + 2 ∂_y F = y (ΔF + 4 F')
                -0.5 * y * (lap_f + 4.0 * f1)
            }
        }
    }

    /// Dirichlet data `g = u` on the boundary.
    pub fn boundary(&self, p: Point) -> f64 {
        self.exact(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_neg_laplacian(p: &PoissonProblem, x: Point, h: f64) -> f64 {
        let u = |a: f64, b: f64| p.exact([a, b]);
        -(u(x[0] + h, x[1]) + u(x[0] - h, x[1]) + u(x[0], x[1] + h) + u(x[0], x[1] - h)
            - 4.0 * u(x[0], x[1]))
            / (h * h)
    }

    #[test]
    fn values_at_origin() {
        assert_eq!(make_problem(ProblemName::U1).exact([0.0, 0.0]), 0.05);
        assert_eq!(make_problem(ProblemName::U2).exact([0.0, 0.0]), 0.0);
    }

    #[test]
    fn source_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in [ProblemName::U1, ProblemName::U2] {
            let p = make_problem(name);
            for _ in 0..100 {
                let x = [rng.gen::<f64>(), rng.gen::<f64>()];
                let f = p.source(x);
                let fd = fd_neg_laplacian(&p, x, 1e-4);
                // absolute floor for points where f crosses zero
                let scale = f.abs().max(1.0);
                assert!((f - fd).abs() / scale <= 1e-5, "{name} at {x:?}: {f} vs {fd}");
                assert_eq!(p.boundary(x), p.exact(x));
            }
        }
    }

    // Across the ridge 4x² + y² = 1 the source peaks relative to the flanks
    // on either side. (Near the far corner, where 4x² + y² ≈ 1 + π, there is
    // a second, larger peak of cos⁴.)
    #[test]
    fn u2_source_peaks_on_ridge() {
        let p = make_problem(ProblemName::U2);
        let (mut ridge, mut n_ridge, mut flank, mut n_flank) = (0.0, 0, 0.0, 0);
        for j in 0..200 {
            for i in 0..200 {
                let x = [(i as f64 + 0.5) / 200.0, (j as f64 + 0.5) / 200.0];
                let q = 4.0 * x[0] * x[0] + x[1] * x[1] - 1.0;
                if q.abs() < 0.2 {
                    ridge += p.source(x).abs();
                    n_ridge += 1;
                } else if q.abs() < 0.6 {
                    flank += p.source(x).abs();
                    n_flank += 1;
                }
            }
        }
        assert!(ridge / n_ridge as f64 > 1.5 * flank / n_flank as f64);
    }

    #[test]
    fn parse_names() {
        assert_eq!("U1".parse::<ProblemName>().unwrap(), ProblemName::U1);
        assert_eq!("u2".parse::<ProblemName>().unwrap(), ProblemName::U2);
        assert!("u3".parse::<ProblemName>().is_err());
    }
}
