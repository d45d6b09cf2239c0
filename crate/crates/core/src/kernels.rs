//! Radial kernels with closed-form radial derivatives.
//!
//! Both families are written in the scaled variable `s = ε r`:
//!
//! * Matérn M6: `φ(s) = e^{-s} (s³ + 6s² + 15s + 15)`
//! * Wendland W2 (C² in the plane): `ψ(s) = (1 - s)₊⁴ (4s + 1)`
//!
//! The quantities needed downstream are the value, `φ'(r)/r` (which turns a
//! displacement into a gradient) and the planar Laplacian `φ''(r) + φ'(r)/r`.
//! For both families `φ'(r)/r` is a polynomial-times-exponential in `s` with
//! no singularity, so the `r → 0` limits come out of the formulas directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    Matern6,
    Wendland2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    family: KernelFamily,
    shape: f64,
}

/// Value and derivative terms of a radial kernel at one distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radial {
    pub value: f64,
    /// `φ'(r) / r`, finite at `r = 0`.
    pub slope_over_r: f64,
    /// `φ''(r) + φ'(r) / r`.
    pub laplacian: f64,
}

impl KernelModel {
    pub fn new(family: KernelFamily, shape: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "shape parameter must be positive and finite, got {shape}"
            )));
        }
        Ok(Self { family, shape })
    }

    pub fn matern6(shape: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern6, shape)
    }

    pub fn wendland2(shape: f64) -> Result<Self> {
        Self::new(KernelFamily::Wendland2, shape)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// Support radius, infinite for globally supported families.
    pub fn support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Matern6 => f64::INFINITY,
            KernelFamily::Wendland2 => 1.0 / self.shape,
        }
    }

    pub fn value(&self, r: f64) -> Result<f64> {
        check_distance(r)?;
        Ok(self.radial(r).value)
    }

    pub fn laplacian(&self, r: f64) -> Result<f64> {
        check_distance(r)?;
        Ok(self.radial(r).laplacian)
    }

    /// Gradient of `x ↦ φ(‖x - z‖)` where `dx = x - z`.
    pub fn gradient(&self, dx: Point) -> Point {
        let r = dx[0].hypot(dx[1]);
        let k = self.radial(r).slope_over_r;
        [k * dx[0], k * dx[1]]
    }

    /// All radial terms at distance `r`. The caller guarantees `r >= 0`.
    #[inline]
    pub fn radial(&self, r: f64) -> Radial {
        let e = self.shape;
        let s = e * r;
        match self.family {
            KernelFamily::Matern6 => {
                let ex = (-s).exp();
                Radial {
                    value: ex * (((s + 6.0) * s + 15.0) * s + 15.0),
                    slope_over_r: -e * e * ex * ((s + 3.0) * s + 3.0),
                    laplacian: e * e * ex * (((s - 1.0) * s - 6.0) * s - 6.0),
                }
            }
            KernelFamily::Wendland2 => {
                if s >= 1.0 {
                    return Radial { value: 0.0, slope_over_r: 0.0, laplacian: 0.0 };
                }
                let t = 1.0 - s;
                let t2 = t * t;
                Radial {
                    value: t2 * t2 * (4.0 * s + 1.0),
                    slope_over_r: -20.0 * e * e * t2 * t,
                    laplacian: 20.0 * e * e * t2 * (5.0 * s - 2.0),
                }
            }
        }
    }
}

fn check_distance(r: f64) -> Result<()> {
    if r < 0.0 || r.is_nan() {
        Err(Error::NegativeDistance(r))
    } else {
        Ok(())
    }
}
