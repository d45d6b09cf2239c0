//! Radial-basis-function partition-of-unity (RBF-PUM) collocation for the
//! 2D Poisson problem `-Δu = f` on the unit square with Dirichlet data, plus
//! an adaptive node refinement loop driven by an a-posteriori error
//! indicator that never looks at the exact solution.
//!
//! The pipeline is:
//!
//! 1. [`geometry`] builds collocation points and a covering of circular patches.
//! 2. [`weights`] evaluates Shepard weights (and their derivatives) on the covering.
//! 3. [`assembly`] forms the per-patch discrete Laplacians and scatters them
//!    into the sparse global collocation matrix.
//! 4. [`solver`] factors and solves the global system, evaluates the blended
//!    approximant and estimates its 1-norm condition number.
//! 5. [`adaptivity`] runs the solve / estimate / add / remove loop.
//!
//! [`harness`] wires these together for the reference test problems in
//! [`problems`] and writes the result files.

pub mod adaptivity;
pub mod assembly;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod problems;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::Point;
