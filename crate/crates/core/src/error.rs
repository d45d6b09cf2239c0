use thiserror::Error;

use crate::geometry::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel evaluated at negative distance {0}")]
    NegativeDistance(f64),

    #[error("point ({}, {}) is not covered by any patch", .0[0], .0[1])]
    Uncovered(Point),

    #[error("patch {patch} has {members} members; at least 3 are required")]
    SparsePatch { patch: usize, members: usize },

    #[error("local kernel matrix of patch {patch} is numerically singular (min pivot {pivot:e})")]
    LocalConditioning { patch: usize, pivot: f64 },

    #[error("global solve failed: {0}")]
    SolveFailure(String),

    #[error("empty point set")]
    EmptyPointSet,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Uncovered(_)
                | Error::SparsePatch { .. }
                | Error::LocalConditioning { .. }
                | Error::SolveFailure(_)
                | Error::NegativeDistance(_)
        )
    }
}
