use thiserror::Error;

use crate::sard::ForbiddenTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("complex dimension {0} unsupported (expected 1..=3)")]
    Dimension(usize),
    #[error("point lies outside the model domain (|z| = {norm:.6}, radius {radius})")]
    Domain { norm: f64, radius: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("grid too coarse: cell diameter {actual:.4} exceeds {limit:.4}; use at least {hint} points per axis")]
    GridTooCoarse {
        actual: f64,
        limit: f64,
        hint: usize,
    },
    #[error("grid vertex with |s| = {value:e} below degeneracy tolerance after {attempts} jittered attempts")]
    DegenerateVertex { value: f64, attempts: usize },
    #[error("winding integral {value:.4} is not within 0.1 of an integer")]
    Resolution { value: f64 },
    #[error("no admissible real w in [-{delta}, {delta}]: forbidden set covers the interval")]
    NoAdmissibleW { delta: f64, trace: ForbiddenTrace },
    #[error("no admissible path: reachable set empties at t = {bottleneck_t:.4}")]
    NoAdmissiblePath { bottleneck_t: f64 },
    #[error("transversality certificate failed: {0}")]
    Certificate(String),
    #[error("perturbation at ball {ball} failed: {source}")]
    BallPerturbation {
        ball: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("perturbation budget exhausted: {spent:.4} > {budget:.4}")]
    BudgetExhausted { spent: f64, budget: f64 },
    #[error("section is not symmetric (certificate {0:e})")]
    NotSymmetric(f64),
    #[error("pair not transverse at {witness:?}: least singular value {sigma_min:.3e}")]
    PairNotTransverse { witness: [f64; 6], sigma_min: f64 },
    #[error("critical set is not isolated near {0:?}")]
    NonIsolatedCritical([f64; 6]),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
