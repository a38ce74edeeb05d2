use num_complex::Complex64;
use thiserror::Error;

/// Errors raised while building systems, assigning poles or checking results.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not of full column rank (smallest singular value {smallest:e}, threshold {threshold:e})")]
    RankDeficientInput { smallest: f64, threshold: f64 },

    #[error("input matrix B is not of full column rank")]
    RankDeficientB,

    #[error("null space is empty")]
    EmptyNullSpace,

    #[error("pair (A, B) is not controllable: controllability matrix has rank {rank} < {n}")]
    NotControllable { rank: usize, n: usize },

    #[error("pole {index} ({value}) has no conjugate partner")]
    UnmatchedConjugate { index: usize, value: Complex64 },

    #[error("step {step}: top eigenvalue {value:e} of S1'S1 is below the degeneracy floor")]
    DegenerateDirection { step: usize, value: f64 },

    #[error("step {step}: orthogonality lost, |X'X - I|_F = {residual:e}")]
    OrthogonalityLoss { step: usize, residual: f64 },

    #[error("real and imaginary parts are linearly dependent")]
    LinearlyDependentParts,

    #[error("subspace dimension {r} too small, need at least 2")]
    SubspaceTooSmall { r: usize },

    #[error("Hamiltonian frame is degenerate (phi1 = {phi1:e})")]
    DegenerateFrame { phi1: f64 },

    #[error("step {step}: no viable candidate for conjugate pair {alpha} +/- {beta}i")]
    NoViableCandidate { step: usize, alpha: f64, beta: f64 },

    #[error("all {count} starts failed; last error: {last}")]
    AllStartsFailed { count: usize, last: Box<Error> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is numerically singular")]
    Singular,

    #[error("{0} did not converge")]
    NoConvergence(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Step index associated with the failure, when there is one.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::DegenerateDirection { step, .. }
            | Error::OrthogonalityLoss { step, .. }
            | Error::NoViableCandidate { step, .. } => Some(*step),
            Error::AllStartsFailed { last, .. } => last.step(),
            _ => None,
        }
    }
}
