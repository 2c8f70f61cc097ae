use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("distance undefined on diagonal")]
    OnDiagonal,
    #[error("dyadic log unsupported")]
    DyadicLog,
    #[error("character evaluation requires p >= 3")]
    CharactersNeedOddPrime,
    #[error("{0} is not congruent to 1 mod p")]
    NotPrincipalUnit(String),
    #[error("{0} is divisible by p")]
    NotAUnit(u64),
    #[error("conductor {n} exceeds truncation depth {d}")]
    ConductorExceedsTruncation { n: u32, d: u32 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("space has {n_points} points, above the cap of {cap}; raise the cap to at least {n_points}")]
    CapExceeded { n_points: usize, cap: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("near-degenerate linearization (pivot {0:e})")]
    NearDegenerate(f64),
    #[error("linear solve residual {0:e} too large")]
    SolveResidual(f64),
    #[error("Newton did not converge after {iterations} iterations (last residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },
    #[error("reduction inconsistent: reduced residual {reduced:e}, lifted residual {lifted:e}")]
    ReductionInconsistent { reduced: f64, lifted: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
