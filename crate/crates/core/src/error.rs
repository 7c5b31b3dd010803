use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to zero")]
    AllZero,
    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("token {token} outside alphabet of size {k}")]
    OutOfAlphabet { token: usize, k: usize },
    #[error("{what} of size {size} exceeds the limit {limit}")]
    SizeGuard {
        what: &'static str,
        size: u128,
        limit: u128,
    },
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("beta schedule overflows at t = {t}; evaluate at t <= 1 - 1e-6")]
    BetaOverflow { t: f64 },
    #[error("degenerate geodesic: source and target coincide")]
    DegeneratePath,
    #[error("token statistic at index {index} is zero")]
    ZeroStatistic { index: usize },
    #[error("unsafe flux: {value} leaves zero-probability state {from} towards {to}")]
    UnsafeFlux { from: usize, to: usize, value: f64 },
    #[error("weight is not safe: tau({index}) = {tau} while p({index}) = 0")]
    UnsafeWeight { index: usize, tau: f64 },
    #[error("singular Laplacian system: {0}")]
    SingularSystem(String),
    #[error("right-hand side does not sum to zero (sum = {sum:e})")]
    InconsistentRhs { sum: f64 },
    #[error("tau vanishes at index {index} where p is positive")]
    DivideByZeroTau { index: usize },
    #[error("alpha = {alpha} is out of range (alpha >= 1)")]
    AlphaOutOfRange { alpha: f64 },
    #[error("scheduler is singular at t = {t} (kappa = 1)")]
    SchedulerSingularity { t: f64 },
    #[error("conductance is not symmetric at ({x}, {z})")]
    AsymmetricWeight { x: usize, z: usize },
    #[error("posterior undefined: {0}")]
    PosteriorUndefined(String),
    #[error("state is unreachable under the path (zero marginal)")]
    ZeroMarginal,
    #[error("step produces an invalid pmf: stay probability {stay} from token {token}")]
    InvalidStepPmf { token: usize, stay: f64 },
    #[error("conditional jump {from} -> {to} has zero marginal rate")]
    RateSupportMismatch { from: usize, to: usize },
    #[error("kappa change of variables unavailable for a token-dependent scheduler")]
    KappaCovUnavailable,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
}
