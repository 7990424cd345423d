//! Error type shared by all modules, with the CLI exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {max_abs:.3e})")]
    AsymmetricMatrix { max_abs: f64 },

    #[error("A is not Hurwitz; Lyapunov equation reported as unsolvable")]
    NonHurwitz,

    #[error("Lyapunov equation system is singular (eigenvalue pair sums to zero)")]
    SingularLyapunovSystem,

    #[error("quadratic form is singular on its subspace")]
    SingularForm,

    #[error("quadratic form is not positive-definite on its subspace")]
    NotPositiveDefinite,

    #[error("Lyapunov verification failed: ψ̇ changes sign at x = {witness:?}")]
    MixedSignDerivative { witness: Vec<f64> },

    #[error("level value {value} is not strictly inside an existing gap")]
    BadLevelInsertion { value: f64 },

    #[error("levels must be strictly increasing and positive")]
    BadLevels,

    #[error("grid too coarse: slice {slice} of family {family} has no grid points")]
    GridTooCoarse { family: usize, slice: usize },

    #[error("grid supports at most 3 dimensions, got {dim}")]
    GridDimension { dim: usize },

    #[error("point lies outside the domain box")]
    OutsideDomain,

    #[error("ψ̇ not sign-definite on slice {slice} of family {family}")]
    MixedSignPsidot { family: usize, slice: usize },

    #[error("ψ̇ vanishes on slice {slice} of family {family}")]
    VanishingPsidot { family: usize, slice: usize },

    #[error("pencil bounds unavailable for family {family}: {reason}")]
    PencilUnavailable { family: usize, reason: String },

    #[error("slice {slice} of family {family} has fewer than {min} grid points for sampling")]
    TooFewSamples { family: usize, slice: usize, min: usize },

    #[error("missing transit bounds for slice {slice} of family {family}")]
    MissingBounds { family: usize, slice: usize },

    #[error("system is not in complete form: ψ is not proportional to ψ̇ for family {family}")]
    NotCompleteForm { family: usize },

    #[error("transit direction inconsistent with sign of α")]
    DirectionMismatch,

    #[error("alphabet collision on symbol `{symbol}` in parallel composition")]
    AlphabetCollision { symbol: String },

    #[error("clock collision on clock `{clock}` in parallel composition")]
    ClockCollision { clock: String },

    #[error("guard constant {guard} exceeds invariant constant {invariant} at location `{location}`")]
    GuardExceedsInvariant {
        location: String,
        guard: String,
        invariant: String,
    },

    #[error("bisimilarity condition fails: cells of one extended cell differ in exit behavior (rerun with the override to build anyway)")]
    BisimilarityCondition,

    #[error("initial box is not a union of cells (region `{region}` only partially covered)")]
    InitialBoxNotCellUnion { region: String },

    #[error("initial box touches no grid point")]
    EmptyInitialBox,

    #[error("query window is invalid: t1 must satisfy 0 <= t1 <= t2")]
    InvalidWindow,

    #[error("partition fingerprint mismatch: expected {expected}, got {got}")]
    FingerprintMismatch { expected: String, got: String },

    #[error("trajectory diverged: state norm exceeded {limit:.1e} at t = {t}")]
    Divergence { limit: f64, t: f64 },

    #[error("problem spec error: {0}")]
    Spec(String),

    #[error("unknown location `{0}` in automaton file")]
    UnknownLocation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl Error {
    /// CLI exit-code contract: 2 spec/usage, 3 build, 4 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Spec(_)
            | Error::Toml(_)
            | Error::InvalidWindow
            | Error::DimensionMismatch { .. }
            | Error::BadLevels
            | Error::BadLevelInsertion { .. }
            | Error::UnknownLocation(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
