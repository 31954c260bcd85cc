use thiserror::Error;

/// Errors raised by the numerical kernel, the synthesis routines and the
/// simulation loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is rank deficient: expected rank {expected}, found {found}")]
    RankDeficient { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("inertia matrix is not invertible")]
    SingularInertia,

    #[error("index {index} out of range (valid range 1..={max})")]
    IndexOutOfRange { index: usize, max: usize },

    /// `requested` inputs (or rank) cannot be served by `available` redundancy.
    #[error("insufficient input redundancy: requested {requested}, available {available}")]
    InsufficientRedundancy { requested: usize, available: usize },

    #[error("reduced allocation matrix has rank {found} < {expected}")]
    ReducedRankDeficient { expected: usize, found: usize },

    #[error("no ratio coefficients for multi-member cluster {cluster}")]
    MissingCoefficients { cluster: usize },

    #[error(
        "rank condition failed for multi-index {indices:?}: rank(W_J) = {rank_w}, rank(C W_J) = {rank_cw}, required {required}"
    )]
    RankConditionFailed {
        indices: Vec<usize>,
        rank_w: usize,
        rank_cw: usize,
        required: usize,
    },

    #[error("observer matrix F is not Hurwitz (largest real part {max_real_part:e})")]
    NotHurwitz { max_real_part: f64 },

    #[error("no feasible multi-index: {0}")]
    EmptyBank(String),

    #[error("classification window incomplete: {have} of {need} samples")]
    WarmupIncomplete { have: usize, need: usize },

    #[error("unknown fault hypothesis: {0}")]
    UnknownHypothesis(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("step {step} (t = {time} s): {source}")]
    Step {
        step: usize,
        time: f64,
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at_step(self, step: usize, time: f64) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                time,
                source: Box::new(e),
            },
        }
    }
}
