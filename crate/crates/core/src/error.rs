use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty region")]
    EmptyRegion,
    #[error("regions have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("(R4) fails: {0}")]
    R4Fails(String),
    #[error("(R3) fails for this rho: {0}")]
    R3Fails(String),
    #[error("budget exceeded for {what}: required {required}, allowed {allowed}")]
    Budget {
        what: String,
        required: u128,
        allowed: u128,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("reducible chain, closed classes: {0:?}")]
    Reducible(Vec<Vec<usize>>),
    #[error("inequality violated: {0}")]
    Violation(String),
    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn budget(what: impl Into<String>, required: u128, allowed: u128) -> Self {
        Error::Budget {
            what: what.into(),
            required,
            allowed,
        }
    }
}

impl Error {
    /// Process exit status for the experiment runner: 2 for invalid input,
    /// 3 for exceeded budgets, 1 for violated inequalities and anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::R4Fails(_)
            | Error::R3Fails(_)
            | Error::Precondition(_)
            | Error::Unsupported(_)
            | Error::EmptyRegion
            | Error::DimensionMismatch(..) => 2,
            Error::Budget { .. } => 3,
            _ => 1,
        }
    }
}
