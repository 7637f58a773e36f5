use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate 6D rotation: first column too small or columns parallel")]
    DegenerateRotation6D,
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("need at least 6 weighted correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("rank-deficient DLT system")]
    SingularConfiguration,
    #[error("forward axis is (nearly) vertical; heading undefined")]
    DegenerateHeading,
    #[error("insufficient data: need at least {needed} windows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite loss in term `{term}`")]
    NonFiniteLoss { term: &'static str },
    #[error("non-finite gradient contributed by term `{term}`")]
    NonFiniteGradient { term: &'static str },
    #[error("numerical failure at iteration {iteration}: {source}")]
    Optimizer {
        iteration: usize,
        source: alloc::boxed::Box<Error>,
    },
    #[error("initialization failed: camera {camera} has no frame with a valid PnP solution")]
    InitializationFailed { camera: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::Invalid(_) | Error::InsufficientData { .. })
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
