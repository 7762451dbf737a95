use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("singular design matrix: {0}")]
    SingularFit(String),
    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    ConvergenceFailure { iterations: usize, grad_norm: f64 },
    #[error("Hessian factorization failed after damping escalation (last damping {damping:e})")]
    IllConditioned { damping: f64 },
    #[error("input outside the domain of {function}: {detail}")]
    DomainError { function: String, detail: String },
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("partition misuse: {0}")]
    PartitionError(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeError(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
