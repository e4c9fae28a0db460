use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("innovation covariance is singular (estimated condition number {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("matrix is not positive definite in {0}")]
    NotPositiveDefinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm embedding for crop `{0}`")]
    ZeroNorm(String),

    #[error("no embedding for crop id `{0}`")]
    MissingEmbedding(String),

    #[error("divergence is infinite: p[{row}][{col}] > 0 where u[{row}][{col}] = 0")]
    InfiniteDivergence { row: usize, col: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("non-finite loss at training iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn config(field: &str, message: impl ToString) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}
