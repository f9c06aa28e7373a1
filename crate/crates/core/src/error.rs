use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument outside the domain of an operation (e.g. a dose level off the grid).
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration value failed validation. `field` names the offending key.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },
    /// Quadrature or sampling produced no usable result.
    #[error("inference failed: {0}")]
    Inference(String),
    /// An operation was attempted in a trial phase that does not allow it.
    #[error("invalid trial state: {0}")]
    State(String),
    /// A simulated trial failed; `seed` reruns it alone.
    #[error("replicate {index} (trial seed {seed}) failed: {source}")]
    Replicate {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
