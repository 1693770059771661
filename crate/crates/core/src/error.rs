use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    Network(String),

    #[error("invalid model input: {0}")]
    Model(String),

    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: String, value: f64 },

    #[error("state matrix is singular or ill-conditioned (cond = {condition:.3e}) at theta = {theta:?}")]
    SingularStateMatrix { condition: f64, theta: Vec<f64> },

    #[error("parameter `{name}` = {value} is outside its domain ({domain})")]
    Domain {
        name: String,
        value: f64,
        domain: String,
    },

    #[error("degenerate innovation covariance at step {step} (diagonal {value:.3e})")]
    DegenerateInnovation { step: usize, value: f64 },

    #[error("singular square-root factor in the {stage} update at step {step}")]
    SingularFactor { stage: &'static str, step: usize },

    #[error("non-finite value in filter at step {step}")]
    NonFinite { step: usize },

    #[error("filter failed at theta = {theta:?}: {source}")]
    Evaluation {
        theta: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Network(_)
                | Error::Model(_)
                | Error::Dimension(_)
                | Error::Dataset(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
