use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("forecast assigns mass to inactive interval (node {0})")]
    InactiveSupport(usize),

    #[error("forecast probabilities sum to {0}, expected 1")]
    Unnormalized(f64),

    #[error("no weighted-feasible forecast: game value {value:e} exceeds tolerance {tol:e}")]
    Infeasible { value: f64, tol: f64 },

    #[error("no sleeping expert is awake at round {0}")]
    NoAwakeExperts(u64),

    #[error("outcome {0} outside [0, 1]")]
    OutcomeOutOfRange(f64),

    #[error("adaptive environment requires the mixed forecast")]
    MissingForecast,

    #[error("true mean unavailable at round {0}")]
    MissingMean(u64),

    #[error("{0} is undefined for adaptive environments")]
    NotOblivious(&'static str),

    #[error("round {round}: {source}")]
    AtRound {
        round: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("run {label}: {source}")]
    InRun {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed transcript line {line}: {message}")]
    Transcript { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_run(self, label: impl Into<String>) -> Self {
        Error::InRun {
            label: label.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn at_round(self, round: u64) -> Self {
        Error::AtRound {
            round,
            source: Box::new(self),
        }
    }
}
