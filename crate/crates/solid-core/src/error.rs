use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("box bounds inverted at index {index}: lower {lower} > upper {upper}")]
    InvertedBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("degenerate return structure")]
    DegenerateReturns,

    #[error("agent '{agent}' failed: {source}")]
    Agent {
        agent: String,
        #[source]
        source: Box<Error>,
    },

    #[error("agent unavailable after {attempts} attempt(s): {reason}")]
    AgentUnavailable { attempts: u32, reason: String },

    #[error("response missing tickers: {0:?}")]
    MissingTickers(Vec<String>),

    #[error("unrecognized confidence level {0:?}")]
    UnknownLevel(String),

    #[error("no parsable recommendation line in response")]
    NoRecommendationLine,

    #[error("transport error: {0}")]
    Transport(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the identifier of the agent that produced it.
    pub fn for_agent(agent: impl Into<String>, source: Error) -> Self {
        Error::Agent {
            agent: agent.into(),
            source: Box::new(source),
        }
    }

    /// True for the parse-failure variants that warrant a corrective re-prompt.
    pub fn is_parse_error(&self) -> bool {
        matches!(
            self,
            Error::MissingTickers(_) | Error::UnknownLevel(_) | Error::NoRecommendationLine
        )
    }
}
