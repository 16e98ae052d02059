use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A state with zero norm was normalized, typically a jump applied to a
    /// state in which the channel has no amplitude.
    #[error("degenerate collapse: state has zero norm")]
    DegenerateCollapse,

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("negative rate {rate} on channel {channel}")]
    NegativeRate { channel: &'static str, rate: f64 },

    /// The summed jump probability of one step reached 1.
    #[error("total jump probability {total} >= 1, timestep too large")]
    StepTooLarge { total: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("r = {r}: {source}")]
    AtSeparation {
        r: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("density matrix invariant violated at t = {t}: {what}")]
    Invariant { t: f64, what: String },

    #[error("degenerate sweep: {0}")]
    DegenerateSweep(String),

    #[error("config error ({context}): {message}")]
    Config { context: String, message: String },

    #[error("malformed input ({context}): {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: u64) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_separation(self, r: f64) -> Self {
        Error::AtSeparation {
            r,
            source: Box::new(self),
        }
    }

    pub(crate) fn config(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Innermost error, with step/separation context peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtSeparation { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
