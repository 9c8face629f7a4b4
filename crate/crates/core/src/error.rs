use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain condition violated: {0}")]
    Domain(String),

    #[error("invalid configuration for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("kernel solve diverged at time step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("simulation diverged on path {path} at step {step}")]
    SimulationDivergence { path: usize, step: usize },

    #[error("non-convex stage at step {step}: control curvature {curvature}")]
    Convexity { step: usize, curvature: f64 },

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("time {0} is not a grid node")]
    OffGrid(f64),

    #[error("malformed data in {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 configuration, 3 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Dimension(_) | Error::Domain(_) | Error::OffGrid(_) => 2,
            Error::Divergence { .. } | Error::SimulationDivergence { .. } => 3,
            _ => 1,
        }
    }
}
