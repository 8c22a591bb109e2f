use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("generator {index} has norm {norm:e}, at or below the conversion threshold")]
    DegenerateGenerator { index: usize, norm: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("training mode requires ground truth for {0}")]
    MissingGroundTruth(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },

    #[error("kernel matrix not positive definite after jitter {jitter:e}")]
    IllConditionedKernel { jitter: f64 },

    #[error("no iterate satisfied the constraints (max violation {violation:e})")]
    Infeasible { violation: f64 },

    #[error("initial barrier value {h:.4} < 0 for pedestrian {pedestrian}")]
    InfeasibleStart { pedestrian: usize, h: f64 },

    #[error("objective evaluated to a non-finite value")]
    NonFiniteObjective,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
