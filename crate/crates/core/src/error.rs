use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular input: {0}")]
    SingularInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("pivot breakdown at row {row}")]
    PivotBreakdown { row: usize },

    #[error("residual check failed: {residual:.3e} exceeds bound {bound:.3e}")]
    Residual { residual: f64, bound: f64 },

    #[error("iterative solver stalled after {} iterations (last relative residual {:.3e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    NotConverged { history: Vec<f64> },

    #[error("contour rejected: {0}")]
    Contour(String),

    #[error("solve failed at contour node {node}: {reason}")]
    Worker { node: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
