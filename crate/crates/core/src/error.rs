use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("insufficient sequence: {0}")]
    InsufficientSequence(String),

    #[error("landmark `{name}` at ({x}, {y}) lies outside the {width}x{height} frame")]
    Landmark {
        name: &'static str,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:.6e})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },

    #[error("fold {fold} (subject {subject}) failed: {source}")]
    Fold {
        fold: usize,
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteLoss { .. } => true,
            Error::Fold { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
