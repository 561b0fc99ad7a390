use thiserror::Error;

pub type Result<T> = std::result::Result<T, TauqError>;

#[derive(Debug, Error)]
pub enum TauqError {
    /// Malformed or inconsistent configuration (dimension mismatch, unknown method, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Residual weights carry no variation, so the contrast is not identified.
    #[error("overlap failure: {0}")]
    Overlap(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A failure inside a nuisance or contrast fit, with the stage it happened in.
    #[error("fit failed at t={t}{}: {source}", fold.map(|f| format!(", fold={f}")).unwrap_or_default())]
    Stage {
        t: usize,
        fold: Option<usize>,
        #[source]
        source: Box<TauqError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl TauqError {
    pub fn at_stage(self, t: usize, fold: Option<usize>) -> Self {
        TauqError::Stage {
            t,
            fold,
            source: Box::new(self),
        }
    }

    /// True when the root cause is a configuration problem rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            TauqError::Config(_) | TauqError::Json(_) => true,
            TauqError::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
