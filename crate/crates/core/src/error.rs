use thiserror::Error;

/// Stratum label used in error messages, e.g. `(S=0,R=1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stratum {
    pub s: bool,
    pub r: Option<bool>,
}

impl std::fmt::Display for Stratum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.r {
            Some(r) => write!(f, "(S={},R={})", self.s as u8, r as u8),
            None => write!(f, "(S={})", self.s as u8),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("{msg} at row {row}")]
    InvalidRow { row: usize, msg: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("empty stratum {0}")]
    EmptyStratum(Stratum),

    #[error("insufficient data for {k} components (n={n}, need at least {need})")]
    InsufficientData { k: usize, n: usize, need: usize },

    #[error("tilt overflow: |γ| too large for this outcome scale (gamma={gamma})")]
    TiltOverflow { gamma: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root bracket failure: {0}")]
    Bracket(String),

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("monte carlo study failed: {0}")]
    Study(String),

    #[error("all candidate fits failed: {0}")]
    AllFitsFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
