use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{context}: loss diverged at epoch {epoch} (loss = {loss:e})")]
    Divergence {
        context: String,
        epoch: usize,
        loss: f64,
    },

    #[error(
        "normal matrix is singular while fitting parameter {param_index}; \
         the predictors are collinear — set ridge_lambda > 0 to regularize"
    )]
    SingularNormalMatrix { param_index: usize },

    #[error("non-finite prediction for parameter {param_index} at predictors {predictors:?}")]
    NonFinitePrediction {
        param_index: usize,
        predictors: Vec<f64>,
    },

    #[error("column {0:?} not found in dataset")]
    MissingColumn(String),

    #[error("{path}: row {row}, column {column:?}: {message}")]
    CsvCell {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("toml error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Stable machine-readable tag for each variant, used by the CLI's
    /// structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::Divergence { .. } => "divergence",
            Error::SingularNormalMatrix { .. } => "singular_normal_matrix",
            Error::NonFinitePrediction { .. } => "non_finite_prediction",
            Error::MissingColumn(_) => "missing_column",
            Error::CsvCell { .. } => "csv_cell",
            Error::Artifact { .. } => "artifact",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
            Error::TomlSer(_) => "toml",
        }
    }
}
