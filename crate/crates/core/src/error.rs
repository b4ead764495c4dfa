use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema: attribute `{attribute}`, field `{field}`: {message}")]
    Schema {
        attribute: String,
        field: String,
        message: String,
    },

    #[error("csv is missing source column `{0}`")]
    MissingColumn(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("invalid selection state: {0}")]
    InvalidState(String),

    #[error("malformed query: {0}")]
    MalformedQuery(String),

    #[error("average over an empty selection")]
    EmptyAggregate,

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("schema fingerprint mismatch: expected {expected:016x}, found {found:016x}")]
    Fingerprint { expected: u64, found: u64 },

    #[error("model config: attribute `{attribute}`, layer {layer}: {message}")]
    Config {
        attribute: String,
        layer: usize,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Divergence { epoch: u32, loss: f64 },

    #[error("degenerate metric: test targets are constant")]
    DegenerateMetric,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("feature disabled: {0}")]
    FeatureDisabled(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(attribute: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            attribute: attribute.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}
