use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} out of range for embedding table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("{0}")]
    Data(String),
    #[error("vocabulary fitted on {fitted_on} cannot vectorize data for {requested}")]
    FoldLeak { fitted_on: String, requested: String },
    #[error("checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },
    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("corrupted payload: {0}")]
    Payload(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("{players} players exceed the exact Shapley cap of {cap}")]
    TooManyPlayers { players: usize, cap: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
