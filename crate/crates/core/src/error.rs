use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{what} not found: {id}")]
    NotFound { what: &'static str, id: String },
    #[error("index {index} out of range for {len} items")]
    OutOfRange { index: usize, len: usize },
    #[error("subsets must contain at least one item")]
    EmptySubset,
    #[error("cannot group datasets: {0}")]
    GroupMismatch(String),
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("public name `{0}` is already in use")]
    NameCollision(String),
    #[error("unknown action kind `{0}`")]
    UnknownKind(String),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("preset shape mismatch: {0}")]
    PresetMismatch(String),
    #[error("plugin `{0}` is already registered")]
    DuplicatePlugin(String),
    #[error("incompatible input: {0}")]
    Incompatible(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error at line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<usize>,
        message: String,
    },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("archive error: {0}")]
    Archive(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("workspace is locked")]
    Locked,
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn not_found(what: &'static str, id: impl ToString) -> Self {
        CoreError::NotFound {
            what,
            id: id.to_string(),
        }
    }
}
