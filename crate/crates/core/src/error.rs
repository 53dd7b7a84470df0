use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },

    #[error("zero weight has no memristor; omit the cell")]
    ZeroWeight,

    #[error(
        "weight {weight} needs {resistance} ohm, outside programmable range [{r_min}, {r_max}]"
    )]
    Programmability {
        weight: f64,
        resistance: f64,
        r_min: f64,
        r_max: f64,
    },

    #[error("invalid crossbar program: {0}")]
    InvalidProgram(String),

    #[error("missing weight tensor `{0}`")]
    MissingTensor(String),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error(transparent)]
    Netlist(#[from] NetlistError),

    #[error("model config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading a weight manifest or its binary blobs.
#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("manifest line {line}: unsupported version `{found}`")]
    Version { line: usize, found: String },

    #[error("tensor `{name}`: unsupported dtype `{dtype}` (only f32)")]
    Dtype { name: String, dtype: String },

    #[error("duplicate tensor `{name}` at manifest line {line}")]
    Duplicate { name: String, line: usize },

    #[error("tensor `{name}`: data file {} not found", path.display())]
    MissingFile { name: String, path: PathBuf },

    #[error("tensor `{name}`: bytes {offset}..{end} overrun data file of {file_len} bytes")]
    Overrun {
        name: String,
        offset: u64,
        end: u64,
        file_len: u64,
    },
}

#[derive(Debug, Error)]
#[error("netlist line {line}: {kind} (at `{token}`)")]
pub struct NetlistError {
    pub line: usize,
    pub token: String,
    pub kind: NetlistErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetlistErrorKind {
    #[error("unexpected token")]
    UnexpectedToken,
    #[error("malformed number")]
    BadNumber,
    #[error("resistance must be positive and finite")]
    NonPositive,
    #[error("cell outside crossbar bounds")]
    OutOfBounds,
    #[error("duplicate cell")]
    DuplicateCell,
    #[error("unsupported version")]
    Version,
    #[error("document truncated: missing END")]
    Truncated,
    #[error("content after END")]
    TrailingContent,
}
