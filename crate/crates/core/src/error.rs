use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate spec: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("observation is off the lift manifold (residual {residual:.3e})")]
    OffManifold { residual: f64 },

    #[error("undefined direction: expert action requested at the zero state")]
    ZeroState,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("bad magic bytes in {0}")]
    BadMagic(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { location: location.into(), message: message.into() }
    }

    /// Stable numeric code, used as a process exit status by the CLI.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_) => 10,
            Error::Degenerate(_) => 11,
            Error::Shape(_) => 12,
            Error::NonFinite(_) => 13,
            Error::OffManifold { .. } => 14,
            Error::ZeroState => 15,
            Error::Singular(_) => 16,
            Error::EmptyDataset(_) => 17,
            Error::Version { .. } => 20,
            Error::BadMagic(_) => 21,
            Error::Truncated(_) => 22,
            Error::Checksum { .. } => 23,
            Error::Config { .. } => 30,
            Error::Io { .. } => 40,
        }
    }
}
