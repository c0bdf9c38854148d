use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("no recorded forward pass matches this backward call")]
    MissingForwardRecord,

    #[error("network is frozen; its parameters cannot be updated")]
    Frozen,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("degenerate 6D rotation: the two columns are (nearly) parallel")]
    DegenerateRotation,

    #[error("parameter `{name}` = {value} is outside its valid range [{min}, {max}]")]
    OutOfRange {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("corrupt {what} file: {reason} (at byte offset {offset})")]
    Corrupt {
        what: &'static str,
        reason: String,
        offset: usize,
    },

    #[error("unsupported {what} file version {found}; this build reads version {supported}")]
    Version {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("schema mismatch: expected hash {expected:016x}, found {found:016x}")]
    SchemaMismatch { expected: u64, found: u64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing file: {}", .0.display())]
    Missing(PathBuf),

    #[error("missing input files: {}", .0.join(", "))]
    MissingInputs(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Architecture(_) => 2,
            Error::NonFinite(_) | Error::Divergence(_) | Error::DegenerateRotation => 4,
            _ => 3,
        }
    }
}
