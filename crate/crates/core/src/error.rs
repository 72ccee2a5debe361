use std::path::PathBuf;

/// Sequence number of a request within its stream.
pub type Seq = u64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("device {0} not found")]
    DeviceNotFound(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("request {seq}: invalid handle (allocation {alloc_id} is not live)")]
    InvalidHandle { seq: Seq, alloc_id: u64 },

    #[error("request {seq}: out of device memory ({requested} bytes requested, {available} of {capacity} free)")]
    OutOfDeviceMemory {
        seq: Seq,
        requested: usize,
        available: usize,
        capacity: usize,
    },

    #[error("request {seq}: range error: {detail}")]
    Range { seq: Seq, detail: String },

    #[error("request {seq}: kernel `{kernel}` failed: {message}")]
    KernelFailed {
        seq: Seq,
        kernel: String,
        message: String,
    },

    #[error("request {seq}: skipped after earlier failure in the stream")]
    Skipped { seq: Seq },

    #[error("failed to load library `{name}`: {reason}")]
    LibraryLoad { name: String, reason: String },

    #[error("symbol `{symbol}` not found in library `{library}`")]
    SymbolNotFound { library: String, symbol: String },

    #[error("codegen error: {0}")]
    Codegen(#[from] crate::codegen::CodegenError),

    #[error("compilation of {source_path} failed:\n{diagnostics}")]
    Compile {
        source_path: PathBuf,
        diagnostics: String,
    },

    #[error("numerical divergence at step {step} (t = {t})")]
    NumericalDivergence { step: u64, t: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    /// Sequence number of the failing request, for errors raised by the executor.
    pub fn seq(&self) -> Option<Seq> {
        match self {
            Error::InvalidHandle { seq, .. }
            | Error::OutOfDeviceMemory { seq, .. }
            | Error::Range { seq, .. }
            | Error::KernelFailed { seq, .. }
            | Error::Skipped { seq } => Some(*seq),
            _ => None,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
