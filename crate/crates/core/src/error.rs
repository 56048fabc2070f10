use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("level {level} exceeds the universe width {max}")]
    LevelOverflow { level: u32, max: u32 },

    #[error("dictionary capacity {capacity} exceeded")]
    Capacity { capacity: u64 },

    #[error("allocation of {requested} bits exceeds the memory cap of {cap} bits")]
    Allocation { requested: u64, cap: u64 },

    #[error("record does not fit the configured widths (key {key_bits} bits, satellite {sat_bits} bits)")]
    RecordWidth { key_bits: u32, sat_bits: u32 },

    #[error("cursor was invalidated by a mutation")]
    StaleCursor,

    #[error("universe exhausted: all 2^{0} stream positions have been used")]
    UniverseExhausted(u32),

    #[error("no live record matches the element being deleted")]
    ImproperDeletion,

    #[error("operation not supported by this filter: {0}")]
    Unsupported(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o: {0}")]
    Io(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// True for errors that indicate a bug inside a filter rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            Error::Capacity { .. } | Error::Invariant(_) | Error::StaleCursor
        )
    }

    /// True for errors caused by the caller's input or environment.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Param(_) | Error::Config(_) | Error::Parse { .. } | Error::Io(_) | Error::Snapshot(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
