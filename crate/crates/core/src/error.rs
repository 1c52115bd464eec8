use std::io;

use crate::types::Encoding;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("element ({row}, {col}) = {value} is out of range for the declared bit width")]
    RangeViolation { row: usize, col: usize, value: i64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bit width {0} is outside 1..=8")]
    InvalidBitWidth(u32),

    #[error("encoding mismatch: expected {expected}, found {found}")]
    EncodingMismatch { expected: Encoding, found: Encoding },

    #[error("invalid quantization parameters: {0}")]
    InvalidQuantParams(String),

    #[error("bad magic: not an .apm matrix stream")]
    BadMagic,

    #[error("unsupported .apm version or reserved field ({0})")]
    BadVersion(String),

    #[error("truncated stream: expected {expected} bytes, got {actual}")]
    TruncatedStream { expected: u64, actual: u64 },

    #[error("invalid kernel config: {0}")]
    ConfigInvalid(String),

    #[error("32-bit output may overflow for K={k}, p={p}, q={q}; use 64-bit output")]
    OverflowRisk { k: usize, p: u32, q: u32 },

    #[error("no kernel config fits the scratch budget of {budget} bytes for p={p}, q={q}")]
    NoFeasibleConfig { p: u32, q: u32, budget: usize },

    #[error("tuning table is empty")]
    EmptyTable,

    #[error("tuning table line {line}: {msg}")]
    TableParse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
