//! Arbitrary-precision integer matrix multiplication by bit-plane
//! decomposition.
//!
//! Operands of 1 to 8 bits are converted to bipolar-INT codes, split into
//! packed 1-bit planes, multiplied plane pair by plane pair with an
//! XOR/popcount microkernel and recombined by shift-and-add. A tiling
//! engine keeps that recovery inside per-block scratch, and a tuner
//! searches kernel configurations per problem shape.

pub mod bench;
pub mod bipolar;
pub mod bitplane;
pub mod engine;
pub mod error;
pub mod exact;
pub mod format;
pub mod microkernel;
pub mod oracle;
pub mod tuner;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_matrix, Encoding, Granularity, IntMatrix, KernelConfig, OutputMatrix, ProblemKey,
    QuantParams, TableEntry, TuningTable, Word, WORD_BITS,
};
