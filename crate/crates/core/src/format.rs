//! On-disk formats.
//!
//! `.apm` matrix stream (little-endian):
//!
//! ```text
//! "APM1"  u8 encoding (0 signed, 1 bipolar)  u8 bits  u16 reserved = 0
//! u64 rows  u64 cols  rows*cols i8 cells
//! ```
//!
//! Signed cells hold the element value. Bipolar cells hold the element's
//! n-bit code, zero-extended to a byte.
//!
//! `.apt-table` is UTF-8 text with one entry per line:
//! `M N K p q b_m b_n b_k t_r t_c w_b w_m w_n w_k throughput`.
//! Lines starting with `#` and blank lines are ignored.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::bipolar;
use crate::error::{Error, Result};
use crate::types::{
    check_bits, validate_matrix, Encoding, IntMatrix, KernelConfig, ProblemKey, TableEntry,
    TuningTable,
};

pub const MAGIC: &[u8; 4] = b"APM1";
const HEADER_LEN: usize = 24;

pub fn serialize_matrix(m: &IntMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len());
    out.extend_from_slice(MAGIC);
    out.push(m.encoding().code());
    out.push(m.bits() as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    out.extend(m.data().iter().map(|&v| encode_cell(v, m.bits(), m.encoding())));
    out
}

fn encode_cell(value: i16, bits: u32, encoding: Encoding) -> u8 {
    match encoding {
        Encoding::SignedInt => value as i8 as u8,
        Encoding::BipolarInt => bipolar::bipolar_code(value as i32, bits),
    }
}

pub fn deserialize_matrix(bytes: &[u8]) -> Result<IntMatrix> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedStream {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(if &bytes[..3] == b"APM" {
            Error::BadVersion(format!("version byte {:?}", bytes[3] as char))
        } else {
            Error::BadMagic
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedStream {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let encoding = Encoding::from_code(bytes[4])
        .ok_or_else(|| Error::BadVersion(format!("encoding code {}", bytes[4])))?;
    let bits = bytes[5] as u32;
    check_bits(bits)?;
    let reserved = u16::from_le_bytes([bytes[6], bytes[7]]);
    if reserved != 0 {
        return Err(Error::BadVersion(format!("reserved field {reserved}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let cells = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::ShapeMismatch(format!("{rows}x{cols} overflows")))?;
    if (body.len() as u64) < cells {
        return Err(Error::TruncatedStream {
            expected: HEADER_LEN as u64 + cells,
            actual: bytes.len() as u64,
        });
    }
    if body.len() as u64 > cells {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after {rows}x{cols} cells",
            body.len() as u64 - cells
        )));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let mut data = Vec::with_capacity(body.len());
    for (idx, &cell) in body.iter().enumerate() {
        let value = match encoding {
            Encoding::SignedInt => cell as i8 as i16,
            Encoding::BipolarInt => {
                if bits < 8 && cell >> bits != 0 {
                    return Err(Error::RangeViolation {
                        row: idx / cols,
                        col: idx % cols,
                        value: cell as i64,
                    });
                }
                bipolar::bipolar_value(cell, bits) as i16
            }
        };
        data.push(value);
    }
    let m = IntMatrix::new_unchecked(rows, cols, bits, encoding, data);
    validate_matrix(&m)?;
    Ok(m)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<IntMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    deserialize_matrix(&bytes)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &IntMatrix) -> Result<()> {
    fs::File::create(path)?.write_all(&serialize_matrix(m))?;
    Ok(())
}

pub fn format_table(table: &TuningTable) -> String {
    let mut out = String::from("# M N K p q b_m b_n b_k t_r t_c w_b w_m w_n w_k throughput\n");
    for (key, entry) in table.entries() {
        let c = &entry.config;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            key.m,
            key.n,
            key.k,
            key.p,
            key.q,
            c.b_m,
            c.b_n,
            c.b_k,
            c.t_r,
            c.t_c,
            c.w_b,
            c.w_m,
            c.w_n,
            c.w_k,
            entry.throughput
        ));
    }
    out
}

pub fn parse_table(text: &str) -> Result<TuningTable> {
    let mut table = TuningTable::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::TableParse { line: line_no, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 {
            return Err(err(format!("expected 15 fields, found {}", fields.len())));
        }
        let mut ints = [0usize; 14];
        for (slot, field) in ints.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| err(format!("`{field}` is not a non-negative integer")))?;
        }
        let throughput: f64 = fields[14]
            .parse()
            .map_err(|_| err(format!("`{}` is not a number", fields[14])))?;
        let [m, n, k, p, q, b_m, b_n, b_k, t_r, t_c, w_b, w_m, w_n, w_k] = ints;
        let key = ProblemKey {
            m,
            n,
            k,
            p: p as u32,
            q: q as u32,
        };
        let config = KernelConfig {
            b_m,
            b_n,
            b_k,
            t_r,
            t_c,
            w_b,
            w_m,
            w_n,
            w_k,
        };
        table
            .insert(key, TableEntry { config, throughput })
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(table)
}

pub fn read_table(path: impl AsRef<Path>) -> Result<TuningTable> {
    parse_table(&fs::read_to_string(path)?)
}

pub fn write_table(path: impl AsRef<Path>, table: &TuningTable) -> Result<()> {
    fs::write(path, format_table(table))?;
    Ok(())
}
