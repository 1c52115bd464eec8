//! Bipolar-INT number system.
//!
//! In an n-bit bipolar code every bit contributes `-2^i` (bit clear) or
//! `+2^i` (bit set), so values are odd and the range is symmetric. A
//! two's-complement code converts to bipolar by flipping its most
//! significant bit, which maps value `x` to `2x + 1`.

use crate::error::{Error, Result};
use crate::exact::{sum_rounded, two_sum};
use crate::types::{validate_matrix, Encoding, IntMatrix, QuantParams};

#[inline]
fn mask(bits: u32) -> u32 {
    (1u32 << bits) - 1
}

/// Value of an n-bit bipolar code: `sum_i (2*b_i - 1) * 2^i`.
#[inline]
pub fn bipolar_value(code: u8, bits: u32) -> i32 {
    let code = code as u32 & mask(bits);
    // sum_i 2*b_i*2^i - sum_i 2^i
    2 * code as i32 - mask(bits) as i32
}

/// Inverse of [`bipolar_value`]. `value` must be odd and in range.
#[inline]
pub fn bipolar_code(value: i32, bits: u32) -> u8 {
    ((value + mask(bits) as i32) / 2) as u8
}

/// Two's-complement value of an n-bit code. At n = 1 the single bit is
/// the sign bit: `0 -> 0`, `1 -> -1`.
#[inline]
pub fn twos_complement_value(code: u8, bits: u32) -> i32 {
    let code = code as u32 & mask(bits);
    if code >> (bits - 1) & 1 == 1 {
        code as i32 - (1 << bits)
    } else {
        code as i32
    }
}

/// n-bit two's-complement code of `value`.
#[inline]
pub fn signed_code(value: i32, bits: u32) -> u8 {
    (value as u32 & mask(bits)) as u8
}

#[inline]
pub fn flip_msb(code: u8, bits: u32) -> u8 {
    code ^ (1 << (bits - 1))
}

fn expect_encoding(m: &IntMatrix, expected: Encoding) -> Result<()> {
    if m.encoding() != expected {
        return Err(Error::EncodingMismatch {
            expected,
            found: m.encoding(),
        });
    }
    validate_matrix(m)
}

/// Converts each element by flipping the sign bit of its code.
pub fn signed_to_bipolar(m: &IntMatrix) -> Result<IntMatrix> {
    expect_encoding(m, Encoding::SignedInt)?;
    let bits = m.bits();
    let data = m
        .data()
        .iter()
        .map(|&v| bipolar_value(flip_msb(signed_code(v as i32, bits), bits), bits) as i16)
        .collect();
    Ok(IntMatrix::new_unchecked(
        m.rows(),
        m.cols(),
        bits,
        Encoding::BipolarInt,
        data,
    ))
}

pub fn bipolar_to_signed(m: &IntMatrix) -> Result<IntMatrix> {
    expect_encoding(m, Encoding::BipolarInt)?;
    let bits = m.bits();
    let data = m
        .data()
        .iter()
        .map(|&v| twos_complement_value(flip_msb(bipolar_code(v as i32, bits), bits), bits) as i16)
        .collect();
    Ok(IntMatrix::new_unchecked(
        m.rows(),
        m.cols(),
        bits,
        Encoding::SignedInt,
        data,
    ))
}

/// Rewrites signed-INT parameters for the equivalent bipolar codes:
/// `s*x + z == (s/2)*(2x + 1) + (z - s/2)`.
///
/// The new zero `z - s/2` is kept exactly as a two-float sum, so every
/// code dequantizes to the same value under both parameter sets.
pub fn rewrite_quant_params(params: &QuantParams) -> QuantParams {
    let scale: Vec<f64> = params.scales().iter().map(|s| s / 2.0).collect();
    let mut zero = Vec::with_capacity(scale.len());
    let mut zero_lo = Vec::with_capacity(scale.len());
    for ((&hi, &lo), &half) in params.zeros().iter().zip(params.zero_lows()).zip(&scale) {
        let (new_hi, err) = two_sum(hi, -half);
        let (new_hi, new_lo) = if lo == 0.0 {
            (new_hi, err)
        } else {
            // fold the old low part in; exact unless the three terms span
            // more than two floats of precision
            let exact = sum_rounded(&[hi, lo, -half]);
            (exact, sum_rounded(&[hi, lo, -half, -exact]))
        };
        zero.push(new_hi);
        zero_lo.push(new_lo);
    }
    // halving a positive finite scale stays positive unless it underflows
    QuantParams::with_exact_zeros(params.granularity(), scale, zero, zero_lo)
        .expect("rewritten quantization parameters stay valid")
}
