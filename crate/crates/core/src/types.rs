//! Shared domain types: integer matrices, quantization parameters,
//! kernel configurations and the tuning table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exact::Dyadic;

/// Machine word the bit planes are packed into.
#[cfg(not(feature = "word32"))]
pub type Word = u64;
#[cfg(feature = "word32")]
pub type Word = u32;

pub const WORD_BITS: usize = Word::BITS as usize;

pub const MIN_BITS: u32 = 1;
pub const MAX_BITS: u32 = 8;

pub(crate) fn check_bits(bits: u32) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidBitWidth(bits))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Encoding {
    /// Two's complement, range [-2^(n-1), 2^(n-1) - 1].
    SignedInt,
    /// Every bit denotes -1 or +1; values are odd, range [-(2^n - 1), 2^n - 1].
    BipolarInt,
}

impl Encoding {
    pub fn code(self) -> u8 {
        match self {
            Encoding::SignedInt => 0,
            Encoding::BipolarInt => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Encoding::SignedInt),
            1 => Some(Encoding::BipolarInt),
            _ => None,
        }
    }

    /// Inclusive value range for `bits`-wide elements.
    pub fn range(self, bits: u32) -> (i32, i32) {
        match self {
            Encoding::SignedInt => (-(1 << (bits - 1)), (1 << (bits - 1)) - 1),
            Encoding::BipolarInt => (-((1 << bits) - 1), (1 << bits) - 1),
        }
    }

    pub fn contains(self, bits: u32, value: i32) -> bool {
        let (lo, hi) = self.range(bits);
        let in_range = (lo..=hi).contains(&value);
        match self {
            Encoding::SignedInt => in_range,
            Encoding::BipolarInt => in_range && value & 1 == 1,
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoding::SignedInt => f.write_str("signed"),
            Encoding::BipolarInt => f.write_str("bipolar"),
        }
    }
}

/// Dense row-major integer matrix with a declared bit width.
///
/// Cells hold element values (not bit patterns). Matrices built through
/// [`IntMatrix::new`] always satisfy their invariants; `new_unchecked`
/// exists for ingest paths that validate separately.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    bits: u32,
    encoding: Encoding,
    data: Vec<i16>,
}

impl IntMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        bits: u32,
        encoding: Encoding,
        data: Vec<i16>,
    ) -> Result<Self> {
        let m = Self::new_unchecked(rows, cols, bits, encoding, data);
        validate_matrix(&m)?;
        Ok(m)
    }

    pub fn new_unchecked(
        rows: usize,
        cols: usize,
        bits: u32,
        encoding: Encoding,
        data: Vec<i16>,
    ) -> Self {
        IntMatrix {
            rows,
            cols,
            bits,
            encoding,
            data,
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        bits: u32,
        encoding: Encoding,
        mut f: impl FnMut(usize, usize) -> i16,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, bits, encoding, data)
    }

    /// Uniformly random valid matrix.
    pub fn random<R: rand::Rng + ?Sized>(
        rng: &mut R,
        rows: usize,
        cols: usize,
        bits: u32,
        encoding: Encoding,
    ) -> Result<Self> {
        check_bits(bits)?;
        let (lo, hi) = encoding.range(bits);
        let data = (0..rows * cols)
            .map(|_| match encoding {
                Encoding::SignedInt => rng.gen_range(lo..=hi) as i16,
                // odd values only: 2u - (2^n - 1) for a random n-bit code u
                Encoding::BipolarInt => (2 * rng.gen_range(0..(1i32 << bits)) + lo) as i16,
            })
            .collect();
        Self::new(rows, cols, bits, encoding, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> i16 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[i16] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn transpose(&self) -> IntMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        IntMatrix::new_unchecked(self.cols, self.rows, self.bits, self.encoding, data)
    }
}

/// Checks every [`IntMatrix`] invariant. Never panics.
pub fn validate_matrix(m: &IntMatrix) -> Result<()> {
    check_bits(m.bits)?;
    let expected = m.rows.checked_mul(m.cols);
    if expected != Some(m.data.len()) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix holds {} cells",
            m.rows,
            m.cols,
            m.data.len()
        )));
    }
    for (idx, &v) in m.data.iter().enumerate() {
        if !m.encoding.contains(m.bits, v as i32) {
            return Err(Error::RangeViolation {
                row: idx / m.cols,
                col: idx % m.cols,
                value: v as i64,
            });
        }
    }
    Ok(())
}

/// Dense row-major output of a matrix product.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> OutputMatrix<T> {
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn map<U>(&self, f: impl FnMut(T) -> U) -> OutputMatrix<U> {
        OutputMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    PerTensor,
    /// One (scale, zero) pair per index along `axis`. Weights use axis 0
    /// (output channels, i.e. rows of W).
    PerChannel { axis: usize },
}

/// Affine quantization parameters: `value = scale * code + zero`.
///
/// Each zero is held as an unevaluated sum `zero + zero_lo` of two
/// floats so that rewritten parameters stay exact.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantParams {
    granularity: Granularity,
    scale: Vec<f64>,
    zero: Vec<f64>,
    zero_lo: Vec<f64>,
}

impl QuantParams {
    pub fn per_tensor(scale: f64, zero: f64) -> Result<Self> {
        Self::build(Granularity::PerTensor, vec![scale], vec![zero], vec![0.0])
    }

    pub fn per_channel(axis: usize, scale: Vec<f64>, zero: Vec<f64>) -> Result<Self> {
        let lo = vec![0.0; zero.len()];
        Self::build(Granularity::PerChannel { axis }, scale, zero, lo)
    }

    /// Parameters whose zeros are the exact sums `zero[i] + zero_lo[i]`.
    pub fn with_exact_zeros(
        granularity: Granularity,
        scale: Vec<f64>,
        zero: Vec<f64>,
        zero_lo: Vec<f64>,
    ) -> Result<Self> {
        if zero_lo.len() != zero.len() {
            return Err(Error::InvalidQuantParams(format!(
                "{} low parts for {} zeros",
                zero_lo.len(),
                zero.len()
            )));
        }
        Self::build(granularity, scale, zero, zero_lo)
    }

    fn build(
        granularity: Granularity,
        scale: Vec<f64>,
        zero: Vec<f64>,
        zero_lo: Vec<f64>,
    ) -> Result<Self> {
        if scale.is_empty() || scale.len() != zero.len() {
            return Err(Error::InvalidQuantParams(format!(
                "{} scales for {} zeros",
                scale.len(),
                zero.len()
            )));
        }
        if granularity == Granularity::PerTensor && scale.len() != 1 {
            return Err(Error::InvalidQuantParams(
                "per-tensor parameters hold exactly one pair".into(),
            ));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidQuantParams(format!("scale {s} is not > 0")));
        }
        if let Some(z) = zero.iter().chain(&zero_lo).find(|z| !z.is_finite()) {
            return Err(Error::InvalidQuantParams(format!("zero {z} is not finite")));
        }
        Ok(QuantParams {
            granularity,
            scale,
            zero,
            zero_lo,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn scales(&self) -> &[f64] {
        &self.scale
    }

    pub fn zeros(&self) -> &[f64] {
        &self.zero
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    fn index(&self, channel: usize) -> usize {
        match self.granularity {
            Granularity::PerTensor => 0,
            Granularity::PerChannel { .. } => channel,
        }
    }

    pub fn scale(&self, channel: usize) -> f64 {
        self.scale[self.index(channel)]
    }

    /// Zero rounded to the nearest float.
    pub fn zero(&self, channel: usize) -> f64 {
        self.zero[self.index(channel)]
    }

    /// `(hi, lo)` with the exact zero equal to `hi + lo`.
    pub fn zero_parts(&self, channel: usize) -> (f64, f64) {
        let i = self.index(channel);
        (self.zero[i], self.zero_lo[i])
    }

    pub fn zero_lows(&self) -> &[f64] {
        &self.zero_lo
    }

    /// Exact `scale * code + zero`.
    pub fn dequantize_exact(&self, code: i64, channel: usize) -> Dyadic {
        let (hi, lo) = self.zero_parts(channel);
        let product = &Dyadic::from_f64(self.scale(channel)) * &Dyadic::from_i64(code);
        &(&product + &Dyadic::from_f64(hi)) + &Dyadic::from_f64(lo)
    }

    /// `scale * code + zero`, correctly rounded.
    pub fn dequantize(&self, code: i64, channel: usize) -> f64 {
        self.dequantize_exact(code, channel).to_f64()
    }
}

/// Tunable kernel hyperparameters.
///
/// A block computes a `b_m x b_n` output tile, stepping through the
/// reduction dimension `b_k` bits at a time. Its intermediate tile of
/// `p*b_m x q*b_n` plane-pair products is covered by fragments of
/// `w_m x w_n`; the fragments are grouped into `w_b` warp tiles of
/// `t_r x t_c` fragments each. Each fragment call consumes `w_k` bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KernelConfig {
    pub b_m: usize,
    pub b_n: usize,
    pub b_k: usize,
    pub t_r: usize,
    pub t_c: usize,
    pub w_b: usize,
    pub w_m: usize,
    pub w_n: usize,
    pub w_k: usize,
}

impl KernelConfig {
    pub const FIELD_NAMES: [&'static str; 9] =
        ["b_m", "b_n", "b_k", "t_r", "t_c", "w_b", "w_m", "w_n", "w_k"];

    fn fields(&self) -> [usize; 9] {
        [
            self.b_m, self.b_n, self.b_k, self.t_r, self.t_c, self.w_b, self.w_m, self.w_n,
            self.w_k,
        ]
    }

    /// Rows of fragments in the intermediate tile for activation width `p`.
    pub fn fragment_rows(&self, p: u32) -> usize {
        p as usize * self.b_m / self.w_m
    }

    /// Columns of fragments in the intermediate tile for weight width `q`.
    pub fn fragment_cols(&self, q: u32) -> usize {
        q as usize * self.b_n / self.w_n
    }

    /// Warp tiles laid out along the fragment rows.
    pub fn warp_rows(&self, p: u32) -> usize {
        self.fragment_rows(p) / self.t_r
    }

    pub fn warp_cols(&self, q: u32) -> usize {
        self.fragment_cols(q) / self.t_c
    }

    /// Checks the config against activation width `p` and weight width `q`.
    pub fn validate(&self, p: u32, q: u32) -> Result<()> {
        check_bits(p)?;
        check_bits(q)?;
        let invalid = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.fields().contains(&0) {
            return invalid(format!("{self}: every field must be positive"));
        }
        if self.w_k % WORD_BITS != 0 {
            return invalid(format!("w_k={} is not a multiple of {WORD_BITS}", self.w_k));
        }
        if self.b_k % self.w_k != 0 {
            return invalid(format!("b_k={} is not a multiple of w_k={}", self.b_k, self.w_k));
        }
        let rows = p as usize * self.b_m;
        let cols = q as usize * self.b_n;
        if rows % self.w_m != 0 {
            return invalid(format!("p*b_m={rows} is not divisible by w_m={}", self.w_m));
        }
        if cols % self.w_n != 0 {
            return invalid(format!("q*b_n={cols} is not divisible by w_n={}", self.w_n));
        }
        let fragments = (rows / self.w_m) * (cols / self.w_n);
        if fragments != self.w_b * self.t_r * self.t_c {
            return invalid(format!(
                "(q*b_n * p*b_m)/(w_m*w_n) = {fragments} != w_b*t_r*t_c = {}",
                self.w_b * self.t_r * self.t_c
            ));
        }
        if self.fragment_rows(p) % self.t_r != 0 || self.fragment_cols(q) % self.t_c != 0 {
            return invalid(format!(
                "{}x{} fragments cannot be tiled by {}x{} warp tiles",
                self.fragment_rows(p),
                self.fragment_cols(q),
                self.t_r,
                self.t_c
            ));
        }
        Ok(())
    }

    /// Bytes of block-local scratch: double-buffered staging, the 32-bit
    /// intermediate tile and the 64-bit output tile.
    pub fn scratch_bytes(&self, p: u32, q: u32) -> usize {
        let (p, q) = (p as usize, q as usize);
        2 * (p * self.b_m + q * self.b_n) * self.b_k / 8
            + 4 * p * self.b_m * q * self.b_n
            + 8 * self.b_m * self.b_n
    }

    /// A fixed fallback config that is valid for `(p, q)` and fits
    /// `budget` bytes of scratch whenever any lattice config does.
    pub fn default_for(p: u32, q: u32, budget: usize) -> KernelConfig {
        let mut b = 64;
        loop {
            let cfg = Self::square_default(p, q, b);
            if b == 8 || cfg.scratch_bytes(p, q) <= budget {
                return cfg;
            }
            b /= 2;
        }
    }

    fn square_default(p: u32, q: u32, b: usize) -> KernelConfig {
        let (w_m, w_n) = (8, 8);
        let frag_rows = p as usize * b / w_m;
        let frag_cols = q as usize * b / w_n;
        // 2x2 warp tiles when the fragment grid allows it.
        let warp_rows = if frag_rows % 2 == 0 { 2 } else { 1 };
        let warp_cols = if frag_cols % 2 == 0 { 2 } else { 1 };
        KernelConfig {
            b_m: b,
            b_n: b,
            b_k: 512,
            t_r: frag_rows / warp_rows,
            t_c: frag_cols / warp_cols,
            w_b: warp_rows * warp_cols,
            w_m,
            w_n,
            w_k: 128,
        }
    }
}

impl fmt::Display for KernelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, value)) in Self::FIELD_NAMES.iter().zip(self.fields()).enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{name}={value}")?;
        }
        Ok(())
    }
}

/// Parses the comma-separated `key=value` form produced by `Display`.
/// Every field must be present exactly once.
impl FromStr for KernelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut values: [Option<usize>; 9] = [None; 9];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config entry `{part}` lacks `=`")))?;
            let idx = Self::FIELD_NAMES
                .iter()
                .position(|n| *n == key.trim())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown config field `{key}`")))?;
            if values[idx].is_some() {
                return Err(Error::InvalidArgument(format!("config field `{key}` repeated")));
            }
            let v = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("config field `{key}`: bad value `{value}`")))?;
            values[idx] = Some(v);
        }
        let mut out = [0usize; 9];
        for (i, v) in values.iter().enumerate() {
            out[i] = v.ok_or_else(|| {
                Error::InvalidArgument(format!("config field `{}` missing", Self::FIELD_NAMES[i]))
            })?;
        }
        let [b_m, b_n, b_k, t_r, t_c, w_b, w_m, w_n, w_k] = out;
        Ok(KernelConfig {
            b_m,
            b_n,
            b_k,
            t_r,
            t_c,
            w_b,
            w_m,
            w_n,
            w_k,
        })
    }
}

/// Tuning-table key: problem shape and operand bit widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProblemKey {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub p: u32,
    pub q: u32,
}

impl fmt::Display for ProblemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{} p={} q={}", self.m, self.n, self.k, self.p, self.q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableEntry {
    pub config: KernelConfig,
    /// Measured ops/second (2*M*N*K per product).
    pub throughput: f64,
}

/// Persistent map from problem key to the best measured kernel config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TuningTable {
    entries: BTreeMap<ProblemKey, TableEntry>,
}

impl TuningTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &ProblemKey) -> Option<&TableEntry> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ProblemKey, &TableEntry)> {
        self.entries.iter()
    }

    /// Stores an entry after checking its config against the key's (p, q).
    pub fn insert(&mut self, key: ProblemKey, entry: TableEntry) -> Result<()> {
        entry.config.validate(key.p, key.q)?;
        self.entries.insert(key, entry);
        Ok(())
    }
}
