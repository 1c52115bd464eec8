//! Benchmark suites at desk scale, a naive 32-bit baseline, and a small
//! quantized-layer demo.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bipolar::{rewrite_quant_params, signed_to_bipolar};
use crate::bitplane::decompose_pack;
use crate::engine::{default_workers, Engine, GemmProblem, PackedOperands};
use crate::error::{Error, Result};
use crate::exact::Dyadic;
use crate::oracle::oracle_matmul;
use crate::tuner::{lookup, median_time, problem_operands, throughput, tune, Limits};
use crate::types::{
    check_bits, Encoding, IntMatrix, KernelConfig, OutputMatrix, ProblemKey, QuantParams,
    TuningTable,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Suite {
    General,
    Prefill,
    Decode,
    Custom(Vec<(usize, usize, usize)>),
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::General => "general",
            Suite::Prefill => "prefill",
            Suite::Decode => "decode",
            Suite::Custom(_) => "custom",
        }
    }

    /// `(m, n, k)` shapes; those with a 14336 extent only when `large`.
    pub fn shapes(&self, large: bool) -> Vec<(usize, usize, usize)> {
        let all = match self {
            Suite::General => vec![(64, 1024, 1024), (64, 2048, 2048), (64, 4096, 4096)],
            Suite::Prefill => vec![(64, 1024, 4096), (64, 14336, 4096), (64, 4096, 14336)],
            Suite::Decode => vec![(1, 1024, 4096), (1, 14336, 4096), (1, 4096, 14336)],
            Suite::Custom(list) => return list.clone(),
        };
        all.into_iter()
            .filter(|&(_, n, k)| large || (n < 14336 && k < 14336))
            .collect()
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Suite::General),
            "prefill" => Ok(Suite::Prefill),
            "decode" => Ok(Suite::Decode),
            _ => Err(Error::InvalidArgument(format!(
                "unknown suite `{s}` (expected general, prefill or decode)"
            ))),
        }
    }
}

/// Parses a precision list such as `2:1,4:4` or `w1a2,w2a2`
/// (activation bits `p`, weight bits `q`).
pub fn parse_precisions(list: &str) -> Result<Vec<(u32, u32)>> {
    let bad = |item: &str| Error::InvalidArgument(format!("bad precision `{item}`"));
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (p, q) = if let Some((p, q)) = item.split_once(':') {
            (p.parse().map_err(|_| bad(item))?, q.parse().map_err(|_| bad(item))?)
        } else {
            let rest = item.strip_prefix('w').ok_or_else(|| bad(item))?;
            let (q, p) = rest.split_once('a').ok_or_else(|| bad(item))?;
            (p.parse().map_err(|_| bad(item))?, q.parse().map_err(|_| bad(item))?)
        };
        check_bits(p)?;
        check_bits(q)?;
        out.push((p, q));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty precision list".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub trials: usize,
    pub workers: usize,
    pub large: bool,
    pub verify: bool,
    /// Tune shapes missing from the table instead of borrowing the
    /// nearest entry.
    pub tune_missing: bool,
    pub limits: Limits,
}

impl Default for BenchOptions {
    fn default() -> Self {
        let workers = default_workers();
        BenchOptions {
            trials: 5,
            workers,
            large: false,
            verify: false,
            tune_missing: false,
            limits: Limits {
                max_workers: workers,
                ..Limits::default()
            },
        }
    }
}

/// Where a row's kernel config came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigSource {
    Exact,
    Nearest(ProblemKey),
    Tuned,
    Default,
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub suite: &'static str,
    pub key: ProblemKey,
    pub config: KernelConfig,
    pub source: ConfigSource,
    pub engine: Duration,
    pub baseline: Duration,
    pub verified: Option<bool>,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.baseline.as_secs_f64() / self.engine.as_secs_f64().max(1e-12)
    }

    /// Engine throughput in Gops/s.
    pub fn gops(&self) -> f64 {
        throughput(self.key.m, self.key.n, self.key.k, self.engine) / 1e9
    }

    pub fn shape(&self) -> String {
        format!("{}/{}/{}", self.key.m, self.key.n, self.key.k)
    }

    /// `suite shape p q engine_us baseline_us speedup gops`
    pub fn machine_line(&self) -> String {
        format!(
            "{} {} {} {} {:.1} {:.1} {:.3} {:.3}",
            self.suite,
            self.shape(),
            self.key.p,
            self.key.q,
            self.engine.as_secs_f64() * 1e6,
            self.baseline.as_secs_f64() * 1e6,
            self.speedup(),
            self.gops()
        )
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub workers: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn all_verified(&self) -> bool {
        self.rows.iter().all(|r| r.verified != Some(false))
    }

    pub fn machine_lines(&self) -> String {
        self.rows.iter().map(|r| r.machine_line() + "\n").collect()
    }

    /// Aligned text table.
    pub fn table(&self) -> String {
        let mut out = format!("workers: {}\n", self.workers);
        let _ = writeln!(
            out,
            "{:<8} {:>16} {:>2} {:>2} {:>12} {:>12} {:>8} {:>8} {:>8}",
            "suite", "shape", "p", "q", "engine_us", "naive_us", "speedup", "gops", "check"
        );
        for r in &self.rows {
            let check = match r.verified {
                Some(true) => "ok",
                Some(false) => "FAIL",
                None => "-",
            };
            let _ = writeln!(
                out,
                "{:<8} {:>16} {:>2} {:>2} {:>12.1} {:>12.1} {:>8.2} {:>8.2} {:>8}",
                r.suite,
                r.shape(),
                r.key.p,
                r.key.q,
                r.engine.as_secs_f64() * 1e6,
                r.baseline.as_secs_f64() * 1e6,
                r.speedup(),
                r.gops(),
                check
            );
        }
        out
    }
}

/// Single-threaded 32-bit triple loop over unpacked values; `w` is N x K.
pub fn naive_int32(x: &[i32], w: &[i32], m: usize, n: usize, k: usize) -> Vec<i32> {
    let mut out = vec![0i32; m * n];
    for r in 0..m {
        let xr = &x[r * k..(r + 1) * k];
        for c in 0..n {
            let wc = &w[c * k..(c + 1) * k];
            let mut sum = 0i32;
            for i in 0..k {
                sum = sum.wrapping_add(xr[i].wrapping_mul(wc[i]));
            }
            out[r * n + c] = sum;
        }
    }
    out
}

fn widen(m: &IntMatrix) -> Vec<i32> {
    m.data().iter().map(|&v| v as i32).collect()
}

/// Picks the config for `key`: exact table hit, tuning (when allowed),
/// the nearest entry, or the default config for an empty table.
pub fn resolve_config(
    key: &ProblemKey,
    table: &mut TuningTable,
    opts: &BenchOptions,
) -> Result<(KernelConfig, ConfigSource)> {
    if let Some(entry) = table.get(key) {
        return Ok((entry.config, ConfigSource::Exact));
    }
    if opts.tune_missing {
        let outcome = tune(*key, opts.trials.max(3), &opts.limits, table)?;
        return Ok((outcome.best.config, ConfigSource::Tuned));
    }
    match lookup(key, table) {
        Ok((near, entry)) => Ok((entry.config, ConfigSource::Nearest(near))),
        Err(Error::EmptyTable) => Ok((
            KernelConfig::default_for(key.p, key.q, opts.limits.scratch_budget),
            ConfigSource::Default,
        )),
        Err(e) => Err(e),
    }
}

/// Times the engine and the naive baseline on one problem.
pub fn bench_problem(
    suite: &'static str,
    key: ProblemKey,
    table: &mut TuningTable,
    opts: &BenchOptions,
) -> Result<BenchRow> {
    let (config, source) = resolve_config(&key, table, opts)?;
    let (x, w) = problem_operands(&key, 0xbe7c)?;
    let engine = Engine::new(opts.workers);
    let packed_w = decompose_pack(&w, false)?;
    let run = || {
        let packed_x = decompose_pack(&x, false)?;
        engine.gemm_packed(
            &PackedOperands {
                x: &packed_x,
                w: &packed_w,
            },
            &config,
        )
    };
    let verified = if opts.verify {
        Some(run()? == oracle_matmul(&x, &w)?)
    } else {
        None
    };
    let engine_time = median_time(opts.trials, true, || run().map(|y| drop(black_box(y))))?;
    let (xs, ws) = (widen(&x), widen(&w));
    let baseline = median_time(opts.trials, true, || {
        black_box(naive_int32(black_box(&xs), black_box(&ws), key.m, key.n, key.k));
        Ok(())
    })?;
    Ok(BenchRow {
        suite,
        key,
        config,
        source,
        engine: engine_time,
        baseline,
        verified,
    })
}

/// One row per (shape, precision) pair of the suite.
pub fn run_suite(
    suite: &Suite,
    precisions: &[(u32, u32)],
    opts: &BenchOptions,
    table: &mut TuningTable,
) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for (m, n, k) in suite.shapes(opts.large) {
        for &(p, q) in precisions {
            let key = ProblemKey { m, n, k, p, q };
            rows.push(bench_problem(suite.name(), key, table, opts)?);
        }
    }
    Ok(BenchReport {
        workers: opts.workers,
        rows,
    })
}

/// Result of the quantized-layer demo.
#[derive(Clone, Debug)]
pub struct DemoReport {
    pub rows: usize,
    pub cols: usize,
    pub p: u32,
    pub q: u32,
    /// Dequantized output through signed codes and the reference product.
    pub signed: OutputMatrix<f64>,
    /// Dequantized output through bipolar codes and the engine.
    pub bipolar: OutputMatrix<f64>,
    /// Float product of the unquantized inputs.
    pub reference: OutputMatrix<f64>,
    pub max_abs_error: f64,
}

impl DemoReport {
    pub fn paths_identical(&self) -> bool {
        self.signed.rows == self.bipolar.rows
            && self
                .signed
                .data
                .iter()
                .zip(&self.bipolar.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Min-max quantization of `values` to `bits`-bit signed codes.
fn quantize_signed(values: &[f64], bits: u32) -> (Vec<i16>, f64, f64) {
    let (lo_code, hi_code) = Encoding::SignedInt.range(bits);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let levels = (hi_code - lo_code) as f64;
    let scale = if hi > lo { (hi - lo) / levels } else { 1.0 };
    let zero = lo - scale * lo_code as f64;
    let codes = values
        .iter()
        .map(|&v| ((v - zero) / scale).round().clamp(lo_code as f64, hi_code as f64) as i16)
        .collect();
    (codes, scale, zero)
}

/// `sum_t (a_s*x_t + a_z)(b_s*w_t + b_z)`, expanded over integer sums and
/// evaluated exactly.
struct ExactAffineDot {
    a_scale: Dyadic,
    a_zero: Dyadic,
    b_scale: Dyadic,
    b_zero: Dyadic,
}

impl ExactAffineDot {
    fn new(a: &QuantParams, a_ch: usize, b: &QuantParams, b_ch: usize) -> Self {
        let zero = |p: &QuantParams, ch: usize| {
            let (hi, lo) = p.zero_parts(ch);
            &Dyadic::from_f64(hi) + &Dyadic::from_f64(lo)
        };
        ExactAffineDot {
            a_scale: Dyadic::from_f64(a.scale(a_ch)),
            a_zero: zero(a, a_ch),
            b_scale: Dyadic::from_f64(b.scale(b_ch)),
            b_zero: zero(b, b_ch),
        }
    }

    fn eval(&self, dot: i64, sum_x: i64, sum_w: i64, k: usize) -> f64 {
        let ss = &(&self.a_scale * &self.b_scale) * &Dyadic::from_i64(dot);
        let sz = &(&self.a_scale * &self.b_zero) * &Dyadic::from_i64(sum_x);
        let zs = &(&self.a_zero * &self.b_scale) * &Dyadic::from_i64(sum_w);
        let zz = &(&self.a_zero * &self.b_zero) * &Dyadic::from_i64(k as i64);
        (&(&ss + &sz) + &(&zs + &zz)).to_f64()
    }
}

fn dequantized_product(
    x: &IntMatrix,
    xp: &QuantParams,
    w: &IntMatrix,
    wp: &QuantParams,
    dots: &OutputMatrix<i64>,
) -> OutputMatrix<f64> {
    let k = x.cols();
    let row_sums: Vec<i64> = (0..x.rows()).map(|r| x.row(r).iter().map(|&v| v as i64).sum()).collect();
    let col_sums: Vec<i64> = (0..w.rows()).map(|c| w.row(c).iter().map(|&v| v as i64).sum()).collect();
    let mut data = Vec::with_capacity(x.rows() * w.rows());
    for r in 0..x.rows() {
        for c in 0..w.rows() {
            let f = ExactAffineDot::new(xp, r, wp, c);
            data.push(f.eval(dots.get(r, c), row_sums[r], col_sums[c], k));
        }
    }
    OutputMatrix {
        rows: x.rows(),
        cols: w.rows(),
        data,
    }
}

/// Quantizes a float layer `Y = A * B^T` (A: rows x cols activations, B:
/// rows x cols weights), runs it through signed codes and through
/// bipolar codes on the engine, and dequantizes both exactly.
pub fn demo_quant_layer(rows: usize, cols: usize, p: u32, q: u32, seed: u64) -> Result<DemoReport> {
    check_bits(p)?;
    check_bits(q)?;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("demo needs at least one row and column".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wts: Vec<f64> = (0..rows * cols)
        .map(|i| {
            // smooth rows with a per-channel offset and gain
            let ch = (i / cols) as f64;
            (0.5 + ch * 0.01) * rng.gen_range(-1.0..1.0) + 0.05 * ch.sin()
        })
        .collect();

    let (x_codes, xs, xz) = quantize_signed(&act, p);
    let x = IntMatrix::new(rows, cols, p, Encoding::SignedInt, x_codes)?;
    let x_params = QuantParams::per_tensor(xs, xz)?;
    let mut w_codes = Vec::with_capacity(rows * cols);
    let (mut w_scales, mut w_zeros) = (Vec::new(), Vec::new());
    for ch in wts.chunks(cols) {
        let (codes, s, z) = quantize_signed(ch, q);
        w_codes.extend(codes);
        w_scales.push(s);
        w_zeros.push(z);
    }
    let w = IntMatrix::new(rows, cols, q, Encoding::SignedInt, w_codes)?;
    let w_params = QuantParams::per_channel(0, w_scales, w_zeros)?;

    let signed_dots = oracle_matmul(&x, &w)?;
    let signed = dequantized_product(&x, &x_params, &w, &w_params, &signed_dots);

    let (xb, wb) = (signed_to_bipolar(&x)?, signed_to_bipolar(&w)?);
    let (xb_params, wb_params) = (rewrite_quant_params(&x_params), rewrite_quant_params(&w_params));
    let config = KernelConfig::default_for(p, q, crate::tuner::DEFAULT_SCRATCH_BUDGET);
    let problem = GemmProblem::new(&xb, &wb, config)?;
    let bipolar_dots = Engine::default().gemm_wide(&problem)?;
    let bipolar = dequantized_product(&xb, &xb_params, &wb, &wb_params, &bipolar_dots);

    let mut reference = vec![0.0; rows * rows];
    for r in 0..rows {
        for c in 0..rows {
            reference[r * rows + c] = (0..cols).map(|t| act[r * cols + t] * wts[c * cols + t]).sum();
        }
    }
    let max_abs_error = reference
        .iter()
        .zip(&bipolar.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(DemoReport {
        rows,
        cols,
        p,
        q,
        signed,
        bipolar,
        reference: OutputMatrix {
            rows,
            cols: rows,
            data: reference,
        },
        max_abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_shapes() {
        assert_eq!(Suite::General.shapes(false).len(), 3);
        assert_eq!(Suite::Prefill.shapes(false), vec![(64, 1024, 4096)]);
        assert_eq!(Suite::Prefill.shapes(true).len(), 3);
        assert!(Suite::Decode.shapes(true).iter().all(|s| s.0 == 1));
        assert_eq!("decode".parse::<Suite>().unwrap(), Suite::Decode);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn precision_lists() {
        assert_eq!(parse_precisions("2:1, 4:4").unwrap(), vec![(2, 1), (4, 4)]);
        assert_eq!(parse_precisions("w1a2,w2a2").unwrap(), vec![(2, 1), (2, 2)]);
        assert!(parse_precisions("9:1").is_err());
        assert!(parse_precisions("x").is_err());
        assert!(parse_precisions("").is_err());
    }

    #[test]
    fn naive_baseline_matches_oracle() {
        let key = ProblemKey { m: 5, n: 7, k: 33, p: 3, q: 2 };
        let (x, w) = problem_operands(&key, 1).unwrap();
        let got = naive_int32(&widen(&x), &widen(&w), 5, 7, 33);
        let expect = oracle_matmul(&x, &w).unwrap();
        assert!(got.iter().zip(&expect.data).all(|(a, b)| *a as i64 == *b));
    }

    #[test]
    fn custom_suite_rows_and_verification() {
        let opts = BenchOptions {
            trials: 3,
            workers: 2,
            verify: true,
            ..BenchOptions::default()
        };
        let suite = Suite::Custom(vec![(3, 40, 100), (1, 17, 300)]);
        let mut table = TuningTable::new();
        let report = run_suite(&suite, &[(2, 1), (1, 3)], &opts, &mut table).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.all_verified());
        assert!(report.rows.iter().all(|r| r.source == ConfigSource::Default));
        let lines = report.machine_lines();
        let first = lines.lines().next().unwrap();
        assert_eq!(first.split(' ').count(), 8);
        assert!(first.starts_with("custom 3/40/100 2 1 "));
        assert!(report.table().contains("speedup"));
    }

    #[test]
    fn demo_paths_bit_identical() {
        for (p, q) in [(8, 8), (1, 1), (3, 5)] {
            let report = demo_quant_layer(6, 70, p, q, 3).unwrap();
            assert!(report.paths_identical(), "p={p} q={q}");
            assert!(report.max_abs_error.is_finite());
        }
    }

    #[test]
    fn demo_eight_bit_is_close() {
        let report = demo_quant_layer(8, 256, 8, 8, 4).unwrap();
        let scale = report.reference.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(report.max_abs_error < 0.05 * scale.max(1.0));
    }

    #[test]
    fn demo_is_deterministic() {
        let a = demo_quant_layer(4, 33, 2, 3, 9).unwrap();
        let b = demo_quant_layer(4, 33, 2, 3, 9).unwrap();
        assert_eq!(a.bipolar, b.bipolar);
    }
}
