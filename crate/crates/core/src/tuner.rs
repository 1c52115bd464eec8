//! Kernel config search and lookup.
//!
//! `tune` times every config of a bounded power-of-two lattice on the real
//! problem and keeps the fastest in a [`TuningTable`]. `lookup` answers
//! queries for shapes that were never tuned from the nearest stored key.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitplane::decompose_pack;
use crate::engine::{Engine, PackedOperands};
use crate::error::{Error, Result};
use crate::types::{
    check_bits, Encoding, IntMatrix, KernelConfig, ProblemKey, TableEntry, TuningTable, WORD_BITS,
};

pub const DEFAULT_SCRATCH_BUDGET: usize = 128 * 1024;

const BLOCK_DIMS: [usize; 5] = [8, 16, 32, 64, 128];
const DEPTHS: [usize; 4] = [128, 256, 512, 1024];
const FRAGMENT_DIMS: [usize; 3] = [4, 8, 16];
const FRAGMENT_DEPTHS: [usize; 3] = [64, 128, 256];
const WARP_TILES: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    /// Bytes of block-local scratch one worker may use.
    pub scratch_budget: usize,
    /// Workers used while timing.
    pub max_workers: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            scratch_budget: DEFAULT_SCRATCH_BUDGET,
            max_workers: crate::engine::default_workers(),
        }
    }
}

/// Smallest lattice value that covers `extent`, clamped to the lattice.
fn cover(extent: usize, lattice: &[usize]) -> usize {
    lattice
        .iter()
        .copied()
        .find(|&v| v >= extent)
        .unwrap_or(lattice[lattice.len() - 1])
}

fn divisors(n: usize) -> impl Iterator<Item = usize> {
    (1..=n).filter(move |d| n % d == 0)
}

/// All lattice configs that are valid for `(p, q)` and fit the budget.
///
/// Block extents larger than needed to cover the problem (for example
/// `b_m = 128` when `m = 3`) are skipped: they only add padding.
pub fn enumerate_configs(
    m: usize,
    n: usize,
    k: usize,
    p: u32,
    q: u32,
    limits: &Limits,
) -> Result<Vec<KernelConfig>> {
    check_bits(p)?;
    check_bits(q)?;
    for (name, v) in [("m", m), ("n", n), ("k", k)] {
        if v == 0 {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
    }
    let max_bm = cover(m, &BLOCK_DIMS);
    let max_bn = cover(n, &BLOCK_DIMS);
    let max_bk = cover(k, &DEPTHS);
    let mut out = Vec::new();
    for &b_m in BLOCK_DIMS.iter().filter(|&&b| b <= max_bm) {
        for &b_n in BLOCK_DIMS.iter().filter(|&&b| b <= max_bn) {
            for &b_k in DEPTHS.iter().filter(|&&b| b <= max_bk) {
                for &w in &FRAGMENT_DIMS {
                    for &w_k in FRAGMENT_DEPTHS.iter().filter(|&&d| d % WORD_BITS == 0) {
                        push_tilings(&mut out, [b_m, b_n, b_k, w, w_k], p, q, limits);
                    }
                }
            }
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::NoFeasibleConfig {
            p,
            q,
            budget: limits.scratch_budget,
        });
    }
    Ok(out)
}

fn push_tilings(
    out: &mut Vec<KernelConfig>,
    [b_m, b_n, b_k, w, w_k]: [usize; 5],
    p: u32,
    q: u32,
    limits: &Limits,
) {
    let (rows, cols) = (p as usize * b_m, q as usize * b_n);
    if rows % w != 0 || cols % w != 0 || b_k % w_k != 0 {
        return;
    }
    let (frag_rows, frag_cols) = (rows / w, cols / w);
    for t_r in divisors(frag_rows) {
        for t_c in divisors(frag_cols) {
            let w_b = (frag_rows / t_r) * (frag_cols / t_c);
            if !WARP_TILES.contains(&w_b) {
                continue;
            }
            let cfg = KernelConfig {
                b_m,
                b_n,
                b_k,
                t_r,
                t_c,
                w_b,
                w_m: w,
                w_n: w,
                w_k,
            };
            if cfg.scratch_bytes(p, q) <= limits.scratch_budget && cfg.validate(p, q).is_ok() {
                out.push(cfg);
            }
        }
    }
}

/// A uniformly drawn config from [`enumerate_configs`].
pub fn random_config<R: rand::Rng + ?Sized>(
    rng: &mut R,
    key: &ProblemKey,
    limits: &Limits,
) -> Result<KernelConfig> {
    let all = enumerate_configs(key.m, key.n, key.k, key.p, key.q, limits)?;
    Ok(all[rng.gen_range(0..all.len())])
}

/// Median of `trials` timings of `run`, after an optional untimed warm-up.
pub fn median_time<F: FnMut() -> Result<()>>(
    trials: usize,
    warm_up: bool,
    mut run: F,
) -> Result<Duration> {
    if warm_up {
        run()?;
    }
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        run()?;
        times.push(start.elapsed());
    }
    times.sort();
    Ok(times[times.len() / 2])
}

/// Ops per second for one `m x n x k` product taking `elapsed`.
pub fn throughput(m: usize, n: usize, k: usize, elapsed: Duration) -> f64 {
    2.0 * m as f64 * n as f64 * k as f64 / elapsed.as_secs_f64().max(1e-12)
}

/// Fixed-seed random operands for a key.
pub fn problem_operands(key: &ProblemKey, seed: u64) -> Result<(IntMatrix, IntMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = IntMatrix::random(&mut rng, key.m, key.k, key.p, Encoding::BipolarInt)?;
    let w = IntMatrix::random(&mut rng, key.n, key.k, key.q, Encoding::BipolarInt)?;
    Ok((x, w))
}

/// Every measurement of one tuning session.
#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub key: ProblemKey,
    pub best: TableEntry,
    pub default: TableEntry,
    pub measured: Vec<TableEntry>,
}

/// Times every enumerated config (plus the default config) on fixed-seed
/// operands and stores the fastest in `table`.
///
/// Weights are packed once up front; activation packing is timed along
/// with the product.
pub fn tune(
    key: ProblemKey,
    trials: usize,
    limits: &Limits,
    table: &mut TuningTable,
) -> Result<TuneOutcome> {
    if trials < 3 {
        return Err(Error::InvalidArgument(format!("trials must be at least 3, got {trials}")));
    }
    let mut configs = enumerate_configs(key.m, key.n, key.k, key.p, key.q, limits)?;
    let default_cfg = KernelConfig::default_for(key.p, key.q, limits.scratch_budget);
    if !configs.contains(&default_cfg) {
        configs.push(default_cfg);
    }
    let (x, w) = problem_operands(&key, 0x5eed)?;
    let packed_w = decompose_pack(&w, false)?;
    let engine = Engine::new(limits.max_workers);

    let mut measured = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.into_iter().enumerate() {
        // one warm-up for the whole session; later configs find the
        // operands already in cache
        let elapsed = median_time(trials, i == 0, || {
            let packed_x = decompose_pack(&x, false)?;
            let ops = PackedOperands {
                x: &packed_x,
                w: &packed_w,
            };
            engine.gemm_packed(&ops, &cfg).map(|_| ())
        })?;
        measured.push(TableEntry {
            config: cfg,
            throughput: throughput(key.m, key.n, key.k, elapsed),
        });
    }
    let best = *measured
        .iter()
        .max_by(|a, b| a.throughput.total_cmp(&b.throughput))
        .expect("at least one config");
    let default = *measured
        .iter()
        .find(|e| e.config == default_cfg)
        .expect("default config measured");
    table.insert(key, best)?;
    Ok(TuneOutcome {
        key,
        best,
        default,
        measured,
    })
}

/// `|log2 m - log2 m'| + |log2 n - log2 n'| + |log2 k - log2 k'|`.
pub fn key_distance(a: &ProblemKey, b: &ProblemKey) -> f64 {
    let d = |u: usize, v: usize| ((u as f64).log2() - (v as f64).log2()).abs();
    d(a.m, b.m) + d(a.n, b.n) + d(a.k, b.k)
}

/// The stored entry for `key`, or the one nearest to it. Candidates with
/// the same bit widths are preferred; ties go to the higher throughput,
/// then the smaller key.
pub fn lookup(key: &ProblemKey, table: &TuningTable) -> Result<(ProblemKey, TableEntry)> {
    if let Some(entry) = table.get(key) {
        return Ok((*key, *entry));
    }
    let same_bits = |k: &ProblemKey| k.p == key.p && k.q == key.q;
    let any_same = table.entries().any(|(k, _)| same_bits(k));
    table
        .entries()
        .filter(|(k, _)| !any_same || same_bits(k))
        .min_by(|(ka, ea), (kb, eb)| {
            key_distance(key, ka)
                .total_cmp(&key_distance(key, kb))
                .then(eb.throughput.total_cmp(&ea.throughput))
                .then(ka.cmp(kb))
        })
        .map(|(k, e)| (*k, *e))
        .ok_or(Error::EmptyTable)
}
