//! Tiled arbitrary-precision GEMM.
//!
//! The output is cut into `b_m x b_n` blocks, pulled from a shared queue
//! by a pool of workers. For each block a worker walks the reduction
//! dimension in `b_k`-bit steps: it stages the packed activation and
//! weight slices of every plane into a block-local double buffer, runs
//! fragment MMAs over every plane pair into a `p*b_m x q*b_n` intermediate
//! tile, then folds that tile into the block's 64-bit output by
//! shift-and-add. Only the finished tile reaches the global output.
//!
//! Intermediate layout: plane pair `(i, j)` occupies row band `i`
//! (`b_m` rows) and column band `j` (`b_n` columns).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use crate::bitplane::{decompose_pack, PackedPlanes};
use crate::error::{Error, Result};
use crate::microkernel::{mma, Popcount, TileOperands};
use crate::types::{validate_matrix, Encoding, IntMatrix, KernelConfig, OutputMatrix, Word, WORD_BITS};

/// A validated product `x * w^T` of bipolar operands.
#[derive(Clone, Copy, Debug)]
pub struct GemmProblem<'a> {
    x: &'a IntMatrix,
    w: &'a IntMatrix,
    config: KernelConfig,
}

impl<'a> GemmProblem<'a> {
    /// `x` is M x K with `p`-bit codes; `w` is N x K with `q`-bit codes.
    pub fn new(x: &'a IntMatrix, w: &'a IntMatrix, config: KernelConfig) -> Result<Self> {
        for m in [x, w] {
            if m.encoding() != Encoding::BipolarInt {
                return Err(Error::EncodingMismatch {
                    expected: Encoding::BipolarInt,
                    found: m.encoding(),
                });
            }
            validate_matrix(m)?;
        }
        if x.cols() != w.cols() {
            return Err(Error::ShapeMismatch(format!(
                "x has K={} but w has K={}",
                x.cols(),
                w.cols()
            )));
        }
        config.validate(x.bits(), w.bits())?;
        Ok(GemmProblem { x, w, config })
    }

    pub fn m(&self) -> usize {
        self.x.rows()
    }

    pub fn n(&self) -> usize {
        self.w.rows()
    }

    pub fn k(&self) -> usize {
        self.x.cols()
    }

    pub fn p(&self) -> u32 {
        self.x.bits()
    }

    pub fn q(&self) -> u32 {
        self.w.bits()
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn x(&self) -> &IntMatrix {
        self.x
    }

    pub fn w(&self) -> &IntMatrix {
        self.w
    }
}

/// Whether the product fits 32-bit outputs: `K*(2^p-1)*(2^q-1) < 2^31`.
pub fn fits_i32(k: usize, p: u32, q: u32) -> bool {
    let bound = k as u128 * ((1u128 << p) - 1) * ((1u128 << q) - 1);
    bound < 1u128 << 31
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockStats {
    pub depth_steps: usize,
    pub staged_activation_words: usize,
    pub staged_weight_words: usize,
    pub fragment_calls: usize,
}

/// Block-local working memory, owned by one worker.
pub struct BlockScratch {
    config: KernelConfig,
    p: u32,
    q: u32,
    stride: usize,
    stage_a: [Vec<Word>; 2],
    stage_b: [Vec<Word>; 2],
    intermediate: Vec<i32>,
    output: Vec<i64>,
    frag_rows: Vec<Vec<u32>>,
    frag_cols: Vec<Vec<u32>>,
    stats: BlockStats,
}

impl BlockScratch {
    pub fn new(config: &KernelConfig, p: u32, q: u32) -> Self {
        let stride = config.b_k / WORD_BITS;
        let a_rows = p as usize * config.b_m;
        let b_rows = q as usize * config.b_n;
        BlockScratch {
            config: *config,
            p,
            q,
            stride,
            stage_a: [vec![0; a_rows * stride], vec![0; a_rows * stride]],
            stage_b: [vec![0; b_rows * stride], vec![0; b_rows * stride]],
            intermediate: vec![0; a_rows * b_rows],
            output: vec![0; config.b_m * config.b_n],
            frag_rows: Vec::new(),
            frag_cols: Vec::new(),
            stats: BlockStats::default(),
        }
    }

    pub fn stats(&self) -> BlockStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = BlockStats::default();
    }

    /// Both staging halves have identical sizes.
    pub fn staging_words(&self) -> (usize, usize) {
        (self.stage_a[0].len(), self.stage_b[0].len())
    }

    /// Lists, per fragment row (column), the intermediate rows (columns)
    /// that map to live output rows (columns).
    fn set_live_extent(&mut self, live_rows: usize, live_cols: usize) {
        let cfg = self.config;
        self.frag_rows = live_lists(cfg.fragment_rows(self.p), cfg.w_m, cfg.b_m, live_rows);
        self.frag_cols = live_lists(cfg.fragment_cols(self.q), cfg.w_n, cfg.b_n, live_cols);
    }
}

fn live_lists(fragments: usize, width: usize, band: usize, live: usize) -> Vec<Vec<u32>> {
    (0..fragments)
        .map(|f| {
            (f * width..(f + 1) * width)
                .filter(|idx| idx % band < live)
                .map(|idx| idx as u32)
                .collect()
        })
        .collect()
}

/// Position of a block in the grid of output blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockCoord {
    pub row: usize,
    pub col: usize,
}

/// Packed operands of one product.
pub struct PackedOperands<'a> {
    pub x: &'a PackedPlanes,
    pub w: &'a PackedPlanes,
}

impl PackedOperands<'_> {
    fn check(&self) -> Result<()> {
        if self.x.cols() != self.w.cols() {
            return Err(Error::ShapeMismatch(format!(
                "x has K={} but w has K={}",
                self.x.cols(),
                self.w.cols()
            )));
        }
        Ok(())
    }
}

/// Computes one output block into `scratch.output` and returns its live
/// extent `(rows, cols)`.
fn compute_block(
    coord: BlockCoord,
    ops: &PackedOperands<'_>,
    scratch: &mut BlockScratch,
    popcount: Popcount,
) -> (usize, usize) {
    let cfg = scratch.config;
    let (p, q) = (scratch.p as usize, scratch.q as usize);
    let (m, n, k) = (ops.x.rows(), ops.w.rows(), ops.x.cols());
    let row0 = coord.row * cfg.b_m;
    let col0 = coord.col * cfg.b_n;
    let live_rows = cfg.b_m.min(m - row0);
    let live_cols = cfg.b_n.min(n - col0);
    scratch.set_live_extent(live_rows, live_cols);
    scratch.output.fill(0);

    let chunk_words = cfg.w_k / WORD_BITS;
    let steps = k.div_ceil(cfg.b_k).max(1);
    let stride = scratch.stride;
    let inter_stride = q * cfg.b_n;

    // Depth step t covers logical bits [t*b_k, t*b_k + live_bits).
    let step_shape = |t: usize| {
        let live_bits = cfg.b_k.min(k.saturating_sub(t * cfg.b_k));
        let chunks = live_bits.div_ceil(cfg.w_k);
        (live_bits, chunks)
    };

    let stage = |scratch: &mut BlockScratch, t: usize| {
        let (_, chunks) = step_shape(t);
        let words = chunks * chunk_words;
        let src_word0 = t * stride;
        let slot = t % 2;
        let mut staged_a = 0;
        for i in 0..p {
            for r in 0..live_rows {
                let dst = &mut scratch.stage_a[slot][(i * cfg.b_m + r) * stride..][..words];
                staged_a += copy_slice(dst, ops.x.row(i, row0 + r), src_word0);
            }
        }
        let mut staged_b = 0;
        for j in 0..q {
            for c in 0..live_cols {
                let dst = &mut scratch.stage_b[slot][(j * cfg.b_n + c) * stride..][..words];
                staged_b += copy_slice(dst, ops.w.row(j, col0 + c), src_word0);
            }
        }
        scratch.stats.staged_activation_words += staged_a;
        scratch.stats.staged_weight_words += staged_b;
    };

    stage(scratch, 0);
    for t in 0..steps {
        if t + 1 < steps {
            stage(scratch, t + 1);
        }
        let (live_bits, chunks) = step_shape(t);
        let slot = t % 2;
        scratch.intermediate.fill(0);
        let warp_cols = cfg.warp_cols(scratch.q);
        let BlockScratch {
            stage_a,
            stage_b,
            intermediate,
            frag_rows,
            frag_cols,
            stats,
            ..
        } = &mut *scratch;
        for warp in 0..cfg.w_b {
            let (wr, wc) = (warp / warp_cols, warp % warp_cols);
            // one weight fragment against every activation fragment of the
            // warp tile before moving on
            for fc in wc * cfg.t_c..(wc + 1) * cfg.t_c {
                let cols = &frag_cols[fc];
                if cols.is_empty() {
                    continue;
                }
                for fr in wr * cfg.t_r..(wr + 1) * cfg.t_r {
                    let rows = &frag_rows[fr];
                    if rows.is_empty() {
                        continue;
                    }
                    for chunk in 0..chunks {
                        let operands = TileOperands {
                            a: &stage_a[slot],
                            b: &stage_b[slot],
                            stride,
                            word_lo: chunk * chunk_words,
                            words: chunk_words,
                        };
                        mma(operands, rows, cols, intermediate, inter_stride, popcount);
                        stats.fragment_calls += 1;
                    }
                }
            }
        }
        // zero-padded positions matched in every pair and each added +1
        let pad = (chunks * cfg.w_k - live_bits) as i32;
        recover_into(
            &scratch.intermediate,
            RecoverShape {
                p,
                q,
                b_m: cfg.b_m,
                b_n: cfg.b_n,
                live_rows,
                live_cols,
                pad,
            },
            &mut scratch.output,
        );
        scratch.stats.depth_steps += 1;
    }
    (live_rows, live_cols)
}

/// Copies `dst.len()` words of `src` starting at `from`, zero-filling past
/// the end of `src`. Returns the number of words written.
fn copy_slice(dst: &mut [Word], src: &[Word], from: usize) -> usize {
    let avail = src.len().saturating_sub(from).min(dst.len());
    dst[..avail].copy_from_slice(&src[from..from + avail]);
    dst[avail..].fill(0);
    dst.len()
}

#[derive(Clone, Copy, Debug)]
struct RecoverShape {
    p: usize,
    q: usize,
    b_m: usize,
    b_n: usize,
    live_rows: usize,
    live_cols: usize,
    pad: i32,
}

fn recover_into(intermediate: &[i32], s: RecoverShape, out: &mut [i64]) {
    let stride = s.q * s.b_n;
    for i in 0..s.p {
        for j in 0..s.q {
            let shift = i + j;
            for r in 0..s.live_rows {
                let src = &intermediate[(i * s.b_m + r) * stride + j * s.b_n..][..s.live_cols];
                let dst = &mut out[r * s.b_n..][..s.live_cols];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += ((v - s.pad) as i64) << shift;
                }
            }
        }
    }
}

/// Folds a `p*b_m x q*b_n` tile of plane-pair products into a `b_m x b_n`
/// tile: `out[r][c] = sum_{i,j} tile[i*b_m + r][j*b_n + c] << (i + j)`.
pub fn recover_tile(intermediate: &[i32], p: u32, q: u32, b_m: usize, b_n: usize) -> Vec<i64> {
    let (p, q) = (p as usize, q as usize);
    assert_eq!(intermediate.len(), p * b_m * q * b_n, "intermediate tile size");
    let mut out = vec![0i64; b_m * b_n];
    let shape = RecoverShape {
        p,
        q,
        b_m,
        b_n,
        live_rows: b_m,
        live_cols: b_n,
        pad: 0,
    };
    recover_into(intermediate, shape, &mut out);
    out
}

/// Runs one block and returns its live region as a matrix.
pub fn run_block(
    coord: BlockCoord,
    ops: &PackedOperands<'_>,
    scratch: &mut BlockScratch,
) -> Result<OutputMatrix<i64>> {
    ops.check()?;
    if ops.x.bits() != scratch.p || ops.w.bits() != scratch.q {
        return Err(Error::ConfigInvalid(format!(
            "scratch sized for p={}, q={} but operands have p={}, q={}",
            scratch.p,
            scratch.q,
            ops.x.bits(),
            ops.w.bits()
        )));
    }
    let cfg = scratch.config;
    if coord.row * cfg.b_m >= ops.x.rows() || coord.col * cfg.b_n >= ops.w.rows() {
        return Err(Error::InvalidArgument(format!("block {coord:?} is outside the output")));
    }
    let (rows, cols) = compute_block(coord, ops, scratch, Popcount::Auto);
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        data.extend_from_slice(&scratch.output[r * cfg.b_n..][..cols]);
    }
    Ok(OutputMatrix { rows, cols, data })
}

/// GEMM driver with a fixed worker count.
#[derive(Clone, Copy, Debug)]
pub struct Engine {
    workers: usize,
    popcount: Popcount,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(default_workers())
    }
}

pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

impl Engine {
    pub fn new(workers: usize) -> Self {
        Engine {
            workers: workers.max(1),
            popcount: Popcount::Auto,
        }
    }

    pub fn with_popcount(mut self, popcount: Popcount) -> Self {
        self.popcount = popcount;
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// 32-bit product; fails with `OverflowRisk` when the worst case does
    /// not fit.
    pub fn gemm(&self, problem: &GemmProblem<'_>) -> Result<OutputMatrix<i32>> {
        if !fits_i32(problem.k(), problem.p(), problem.q()) {
            return Err(Error::OverflowRisk {
                k: problem.k(),
                p: problem.p(),
                q: problem.q(),
            });
        }
        let wide = self.gemm_wide(problem)?;
        narrow(wide)
    }

    /// 64-bit product.
    pub fn gemm_wide(&self, problem: &GemmProblem<'_>) -> Result<OutputMatrix<i64>> {
        let x = decompose_pack(problem.x, false)?;
        let w = decompose_pack(problem.w, false)?;
        self.gemm_packed(&PackedOperands { x: &x, w: &w }, problem.config())
    }

    /// Product of pre-packed operands (both K-contiguous).
    pub fn gemm_packed(
        &self,
        ops: &PackedOperands<'_>,
        config: &KernelConfig,
    ) -> Result<OutputMatrix<i64>> {
        ops.check()?;
        let (p, q) = (ops.x.bits(), ops.w.bits());
        config.validate(p, q)?;
        let (m, n) = (ops.x.rows(), ops.w.rows());
        let mut out = OutputMatrix {
            rows: m,
            cols: n,
            data: vec![0i64; m * n],
        };
        if m == 0 || n == 0 {
            return Ok(out);
        }
        let grid_cols = n.div_ceil(config.b_n);
        let blocks = m.div_ceil(config.b_m) * grid_cols;
        let workers = self.workers.min(blocks);
        let next = AtomicUsize::new(0);
        let popcount = self.popcount;

        let work = || {
            let mut scratch = BlockScratch::new(config, p, q);
            let mut done = Vec::new();
            loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= blocks {
                    break;
                }
                let coord = BlockCoord {
                    row: idx / grid_cols,
                    col: idx % grid_cols,
                };
                let (rows, cols) = compute_block(coord, ops, &mut scratch, popcount);
                let mut tile = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    tile.extend_from_slice(&scratch.output[r * config.b_n..][..cols]);
                }
                done.push((coord, rows, cols, tile));
            }
            done
        };

        let finished: Vec<_> = if workers <= 1 {
            work()
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = (0..workers).map(|_| s.spawn(work)).collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("worker panicked"))
                    .collect()
            })
        };
        for (coord, rows, cols, tile) in finished {
            let (r0, c0) = (coord.row * config.b_m, coord.col * config.b_n);
            for r in 0..rows {
                out.data[(r0 + r) * n + c0..][..cols].copy_from_slice(&tile[r * cols..][..cols]);
            }
        }
        Ok(out)
    }
}

fn narrow(wide: OutputMatrix<i64>) -> Result<OutputMatrix<i32>> {
    let data = wide
        .data
        .iter()
        .map(|&v| {
            i32::try_from(v).map_err(|_| Error::ShapeMismatch(format!("{v} does not fit 32 bits")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OutputMatrix {
        rows: wide.rows,
        cols: wide.cols,
        data,
    })
}

/// 32-bit product with the default engine.
pub fn gemm_ap(problem: &GemmProblem<'_>) -> Result<OutputMatrix<i32>> {
    Engine::default().gemm(problem)
}

/// Matrix-vector product (`M = 1`). Only the single live activation row
/// is staged and multiplied; padded rows of each fragment are skipped.
pub fn gemv_ap(problem: &GemmProblem<'_>) -> Result<OutputMatrix<i32>> {
    if problem.m() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "gemv needs one activation row, got {}",
            problem.m()
        )));
    }
    gemm_ap(problem)
}
