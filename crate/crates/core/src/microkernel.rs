//! 1-bit fragment GEMM.
//!
//! With both operands holding ±1 values as bits (set = +1), the dot
//! product over `k` positions is `k - 2 * popcount(a ^ b)`: every
//! differing position contributes -1 and every matching one +1.

use crate::types::{Word, WORD_BITS};

/// Which population-count implementation a kernel call uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Popcount {
    /// Hardware instruction when the CPU has one, portable otherwise.
    Auto,
    /// Shift-and-mask bit counting, no special instructions.
    Portable,
}

/// Bit count by parallel summation within the word.
#[inline(always)]
pub fn popcount_portable(w: Word) -> u32 {
    #[cfg(not(feature = "word32"))]
    {
        let mut x = w;
        x -= (x >> 1) & 0x5555_5555_5555_5555;
        x = (x & 0x3333_3333_3333_3333) + ((x >> 2) & 0x3333_3333_3333_3333);
        x = (x + (x >> 4)) & 0x0f0f_0f0f_0f0f_0f0f;
        (x.wrapping_mul(0x0101_0101_0101_0101) >> 56) as u32
    }
    #[cfg(feature = "word32")]
    {
        let mut x = w;
        x -= (x >> 1) & 0x5555_5555;
        x = (x & 0x3333_3333) + ((x >> 2) & 0x3333_3333);
        x = (x + (x >> 4)) & 0x0f0f_0f0f;
        x.wrapping_mul(0x0101_0101) >> 24
    }
}

pub fn native_popcount_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("popcnt")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        true
    }
}

/// ±1 dot product of the first `k_bits` positions. Bits past `k_bits`
/// must be zero in both operands.
pub fn dot1(a: &[Word], b: &[Word], k_bits: usize) -> i32 {
    let words = k_bits.div_ceil(WORD_BITS);
    let differing: u32 = a[..words]
        .iter()
        .zip(&b[..words])
        .map(|(x, y)| (x ^ y).count_ones())
        .sum();
    k_bits as i32 - 2 * differing as i32
}

/// Accumulator tile of one fragment: `m_dim x n_dim` 32-bit sums over
/// `k_dim`-bit slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub m_dim: usize,
    pub n_dim: usize,
    pub k_dim: usize,
    pub acc: Vec<i32>,
}

impl Fragment {
    pub fn zeroed(m_dim: usize, n_dim: usize, k_dim: usize) -> Self {
        assert!(k_dim % WORD_BITS == 0, "k_dim must be a multiple of {WORD_BITS}");
        Fragment {
            m_dim,
            n_dim,
            k_dim,
            acc: vec![0; m_dim * n_dim],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> i32 {
        self.acc[u * self.n_dim + v]
    }
}

/// `acc[u][v] += dot1(a_tile[u], b_tile[v], k_dim)`.
pub fn fragment_mma(a_tile: &[&[Word]], b_tile: &[&[Word]], frag: &mut Fragment) {
    assert_eq!(a_tile.len(), frag.m_dim);
    assert_eq!(b_tile.len(), frag.n_dim);
    let words = frag.k_dim / WORD_BITS;
    let flatten = |tile: &[&[Word]]| -> Vec<Word> {
        tile.iter().flat_map(|row| row[..words].iter().copied()).collect()
    };
    let (a, b) = (flatten(a_tile), flatten(b_tile));
    let rows: Vec<u32> = (0..frag.m_dim as u32).collect();
    let cols: Vec<u32> = (0..frag.n_dim as u32).collect();
    let operands = TileOperands {
        a: &a,
        b: &b,
        stride: words,
        word_lo: 0,
        words,
    };
    mma(operands, &rows, &cols, &mut frag.acc, frag.n_dim, Popcount::Auto);
}

/// Two row-major word buffers sharing a row stride, and the word range of
/// each row to consume.
#[derive(Clone, Copy, Debug)]
pub struct TileOperands<'a> {
    pub a: &'a [Word],
    pub b: &'a [Word],
    pub stride: usize,
    pub word_lo: usize,
    pub words: usize,
}

/// Accumulates `words * WORD_BITS`-deep ±1 products of the listed `a`
/// rows against the listed `b` rows into `acc[row * acc_stride + col]`.
pub fn mma(
    ops: TileOperands<'_>,
    rows: &[u32],
    cols: &[u32],
    acc: &mut [i32],
    acc_stride: usize,
    popcount: Popcount,
) {
    #[cfg(target_arch = "x86_64")]
    {
        if popcount == Popcount::Auto && native_popcount_available() {
            // SAFETY: the CPU supports popcnt, checked above.
            unsafe { mma_popcnt(ops, rows, cols, acc, acc_stride) };
            return;
        }
    }
    if popcount == Popcount::Auto {
        mma_impl::<true>(ops, rows, cols, acc, acc_stride);
    } else {
        mma_impl::<false>(ops, rows, cols, acc, acc_stride);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn mma_popcnt(
    ops: TileOperands<'_>,
    rows: &[u32],
    cols: &[u32],
    acc: &mut [i32],
    acc_stride: usize,
) {
    mma_impl::<true>(ops, rows, cols, acc, acc_stride)
}

#[inline(always)]
fn mma_impl<const NATIVE: bool>(
    ops: TileOperands<'_>,
    rows: &[u32],
    cols: &[u32],
    acc: &mut [i32],
    acc_stride: usize,
) {
    let depth = (ops.words * WORD_BITS) as i32;
    let count = |w: Word| if NATIVE { w.count_ones() } else { popcount_portable(w) };
    for &u in rows {
        let a_start = u as usize * ops.stride + ops.word_lo;
        let a_row = &ops.a[a_start..a_start + ops.words];
        let acc_row = &mut acc[u as usize * acc_stride..];
        // two weight rows per pass to reuse each loaded activation word
        let mut pairs = cols.chunks_exact(2);
        for pair in &mut pairs {
            let (v0, v1) = (pair[0] as usize, pair[1] as usize);
            let b0_start = v0 * ops.stride + ops.word_lo;
            let b1_start = v1 * ops.stride + ops.word_lo;
            let b0 = &ops.b[b0_start..b0_start + ops.words];
            let b1 = &ops.b[b1_start..b1_start + ops.words];
            let (mut d0, mut d1) = (0u32, 0u32);
            for ((&x, &y0), &y1) in a_row.iter().zip(b0).zip(b1) {
                d0 += count(x ^ y0);
                d1 += count(x ^ y1);
            }
            acc_row[v0] += depth - 2 * d0 as i32;
            acc_row[v1] += depth - 2 * d1 as i32;
        }
        for &v in pairs.remainder() {
            let b_start = v as usize * ops.stride + ops.word_lo;
            let b_row = &ops.b[b_start..b_start + ops.words];
            let d: u32 = a_row.iter().zip(b_row).map(|(&x, &y)| count(x ^ y)).sum();
            acc_row[v as usize] += depth - 2 * d as i32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Bit-by-bit ±1 products, independent of the XOR formula.
    fn naive_dot(a: &[Word], b: &[Word], k_bits: usize) -> i32 {
        (0..k_bits)
            .map(|k| {
                let bit = |w: &[Word]| (w[k / WORD_BITS] >> (k % WORD_BITS) & 1) as i32;
                (2 * bit(a) - 1) * (2 * bit(b) - 1)
            })
            .sum()
    }

    fn random_words(rng: &mut impl Rng, n: usize) -> Vec<Word> {
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn equal_and_complementary_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_words(&mut rng, 64 / WORD_BITS);
        let not_a: Vec<Word> = a.iter().map(|w| !w).collect();
        assert_eq!(dot1(&a, &a, 64), 64);
        assert_eq!(dot1(&a, &not_a, 64), -64);
    }

    #[test]
    fn four_bit_example() {
        assert_eq!(dot1(&[0b1010], &[0b0010], 4), 2);
        assert_eq!(naive_dot(&[0b1010], &[0b0010], 4), 2);
    }

    #[test]
    fn exhaustive_eight_bit_subwords() {
        for a in 0..256 as Word {
            for b in 0..256 as Word {
                assert_eq!(dot1(&[a], &[b], 8), naive_dot(&[a], &[b], 8));
            }
        }
    }

    #[test]
    fn random_wide_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [64, 128] {
            for _ in 0..200 {
                let a = random_words(&mut rng, k / WORD_BITS);
                let b = random_words(&mut rng, k / WORD_BITS);
                assert_eq!(dot1(&a, &b, k), naive_dot(&a, &b, k));
            }
        }
    }

    #[test]
    fn portable_popcount_matches_native() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let w: Word = rng.gen();
            assert_eq!(popcount_portable(w), w.count_ones());
        }
        assert_eq!(popcount_portable(0), 0);
        assert_eq!(popcount_portable(!0), WORD_BITS as u32);
    }

    #[test]
    fn mma_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stride = 4;
        let a = random_words(&mut rng, 9 * stride);
        let b = random_words(&mut rng, 7 * stride);
        let rows: Vec<u32> = (0..9).collect();
        let cols: Vec<u32> = vec![0, 2, 3, 6, 5];
        let ops = TileOperands {
            a: &a,
            b: &b,
            stride,
            word_lo: 1,
            words: 3,
        };
        let mut native = vec![0; 9 * 7];
        let mut portable = vec![0; 9 * 7];
        mma(ops, &rows, &cols, &mut native, 7, Popcount::Auto);
        mma(ops, &rows, &cols, &mut portable, 7, Popcount::Portable);
        assert_eq!(native, portable);
        for &u in &rows {
            for v in 0..7u32 {
                let got = native[u as usize * 7 + v as usize];
                if cols.contains(&v) {
                    let ar = &a[u as usize * stride + 1..][..3];
                    let br = &b[v as usize * stride + 1..][..3];
                    assert_eq!(got, naive_dot(ar, br, 3 * WORD_BITS));
                } else {
                    assert_eq!(got, 0);
                }
            }
        }
    }

    #[test]
    fn fragment_identical_tiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let row = random_words(&mut rng, 128 / WORD_BITS);
        let tile: Vec<&[Word]> = vec![&row; 8];
        let mut frag = Fragment::zeroed(8, 8, 128);
        fragment_mma(&tile, &tile, &mut frag);
        assert!(frag.acc.iter().all(|&v| v == 128));
        fragment_mma(&tile, &tile, &mut frag);
        assert!(frag.acc.iter().all(|&v| v == 256));
    }

    #[test]
    fn fragment_matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let words = 128 / WORD_BITS;
        let a: Vec<Vec<Word>> = (0..8).map(|_| random_words(&mut rng, words)).collect();
        let b: Vec<Vec<Word>> = (0..8).map(|_| random_words(&mut rng, words)).collect();
        let a_tile: Vec<&[Word]> = a.iter().map(Vec::as_slice).collect();
        let b_tile: Vec<&[Word]> = b.iter().map(Vec::as_slice).collect();
        let mut frag = Fragment::zeroed(8, 8, 128);
        fragment_mma(&a_tile, &b_tile, &mut frag);
        for u in 0..8 {
            for v in 0..8 {
                assert_eq!(frag.get(u, v), naive_dot(&a[u], &b[v], 128));
            }
        }
    }

    #[test]
    fn chunked_accumulation_equals_full_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let words = 256 / WORD_BITS;
        let a = random_words(&mut rng, 4 * words);
        let b = random_words(&mut rng, 4 * words);
        let idx: Vec<u32> = (0..4).collect();
        let full_ops = TileOperands {
            a: &a,
            b: &b,
            stride: words,
            word_lo: 0,
            words,
        };
        let mut full = vec![0; 16];
        mma(full_ops, &idx, &idx, &mut full, 4, Popcount::Auto);
        let mut chunked = vec![0; 16];
        let half = words / 2;
        for lo in [0, half] {
            let ops = TileOperands {
                word_lo: lo,
                words: half,
                ..full_ops
            };
            mma(ops, &idx, &idx, &mut chunked, 4, Popcount::Auto);
        }
        assert_eq!(full, chunked);
    }
}
