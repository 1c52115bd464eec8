//! Bit-plane decomposition and word packing.
//!
//! An n-bit bipolar matrix becomes n planes, plane `i` holding bit `i` of
//! every element's code. Each plane row is packed LSB-first into
//! [`Word`]s and the planes are concatenated into one allocation.

use crate::bipolar::{bipolar_code, bipolar_value};
use crate::error::{Error, Result};
use crate::types::{validate_matrix, Encoding, IntMatrix, Word, WORD_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaneLayout {
    /// Plane after plane, each `rows x words_per_row` words.
    PlaneMajor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedPlanes {
    rows: usize,
    cols: usize,
    bits: u32,
    words_per_row: usize,
    data: Vec<Word>,
}

impl PackedPlanes {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Logical columns, before padding to whole words.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn layout(&self) -> PlaneLayout {
        PlaneLayout::PlaneMajor
    }

    /// The whole unified buffer.
    pub fn words(&self) -> &[Word] {
        &self.data
    }

    pub fn plane(&self, plane: usize) -> &[Word] {
        let len = self.rows * self.words_per_row;
        &self.data[plane * len..(plane + 1) * len]
    }

    pub fn row(&self, plane: usize, row: usize) -> &[Word] {
        let start = (plane * self.rows + row) * self.words_per_row;
        &self.data[start..start + self.words_per_row]
    }

    pub fn bit(&self, plane: usize, row: usize, col: usize) -> bool {
        self.row(plane, row)[col / WORD_BITS] >> (col % WORD_BITS) & 1 == 1
    }

    /// Mask of the bits past `cols` in a row's last word.
    pub fn pad_mask(&self) -> Word {
        match self.cols % WORD_BITS {
            0 => 0,
            used => !0 << used,
        }
    }
}

/// Splits a bipolar matrix into packed bit planes. With `transpose` set,
/// the matrix is transposed first, so a `K x N` weight matrix comes out
/// with K along the packed axis.
pub fn decompose_pack(m: &IntMatrix, transpose: bool) -> Result<PackedPlanes> {
    if m.encoding() != Encoding::BipolarInt {
        return Err(Error::EncodingMismatch {
            expected: Encoding::BipolarInt,
            found: m.encoding(),
        });
    }
    validate_matrix(m)?;
    let (rows, cols) = if transpose {
        (m.cols(), m.rows())
    } else {
        (m.rows(), m.cols())
    };
    let bits = m.bits();
    let words_per_row = cols.div_ceil(WORD_BITS);
    let plane_len = rows * words_per_row;
    let mut data: Vec<Word> = vec![0; bits as usize * plane_len];
    for r in 0..rows {
        for c in 0..cols {
            let value = if transpose { m.get(c, r) } else { m.get(r, c) };
            let code = bipolar_code(value as i32, bits);
            let word = r * words_per_row + c / WORD_BITS;
            let shift = c % WORD_BITS;
            for plane in 0..bits as usize {
                data[plane * plane_len + word] |= (((code >> plane) & 1) as Word) << shift;
            }
        }
    }
    Ok(PackedPlanes {
        rows,
        cols,
        bits,
        words_per_row,
        data,
    })
}

/// Inverse of `decompose_pack(m, false)`.
pub fn unpack(p: &PackedPlanes) -> IntMatrix {
    let mut data = Vec::with_capacity(p.rows * p.cols);
    for r in 0..p.rows {
        for c in 0..p.cols {
            let code = (0..p.bits as usize).fold(0u8, |acc, plane| {
                acc | (p.bit(plane, r, c) as u8) << plane
            });
            data.push(bipolar_value(code, p.bits) as i16);
        }
    }
    IntMatrix::new_unchecked(p.rows, p.cols, p.bits, Encoding::BipolarInt, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_element() {
        let m = IntMatrix::new(1, 1, 2, Encoding::BipolarInt, vec![3]).unwrap();
        let p = decompose_pack(&m, false).unwrap();
        assert_eq!(p.plane(0)[0], 1);
        assert_eq!(p.plane(1)[0], 1);
        assert_eq!(p.words().len(), 2);
    }

    #[test]
    fn sixty_five_columns_spill_into_second_word() {
        let mut data = vec![-1i16; 65];
        data[64] = 1;
        let m = IntMatrix::new(1, 65, 1, Encoding::BipolarInt, data).unwrap();
        let p = decompose_pack(&m, false).unwrap();
        assert_eq!(p.words_per_row(), 65usize.div_ceil(WORD_BITS));
        assert!(p.bit(0, 0, 64));
        assert_eq!(p.row(0, 0)[64 / WORD_BITS], 1 << (64 % WORD_BITS));
    }

    #[test]
    fn random_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = IntMatrix::random(&mut rng, 7, 130, 3, Encoding::BipolarInt).unwrap();
        assert_eq!(unpack(&decompose_pack(&m, false).unwrap()), m);
    }

    #[test]
    fn transpose_packs_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = IntMatrix::random(&mut rng, 70, 9, 4, Encoding::BipolarInt).unwrap();
        let p = decompose_pack(&m, true).unwrap();
        assert_eq!((p.rows(), p.cols()), (9, 70));
        assert_eq!(unpack(&p), m.transpose());
    }

    #[test]
    fn all_zero_planes_decode_to_minimum() {
        let p = PackedPlanes {
            rows: 2,
            cols: 2,
            bits: 2,
            words_per_row: 1,
            data: vec![0; 4],
        };
        assert_eq!(unpack(&p).data(), &[-3; 4]);
    }

    #[test]
    fn all_one_plane_decodes_to_one() {
        let p = PackedPlanes {
            rows: 1,
            cols: 3,
            bits: 1,
            words_per_row: 1,
            data: vec![0b111],
        };
        assert_eq!(unpack(&p).data(), &[1, 1, 1]);
    }

    #[test]
    fn rejects_signed_input() {
        let m = IntMatrix::new(1, 1, 2, Encoding::SignedInt, vec![1]).unwrap();
        assert!(matches!(
            decompose_pack(&m, false),
            Err(Error::EncodingMismatch { .. })
        ));
    }

    #[test]
    fn footprint_beats_nibble_storage_for_three_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = IntMatrix::random(&mut rng, 64, 1024, 3, Encoding::BipolarInt).unwrap();
        let p = decompose_pack(&m, false).unwrap();
        let packed_bytes = p.words().len() * WORD_BITS / 8;
        assert_eq!(p.words().len(), 3 * 64 * 1024 / WORD_BITS);
        // 4-bit aligned storage of the same matrix
        let nibble_bytes = 64 * 1024 / 2;
        assert!(packed_bytes < nibble_bytes);
    }
}
