//! Brute-force reference products. No packing, no tiling.

use crate::bipolar::bipolar_code;
use crate::error::{Error, Result};
use crate::types::{validate_matrix, Encoding, IntMatrix, OutputMatrix};

fn check_operands(x: &IntMatrix, w: &IntMatrix) -> Result<()> {
    validate_matrix(x)?;
    validate_matrix(w)?;
    if x.cols() != w.cols() {
        return Err(Error::ShapeMismatch(format!(
            "x is {}x{} but w is {}x{}; inner dimensions differ",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols()
        )));
    }
    if x.encoding() != w.encoding() {
        return Err(Error::EncodingMismatch {
            expected: x.encoding(),
            found: w.encoding(),
        });
    }
    Ok(())
}

/// `out[r][c] = sum_k x[r][k] * w[c][k]` over element values, with `x`
/// of shape M x K and `w` of shape N x K.
pub fn oracle_matmul(x: &IntMatrix, w: &IntMatrix) -> Result<OutputMatrix<i64>> {
    check_operands(x, w)?;
    let (m, n, k) = (x.rows(), w.rows(), x.cols());
    let mut data = vec![0i64; m * n];
    for r in 0..m {
        for c in 0..n {
            let mut sum = 0i64;
            for i in 0..k {
                sum += x.get(r, i) as i64 * w.get(c, i) as i64;
            }
            data[r * n + c] = sum;
        }
    }
    Ok(OutputMatrix { rows: m, cols: n, data })
}

/// Per-plane-pair ±1 products of two bipolar matrices.
/// `planes[i][j]` multiplies activation plane `i` by weight plane `j`.
pub fn oracle_planes(x: &IntMatrix, w: &IntMatrix) -> Result<Vec<Vec<OutputMatrix<i64>>>> {
    check_operands(x, w)?;
    if x.encoding() != Encoding::BipolarInt {
        return Err(Error::EncodingMismatch {
            expected: Encoding::BipolarInt,
            found: x.encoding(),
        });
    }
    let (m, n, k) = (x.rows(), w.rows(), x.cols());
    let sign = |value: i16, bits: u32, plane: u32| -> i64 {
        2 * ((bipolar_code(value as i32, bits) >> plane) & 1) as i64 - 1
    };
    let mut planes = Vec::with_capacity(x.bits() as usize);
    for i in 0..x.bits() {
        let mut row = Vec::with_capacity(w.bits() as usize);
        for j in 0..w.bits() {
            let mut data = vec![0i64; m * n];
            for r in 0..m {
                for c in 0..n {
                    data[r * n + c] = (0..k)
                        .map(|t| sign(x.get(r, t), x.bits(), i) * sign(w.get(c, t), w.bits(), j))
                        .sum();
                }
            }
            row.push(OutputMatrix { rows: m, cols: n, data });
        }
        planes.push(row);
    }
    Ok(planes)
}

/// `sum_{i,j} 2^(i+j) * planes[i][j]`.
pub fn recompose_planes(planes: &[Vec<OutputMatrix<i64>>]) -> OutputMatrix<i64> {
    let first = &planes[0][0];
    let mut data = vec![0i64; first.data.len()];
    for (i, row) in planes.iter().enumerate() {
        for (j, plane) in row.iter().enumerate() {
            for (out, v) in data.iter_mut().zip(&plane.data) {
                *out += v << (i + j);
            }
        }
    }
    OutputMatrix {
        rows: first.rows,
        cols: first.cols,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bip(rows: usize, cols: usize, bits: u32, data: Vec<i16>) -> IntMatrix {
        IntMatrix::new(rows, cols, bits, Encoding::BipolarInt, data).unwrap()
    }

    #[test]
    fn scalar_product() {
        let x = bip(1, 1, 2, vec![3]);
        let w = bip(1, 1, 1, vec![-1]);
        assert_eq!(oracle_matmul(&x, &w).unwrap().data, vec![-3]);
    }

    #[test]
    fn ones_sum_to_k() {
        let x = bip(1, 10, 1, vec![1; 10]);
        let w = bip(1, 10, 1, vec![1; 10]);
        assert_eq!(oracle_matmul(&x, &w).unwrap().data, vec![10]);
    }

    #[test]
    fn shape_and_encoding_errors() {
        let x = bip(2, 3, 2, vec![1; 6]);
        let w = bip(2, 4, 2, vec![1; 8]);
        assert!(matches!(oracle_matmul(&x, &w), Err(Error::ShapeMismatch(_))));
        let s = IntMatrix::new(2, 3, 2, Encoding::SignedInt, vec![1; 6]).unwrap();
        assert!(matches!(
            oracle_matmul(&x, &s),
            Err(Error::EncodingMismatch { .. })
        ));
        assert!(matches!(
            oracle_planes(&s, &s),
            Err(Error::EncodingMismatch { .. })
        ));
    }

    #[test]
    fn agrees_with_bigint_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (m, n, k) = (rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..40));
            let enc = if rng.gen() { Encoding::SignedInt } else { Encoding::BipolarInt };
            let (p, q) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let x = IntMatrix::random(&mut rng, m, k, p, enc).unwrap();
            let w = IntMatrix::random(&mut rng, n, k, q, enc).unwrap();
            let out = oracle_matmul(&x, &w).unwrap();
            for r in 0..m {
                for c in 0..n {
                    let big: BigInt = (0..k)
                        .map(|i| BigInt::from(x.get(r, i)) * BigInt::from(w.get(c, i)))
                        .sum();
                    assert_eq!(BigInt::from(out.get(r, c)), big);
                }
            }
        }
    }

    #[test]
    fn single_plane_equals_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = IntMatrix::random(&mut rng, 4, 17, 1, Encoding::BipolarInt).unwrap();
        let w = IntMatrix::random(&mut rng, 3, 17, 1, Encoding::BipolarInt).unwrap();
        let planes = oracle_planes(&x, &w).unwrap();
        assert_eq!(planes.len(), 1);
        assert_eq!(planes[0][0], oracle_matmul(&x, &w).unwrap());
    }

    #[test]
    fn two_bit_planes_by_hand() {
        // W = [[3,-1],[1,-3]], X = [[1,1],[-1,3]]; Y = W X.
        // Engine convention: rows of `x` are rows of W, rows of `w` are
        // columns of X.
        let lhs = bip(2, 2, 2, vec![3, -1, 1, -3]);
        let rhs = bip(2, 2, 2, vec![1, -1, 1, 3]);
        let planes = oracle_planes(&lhs, &rhs).unwrap();
        // codes: 3=11, -1=01, 1=10, -3=00; bit i as ±1
        // lhs plane0 = [[+,+],[-,-]], plane1 = [[+,-],[+,-]]
        // rhs plane0 = [[-,+],[-,+]], plane1 = [[+,-],[+,+]]
        assert_eq!(planes[0][0].data, vec![0, 0, 0, 0]);
        assert_eq!(planes[0][1].data, vec![0, 2, 0, -2]);
        assert_eq!(planes[1][0].data, vec![-2, -2, -2, -2]);
        assert_eq!(planes[1][1].data, vec![2, 0, 2, 0]);
        let y = recompose_planes(&planes);
        assert_eq!(y.data, vec![4, 0, 4, -8]);
        assert_eq!(y, oracle_matmul(&lhs, &rhs).unwrap());
    }
}
