//! Exact dyadic arithmetic (`mantissa * 2^exp`) with correctly rounded
//! conversion back to `f64`. Used where dequantized values must be
//! reproducible bit-for-bit regardless of evaluation order.

use std::ops::{Add, Mul, Neg};

use num_bigint::{BigInt, Sign};
use num_traits::{ToPrimitive, Zero};

#[derive(Clone, Debug)]
pub struct Dyadic {
    mant: BigInt,
    exp: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic {
            mant: BigInt::zero(),
            exp: 0,
        }
    }

    /// Exact value of a finite float. Panics on NaN or infinity.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "non-finite value {x}");
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1i64 } else { 1 };
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        Dyadic {
            mant: BigInt::from(m) * sign,
            exp: e,
        }
    }

    pub fn from_i64(v: i64) -> Self {
        Dyadic {
            mant: BigInt::from(v),
            exp: 0,
        }
    }

    /// Nearest `f64`, ties to even. Overflows to infinity.
    pub fn to_f64(&self) -> f64 {
        let (sign, mag) = self.mant.clone().into_parts();
        if sign == Sign::NoSign {
            return 0.0;
        }
        let len = mag.bits() as i64;
        let shift = (len - 53).max(-1074 - self.exp);
        let (mut m, mut e) = if shift <= 0 {
            (mag.to_u64().expect("at most 53 bits"), self.exp)
        } else {
            let s = shift as u64;
            let q = &mag >> s;
            let rem = &mag - (&q << s);
            let half = num_bigint::BigUint::from(1u8) << (s - 1);
            let mut q = q.to_u64().expect("at most 53 bits");
            if rem > half || (rem == half && q & 1 == 1) {
                q += 1;
            }
            (q, self.exp + shift)
        };
        if m == 1u64 << 53 {
            m >>= 1;
            e += 1;
        }
        while m != 0 && m < (1u64 << 52) && e > -1074 {
            m <<= 1;
            e -= 1;
        }
        let magnitude = if m >= 1u64 << 52 {
            let biased = e + 1075;
            if biased >= 2047 {
                f64::INFINITY
            } else {
                f64::from_bits(((biased as u64) << 52) | (m & ((1u64 << 52) - 1)))
            }
        } else {
            // subnormal: e == -1074
            f64::from_bits(m)
        };
        if sign == Sign::Minus {
            -magnitude
        } else {
            magnitude
        }
    }
}

impl Add for &Dyadic {
    type Output = Dyadic;

    fn add(self, rhs: &Dyadic) -> Dyadic {
        if self.mant.is_zero() {
            return rhs.clone();
        }
        if rhs.mant.is_zero() {
            return self.clone();
        }
        let exp = self.exp.min(rhs.exp);
        let a = &self.mant << (self.exp - exp) as u64;
        let b = &rhs.mant << (rhs.exp - exp) as u64;
        Dyadic { mant: a + b, exp }
    }
}

impl Add for Dyadic {
    type Output = Dyadic;

    fn add(self, rhs: Dyadic) -> Dyadic {
        &self + &rhs
    }
}

impl Mul for &Dyadic {
    type Output = Dyadic;

    fn mul(self, rhs: &Dyadic) -> Dyadic {
        Dyadic {
            mant: &self.mant * &rhs.mant,
            exp: self.exp + rhs.exp,
        }
    }
}

impl Mul for Dyadic {
    type Output = Dyadic;

    fn mul(self, rhs: Dyadic) -> Dyadic {
        &self * &rhs
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;

    fn neg(self) -> Dyadic {
        Dyadic {
            mant: -self.mant,
            exp: self.exp,
        }
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, other: &Self) -> bool {
        (self + &-other.clone()).mant.is_zero()
    }
}

/// Error-free transformation: `a + b == s + err` exactly, `s = fl(a + b)`.
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Correctly rounded `sum(terms)`.
pub fn sum_rounded(terms: &[f64]) -> f64 {
    terms
        .iter()
        .fold(Dyadic::zero(), |acc, &t| &acc + &Dyadic::from_f64(t))
        .to_f64()
}
