//! The arithmetic domain: residues modulo 2^64 and the fixed-point codec
//! that embeds reals into them.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{MpcError, Result};

/// An element of Z_{2^64}. All arithmetic wraps.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(transparent)]
pub struct RingElement(pub u64);

impl RingElement {
    pub const ZERO: RingElement = RingElement(0);
    pub const ONE: RingElement = RingElement(1);
    pub const BYTES: usize = 8;

    /// Two's-complement view: `[0, 2^63)` is non-negative, `[2^63, 2^64)` negative.
    #[inline]
    pub fn to_signed(self) -> i64 {
        self.0 as i64
    }

    #[inline]
    pub fn from_signed(v: i64) -> Self {
        RingElement(v as u64)
    }

    #[inline]
    pub fn msb(self) -> bool {
        self.0 >> 63 == 1
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8]) -> Self {
        RingElement(u64::from_le_bytes(bytes))
    }
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R({})", self.to_signed())
    }
}

impl From<u64> for RingElement {
    fn from(v: u64) -> Self {
        RingElement(v)
    }
}

impl Add for RingElement {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        RingElement(self.0.wrapping_add(rhs.0))
    }
}

impl Sub for RingElement {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        RingElement(self.0.wrapping_sub(rhs.0))
    }
}

impl Mul for RingElement {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        RingElement(self.0.wrapping_mul(rhs.0))
    }
}

impl Neg for RingElement {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        RingElement(self.0.wrapping_neg())
    }
}

impl AddAssign for RingElement {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.0 = self.0.wrapping_add(rhs.0);
    }
}

impl SubAssign for RingElement {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.0 = self.0.wrapping_sub(rhs.0);
    }
}

impl MulAssign for RingElement {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        self.0 = self.0.wrapping_mul(rhs.0);
    }
}

impl Sum for RingElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(RingElement::ZERO, Add::add)
    }
}

/// Fixed-point embedding of reals at `scale = base^frac_digits`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCodec {
    base: u64,
    frac_digits: u32,
    scale: u64,
    max_magnitude: f64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec::new(10, 5).expect("default codec is valid")
    }
}

impl FixedPointCodec {
    /// `max_magnitude` defaults to `2^40 / scale`.
    pub fn new(base: u64, frac_digits: u32) -> Result<Self> {
        if base < 2 || frac_digits == 0 {
            return Err(MpcError::format(format!(
                "codec needs base >= 2 and frac_digits >= 1, got base {base}, f {frac_digits}"
            )));
        }
        let scale = base
            .checked_pow(frac_digits)
            .filter(|s| s.checked_mul(*s).is_some_and(|sq| sq < 1 << 62))
            .ok_or_else(|| {
                MpcError::format(format!("scale {base}^{frac_digits} too large for the ring"))
            })?;
        Ok(FixedPointCodec {
            base,
            frac_digits,
            scale,
            max_magnitude: (1u64 << 40) as f64 / scale as f64,
        })
    }

    pub fn with_max_magnitude(mut self, max_magnitude: f64) -> Self {
        self.max_magnitude = max_magnitude;
        self
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn frac_digits(&self) -> u32 {
        self.frac_digits
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn max_magnitude(&self) -> f64 {
        self.max_magnitude
    }

    /// `round(x * scale)` (half away from zero), embedded in two's complement.
    pub fn encode(&self, x: f64) -> Result<RingElement> {
        if !x.is_finite() || x.abs() > self.max_magnitude {
            return Err(MpcError::Range {
                value: x,
                max: self.max_magnitude,
            });
        }
        Ok(RingElement::from_signed((x * self.scale as f64).round() as i64))
    }

    pub fn encode_slice(&self, xs: &[f64]) -> Result<Vec<RingElement>> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn decode(&self, e: RingElement) -> f64 {
        e.to_signed() as f64 / self.scale as f64
    }

    /// Decode a value carrying `exponent` factors of the scale.
    pub fn decode_at(&self, e: RingElement, exponent: u8) -> f64 {
        e.to_signed() as f64 / (self.scale as f64).powi(exponent as i32)
    }

    /// Ring representation of the public constant `c` at `exponent` factors of scale.
    pub fn encode_at(&self, c: f64, exponent: u8) -> Result<RingElement> {
        let scaled = c * (self.scale as f64).powi(exponent as i32);
        if !scaled.is_finite() || scaled.abs() >= (1u64 << 62) as f64 {
            return Err(MpcError::Range {
                value: c,
                max: (1u64 << 62) as f64 / (self.scale as f64).powi(exponent as i32),
            });
        }
        Ok(RingElement::from_signed(scaled.round() as i64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::default()
    }

    #[test]
    fn encode_examples() {
        let c = codec();
        assert_eq!(c.encode(1.5).unwrap(), RingElement(150_000));
        assert_eq!(
            c.encode(-1.0).unwrap(),
            RingElement(u64::MAX - 100_000 + 1)
        );
        assert_eq!(c.encode(0.123456).unwrap(), RingElement(12_346));
        assert_eq!(c.encode(-0.000005).unwrap(), RingElement::from_signed(-1));
        assert_eq!(c.encode(0.000005).unwrap(), RingElement(1));
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let c = codec();
        let max = c.max_magnitude();
        assert!(c.encode(max).is_ok());
        assert!(matches!(c.encode(max * 1.001), Err(MpcError::Range { .. })));
        assert!(c.encode(f64::NAN).is_err());
        assert!(c.encode(f64::INFINITY).is_err());
    }

    #[test]
    fn decode_examples() {
        let c = codec();
        assert_eq!(c.decode(RingElement(150_000)), 1.5);
        assert_eq!(c.decode(RingElement(u64::MAX)), -0.00001);
    }

    #[test]
    fn ring_ops_wrap() {
        assert_eq!(RingElement(u64::MAX) + RingElement(1), RingElement(0));
        assert_eq!(RingElement(0) - RingElement(1), RingElement(u64::MAX));
        assert_eq!(-RingElement(0), RingElement(0));
        assert_eq!(RingElement(1 << 63) * RingElement(2), RingElement(0));
    }

    #[test]
    fn multiplication_doubles_scale() {
        let c = codec();
        let p = c.encode(2.0).unwrap() * c.encode(3.0).unwrap();
        assert_eq!(p, RingElement(c.encode(6.0).unwrap().0 * c.scale()));
        assert_eq!(c.decode_at(p, 2), 6.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FixedPointCodec::new(10, 0).is_err());
        assert!(FixedPointCodec::new(1, 5).is_err());
        assert!(FixedPointCodec::new(10, 12).is_err());
        let b2 = FixedPointCodec::new(2, 16).unwrap();
        assert_eq!(b2.scale(), 65_536);
    }

    proptest! {
        #[test]
        fn round_trip_within_half_ulp(x in -100.0f64..100.0) {
            let c = codec();
            let back = c.decode(c.encode(x).unwrap());
            prop_assert!((back - x).abs() <= 0.5 / c.scale() as f64 + 1e-12);
        }

        #[test]
        fn decimal_addition_is_exact(a in -1_000_000_000i64..1_000_000_000, b in -1_000_000_000i64..1_000_000_000) {
            let c = codec();
            let (x, y) = (a as f64 / 1e5, b as f64 / 1e5);
            let sum = c.encode(x).unwrap() + c.encode(y).unwrap();
            prop_assert_eq!(sum.to_signed(), a + b);
        }

        #[test]
        fn sign_preserved(x in -1.0e6f64..1.0e6) {
            let c = codec();
            let d = c.decode(c.encode(x).unwrap());
            prop_assert!(d == 0.0 || d.signum() == x.signum());
        }

        #[test]
        fn encode_of_decode_is_identity_in_range(v in -(1i64 << 40)..(1i64 << 40)) {
            let c = codec();
            let e = RingElement::from_signed(v);
            prop_assert_eq!(c.encode(c.decode(e)).unwrap(), e);
        }
    }
}
