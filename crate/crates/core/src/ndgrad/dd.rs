//! Double-double scalar (~106-bit mantissa) for finite-difference oracles.
//!
//! Arithmetic, `sqrt` and `exp` come from the `qd` crate; the remaining
//! transcendental functions a forward pass needs are built from those. Rarely
//! used `Float` methods fall back to the leading `f64` component.

use std::cmp::Ordering;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{Float, Num, NumCast, One, ToPrimitive, Zero};
use qd::Quad;

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd(pub Quad);

impl Default for Dd {
    fn default() -> Self {
        Dd(Quad::ZERO)
    }
}

impl Dd {
    pub fn from_f64(v: f64) -> Self {
        Dd(Quad::from_f64(v))
    }

    /// Leading plus trailing component rounded to `f64`.
    pub fn to_f64(self) -> f64 {
        self.0 .0 + self.0 .1
    }

    fn lift(f: impl Fn(f64) -> f64, x: Self) -> Self {
        Dd::from_f64(f(x.to_f64()))
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(other.0)
    }
}

macro_rules! binop {
    ($tr:ident, $f:ident) => {
        impl $tr for Dd {
            type Output = Dd;
            #[inline]
            fn $f(self, rhs: Dd) -> Dd {
                Dd(self.0.$f(rhs.0))
            }
        }
    };
}
binop!(Add, add);
binop!(Sub, sub);
binop!(Div, div);
binop!(Rem, rem);

/// Dekker split of `a` into two 26-bit halves.
#[inline]
fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

/// `a·b` as an unevaluated sum, exact without a fused multiply-add.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let ((ah, al), (bh, bl)) = (split(a), split(b));
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, rhs: Dd) -> Dd {
        let (Quad(a0, a1), Quad(b0, b1)) = (self.0, rhs.0);
        let (p, e) = two_prod(a0, b0);
        let e = e + (a0 * b1 + a1 * b0);
        let s = p + e;
        Dd(Quad(s, e - (s - p)))
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd(-self.0)
    }
}

impl Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::zero(), |a, b| a + b)
    }
}

impl Zero for Dd {
    fn zero() -> Self {
        Dd(Quad::ZERO)
    }
    fn is_zero(&self) -> bool {
        self.0 .0 == 0.0
    }
}

impl One for Dd {
    fn one() -> Self {
        Dd(Quad::ONE)
    }
}

impl Num for Dd {
    type FromStrRadixErr = std::num::ParseFloatError;
    fn from_str_radix(s: &str, _radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        s.parse::<f64>().map(Dd::from_f64)
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        Dd::to_f64(*self).to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        Dd::to_f64(*self).to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(Dd::to_f64(*self))
    }
}

impl NumCast for Dd {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(Dd::from_f64)
    }
}

impl Float for Dd {
    fn nan() -> Self {
        Dd(Quad::NAN)
    }
    fn infinity() -> Self {
        Dd(Quad::INFINITY)
    }
    fn neg_infinity() -> Self {
        Dd(Quad::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Dd::from_f64(-0.0)
    }
    fn min_value() -> Self {
        Dd(Quad::MIN)
    }
    fn min_positive_value() -> Self {
        Dd(Quad::MIN_POSITIVE)
    }
    fn max_value() -> Self {
        Dd(Quad::MAX)
    }
    fn epsilon() -> Self {
        Dd(Quad::EPSILON)
    }
    fn is_nan(self) -> bool {
        self.0.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.0 .0.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.0.is_finite()
    }
    fn is_normal(self) -> bool {
        self.0 .0.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.0 .0.classify()
    }
    fn floor(self) -> Self {
        let hi = self.0 .0.floor();
        if hi == self.0 .0 {
            Dd(Quad(hi, self.0 .1.floor())).normalize()
        } else {
            Dd::from_f64(hi)
        }
    }
    fn ceil(self) -> Self {
        -(-self).floor()
    }
    fn round(self) -> Self {
        (self + Dd::from_f64(0.5)).floor()
    }
    fn trunc(self) -> Self {
        Dd(self.0.trunc())
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        Dd(self.0.abs())
    }
    fn signum(self) -> Self {
        if self.is_nan() {
            self
        } else if self.0 .0.is_sign_negative() {
            -Dd::one()
        } else {
            Dd::one()
        }
    }
    fn is_sign_positive(self) -> bool {
        self.0 .0.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.0 .0.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Dd(self.0.recip())
    }
    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Dd::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
    fn powf(self, n: Self) -> Self {
        (self.ln() * n).exp()
    }
    fn sqrt(self) -> Self {
        if self.0 .0 < 0.0 {
            return Dd::nan();
        }
        Dd(self.0.sqrt())
    }
    fn exp(self) -> Self {
        Dd(self.0.exp())
    }
    fn exp2(self) -> Self {
        (self * Dd(Quad::LN_2)).exp()
    }
    fn ln(self) -> Self {
        Dd(self.0.ln())
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        Dd(self.0.log2())
    }
    fn log10(self) -> Self {
        Dd(self.0.log10())
    }
    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }
    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            Dd::zero()
        }
    }
    fn cbrt(self) -> Self {
        Dd::lift(f64::cbrt, self)
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn sin(self) -> Self {
        Dd::lift(f64::sin, self)
    }
    fn cos(self) -> Self {
        Dd::lift(f64::cos, self)
    }
    fn tan(self) -> Self {
        Dd::lift(f64::tan, self)
    }
    fn asin(self) -> Self {
        Dd::lift(f64::asin, self)
    }
    fn acos(self) -> Self {
        Dd::lift(f64::acos, self)
    }
    fn atan(self) -> Self {
        Dd::lift(f64::atan, self)
    }
    fn atan2(self, other: Self) -> Self {
        Dd::from_f64(self.to_f64().atan2(other.to_f64()))
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.exp() - Dd::one()
    }
    fn ln_1p(self) -> Self {
        (self + Dd::one()).ln()
    }
    fn sinh(self) -> Self {
        let e = self.exp();
        (e - e.recip()) * Dd::from_f64(0.5)
    }
    fn cosh(self) -> Self {
        let e = self.exp();
        (e + e.recip()) * Dd::from_f64(0.5)
    }
    /// `(1 − e^{−2|x|}) / (1 + e^{−2|x|})` with the sign restored.
    fn tanh(self) -> Self {
        let e = (Dd::from_f64(-2.0) * self.abs()).exp();
        let t = (Dd::one() - e) / (Dd::one() + e);
        if self.0 .0 < 0.0 {
            -t
        } else {
            t
        }
    }
    fn asinh(self) -> Self {
        Dd::lift(f64::asinh, self)
    }
    fn acosh(self) -> Self {
        Dd::lift(f64::acosh, self)
    }
    fn atanh(self) -> Self {
        Dd::lift(f64::atanh, self)
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.0 .0.integer_decode()
    }
}

impl Dd {
    fn normalize(self) -> Self {
        let s = self.0 .0 + self.0 .1;
        Dd(Quad(s, self.0 .1 - (s - self.0 .0)))
    }
}

impl Scalar for Dd {
    const DTYPE: u8 = 1;
    const BYTES: usize = 8;

    #[inline]
    fn c(v: f64) -> Self {
        Dd::from_f64(v)
    }
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64()
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_f64().to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        Dd::from_f64(f64::from_le_bytes(bytes[..8].try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carries_bits_beyond_f64() {
        let tiny = Dd::from_f64(1e-20);
        let x = Dd::one() + tiny - Dd::one();
        assert!((x.to_f64() - 1e-20).abs() < 1e-30);
    }

    #[test]
    fn product_keeps_low_bits() {
        let a = Dd::from_f64(1.0 + f64::EPSILON);
        let sq = a * a - Dd::one();
        let expected = 2.0 * f64::EPSILON + f64::EPSILON * f64::EPSILON;
        assert!((sq.to_f64() - expected).abs() < 1e-40);
        let third = Dd::one() / Dd::from_f64(3.0);
        assert!((third * Dd::from_f64(3.0) - Dd::one()).abs().to_f64() < 1e-31);
    }

    #[test]
    fn transcendental_identities() {
        let x = Dd::from_f64(0.3);
        let back = x.exp().ln() - x;
        assert!(back.abs().to_f64() < 1e-30);
        let t = x.tanh();
        let reference = (x.exp() - (-x).exp()) / (x.exp() + (-x).exp());
        assert!((t - reference).abs().to_f64() < 1e-30);
        let r = Dd::from_f64(2.0).sqrt();
        assert!((r * r - Dd::from_f64(2.0)).abs().to_f64() < 1e-30);
    }
}
