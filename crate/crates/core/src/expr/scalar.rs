//! Number types the expression evaluator is generic over.
//!
//! `f64` gives plain values, [`Dual`] carries one directional derivative and
//! [`HyperDual`] carries two first-order directions plus their mixed second
//! derivative. Seeding the two directions of a hyper-dual with unit vectors
//! `e_i`, `e_j` yields the Hessian entry `H_ij` in the `e12` slot.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic required by the expression evaluator.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    /// The value part.
    fn re(&self) -> f64;
    /// True when every infinitesimal part is zero.
    fn is_constant(&self) -> bool;
    fn is_finite(&self) -> bool;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// First-order dual number `re + eps·ε`, `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    /// Chain rule for a scalar function with value `f` and derivative `df`.
    fn lift(self, f: f64, df: f64) -> Self {
        Self::new(f, df * self.eps)
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        Self::new(
            self.re * inv,
            (self.eps * o.re - self.re * o.eps) * inv * inv,
        )
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Self::new(v, 0.0)
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn is_constant(&self) -> bool {
        self.eps == 0.0
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
    fn sin(self) -> Self {
        self.lift(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.lift(self.re.cos(), -self.re.sin())
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.lift(e, e)
    }
    fn ln(self) -> Self {
        self.lift(self.re.ln(), 1.0 / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.lift(s, 0.5 / s)
    }
    fn abs(self) -> Self {
        self.lift(self.re.abs(), sign(self.re))
    }
}

/// Second-order truncated Taylor number `re + e1·ε₁ + e2·ε₂ + e12·ε₁ε₂`
/// with `ε₁² = ε₂² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub fn new(re: f64, e1: f64, e2: f64, e12: f64) -> Self {
        Self { re, e1, e2, e12 }
    }

    /// Chain rule for a scalar function with value `f`, first derivative
    /// `df` and second derivative `d2f`.
    fn lift(self, f: f64, df: f64, d2f: f64) -> Self {
        Self::new(
            f,
            df * self.e1,
            df * self.e2,
            df * self.e12 + d2f * self.e1 * self.e2,
        )
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.re + o.re,
            self.e1 + o.e1,
            self.e2 + o.e2,
            self.e12 + o.e12,
        )
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(
            self.re - o.re,
            self.e1 - o.e1,
            self.e2 - o.e2,
            self.e12 - o.e12,
        )
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re,
            self.re * o.e1 + self.e1 * o.re,
            self.re * o.e2 + self.e2 * o.re,
            self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        )
    }
}

impl Div for HyperDual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        let recip = o.lift(inv, -inv * inv, 2.0 * inv * inv * inv);
        self * recip
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.e1, -self.e2, -self.e12)
    }
}

impl Scalar for HyperDual {
    fn constant(v: f64) -> Self {
        Self::new(v, 0.0, 0.0, 0.0)
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn is_constant(&self) -> bool {
        self.e1 == 0.0 && self.e2 == 0.0 && self.e12 == 0.0
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.e1.is_finite() && self.e2.is_finite() && self.e12.is_finite()
    }
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.lift(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.lift(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.lift(e, e, e)
    }
    fn ln(self) -> Self {
        let inv = 1.0 / self.re;
        self.lift(self.re.ln(), inv, -inv * inv)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.lift(s, 0.5 / s, -0.25 / (s * self.re))
    }
    fn abs(self) -> Self {
        self.lift(self.re.abs(), sign(self.re), 0.0)
    }
}

// Subgradient 0 at the kink.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x^n` by repeated squaring. Negative exponents take the reciprocal of the
/// positive power; the caller guarantees `x != 0` in that case.
pub fn powi<S: Scalar>(x: S, n: i64) -> S {
    let mut base = x;
    let mut k = n.unsigned_abs();
    let mut acc = S::constant(1.0);
    while k > 0 {
        if k & 1 == 1 {
            acc = acc * base;
        }
        k >>= 1;
        if k > 0 {
            base = base * base;
        }
    }
    if n < 0 {
        S::constant(1.0) / acc
    } else {
        acc
    }
}
