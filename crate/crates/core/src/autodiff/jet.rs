//! Third-order jets: a value with its first three derivatives with respect to
//! one seeded input, propagated with truncated Taylor arithmetic.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Value and derivatives `d1..d3` with respect to a single seeded input.
///
/// Lanes hold derivatives, not Taylor coefficients: `x²` seeded at `x = 3`
/// is `Jet(9, 6, 2, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<S> {
    pub v: S,
    pub d1: S,
    pub d2: S,
    pub d3: S,
}

impl<S: Scalar> Jet<S> {
    pub fn new(v: S, d1: S, d2: S, d3: S) -> Self {
        Jet { v, d1, d2, d3 }
    }

    /// A jet with all derivative lanes zero.
    pub fn constant(v: S) -> Self {
        let z = v.lift(0.0);
        Jet { v, d1: z, d2: z, d3: z }
    }

    /// The seeded input itself: `d1 = 1`, higher lanes zero.
    pub fn variable(v: S) -> Self {
        let z = v.lift(0.0);
        Jet {
            v,
            d1: v.lift(1.0),
            d2: z,
            d3: z,
        }
    }

    pub fn lanes(&self) -> [S; 4] {
        [self.v, self.d1, self.d2, self.d3]
    }

    /// Chain rule for a scalar function with derivatives `f0..f3` evaluated at
    /// `self.v` (Faà di Bruno, truncated at order three).
    #[inline]
    pub fn compose(&self, f0: S, f1: S, f2: S, f3: S) -> Self {
        let a1 = self.d1;
        let a2 = self.d2;
        let a3 = self.d3;
        let a1sq = a1 * a1;
        Jet {
            v: f0,
            d1: f1 * a1,
            d2: f2 * a1sq + f1 * a2,
            d3: f3 * a1sq * a1 + (f2 * a1 * a2).scale(3.0) + f1 * a3,
        }
    }
}

impl<S: Scalar> Add for Jet<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Jet {
            v: self.v + o.v,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
            d3: self.d3 + o.d3,
        }
    }
}

impl<S: Scalar> Sub for Jet<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Jet {
            v: self.v - o.v,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
            d3: self.d3 - o.d3,
        }
    }
}

impl<S: Scalar> Neg for Jet<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Jet {
            v: -self.v,
            d1: -self.d1,
            d2: -self.d2,
            d3: -self.d3,
        }
    }
}

impl<S: Scalar> Mul for Jet<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let (a, b) = (self, o);
        Jet {
            v: a.v * b.v,
            d1: a.d1 * b.v + a.v * b.d1,
            d2: a.d2 * b.v + (a.d1 * b.d1).scale(2.0) + a.v * b.d2,
            d3: a.d3 * b.v + (a.d2 * b.d1 + a.d1 * b.d2).scale(3.0) + a.v * b.d3,
        }
    }
}

impl<S: Scalar> Div for Jet<S> {
    type Output = Self;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<S: Scalar> Scalar for Jet<S> {
    fn lift(&self, c: f64) -> Self {
        Jet::constant(self.v.lift(c))
    }

    fn value(&self) -> f64 {
        self.v.value()
    }

    fn scale(self, c: f64) -> Self {
        Jet {
            v: self.v.scale(c),
            d1: self.d1.scale(c),
            d2: self.d2.scale(c),
            d3: self.d3.scale(c),
        }
    }

    fn shift(self, c: f64) -> Self {
        Jet {
            v: self.v.shift(c),
            ..self
        }
    }

    fn tanh(self) -> Self {
        let t = self.v.tanh();
        let g1 = (t * t).scale(-1.0).shift(1.0);
        let g2 = (t * g1).scale(-2.0);
        let g3 = g1 * (t * t).scale(6.0).shift(-2.0);
        self.compose(t, g1, g2, g3)
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e, e)
    }

    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let inv = s.recip();
        let f1 = inv.scale(0.5);
        let inv3 = inv * inv * inv;
        let f2 = inv3.scale(-0.25);
        let f3 = (inv3 * inv * inv).scale(0.375);
        self.compose(s, f1, f2, f3)
    }

    fn powi(self, n: i32) -> Self {
        let nf = n as f64;
        let coef = [nf, nf * (nf - 1.0), nf * (nf - 1.0) * (nf - 2.0)];
        let f0 = self.v.powi(n);
        let f = |k: usize| {
            if coef[k - 1] == 0.0 {
                self.v.lift(0.0)
            } else {
                self.v.powi(n - k as i32).scale(coef[k - 1])
            }
        };
        self.compose(f0, f(1), f(2), f(3))
    }

    fn powf(self, p: f64) -> Self {
        let coef = [p, p * (p - 1.0), p * (p - 1.0) * (p - 2.0)];
        let f0 = self.v.powf(p);
        let f = |k: usize| {
            if coef[k - 1] == 0.0 {
                self.v.lift(0.0)
            } else {
                self.v.powf(p - k as f64).scale(coef[k - 1])
            }
        };
        self.compose(f0, f(1), f(2), f(3))
    }

    fn recip(self) -> Self {
        let r = self.v.recip();
        let r2 = r * r;
        let r3 = r2 * r;
        self.compose(r, -r2, r3.scale(2.0), (r3 * r).scale(-6.0))
    }
}
