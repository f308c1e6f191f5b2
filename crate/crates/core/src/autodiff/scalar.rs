use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic shared by plain floats, taped variables and jets.
///
/// Constants are created through [`Scalar::lift`] on an existing value so
/// that context-carrying scalars (tape variables) can attach them to the
/// right tape.
pub trait Scalar:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    /// A constant living in the same context as `self`.
    fn lift(&self, c: f64) -> Self;
    /// Primal value as `f64`.
    fn value(&self) -> f64;
    /// `self * c` for a plain constant.
    fn scale(self, c: f64) -> Self;
    /// `self + c` for a plain constant.
    fn shift(self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;

    fn square(self) -> Self {
        self * self
    }

    fn recip(self) -> Self {
        self.lift(1.0) / self
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn lift(&self, c: f64) -> Self {
                c as $t
            }
            #[inline]
            fn value(&self) -> f64 {
                *self as f64
            }
            #[inline]
            fn scale(self, c: f64) -> Self {
                self * c as $t
            }
            #[inline]
            fn shift(self, c: f64) -> Self {
                self + c as $t
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
            #[inline]
            fn powf(self, p: f64) -> Self {
                <$t>::powf(self, p as $t)
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

/// Floating point types the projection and evaluation layers run in.
pub trait Real: Scalar + PartialOrd + Send + Sync + 'static {
    /// Squared-norm threshold below which a projection is declared degenerate.
    const DEGENERACY_EPS: f64;
    fn from_f64(x: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Real for f64 {
    const DEGENERACY_EPS: f64 = 1e-30;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Real for f32 {
    const DEGENERACY_EPS: f64 = 1e-18;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::from_f64(0.0);
    let mut comp = T::from_f64(0.0);
    for v in values {
        let t = sum + v;
        if abs(sum) >= abs(v) {
            comp = comp + ((sum - t) + v);
        } else {
            comp = comp + ((v - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

fn abs<T: Real>(x: T) -> T {
    if x < x.lift(0.0) {
        -x
    } else {
        x
    }
}
