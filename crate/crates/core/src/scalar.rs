//! Scalar abstraction: the whole crate is generic over `Real`, which is
//! implemented for `f32` and `f64`. Special functions are evaluated in `f64`
//! internally and narrowed, which is as accurate as the narrow type allows.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point scalar used throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;
    /// Exponential integral E1(x) for x > 0.
    fn exp_int_e1(self) -> Self;
    /// Bessel function of the first kind, order zero.
    fn bessel_j0(self) -> Self;
    /// Bessel function of the first kind, integer order n >= 0.
    fn bessel_jn(n: u32, x: Self) -> Self;
    /// Spherical Bessel function j_n(x), n >= 0, x >= 0.
    fn spherical_jn(n: u32, x: Self) -> Self;
}

/// Shorthand for embedding an `f64` literal into a generic scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

impl Real for f64 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
    #[inline]
    fn exp_int_e1(self) -> Self {
        special::exp_int_e1(self)
    }
    #[inline]
    fn bessel_j0(self) -> Self {
        libm::j0(self)
    }
    #[inline]
    fn bessel_jn(n: u32, x: Self) -> Self {
        libm::jn(n as i32, x)
    }
    #[inline]
    fn spherical_jn(n: u32, x: Self) -> Self {
        special::spherical_jn(n, x)
    }
}

impl Real for f32 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self as f64) as f32
    }
    #[inline]
    fn exp_int_e1(self) -> Self {
        special::exp_int_e1(self as f64) as f32
    }
    #[inline]
    fn bessel_j0(self) -> Self {
        libm::j0(self as f64) as f32
    }
    #[inline]
    fn bessel_jn(n: u32, x: Self) -> Self {
        libm::jn(n as i32, x as f64) as f32
    }
    #[inline]
    fn spherical_jn(n: u32, x: Self) -> Self {
        special::spherical_jn(n, x as f64) as f32
    }
}

/// f64 special-function kernels not provided by libm.
pub mod special {
    /// Euler-Mascheroni constant.
    pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    /// Exponential integral E1(x) = int_x^inf e^-t / t dt, x > 0.
    ///
    /// Power series for x <= 1, modified-Lentz continued fraction otherwise.
    /// Relative accuracy is a few ulps across the range used here.
    pub fn exp_int_e1(x: f64) -> f64 {
        assert!(x > 0.0, "E1 requires a positive argument, got {x}");
        if x <= 1.0 {
            // E1(x) = -gamma - ln x + sum_{n>=1} (-1)^{n+1} x^n / (n n!)
            let mut sum = 0.0;
            let mut term = 1.0;
            for n in 1..=40 {
                term *= -x / n as f64;
                let add = -term / n as f64;
                sum += add;
                if add.abs() < 1e-18 * (sum.abs() + 1e-30) {
                    break;
                }
            }
            -EULER_GAMMA - x.ln() + sum
        } else if x > 705.0 {
            0.0 // below f64 underflow once multiplied by e^-x
        } else {
            // E1(x) = e^-x / (x + 1 - 1/(x + 3 - 4/(x + 5 - 9/(...))))
            let tiny = 1e-300;
            let mut b = x + 1.0;
            let mut c = 1.0 / tiny;
            let mut d = 1.0 / b;
            let mut h = d;
            for i in 1..200 {
                let a = -(i as f64) * (i as f64);
                b += 2.0;
                d = 1.0 / (a * d + b);
                c = b + a / c;
                let del = c * d;
                h *= del;
                if (del - 1.0).abs() < 1e-16 {
                    break;
                }
            }
            h * (-x).exp()
        }
    }

    /// Spherical Bessel function j_n(x) for n >= 0, x >= 0.
    ///
    /// Ascending power series when the upward recursion would be unstable
    /// (x < n), three-term upward recursion otherwise.
    pub fn spherical_jn(n: u32, x: f64) -> f64 {
        if x == 0.0 {
            return if n == 0 { 1.0 } else { 0.0 };
        }
        if n == 0 {
            return x.sin() / x;
        }
        if x >= n as f64 {
            let mut jm = x.sin() / x;
            let mut jc = x.sin() / (x * x) - x.cos() / x;
            for m in 1..n {
                let jn = (2 * m + 1) as f64 / x * jc - jm;
                jm = jc;
                jc = jn;
            }
            jc
        } else {
            // j_n(x) = x^n / (2n+1)!! * sum_m (-x^2/2)^m / (m! (2n+2m+1)!!)
            let mut double_fact = 1.0;
            for k in 0..n {
                double_fact *= (2 * k + 3) as f64;
            }
            let mut term = 1.0;
            let mut sum = 1.0;
            let half_x2 = 0.5 * x * x;
            for m in 1..120 {
                term *= -half_x2 / (m as f64 * (2 * n + 2 * m + 1) as f64);
                sum += term;
                if term.abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            x.powi(n as i32) / double_fact * sum
        }
    }
}
