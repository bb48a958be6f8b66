//! First-order forward-mode dual numbers with a fixed number of tangent lanes.
//!
//! Used to differentiate the RK4 discretization exactly: one sweep with
//! `N = n_x + n_u` lanes yields the full one-step Jacobian pair (A, B) at
//! machine precision. Only the operations the dynamics actually use are
//! provided, via the [`Smooth`] trait that plain scalars implement too.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Scalar;

/// Arithmetic closure shared by plain scalars and dual numbers, so the
/// dynamics right-hand sides are written once.
pub trait Smooth:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    type Base: Scalar;

    fn from_base(v: Self::Base) -> Self;
    fn base(self) -> Self::Base;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    /// Lift an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_base(<Self::Base as Scalar>::lit(v))
    }
}

impl<T: Scalar> Smooth for T {
    type Base = T;

    #[inline]
    fn from_base(v: T) -> Self {
        v
    }

    #[inline]
    fn base(self) -> T {
        self
    }

    #[inline]
    fn sin(self) -> Self {
        num_traits::Float::sin(self)
    }

    #[inline]
    fn cos(self) -> Self {
        num_traits::Float::cos(self)
    }
}

/// Scalar value carrying `N` directional derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

impl<T: Scalar, const N: usize> Dual<T, N> {
    #[inline]
    pub fn constant(re: T) -> Self {
        Self {
            re,
            eps: [T::zero(); N],
        }
    }

    /// Variable seeded with unit derivative in lane `lane`.
    #[inline]
    pub fn variable(re: T, lane: usize) -> Self {
        let mut eps = [T::zero(); N];
        eps[lane] = T::one();
        Self { re, eps }
    }
}

impl<T: Scalar, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e = *e + *r;
        }
        Self {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl<T: Scalar, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e = *e - *r;
        }
        Self {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl<T: Scalar, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [T::zero(); N];
        for i in 0..N {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<T: Scalar, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.re;
        let re = self.re * inv;
        let mut eps = [T::zero(); N];
        for i in 0..N {
            // d(a/b) = (da - (a/b) db) / b
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl<T: Scalar, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Self { re: -self.re, eps }
    }
}

impl<T: Scalar, const N: usize> Smooth for Dual<T, N> {
    type Base = T;

    #[inline]
    fn from_base(v: T) -> Self {
        Self::constant(v)
    }

    #[inline]
    fn base(self) -> T {
        self.re
    }

    #[inline]
    fn sin(self) -> Self {
        let (s, c) = (num_traits::Float::sin(self.re), num_traits::Float::cos(self.re));
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * c;
        }
        Self { re: s, eps }
    }

    #[inline]
    fn cos(self) -> Self {
        let (s, c) = (num_traits::Float::sin(self.re), num_traits::Float::cos(self.re));
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -(*e * s);
        }
        Self { re: c, eps }
    }
}
