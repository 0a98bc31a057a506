//! Scalar abstraction used by the residual code so the same expressions can
//! be evaluated in plain `f64` or in forward-mode dual numbers for exact
//! Jacobian entries.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number of derivative directions carried by one [`Dual`].
pub const CHUNK: usize = 8;

pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign<f64>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;

    #[inline]
    fn zero() -> Self {
        Self::cst(0.0)
    }

    #[inline]
    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
}

/// Value plus [`CHUNK`] directional derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; CHUNK],
}

impl Dual {
    /// Independent variable seeded in direction `dir` (or a constant when `None`).
    #[inline]
    pub fn var(v: f64, dir: Option<usize>) -> Self {
        let mut d = [0.0; CHUNK];
        if let Some(i) = dir {
            d[i] = 1.0;
        }
        Self { v, d }
    }
}

impl Real for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Self { v, d: [0.0; CHUNK] }
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, r: Dual) -> Dual {
        self.v += r.v;
        for i in 0..CHUNK {
            self.d[i] += r.d[i];
        }
        self
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, r: Dual) -> Dual {
        self.v -= r.v;
        for i in 0..CHUNK {
            self.d[i] -= r.d[i];
        }
        self
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, r: Dual) -> Dual {
        let mut d = [0.0; CHUNK];
        for i in 0..CHUNK {
            d[i] = self.d[i] * r.v + self.v * r.d[i];
        }
        Dual { v: self.v * r.v, d }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, r: Dual) -> Dual {
        let inv = 1.0 / r.v;
        let v = self.v * inv;
        let mut d = [0.0; CHUNK];
        for i in 0..CHUNK {
            d[i] = (self.d[i] - v * r.d[i]) * inv;
        }
        Dual { v, d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        self * -1.0
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, r: f64) -> Dual {
        self.v += r;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, r: f64) -> Dual {
        self.v -= r;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(mut self, r: f64) -> Dual {
        self.v *= r;
        for x in self.d.iter_mut() {
            *x *= r;
        }
        self
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, r: f64) -> Dual {
        self * (1.0 / r)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, r: Dual) {
        *self = *self + r;
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, r: Dual) {
        *self = *self - r;
    }
}

impl MulAssign<f64> for Dual {
    #[inline]
    fn mul_assign(&mut self, r: f64) {
        *self = *self * r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<T: Real>(x: T, y: T) -> T {
        x * x * y - y / (x + 2.0) + x * 3.0 - 1.5
    }

    #[test]
    fn derivatives_match_closed_form() {
        let (x, y) = (0.7, -1.3);
        let r = poly(Dual::var(x, Some(0)), Dual::var(y, Some(3)));
        assert!((r.v - poly(x, y)).abs() < 1e-15);
        let dx = 2.0 * x * y + y / ((x + 2.0) * (x + 2.0)) + 3.0;
        let dy = x * x - 1.0 / (x + 2.0);
        assert!((r.d[0] - dx).abs() < 1e-14);
        assert!((r.d[3] - dy).abs() < 1e-14);
        assert!(r.d.iter().enumerate().all(|(i, v)| i == 0 || i == 3 || *v == 0.0));
    }
}
