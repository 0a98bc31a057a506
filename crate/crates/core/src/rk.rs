//! Implicit Runge–Kutta tableaux for the stage systems.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Midpoint,
    Irk4,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Midpoint => "midpoint",
            Scheme::Irk4 => "irk4",
        }
    }

    pub fn tableau(self) -> Tableau {
        match self {
            Scheme::Midpoint => Tableau::midpoint(),
            Scheme::Irk4 => Tableau::gauss4(),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "midpoint" | "imr" => Ok(Scheme::Midpoint),
            "irk4" | "gauss4" => Ok(Scheme::Irk4),
            other => Err(format!("unknown scheme '{other}' (expected midpoint or irk4)")),
        }
    }
}

/// Butcher tableau plus the stage-difference update weights `d = b^T A^{-1}`,
/// so that `u^{n+1} = u^n + sum_i d_i (U_i - u^n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tableau {
    pub s: usize,
    /// Row-major `s x s`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl Tableau {
    pub fn midpoint() -> Self {
        Self {
            s: 1,
            a: vec![0.5],
            b: vec![1.0],
            c: vec![0.5],
            d: vec![2.0],
        }
    }

    /// Two-stage Gauss–Legendre collocation, order 4.
    pub fn gauss4() -> Self {
        let r = 3f64.sqrt();
        Self {
            s: 2,
            a: vec![0.25, 0.25 - r / 6.0, 0.25 + r / 6.0, 0.25],
            b: vec![0.5, 0.5],
            c: vec![0.5 - r / 6.0, 0.5 + r / 6.0],
            d: vec![-r, r],
        }
    }

    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.s + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn update_weights_equal_b_times_inverse_a() {
        for t in [Tableau::midpoint(), Tableau::gauss4()] {
            let a = DMatrix::from_row_slice(t.s, t.s, &t.a);
            let inv = a.try_inverse().unwrap();
            for j in 0..t.s {
                let dj: f64 = (0..t.s).map(|i| t.b[i] * inv[(i, j)]).sum();
                assert!((dj - t.d[j]).abs() < 1e-13);
            }
            // row sums give the nodes
            for i in 0..t.s {
                let rs: f64 = (0..t.s).map(|j| t.a(i, j)).sum();
                assert!((rs - t.c[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gauss4_order_conditions() {
        let t = Tableau::gauss4();
        let bc = |p: i32| -> f64 { (0..2).map(|i| t.b[i] * t.c[i].powi(p)).sum() };
        for p in 0..4 {
            assert!((bc(p) - 1.0 / (p as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn scheme_names_parse() {
        assert_eq!("IRK4".parse::<Scheme>().unwrap(), Scheme::Irk4);
        assert_eq!("midpoint".parse::<Scheme>().unwrap(), Scheme::Midpoint);
        assert!("rk4".parse::<Scheme>().is_err());
    }
}
