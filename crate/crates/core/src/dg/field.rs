use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use super::basis::legendre_all;
use super::space::{DgSpace, Side};

/// Modal coefficients of one piecewise polynomial on a [`DgSpace`].
///
/// Storage is element-major: coefficient `j` of element `e` lives at
/// `e * (k + 1) + j`.
#[derive(Debug, Clone)]
pub struct DofVector {
    space: Arc<DgSpace>,
    coeffs: Vec<f64>,
}

impl DofVector {
    pub fn zeros(space: Arc<DgSpace>) -> Self {
        let n = space.ndof();
        Self {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn from_coeffs(space: Arc<DgSpace>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.ndof(), "coefficient length mismatch");
        Self { space, coeffs }
    }

    pub fn constant(space: Arc<DgSpace>, c: f64) -> Self {
        let mut v = Self::zeros(space);
        let nb = v.space.nb();
        for e in 0..v.space.n_elements() {
            v.coeffs[e * nb] = c;
        }
        v
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn element(&self, e: usize) -> &[f64] {
        let nb = self.space.nb();
        &self.coeffs[e * nb..(e + 1) * nb]
    }

    pub fn compatible(&self, other: &DofVector) -> bool {
        self.space.same_as(&other.space)
    }

    /// Value at reference coordinate `xi` of element `e`.
    pub fn eval_ref(&self, e: usize, xi: f64) -> f64 {
        let p = legendre_all(self.space.degree(), xi);
        self.element(e).iter().zip(&p).map(|(c, p)| c * p).sum()
    }

    /// Value at physical `x` (periodically wrapped). At a node, the value
    /// from the element to the right is returned.
    pub fn eval(&self, x: f64) -> f64 {
        let (e, xi) = self.space.mesh().locate(x);
        self.eval_ref(e, xi)
    }

    pub fn end_value(&self, e: usize, side: Side) -> f64 {
        self.space.end_value(self.element(e), side)
    }

    /// `∫ u dx`.
    pub fn integral(&self) -> f64 {
        let nb = self.space.nb();
        (0..self.space.n_elements())
            .map(|e| self.space.mesh().width(e) * self.coeffs[e * nb])
            .sum()
    }

    /// `(u, u)` computed from the diagonal mass matrix.
    pub fn l2_norm_squared(&self) -> f64 {
        let nb = self.space.nb();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| self.space.mass(i / nb, i % nb) * c * c)
            .sum()
    }

    pub fn inner(&self, other: &DofVector) -> f64 {
        let nb = self.space.nb();
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(i, (a, b))| self.space.mass(i / nb, i % nb) * a * b)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn axpy(&mut self, alpha: f64, x: &DofVector) {
        for (a, b) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *a += alpha * b;
        }
    }

    /// Samples `(x, u_h(x))` at `per_element` equispaced reference points
    /// per element (endpoints excluded).
    pub fn sample(&self, per_element: usize) -> Vec<(f64, f64)> {
        let mesh = self.space.mesh();
        let mut out = Vec::with_capacity(per_element * mesh.len());
        for e in 0..mesh.len() {
            for s in 0..per_element {
                let xi = -1.0 + (2.0 * s as f64 + 1.0) / per_element as f64;
                out.push((mesh.map(e, xi), self.eval_ref(e, xi)));
            }
        }
        out
    }
}

impl Add for &DofVector {
    type Output = DofVector;
    fn add(self, rhs: &DofVector) -> DofVector {
        assert!(self.compatible(rhs), "adding fields on different spaces");
        let coeffs = self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect();
        DofVector::from_coeffs(self.space.clone(), coeffs)
    }
}

impl Sub for &DofVector {
    type Output = DofVector;
    fn sub(self, rhs: &DofVector) -> DofVector {
        assert!(self.compatible(rhs), "subtracting fields on different spaces");
        let coeffs = self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect();
        DofVector::from_coeffs(self.space.clone(), coeffs)
    }
}

impl Mul<&DofVector> for f64 {
    type Output = DofVector;
    fn mul(self, rhs: &DofVector) -> DofVector {
        let coeffs = rhs.coeffs.iter().map(|c| self * c).collect();
        DofVector::from_coeffs(rhs.space.clone(), coeffs)
    }
}
