use std::sync::Arc;

use super::basis::{left_end, BasisTable};
use super::field::DofVector;
use super::mesh::Mesh;
use super::quadrature::{gauss_rule, QuadratureRule};
use super::DgError;

/// Largest supported polynomial degree.
pub const MAX_DEGREE: usize = 6;

/// Which end of an element a trace is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `xi = -1`
    Left,
    /// `xi = +1`
    Right,
}

/// The broken polynomial space of degree `k` on a periodic mesh, with the
/// quadrature and basis tables every assembly routine shares.
///
/// The quadrature rule has `2(k + 1)` points, exact to degree `4k + 3`, so
/// cubic nonlinearities and products with projected quadratics are
/// integrated without error.
#[derive(Debug)]
pub struct DgSpace {
    mesh: Mesh,
    k: usize,
    rule: QuadratureRule,
    table: BasisTable,
    /// `end_projection[side][q]`: weight such that the trace of `Π g` at that
    /// end equals `sum_q end_projection[side][q] * g(xi_q)`.
    end_projection: [Vec<f64>; 2],
}

impl DgSpace {
    pub fn new(mesh: Mesh, k: usize) -> Result<Arc<Self>, DgError> {
        if k > MAX_DEGREE {
            return Err(DgError::DegreeOutOfRange(k));
        }
        let rule = gauss_rule(2 * (k + 1));
        let table = BasisTable::new(k, &rule);
        let mut end_projection = [vec![0.0; rule.len()], vec![0.0; rule.len()]];
        for q in 0..rule.len() {
            for l in 0..=k {
                let c = 0.5 * (2 * l + 1) as f64 * rule.weights[q] * table.value(q, l);
                end_projection[0][q] += c * left_end(l);
                end_projection[1][q] += c;
            }
        }
        Ok(Arc::new(Self {
            mesh,
            k,
            rule,
            table,
            end_projection,
        }))
    }

    pub fn uniform(a: f64, b: f64, n: usize, k: usize) -> Result<Arc<Self>, DgError> {
        Self::new(Mesh::uniform(a, b, n)?, k)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    /// Modes per element.
    pub fn nb(&self) -> usize {
        self.k + 1
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.len()
    }

    pub fn ndof(&self) -> usize {
        self.mesh.len() * (self.k + 1)
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn table(&self) -> &BasisTable {
        &self.table
    }

    pub fn end_projection(&self, side: Side) -> &[f64] {
        match side {
            Side::Left => &self.end_projection[0],
            Side::Right => &self.end_projection[1],
        }
    }

    /// Diagonal mass entry `(phi_j, phi_j)` on element `e`.
    #[inline]
    pub fn mass(&self, e: usize, j: usize) -> f64 {
        self.mesh.width(e) / (2 * j + 1) as f64
    }

    pub fn same_as(&self, other: &DgSpace) -> bool {
        std::ptr::eq(self, other) || (self.k == other.k && self.mesh == other.mesh)
    }

    /// Field values at the quadrature points of element `e`.
    pub fn values_at_qp(&self, coeffs: &[f64], e: usize, out: &mut [f64]) {
        let nb = self.nb();
        let c = &coeffs[e * nb..(e + 1) * nb];
        for (q, o) in out.iter_mut().enumerate().take(self.rule.len()) {
            *o = (0..nb).map(|j| c[j] * self.table.value(q, j)).sum();
        }
    }

    /// Element-end trace of a modal expansion.
    #[inline]
    pub fn end_value(&self, element_coeffs: &[f64], side: Side) -> f64 {
        match side {
            Side::Right => element_coeffs.iter().sum(),
            Side::Left => element_coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * left_end(j))
                .sum(),
        }
    }

    /// L2 projection of `f(x)` with the space's quadrature rule.
    pub fn project(self: &Arc<Self>, f: impl Fn(f64) -> f64) -> DofVector {
        self.project_with_rule(f, &self.rule.clone())
    }

    /// L2 projection of `f(x)` using an explicit quadrature rule.
    pub fn project_with_rule(
        self: &Arc<Self>,
        f: impl Fn(f64) -> f64,
        rule: &QuadratureRule,
    ) -> DofVector {
        let nb = self.nb();
        let table = BasisTable::new(self.k, rule);
        let mut coeffs = vec![0.0; self.ndof()];
        for e in 0..self.n_elements() {
            for q in 0..rule.len() {
                let fx = f(self.mesh.map(e, rule.points[q]));
                for l in 0..nb {
                    coeffs[e * nb + l] +=
                        0.5 * (2 * l + 1) as f64 * rule.weights[q] * fx * table.value(q, l);
                }
            }
        }
        DofVector::from_coeffs(self.clone(), coeffs)
    }

    /// Projection of a pointwise function of one field, `Π g(u)`, in coefficient form.
    pub fn project_map(&self, coeffs: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
        self.project_pointwise(&[coeffs], |v| g(v[0]))
    }

    /// Projection of a pointwise combination of several fields.
    pub fn project_pointwise(&self, fields: &[&[f64]], g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let nb = self.nb();
        let nq = self.rule.len();
        let mut out = vec![0.0; self.ndof()];
        let mut qp = vec![vec![0.0; nq]; fields.len()];
        let mut args = vec![0.0; fields.len()];
        for e in 0..self.n_elements() {
            for (f, vals) in fields.iter().zip(qp.iter_mut()) {
                self.values_at_qp(f, e, vals);
            }
            for q in 0..nq {
                for (a, vals) in args.iter_mut().zip(&qp) {
                    *a = vals[q];
                }
                let gq = g(&args) * self.rule.weights[q];
                for l in 0..nb {
                    out[e * nb + l] += 0.5 * (2 * l + 1) as f64 * gq * self.table.value(q, l);
                }
            }
        }
        out
    }

    /// Load vector `(g(fields), phi_l)` for every test function.
    pub fn load_pointwise(&self, fields: &[&[f64]], g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut out = self.project_pointwise(fields, g);
        for e in 0..self.n_elements() {
            for l in 0..self.nb() {
                out[e * self.nb() + l] *= self.mass(e, l);
            }
        }
        out
    }

    /// Load vector `(s(x), phi_l)` of an explicit function of space.
    pub fn load_function(&self, s: impl Fn(f64) -> f64) -> Vec<f64> {
        let nb = self.nb();
        let mut out = vec![0.0; self.ndof()];
        for e in 0..self.n_elements() {
            let half_h = 0.5 * self.mesh.width(e);
            for q in 0..self.rule.len() {
                let sq = s(self.mesh.map(e, self.rule.points[q])) * self.rule.weights[q] * half_h;
                for l in 0..nb {
                    out[e * nb + l] += sq * self.table.value(q, l);
                }
            }
        }
        out
    }

    /// `∫ g(fields) dx` over the whole mesh with the space's rule.
    pub fn integrate_pointwise(&self, fields: &[&[f64]], g: impl Fn(&[f64]) -> f64) -> f64 {
        let nq = self.rule.len();
        let mut qp = vec![vec![0.0; nq]; fields.len()];
        let mut args = vec![0.0; fields.len()];
        let mut total = 0.0;
        for e in 0..self.n_elements() {
            for (f, vals) in fields.iter().zip(qp.iter_mut()) {
                self.values_at_qp(f, e, vals);
            }
            let mut local = 0.0;
            for q in 0..nq {
                for (a, vals) in args.iter_mut().zip(&qp) {
                    *a = vals[q];
                }
                local += self.rule.weights[q] * g(&args);
            }
            total += 0.5 * self.mesh.width(e) * local;
        }
        total
    }

    /// Applies the inverse of the (diagonal) mass matrix in place.
    pub fn mass_solve_in_place(&self, v: &mut [f64]) {
        let nb = self.nb();
        for e in 0..self.n_elements() {
            for j in 0..nb {
                v[e * nb + j] /= self.mass(e, j);
            }
        }
    }

    pub fn mass_apply(&self, x: &[f64], out: &mut [f64]) {
        let nb = self.nb();
        for e in 0..self.n_elements() {
            for j in 0..nb {
                out[e * nb + j] = self.mass(e, j) * x[e * nb + j];
            }
        }
    }
}
