//! Element-local kernels written over [`Real`] so the same code yields
//! residual values and, through dual numbers, exact Jacobian entries.

use crate::ad::Real;
use crate::dg::{left_end, DgSpace, MAX_DEGREE};

/// Upper bound on quadrature points per element (`2 (k + 1)`).
pub const MAX_QP: usize = 2 * (MAX_DEGREE + 1);
/// Upper bound on modes per element.
pub const MAX_NB: usize = MAX_DEGREE + 1;

/// Per-point buffer of quadrature values.
pub type Qp<T> = [T; MAX_QP];

/// Reference-element tables copied out of a [`DgSpace`].
#[derive(Debug, Clone)]
pub struct ElementKit {
    pub nb: usize,
    pub nq: usize,
    weights: Vec<f64>,
    values: Vec<f64>,
    /// `(2l+1)/2 * w_q * P_l(xi_q)`, the projection weights.
    proj: Vec<f64>,
    end_left: Vec<f64>,
    end_right: Vec<f64>,
}

impl ElementKit {
    pub fn new(space: &DgSpace) -> Self {
        let nb = space.nb();
        let rule = space.rule();
        let nq = rule.len();
        let table = space.table();
        let mut proj = vec![0.0; nq * nb];
        for q in 0..nq {
            for l in 0..nb {
                proj[q * nb + l] = 0.5 * (2 * l + 1) as f64 * rule.weights[q] * table.value(q, l);
            }
        }
        Self {
            nb,
            nq,
            weights: rule.weights.clone(),
            values: table.values.clone(),
            proj,
            end_left: space.end_projection(crate::dg::Side::Left).to_vec(),
            end_right: space.end_projection(crate::dg::Side::Right).to_vec(),
        }
    }

    #[inline]
    pub fn buf<T: Real>() -> Qp<T> {
        [T::zero(); MAX_QP]
    }

    /// Values of a modal expansion at the quadrature points.
    #[inline]
    pub fn at_qp<T: Real>(&self, c: &[T]) -> Qp<T> {
        let mut out = Self::buf::<T>();
        for (q, o) in out.iter_mut().enumerate().take(self.nq) {
            let row = &self.values[q * self.nb..(q + 1) * self.nb];
            let mut s = c[0] * row[0];
            for j in 1..self.nb {
                s += c[j] * row[j];
            }
            *o = s;
        }
        out
    }

    /// Trace at `xi = +1`.
    #[inline]
    pub fn right<T: Real>(&self, c: &[T]) -> T {
        let mut s = c[0];
        for &v in &c[1..self.nb] {
            s += v;
        }
        s
    }

    /// Trace at `xi = -1`.
    #[inline]
    pub fn left<T: Real>(&self, c: &[T]) -> T {
        let mut s = c[0];
        for (j, &v) in c.iter().enumerate().take(self.nb).skip(1) {
            if j % 2 == 0 {
                s += v;
            } else {
                s -= v;
            }
        }
        s
    }

    /// Modal coefficients of `Π g` from values at the quadrature points.
    #[inline]
    pub fn project<T: Real>(&self, g: &Qp<T>) -> [T; MAX_NB] {
        let mut out = [T::zero(); MAX_NB];
        for q in 0..self.nq {
            for (l, o) in out.iter_mut().enumerate().take(self.nb) {
                *o += g[q] * self.proj[q * self.nb + l];
            }
        }
        out
    }

    /// `(Π g)(-1)` and `(Π g)(+1)`.
    #[inline]
    pub fn projected_ends<T: Real>(&self, g: &Qp<T>) -> (T, T) {
        let mut l = T::zero();
        let mut r = T::zero();
        for q in 0..self.nq {
            l += g[q] * self.end_left[q];
            r += g[q] * self.end_right[q];
        }
        (l, r)
    }

    /// `out[l] += scale * (g, phi_l)` on an element of width `h`.
    #[inline]
    pub fn load<T: Real>(&self, h: f64, g: &Qp<T>, scale: f64, out: &mut [T]) {
        let c = 0.5 * h * scale;
        for q in 0..self.nq {
            let gq = g[q] * (self.weights[q] * c);
            for (l, o) in out.iter_mut().enumerate().take(self.nb) {
                *o += gq * self.values[q * self.nb + l];
            }
        }
    }

    /// `∫ g dx` over an element of width `h`.
    #[inline]
    pub fn integrate<T: Real>(&self, h: f64, g: &Qp<T>) -> T {
        let mut s = T::zero();
        for q in 0..self.nq {
            s += g[q] * self.weights[q];
        }
        s * (0.5 * h)
    }

    /// `out[l] += scale * [(x, phi_l') - <{x}, phi_l n>]` for the modal
    /// coefficients of `x` on the previous, current and next element.
    #[inline]
    pub fn weak_derivative<T: Real>(&self, xm: &[T], x: &[T], xp: &[T], scale: f64, out: &mut [T]) {
        let avg_left = (self.right(xm) + self.left(x)) * (0.5 * scale);
        let avg_right = (self.right(x) + self.left(xp)) * (0.5 * scale);
        for l in 0..self.nb {
            let mut s = T::zero();
            // (P_j, P_l') is 2 for j < l with l + j odd
            let mut j = (l + 1) % 2;
            while j < l {
                s += x[j] * 2.0;
                j += 2;
            }
            out[l] += s * scale - avg_right;
            if l % 2 == 0 {
                out[l] += avg_left;
            } else {
                out[l] -= avg_left;
            }
        }
    }

    /// `out[l] += c * <[[x]], phi_l n>`.
    #[inline]
    pub fn jump_pairing<T: Real>(&self, xm: &[T], x: &[T], xp: &[T], c: T, out: &mut [T]) {
        let jl = (self.right(xm) - self.left(x)) * c;
        let jr = (self.right(x) - self.left(xp)) * c;
        for (l, o) in out.iter_mut().enumerate().take(self.nb) {
            *o += jr;
            if l % 2 == 0 {
                *o -= jl;
            } else {
                *o += jl;
            }
        }
    }

    /// `out[l] += <g, phi_l n>` for single-valued node values `g` at the
    /// left and right faces.
    #[inline]
    pub fn face_pairing<T: Real>(&self, g_left: T, g_right: T, out: &mut [T]) {
        for (l, o) in out.iter_mut().enumerate().take(self.nb) {
            *o += g_right;
            *o -= g_left * left_end(l);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg::assemble_operators;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernels_match_global_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in [0usize, 1, 3] {
            let s = DgSpace::uniform(0.0, 2.0, 5, k).unwrap();
            let kit = ElementKit::new(&s);
            let ops = assemble_operators(&s);
            let nb = s.nb();
            let n = s.n_elements();
            let x: Vec<f64> = (0..s.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wd = ops.weak_derivative(&x);
            let jx = ops.j.apply(&x);
            for e in 0..n {
                let el = |i: usize| &x[i * nb..(i + 1) * nb];
                let (m, p) = ((e + n - 1) % n, (e + 1) % n);
                let mut a = vec![0.0; nb];
                kit.weak_derivative(el(m), el(e), el(p), 1.0, &mut a);
                let mut b = vec![0.0; nb];
                kit.jump_pairing(el(m), el(e), el(p), 1.0, &mut b);
                for l in 0..nb {
                    assert!((a[l] - wd[e * nb + l]).abs() < 1e-14);
                    assert!((b[l] - jx[e * nb + l]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn projection_and_load_agree_with_space() {
        let s = DgSpace::uniform(0.0, 1.0, 4, 2).unwrap();
        let kit = ElementKit::new(&s);
        let u = s.project(|x| (3.0 * x).sin() + x);
        let sq = s.project_map(u.coeffs(), |v| v * v);
        let ld = s.load_pointwise(&[u.coeffs()], |v| v[0] * v[0]);
        for e in 0..4 {
            let g = kit.at_qp(u.element(e));
            let mut g2 = ElementKit::buf::<f64>();
            for q in 0..kit.nq {
                g2[q] = g[q] * g[q];
            }
            let c = kit.project(&g2);
            let (l, r) = kit.projected_ends(&g2);
            let mut out = vec![0.0; 3];
            kit.load(s.mesh().width(e), &g2, 1.0, &mut out);
            for j in 0..3 {
                assert!((c[j] - sq[e * 3 + j]).abs() < 1e-15);
                assert!((out[j] - ld[e * 3 + j]).abs() < 1e-15);
            }
            assert!((r - kit.right(&c[..3])).abs() < 1e-14);
            assert!((l - kit.left(&c[..3])).abs() < 1e-14);
        }
    }
}
