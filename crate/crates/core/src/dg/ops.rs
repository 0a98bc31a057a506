use super::basis::left_end;
use super::space::DgSpace;

/// `∫ P_j P_l' dxi` on the reference element: 2 when `j < l` and `l + j` is
/// odd, zero otherwise. Independent of the element width.
#[inline]
pub fn derivative_entry(l: usize, j: usize) -> f64 {
    if j < l && (l + j) % 2 == 1 {
        2.0
    } else {
        0.0
    }
}

/// Periodic block-tridiagonal operator with `(k+1) x (k+1)` blocks.
///
/// Row block `e` couples to element `e - 1` through `lower[e]`, to itself
/// through `diag[e]` and to `e + 1` through `upper[e]`, all indices taken
/// modulo `N`. With two elements the lower and upper neighbours coincide and
/// both contributions are summed.
#[derive(Debug, Clone)]
pub struct BlockOp {
    nb: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl BlockOp {
    fn zeros(n_elem: usize, nb: usize) -> Self {
        let len = n_elem * nb * nb;
        Self {
            nb,
            lower: vec![0.0; len],
            diag: vec![0.0; len],
            upper: vec![0.0; len],
        }
    }

    pub fn n_elements(&self) -> usize {
        self.diag.len() / (self.nb * self.nb)
    }

    pub fn dim(&self) -> usize {
        self.n_elements() * self.nb
    }

    #[inline]
    fn idx(&self, e: usize, l: usize, j: usize) -> usize {
        (e * self.nb + l) * self.nb + j
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_elements();
        let nb = self.nb;
        let mut y = vec![0.0; n * nb];
        for e in 0..n {
            let em = (e + n - 1) % n;
            let ep = (e + 1) % n;
            for l in 0..nb {
                let mut s = 0.0;
                for j in 0..nb {
                    let i = self.idx(e, l, j);
                    s += self.lower[i] * x[em * nb + j]
                        + self.diag[i] * x[e * nb + j]
                        + self.upper[i] * x[ep * nb + j];
                }
                y[e * nb + l] = s;
            }
        }
        y
    }

    /// Dense row-major copy, mainly for tests and small oracles.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n_elements();
        let nb = self.nb;
        let dim = n * nb;
        let mut a = vec![0.0; dim * dim];
        for e in 0..n {
            let em = (e + n - 1) % n;
            let ep = (e + 1) % n;
            for l in 0..nb {
                let row = e * nb + l;
                for j in 0..nb {
                    let i = self.idx(e, l, j);
                    a[row * dim + em * nb + j] += self.lower[i];
                    a[row * dim + e * nb + j] += self.diag[i];
                    a[row * dim + ep * nb + j] += self.upper[i];
                }
            }
        }
        a
    }

    pub fn add(&self, other: &BlockOp) -> BlockOp {
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        BlockOp {
            nb: self.nb,
            lower: zip(&self.lower, &other.lower),
            diag: zip(&self.diag, &other.diag),
            upper: zip(&self.upper, &other.upper),
        }
    }
}

/// Global DG operators on one space.
///
/// * `m`: mass, `(x, phi_l)`.
/// * `d`: volume derivative, `(x, phi_l')`.
/// * `a`: central boundary term, `-<{x}, phi_l n>`, so that `(d + a) x` is
///   the weak derivative pairing `(x, v_x) - <{x}, v n>`.
/// * `j`: jump boundary term, `<[[x]], phi_l n>`.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub m: BlockOp,
    pub d: BlockOp,
    pub a: BlockOp,
    pub j: BlockOp,
}

impl OperatorSet {
    /// `(D + A) x`.
    pub fn weak_derivative(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.d.apply(x);
        for (yi, ai) in y.iter_mut().zip(self.a.apply(x)) {
            *yi += ai;
        }
        y
    }
}

pub fn assemble_operators(space: &DgSpace) -> OperatorSet {
    let n = space.n_elements();
    let nb = space.nb();
    let mut m = BlockOp::zeros(n, nb);
    let mut d = BlockOp::zeros(n, nb);
    let mut a = BlockOp::zeros(n, nb);
    let mut jmp = BlockOp::zeros(n, nb);
    for e in 0..n {
        for l in 0..nb {
            let sl = left_end(l);
            let i = m.idx(e, l, l);
            m.diag[i] = space.mass(e, l);
            for j in 0..nb {
                let sj = left_end(j);
                let i = m.idx(e, l, j);
                d.diag[i] = derivative_entry(l, j);
                // right face, n = +1: -{x}(x_{e+1}) phi_l(1)
                a.diag[i] -= 0.5;
                a.upper[i] -= 0.5 * sj;
                // left face, n = -1: +{x}(x_e) phi_l(-1)
                a.diag[i] += 0.5 * sl * sj;
                a.lower[i] += 0.5 * sl;
                // <[[x]], phi_l n>
                jmp.diag[i] += 1.0;
                jmp.upper[i] -= sj;
                jmp.diag[i] += sl * sj;
                jmp.lower[i] -= sl;
            }
        }
    }
    OperatorSet { m, d, a, j: jmp }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg::DofVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn piecewise_constants_have_no_derivative() {
        let s = DgSpace::uniform(0.0, 1.0, 2, 0).unwrap();
        let ops = assemble_operators(&s);
        assert!(ops.d.to_dense().iter().all(|&v| v == 0.0));
        assert_eq!(ops.m.to_dense(), vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn mass_symmetric_positive() {
        let s = DgSpace::uniform(0.0, 2.0, 5, 3).unwrap();
        let ops = assemble_operators(&s);
        let dim = s.ndof();
        let m = ops.m.to_dense();
        for r in 0..dim {
            for c in 0..dim {
                assert_eq!(m[r * dim + c], m[c * dim + r]);
            }
        }
        let mat = nalgebra::DMatrix::from_row_slice(dim, dim, &m);
        assert!(mat.cholesky().is_some());
    }

    #[test]
    fn jump_operator_kills_continuous_fields() {
        let s = DgSpace::uniform(0.0, 1.0, 6, 2).unwrap();
        let ops = assemble_operators(&s);
        let c = DofVector::constant(s.clone(), 1.7);
        assert!(ops.j.apply(c.coeffs()).iter().all(|v| v.abs() < 1e-15));
        // periodic piecewise-linear hat: continuous, with kinks at nodes
        let hat = s.project(|x| 0.5 - (x - 0.5).abs());
        assert!(ops.j.apply(hat.coeffs()).iter().all(|v| v.abs() < 1e-14));
        let u = s.project(|x| (2.0 * std::f64::consts::PI * x).cos());
        assert!(ops.j.apply(u.coeffs()).iter().any(|v| v.abs() > 1e-8));
    }

    #[test]
    fn central_weak_derivative_is_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, k) in &[(2usize, 0usize), (2, 3), (5, 1), (8, 4)] {
            let s = DgSpace::uniform(-1.0, 2.0, n, k).unwrap();
            let ops = assemble_operators(&s);
            let x: Vec<f64> = (0..s.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..s.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dx = ops.weak_derivative(&x);
            let dy = ops.weak_derivative(&y);
            let a: f64 = y.iter().zip(&dx).map(|(p, q)| p * q).sum();
            let b: f64 = x.iter().zip(&dy).map(|(p, q)| p * q).sum();
            assert!((a + b).abs() < 1e-12 * (1.0 + a.abs()), "n={n} k={k}: {a} {b}");
        }
    }

    #[test]
    fn weak_derivative_of_smooth_field() {
        // -(M^-1 (D + A) u) approximates u_x for central traces
        let s = DgSpace::uniform(0.0, 1.0, 32, 2).unwrap();
        let ops = assemble_operators(&s);
        let u = s.project(|x| (2.0 * std::f64::consts::PI * x).sin());
        let mut q = ops.weak_derivative(u.coeffs());
        s.mass_solve_in_place(&mut q);
        q.iter_mut().for_each(|v| *v = -*v);
        let q = DofVector::from_coeffs(s.clone(), q);
        let exact = s.project(|x| 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * x).cos());
        assert!((&q - &exact).l2_norm_squared().sqrt() < 1e-3);
    }
}
