use std::sync::Arc;

use super::field::DofVector;
use super::space::{DgSpace, Side};
use super::DgError;

/// One-sided limits of a field at every mesh node.
///
/// `left[i]` is the value at `x_i^-` (from element `i - 1`, wrapping to the
/// last element at node 0) and `right[i]` the value at `x_i^+` (from element
/// `i`). Node `N` is the periodic image of node 0 and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTraces {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl NodeTraces {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    #[inline]
    pub fn jump(&self, i: usize) -> f64 {
        self.left[i] - self.right[i]
    }

    #[inline]
    pub fn avg(&self, i: usize) -> f64 {
        0.5 * (self.left[i] + self.right[i])
    }

    pub fn jumps(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.jump(i)).collect()
    }

    pub fn avgs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.avg(i)).collect()
    }

    /// Traces of the pointwise product of two fields.
    pub fn product(&self, other: &NodeTraces) -> NodeTraces {
        NodeTraces {
            left: self.left.iter().zip(&other.left).map(|(a, b)| a * b).collect(),
            right: self.right.iter().zip(&other.right).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodeTraces {
        NodeTraces {
            left: self.left.iter().map(|&v| f(v)).collect(),
            right: self.right.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub fn trace_values(x: &DofVector) -> NodeTraces {
    let space = x.space();
    let n = space.n_elements();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 0..n {
        left[i] = x.end_value(space.mesh().left_of_node(i), Side::Right);
        right[i] = x.end_value(i, Side::Left);
    }
    NodeTraces { left, right }
}

fn check_len(x: &NodeTraces, y: &NodeTraces) -> Result<(), DgError> {
    if x.len() != y.len() {
        return Err(DgError::MismatchedMesh(x.len(), y.len()));
    }
    Ok(())
}

/// `sum_i [[x]] [[y]] (x_i)` with the periodic node counted once.
pub fn jump_sum(x: &NodeTraces, y: &NodeTraces) -> Result<f64, DgError> {
    check_len(x, y)?;
    Ok((0..x.len()).map(|i| x.jump(i) * y.jump(i)).sum())
}

/// `sum_i [[x]] {y} (x_i)`.
pub fn jump_avg_sum(x: &NodeTraces, y: &NodeTraces) -> Result<f64, DgError> {
    check_len(x, y)?;
    Ok((0..x.len()).map(|i| x.jump(i) * y.avg(i)).sum())
}

/// `<rho, v n>`: element-boundary integral with outward normals.
pub fn boundary_product(rho: &DofVector, v: &DofVector) -> f64 {
    let n = rho.space().n_elements();
    (0..n)
        .map(|e| {
            rho.end_value(e, Side::Right) * v.end_value(e, Side::Right)
                - rho.end_value(e, Side::Left) * v.end_value(e, Side::Left)
        })
        .sum()
}

/// Defect of `<rho, v n> = sum_i ([[rho]]{v} + [[v]]{rho})(x_i)`.
pub fn interface_identity_check(rho: &DofVector, v: &DofVector) -> Result<f64, DgError> {
    if !rho.compatible(v) {
        return Err(DgError::MismatchedMesh(
            rho.space().n_elements(),
            v.space().n_elements(),
        ));
    }
    let tr = trace_values(rho);
    let tv = trace_values(v);
    let rhs = jump_avg_sum(&tr, &tv)? + jump_avg_sum(&tv, &tr)?;
    Ok((boundary_product(rho, v) - rhs).abs())
}

/// `Π f` on the given space.
pub fn l2_project(f: impl Fn(f64) -> f64, space: &Arc<DgSpace>) -> DofVector {
    space.project(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn two_constants(a: f64, b: f64) -> DofVector {
        let s = DgSpace::uniform(0.0, 1.0, 2, 0).unwrap();
        DofVector::from_coeffs(s, vec![a, b])
    }

    #[test]
    fn hand_evaluated_jumps() {
        let t = trace_values(&two_constants(1.0, 2.0));
        // node 0 is periodic: left from element 1 (2), right from element 0 (1)
        assert_eq!(t.jump(0), 1.0);
        assert_eq!(t.jump(1), -1.0);
        let y = trace_values(&two_constants(0.0, 3.0));
        assert_eq!(jump_sum(&t, &y).unwrap(), 6.0);
        assert!(jump_sum(&t, &t).unwrap() >= 0.0);
    }

    #[test]
    fn constants_have_no_jumps() {
        let s = DgSpace::uniform(0.0, 3.0, 7, 3).unwrap();
        let c = DofVector::constant(s, -2.5);
        let t = trace_values(&c);
        for i in 0..t.len() {
            assert_eq!(t.jump(i), 0.0);
            assert!((t.avg(i) + 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_jumps_shrink_under_refinement() {
        let mut prev = f64::INFINITY;
        for n in [4, 8, 16, 32] {
            let s = DgSpace::uniform(0.0, 1.0, n, 4).unwrap();
            let u = s.project(|x| (2.0 * PI * x).sin());
            let t = trace_values(&u);
            let m = t.jumps().iter().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(m < prev / 8.0 || m < 1e-13, "n={n}: {m} vs {prev}");
            prev = m;
        }
        assert!(prev < 1e-6, "{prev}");
    }

    #[test]
    fn mismatched_traces_rejected() {
        let a = trace_values(&two_constants(1.0, 2.0));
        let s = DgSpace::uniform(0.0, 1.0, 3, 0).unwrap();
        let b = trace_values(&DofVector::constant(s, 1.0));
        assert!(matches!(jump_sum(&a, &b), Err(DgError::MismatchedMesh(2, 3))));
    }

    #[test]
    fn identity_symmetric_and_continuous_cases() {
        let s = DgSpace::uniform(0.0, 1.0, 8, 3).unwrap();
        let rho = s.project(|x| (7.0 * x).sin() + x * x);
        let d = interface_identity_check(&rho, &rho).unwrap();
        assert!(d < 1e-12);
        let t = trace_values(&rho);
        let twice: f64 = 2.0 * jump_avg_sum(&t, &t).unwrap();
        assert!((boundary_product(&rho, &rho) - twice).abs() < 1e-12);

        let c = DofVector::constant(s.clone(), 0.3);
        let tc = trace_values(&c);
        let lhs = boundary_product(&c, &rho);
        let rhs: f64 = (0..t.len()).map(|i| t.jump(i) * tc.left[i]).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn projection_orthogonality() {
        let s = DgSpace::uniform(0.0, 1.0, 16, 2).unwrap();
        let f = |x: f64| (2.0 * PI * x).sin();
        let u = l2_project(f, &s);
        let fine = crate::dg::gauss_rule(12);
        let table = crate::dg::BasisTable::new(2, &fine);
        for e in 0..16 {
            for j in 0..3 {
                let r: f64 = (0..fine.len())
                    .map(|q| {
                        let xi = fine.points[q];
                        let x = s.mesh().map(e, xi);
                        fine.weights[q] * (f(x) - u.eval_ref(e, xi)) * table.value(q, j)
                    })
                    .sum::<f64>()
                    * s.mesh().width(e)
                    / 2.0;
                assert!(r.abs() < 1e-12, "e={e} j={j}: {r}");
            }
        }
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let s = DgSpace::uniform(-1.0, 1.0, 2, 2).unwrap();
        let c = l2_project(|_| 3.0, &s);
        assert!((c.coeffs()[0] - 3.0).abs() < 1e-14);
        assert!(c.coeffs()[1].abs() < 1e-14 && c.coeffs()[2].abs() < 1e-14);
        let one = DgSpace::new(crate::dg::Mesh::from_nodes(vec![-1.0, 1.0, 3.0]).unwrap(), 1).unwrap();
        let x = l2_project(|x| x, &one);
        assert!((x.coeffs()[0]).abs() < 1e-15);
        assert!((x.coeffs()[1] - 1.0).abs() < 1e-15);
        // idempotence on a field's own evaluation
        let s = DgSpace::uniform(0.0, 2.0, 5, 4).unwrap();
        let u = s.project(|x| (3.0 * x).cos());
        let again = s.project(|x| u.eval(x));
        for (a, b) in u.coeffs().iter().zip(again.coeffs()) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
