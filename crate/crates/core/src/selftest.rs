//! Property suite shared by the `selftest` command and the acceptance run.
//! Every check draws from a fixed seed, so results are reproducible.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dg::{interface_identity_check, DgSpace, DofVector};
use crate::gkdv::{Flux, Gkdv, GkdvProblem};
use crate::hskdv::{theta, HsKdv, HsProblem};
use crate::rk::Scheme;
use crate::solve::{finite_difference_jacobian, NewtonConfig, NonlinearSystem};
use crate::stepper::{self, Model, StageSystem, State, Stepper, TauMode, TauSolve};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value against its bound.
    pub detail: String,
}

fn check(name: &'static str, worst: f64, bound: f64) -> Check {
    Check {
        name,
        passed: worst <= bound,
        detail: format!("max {worst:.3e} (bound {bound:.0e})"),
    }
}

fn random_vector(space: &Arc<DgSpace>, rng: &mut ChaCha8Rng) -> DofVector {
    DofVector::from_coeffs(space.clone(), (0..space.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Random evolved fields with recovered auxiliaries and solved penalties.
fn consistent_state<M: Model>(m: &M, rng: &mut ChaCha8Rng, amplitude: f64) -> Option<State> {
    let n = m.space().ndof() * m.n_fields();
    let mut x: Vec<f64> = (0..n).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect();
    stepper::recover_aux(m, &mut x);
    let (tau, how) = stepper::solve_tau(m, &x);
    (how == TauSolve::Regular).then_some(State { t: 0.0, fields: x, tau })
}

fn gkdv_model(n: usize, k: usize) -> Gkdv {
    Gkdv::new(
        DgSpace::uniform(0.0, 4.0 * PI, n, k).expect("valid mesh"),
        GkdvProblem {
            epsilon: 1.0,
            flux: Flux::Burgers,
            source: None,
        },
    )
}

fn hs_model(n: usize, k: usize, a: f64, b: f64) -> HsKdv {
    HsKdv::new(DgSpace::uniform(0.0, 10.0, n, k).expect("valid mesh"), HsProblem::new(a, b))
}

/// `<rho, v n> = sum ([[rho]]{v} + [[v]]{rho})` on 100 random pairs per mesh.
pub fn interface_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for (n, k) in [(2, 0), (4, 0), (8, 1), (8, 3), (16, 2), (5, 4), (32, 2)] {
        let s = DgSpace::uniform(-1.0, 2.0, n, k).expect("valid mesh");
        for _ in 0..100 {
            let (r, v) = (random_vector(&s, &mut rng), random_vector(&s, &mut rng));
            let scale = 1.0 + (r.max_abs() * v.max_abs()) * n as f64;
            let d = interface_identity_check(&r, &v).expect("same mesh");
            worst = worst.max(d / scale);
        }
    }
    check("interface identity defect (relative)", worst, 1e-12)
}

/// Coupling term evaluated directly and via the node-sum rewrite.
pub fn coupling_rewrite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for k in 0..=3 {
        for (a, b) in [(1.0, 1.0), (-0.125, -3.0), (0.5, 1.5)] {
            let m = hs_model(6, k, a, b);
            for _ in 0..5 {
                let Some(st) = consistent_state(&m, &mut rng, 1.0) else {
                    continue;
                };
                let (d, r) = m.coupling_term(&st);
                worst = worst.max((d - r).abs() / (1.0 + d.abs()));
            }
        }
    }
    check("coupling-term rewrite defect (relative)", worst, 1e-9)
}

fn jacobian_defect<M: Model>(m: &M, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for (scheme, mode) in [
        (Scheme::Midpoint, TauMode::PerStage),
        (Scheme::Irk4, TauMode::PerStage),
        (Scheme::Irk4, TauMode::Shared),
    ] {
        let n = m.space().ndof() * m.n_fields();
        let st = State {
            t: 0.0,
            fields: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            tau: [0.2, -0.1],
        };
        let tab = scheme.tableau();
        let sys = StageSystem::new(m, &tab, mode, &st, 0.05);
        let mut x = sys.initial_guess(&st);
        x.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        let an = sys.jacobian(&x).to_dense();
        let fd = finite_difference_jacobian(&sys, &x, 1e-6).to_dense();
        let scale = an.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in an.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    worst
}

/// Automatic-differentiation Jacobians of the stage systems against
/// central differences.
pub fn jacobian_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = jacobian_defect(&gkdv_model(5, 2), &mut rng);
    worst = worst.max(jacobian_defect(&hs_model(4, 1, -0.125, -3.0), &mut rng));
    worst = worst.max(jacobian_defect(&hs_model(3, 2, 1.0, 1.0), &mut rng));
    check("analytic vs finite-difference Jacobian (relative)", worst, 1e-5)
}

fn stage_constraints_after_steps<M: Model>(m: &M, x0: Vec<f64>, dt: f64, steps: usize) -> (f64, f64) {
    let cfg = NewtonConfig::default();
    let tol = cfg.abs_tol;
    let mut st = stepper::init_state(m, 0.0, x0).0;
    let mut worst = 0.0f64;
    for scheme in [Scheme::Midpoint, Scheme::Irk4] {
        let mut s = Stepper::new(m, scheme, TauMode::PerStage, cfg.clone()).expect("valid config");
        for _ in 0..steps {
            match s.step(&st, dt) {
                Ok((next, rep)) => {
                    worst = worst.max(rep.stage_constraint);
                    st = next;
                }
                Err(_) => return (f64::INFINITY, tol),
            }
        }
    }
    (worst, tol)
}

/// Energy and Hamiltonian constraints at the accepted stage solutions.
pub fn constraints_after_steps() -> Check {
    let g = gkdv_model(16, 2);
    let u = g.space().project(|x| 0.5 * (0.5 * x).sin() + 0.2);
    let (w1, tol) = stage_constraints_after_steps(&g, g.pack_u(u.coeffs()), 0.1, 5);
    let h = hs_model(16, 2, -0.125, -3.0);
    let u = h.space().project(|x| 0.3 * (0.2 * PI * x).sin());
    let v = h.space().project(|x| 0.2 * (0.2 * PI * x).cos() + 0.1);
    let (w2, _) = stage_constraints_after_steps(&h, h.pack_uv(u.coeffs(), v.coeffs()), 0.05, 5);
    check("stage constraint residual after accepted steps", w1.max(w2), tol)
}

/// The projection remainder vanishes identically on piecewise constants.
pub fn remainder_vanishes_for_constants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst = 0.0f64;
    for n in [2, 3, 8, 17] {
        let m = hs_model(n, 0, -0.5, 2.0);
        for _ in 0..20 {
            let st = State {
                t: 0.0,
                fields: (0..m.space().ndof() * m.n_fields()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                tau: [0.0; 2],
            };
            worst = worst.max(m.projection_remainder(&st).abs());
        }
    }
    check("projection remainder for k = 0", worst, 1e-14)
}

/// Symmetry in the last two arguments and linearity in each argument.
pub fn theta_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut worst = 0.0f64;
    for (n, k) in [(2, 0), (6, 2), (9, 3)] {
        let s = DgSpace::uniform(0.0, 1.0, n, k).expect("valid mesh");
        for _ in 0..20 {
            let f: Vec<DofVector> = (0..4).map(|_| random_vector(&s, &mut rng)).collect();
            let (al, be) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let combo = DofVector::from_coeffs(
                s.clone(),
                f[0].coeffs().iter().zip(f[3].coeffs()).map(|(x, y)| al * x + be * y).collect(),
            );
            let base = theta(&f[0], &f[1], &f[2]);
            let swapped = theta(&f[0], &f[2], &f[1]);
            let other = theta(&f[3], &f[1], &f[2]);
            // the same combination placed in each slot
            let lin = [
                theta(&combo, &f[1], &f[2]),
                theta(&f[1], &combo, &f[2]),
                theta(&f[1], &f[2], &combo),
            ];
            let parts = [
                (base.clone(), other.clone()),
                (theta(&f[1], &f[0], &f[2]), theta(&f[1], &f[3], &f[2])),
                (theta(&f[1], &f[2], &f[0]), theta(&f[1], &f[2], &f[3])),
            ];
            for i in 0..n {
                worst = worst.max((base[i] - swapped[i]).abs());
                for (l, (p, q)) in lin.iter().zip(&parts) {
                    worst = worst.max((l[i] - (al * p[i] + be * q[i])).abs());
                }
            }
        }
    }
    check("theta symmetry and trilinearity", worst, 1e-13)
}

/// Semi-discrete energy and Hamiltonian rates at states satisfying the
/// constraints.
pub fn invariant_rates_vanish() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut worst = 0.0f64;
    let g = gkdv_model(8, 2);
    for _ in 0..5 {
        if let Some(st) = consistent_state(&g, &mut rng, 1.0) {
            let (de, dh) = g.invariant_rates(&st);
            let scale = g.invariants(&st.fields).iter().fold(1.0f64, |s, v| s.max(v.abs()));
            worst = worst.max(de.abs().max(dh.abs()) / scale);
        }
    }
    for (a, b) in [(1.0, 1.0), (-0.125, -3.0)] {
        let m = hs_model(8, 2, a, b);
        for _ in 0..5 {
            if let Some(st) = consistent_state(&m, &mut rng, 1.0) {
                let (de, dh) = m.invariant_rates(&st);
                let scale = m.invariants(&st.fields).iter().fold(1.0f64, |s, v| s.max(v.abs()));
                worst = worst.max(de.abs().max(dh.abs()) / scale);
            }
        }
    }
    check("energy and Hamiltonian rates at constrained states", worst, 1e-10)
}

pub fn run_all() -> Vec<Check> {
    vec![
        interface_identity(),
        coupling_rewrite(),
        jacobian_agreement(),
        constraints_after_steps(),
        remainder_vanishes_for_constants(),
        theta_algebra(),
        invariant_rates_vanish(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_property_checks_pass() {
        for c in run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
