//! Randomized invariants of the discretization and the penalty solves.

use std::f64::consts::PI;

use proptest::prelude::*;

use kdvconserve::dg::{interface_identity_check, DgSpace, DofVector};
use kdvconserve::gkdv::{Flux, Gkdv, GkdvProblem};
use kdvconserve::hskdv::{theta, HsKdv, HsProblem};
use kdvconserve::rk::Scheme;
use kdvconserve::selftest;
use kdvconserve::solve::NewtonConfig;
use kdvconserve::stepper::{self, solve_pair, solve_regularized, Model, State, Stepper, TauMode, TauSolve};

fn vector(space: &std::sync::Arc<DgSpace>, values: &[f64]) -> DofVector {
    DofVector::from_coeffs(space.clone(), values[..space.ndof()].to_vec())
}

fn coeffs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn interface_identity_on_random_meshes(n in 2usize..24, k in 0usize..5, a in coeffs(24 * 5), b in coeffs(24 * 5)) {
        let s = DgSpace::uniform(-0.5, 1.5, n, k).unwrap();
        let (r, v) = (vector(&s, &a), vector(&s, &b));
        let scale = 1.0 + r.max_abs() * v.max_abs() * n as f64;
        prop_assert!(interface_identity_check(&r, &v).unwrap() / scale <= 1e-12);
    }

    #[test]
    fn theta_symmetric_in_last_two(n in 2usize..12, k in 0usize..4, f in coeffs(3 * 12 * 4)) {
        let s = DgSpace::uniform(0.0, 2.0, n, k).unwrap();
        let m = s.ndof();
        let (f1, f2, f3) = (vector(&s, &f), vector(&s, &f[m..]), vector(&s, &f[2 * m..]));
        let (x, y) = (theta(&f1, &f2, &f3), theta(&f1, &f3, &f2));
        for (p, q) in x.iter().zip(&y) {
            prop_assert!((p - q).abs() <= 1e-13);
        }
    }

    #[test]
    fn remainder_vanishes_for_piecewise_constants(n in 2usize..20, a in -2.0f64..2.0, b in -4.0f64..4.0, f in coeffs(8 * 20)) {
        let m = HsKdv::new(DgSpace::uniform(0.0, 1.0, n, 0).unwrap(), HsProblem::new(a, b));
        let st = State { t: 0.0, fields: f[..m.space().ndof() * m.n_fields()].to_vec(), tau: [0.0; 2] };
        prop_assert!(m.projection_remainder(&st).abs() <= 1e-14);
    }

    #[test]
    fn regularized_pair_meets_energy_and_approaches_exact(
        c0 in prop::array::uniform2(-1.0f64..1.0),
        g in prop::array::uniform2(prop::array::uniform2(-1.0f64..1.0)),
        mu in 1e-4f64..1.0,
    ) {
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        prop_assume!(g[0][0].hypot(g[0][1]) > 1e-3 && det.abs() > 1e-2);
        let rh = |t: [f64; 2]| c0[1] + g[1][0] * t[0] + g[1][1] * t[1];
        let (t, how) = solve_regularized(c0, g, mu);
        prop_assert_eq!(how, TauSolve::Regular);
        prop_assert!((c0[0] + g[0][0] * t[0] + g[0][1] * t[1]).abs() <= 1e-12);
        let (t_small, _) = solve_regularized(c0, g, 0.1 * mu);
        prop_assert!(rh(t_small).abs() <= rh(t).abs() + 1e-12);
        let (exact, _) = solve_pair(c0, g);
        let (t0, _) = solve_regularized(c0, g, 0.0);
        let scale = 1.0 + exact[0].abs().max(exact[1].abs());
        prop_assert!((t0[0] - exact[0]).abs().max((t0[1] - exact[1]).abs()) <= 1e-9 * scale);
    }

    #[test]
    fn solved_penalties_satisfy_constraints(n in 4usize..12, k in 1usize..4, amp in 0.1f64..1.0, f in coeffs(12 * 4)) {
        let g = Gkdv::new(
            DgSpace::uniform(0.0, 2.0 * PI, n, k).unwrap(),
            GkdvProblem { epsilon: 1.0, flux: Flux::Burgers, source: None },
        );
        let u: Vec<f64> = f[..g.space().ndof()].iter().map(|v| amp * v).collect();
        let (st, how) = stepper::init_state(&g, 0.0, g.pack_u(&u));
        prop_assume!(how == TauSolve::Regular);
        // relative to the size of the terms that cancel
        let at = |t: [f64; 2]| stepper::constraints(&g, &st.fields, t);
        let (c0, e0, e1) = (at([0.0, 0.0]), at([1.0, 0.0]), at([0.0, 1.0]));
        let c = at(st.tau);
        for r in 0..2 {
            let scale = c0[r].abs() + (e0[r] - c0[r]).abs() * st.tau[0].abs() + (e1[r] - c0[r]).abs() * st.tau[1].abs();
            prop_assert!(c[r].abs() <= 1e-12 * scale.max(1e-300), "{} vs {}", c[r], scale);
        }
    }
}

#[test]
fn coupling_rewrite_agrees() {
    let c = selftest::coupling_rewrite();
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn analytic_jacobian_matches_differences() {
    let c = selftest::jacobian_agreement();
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn constraints_hold_after_accepted_steps() {
    let c = selftest::constraints_after_steps();
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn invariants_conserved_over_steps() {
    let g = Gkdv::new(
        DgSpace::uniform(0.0, 2.0 * PI, 12, 2).unwrap(),
        GkdvProblem {
            epsilon: 1.0,
            flux: Flux::Burgers,
            source: None,
        },
    );
    let u = g.space().project(|x| 0.3 * x.sin() + 0.1);
    let mut st = stepper::init_state(&g, 0.0, g.pack_u(u.coeffs())).0;
    let i0 = g.invariants(&st.fields);
    let mut s = Stepper::new(&g, Scheme::Irk4, TauMode::PerStage, NewtonConfig::default()).unwrap();
    for _ in 0..20 {
        let (next, rep) = s.step(&st, 0.05).unwrap();
        assert_eq!(rep.regularization, None);
        st = next;
    }
    let i1 = g.invariants(&st.fields);
    // mass and energy to roundoff; the Hamiltonian to the time-integration
    // error of a non-quadratic invariant
    for ((a, b), tol) in i0.iter().zip(&i1).zip([1e-13, 1e-12, 1e-6]) {
        assert!((a - b).abs() <= tol * a.abs().max(1.0), "{a} vs {b}");
    }
}
