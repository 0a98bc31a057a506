//! Conservative DG scheme for `u_t + eps u_xxx + f(u)_x = g` on a periodic
//! interval, written as `q = u_x`, `p = eps q_x + f(u)`, `u_t + p_x = g`.
//!
//! Traces: `u^ = {u}`, `q^ = {q}`, `p^ = {p} + tau_pu [[u]] + tau_pq [[q]]`,
//! with `(tau_pu, tau_pq)` fixed by the energy and Hamiltonian constraints.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::dg::{DgSpace, DofVector};
use crate::local::ElementKit;
use crate::stepper::{self, field_of, set_field, Model, State, TauSolve};

pub const U: usize = 0;
pub const Q: usize = 1;
pub const P: usize = 2;
pub const FIELDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flux {
    /// `f = u`, `V = u^2 / 2`
    Linear,
    /// `f = u^2 / 2`, `V = u^3 / 6`
    Burgers,
    /// `f = 3 u^2`, `V = u^3`
    KdvClassical,
}

impl Flux {
    #[inline]
    pub fn f<T: Real>(self, u: T) -> T {
        match self {
            Flux::Linear => u,
            Flux::Burgers => u * u * 0.5,
            Flux::KdvClassical => u * u * 3.0,
        }
    }

    /// Antiderivative with `V(0) = 0`.
    #[inline]
    pub fn v<T: Real>(self, u: T) -> T {
        match self {
            Flux::Linear => u * u * 0.5,
            Flux::Burgers => u * u * u / 6.0,
            Flux::KdvClassical => u * u * u,
        }
    }
}

impl std::str::FromStr for Flux {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Flux::Linear),
            "burgers" => Ok(Flux::Burgers),
            "kdv_classical" | "kdv" => Ok(Flux::KdvClassical),
            other => Err(format!("unknown flux '{other}'")),
        }
    }
}

/// Space-time source `g(x, t)`.
pub type Source = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct GkdvProblem {
    pub epsilon: f64,
    pub flux: Flux,
    pub source: Option<Source>,
}

impl fmt::Debug for GkdvProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GkdvProblem")
            .field("epsilon", &self.epsilon)
            .field("flux", &self.flux)
            .field("source", &self.source.is_some())
            .finish()
    }
}

/// The gKdV scheme on one DG space.
#[derive(Debug, Clone)]
pub struct Gkdv {
    space: Arc<DgSpace>,
    kit: ElementKit,
    pub problem: GkdvProblem,
}

/// Unpacked view of a state.
#[derive(Debug, Clone)]
pub struct GkdvState {
    pub t: f64,
    pub u: DofVector,
    pub q: DofVector,
    pub p: DofVector,
    pub tau_pu: f64,
    pub tau_pq: f64,
}

impl Gkdv {
    pub fn new(space: Arc<DgSpace>, problem: GkdvProblem) -> Self {
        let kit = ElementKit::new(&space);
        Self {
            space,
            kit,
            problem,
        }
    }

    /// Packs `u` into an element-block vector with zero auxiliaries.
    pub fn pack_u(&self, u: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.space.n_elements() * FIELDS * self.space.nb()];
        set_field(&mut x, FIELDS, self.space.nb(), U, u);
        x
    }

    /// `q`, `p` by linear solves and the penalty pair from the 2x2 system.
    pub fn init_aux(&self, t: f64, u0: &DofVector) -> (State, TauSolve) {
        stepper::init_state(self, t, self.pack_u(u0.coeffs()))
    }

    pub fn field(&self, state: &State, f: usize) -> DofVector {
        DofVector::from_coeffs(
            self.space.clone(),
            field_of(&state.fields, FIELDS, self.space.nb(), f),
        )
    }

    pub fn unpack(&self, state: &State) -> GkdvState {
        GkdvState {
            t: state.t,
            u: self.field(state, U),
            q: self.field(state, Q),
            p: self.field(state, P),
            tau_pu: state.tau[0],
            tau_pq: state.tau[1],
        }
    }

    pub fn pack(&self, s: &GkdvState) -> State {
        let nb = self.space.nb();
        let mut x = vec![0.0; self.space.n_elements() * FIELDS * nb];
        set_field(&mut x, FIELDS, nb, U, s.u.coeffs());
        set_field(&mut x, FIELDS, nb, Q, s.q.coeffs());
        set_field(&mut x, FIELDS, nb, P, s.p.coeffs());
        State {
            t: s.t,
            fields: x,
            tau: [s.tau_pu, s.tau_pq],
        }
    }

    /// Stacked weak-form residuals for a given `u_t` (element-block layout):
    /// `M u_t - (p, w_x) + <p^, w n> - (g, w)` on the `u` rows and the
    /// auxiliary relations on the `q`, `p` rows.
    pub fn semidiscrete_residual(&self, state: &State, ut: &[f64]) -> Vec<f64> {
        let nb = self.space.nb();
        let mut r = stepper::spatial_rows(self, &state.fields, state.tau);
        let load = self.source_load(state.t);
        for e in 0..self.space.n_elements() {
            for l in 0..nb {
                let i = e * FIELDS * nb + U * nb + l;
                let g = load.as_ref().map_or(0.0, |v| v[i]);
                r[i] = self.space.mass(e, l) * ut[e * nb + l] - r[i] - g;
            }
        }
        r
    }

    /// `u_t` of the semi-discrete scheme.
    pub fn time_derivative(&self, state: &State) -> Vec<f64> {
        let nb = self.space.nb();
        let rows = stepper::spatial_rows(self, &state.fields, state.tau);
        let load = self.source_load(state.t);
        let mut ut = field_of(&rows, FIELDS, nb, U);
        if let Some(l) = load {
            for (a, b) in ut.iter_mut().zip(field_of(&l, FIELDS, nb, U)) {
                *a += b;
            }
        }
        self.space.mass_solve_in_place(&mut ut);
        ut
    }

    /// `(d/dt ∫u^2, d/dt H)` of the semi-discrete flow at a state.
    pub fn invariant_rates(&self, state: &State) -> (f64, f64) {
        let nb = self.space.nb();
        let ut = self.time_derivative(state);
        // q depends linearly on u, so q_t is q recovered from u_t
        let mut dx = self.pack_u(&ut);
        stepper::recover_aux(self, &mut dx);
        let qt = field_of(&dx, FIELDS, nb, Q);
        let u = field_of(&state.fields, FIELDS, nb, U);
        let q = field_of(&state.fields, FIELDS, nb, Q);
        let flux = self.problem.flux;
        let de = 2.0 * self.space.integrate_pointwise(&[&u, &ut], |v| v[0] * v[1]);
        let dh = self.space.integrate_pointwise(&[&u, &ut, &q, &qt], |v| {
            self.problem.epsilon * v[2] * v[3] - flux.f(v[0]) * v[1]
        });
        (de, dh)
    }

    /// Node sum of the general energy condition with this scheme's traces
    /// substituted: `sum((p^-{p})(-[[u]]) + [[V]] - {Π f}[[u]])`.
    pub fn general_energy_condition(&self, state: &State) -> f64 {
        let n = self.space.n_elements();
        let bs = FIELDS * self.space.nb();
        let k = &self.kit;
        let nb = k.nb;
        let flux = self.problem.flux;
        let mut sum = 0.0;
        for i in 0..n {
            let l = &state.fields[((i + n - 1) % n) * bs..((i + n - 1) % n + 1) * bs];
            let r = &state.fields[i * bs..(i + 1) * bs];
            let (ul, ur) = (k.right(&l[..nb]), k.left(&r[..nb]));
            let (ql, qr) = (k.right(&l[nb..2 * nb]), k.left(&r[nb..2 * nb]));
            let ju = ul - ur;
            let jq = ql - qr;
            let pf = |c: &[f64]| {
                let uq = k.at_qp(c);
                let mut g = ElementKit::buf::<f64>();
                for qi in 0..k.nq {
                    g[qi] = flux.f(uq[qi]);
                }
                k.projected_ends(&g)
            };
            let avg_pf = 0.5 * (pf(&l[..nb]).1 + pf(&r[..nb]).0);
            let phat_minus_avg = state.tau[0] * ju + state.tau[1] * jq;
            sum += -phat_minus_avg * ju + flux.v(ul) - flux.v(ur) - avg_pf * ju;
        }
        sum
    }

    pub fn constraint_residuals(&self, state: &State) -> (f64, f64) {
        let c = stepper::constraints(self, &state.fields, state.tau);
        (c[0], c[1])
    }
}

impl Model for Gkdv {
    fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    fn kit(&self) -> &ElementKit {
        &self.kit
    }

    fn n_fields(&self) -> usize {
        FIELDS
    }

    fn evolved(&self) -> &[usize] {
        &[U]
    }

    fn aux_order(&self) -> &[usize] {
        &[Q, P]
    }

    fn element_rows<T: Real>(&self, e: usize, nbhd: [&[T]; 3], tau: [T; 2], out: &mut [T]) {
        let k = &self.kit;
        let nb = k.nb;
        let h = self.space.mesh().width(e);
        let eps = self.problem.epsilon;
        let f = |x: &[T], i: usize| -> Vec<T> { x[i * nb..(i + 1) * nb].to_vec() };
        let [xm, x, xp] = nbhd;
        let (um, u0, up) = (f(xm, U), f(x, U), f(xp, U));
        let (qm, q0, qp) = (f(xm, Q), f(x, Q), f(xp, Q));
        let (pm, p0, pp) = (f(xm, P), f(x, P), f(xp, P));
        let (ou, rest) = out.split_at_mut(nb);
        let (oq, op) = rest.split_at_mut(nb);
        // u_t rows: (p, w_x) - <p^, w n>
        k.weak_derivative(&pm, &p0, &pp, 1.0, ou);
        k.jump_pairing(&um, &u0, &up, -tau[0], ou);
        k.jump_pairing(&qm, &q0, &qp, -tau[1], ou);
        // q rows
        for l in 0..nb {
            oq[l] += q0[l] * self.space.mass(e, l);
        }
        k.weak_derivative(&um, &u0, &up, 1.0, oq);
        // p rows
        for l in 0..nb {
            op[l] += p0[l] * self.space.mass(e, l);
        }
        k.weak_derivative(&qm, &q0, &qp, eps, op);
        let uq = k.at_qp(&u0);
        let mut fu = ElementKit::buf::<T>();
        for i in 0..k.nq {
            fu[i] = self.problem.flux.f(uq[i]);
        }
        k.load(h, &fu, -1.0, op);
    }

    fn node_constraint<T: Real>(&self, left: &[T], right: &[T], tau: [T; 2]) -> [T; 2] {
        let k = &self.kit;
        let nb = k.nb;
        let flux = self.problem.flux;
        let (ul, ur) = (k.right(&left[..nb]), k.left(&right[..nb]));
        let ju = ul - ur;
        let jq = k.right(&left[nb..2 * nb]) - k.left(&right[nb..2 * nb]);
        let jp = k.right(&left[2 * nb..]) - k.left(&right[2 * nb..]);
        let pf_end = |c: &[T], right_end: bool| {
            let uq = k.at_qp(c);
            let mut g = ElementKit::buf::<T>();
            for i in 0..k.nq {
                g[i] = flux.f(uq[i]);
            }
            let (a, b) = k.projected_ends(&g);
            if right_end {
                b
            } else {
                a
            }
        };
        let avg_pf = (pf_end(&left[..nb], true) + pf_end(&right[..nb], false)) * 0.5;
        let r_e = tau[0] * ju * ju + tau[1] * ju * jq - (flux.v(ul) - flux.v(ur) - avg_pf * ju);
        let r_h = tau[0] * jp * ju + tau[1] * jp * jq;
        [r_e, r_h]
    }

    fn source_load(&self, t: f64) -> Option<Vec<f64>> {
        let g = self.problem.source.as_ref()?;
        let load = self.space.load_function(|x| g(x, t));
        let nb = self.space.nb();
        let mut out = vec![0.0; self.space.n_elements() * FIELDS * nb];
        set_field(&mut out, FIELDS, nb, U, &load);
        Some(out)
    }

    /// `(∫u, ∫u^2, ∫(eps/2 q^2 - V(u)))`.
    fn invariants(&self, fields: &[f64]) -> [f64; 3] {
        let nb = self.space.nb();
        let u = field_of(fields, FIELDS, nb, U);
        let q = field_of(fields, FIELDS, nb, Q);
        let eps = self.problem.epsilon;
        let flux = self.problem.flux;
        [
            self.space.integrate_pointwise(&[&u], |v| v[0]),
            self.space.integrate_pointwise(&[&u], |v| v[0] * v[0]),
            self.space
                .integrate_pointwise(&[&u, &q], |v| 0.5 * eps * v[1] * v[1] - flux.v(v[0])),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rk::Scheme;
    use crate::solve::{finite_difference_jacobian, NewtonConfig, NonlinearSystem};
    use crate::stepper::{StageSystem, Stepper, TauMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn model(n: usize, k: usize, flux: Flux, eps: f64) -> Gkdv {
        let s = DgSpace::uniform(0.0, 4.0 * PI, n, k).unwrap();
        Gkdv::new(
            s,
            GkdvProblem {
                epsilon: eps,
                flux,
                source: None,
            },
        )
    }

    fn random_state(m: &Gkdv, rng: &mut ChaCha8Rng) -> State {
        let n = m.space.ndof() * FIELDS;
        State {
            t: 0.0,
            fields: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            tau: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        }
    }

    #[test]
    fn constants_are_steady() {
        for flux in [Flux::Linear, Flux::Burgers, Flux::KdvClassical] {
            let m = model(6, 2, flux, 1.0);
            let u0 = DofVector::constant(m.space.clone(), 0.7);
            let (st, how) = m.init_aux(0.0, &u0);
            assert_eq!(how, TauSolve::NoJumps);
            let g = m.unpack(&st);
            assert!(g.q.max_abs() < 1e-15);
            let fc = flux.f(0.7);
            for e in 0..6 {
                assert!((g.p.element(e)[0] - fc).abs() < 1e-14);
            }
            let r = m.semidiscrete_residual(&st, &vec![0.0; m.space.ndof()]);
            assert!(r.iter().all(|v| v.abs() < 1e-13), "{flux:?}");
        }
    }

    #[test]
    fn flux_antiderivatives() {
        for flux in [Flux::Linear, Flux::Burgers, Flux::KdvClassical] {
            let u: f64 = 0.37;
            let h = 1e-6;
            let dv = (flux.v(u + h) - flux.v(u - h)) / (2.0 * h);
            assert!((dv - flux.f(u)).abs() < 1e-9);
        }
    }

    #[test]
    fn hand_evaluated_constraint_on_two_cells() {
        // k = 0, u = (1, 2), V = u^3, Π f(u) = 3u^2 exactly
        let s = DgSpace::uniform(0.0, 1.0, 2, 0).unwrap();
        let m = Gkdv::new(
            s,
            GkdvProblem {
                epsilon: 1.0,
                flux: Flux::KdvClassical,
                source: None,
            },
        );
        let st = State {
            t: 0.0,
            fields: vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0],
            tau: [0.5, 0.0],
        };
        // node 0: [[u]] = 2 - 1 = 1, [[V]] = 8 - 1 = 7, {Πf} = (12 + 3)/2
        // node 1: [[u]] = -1, [[V]] = -7, {Πf} = 7.5
        let expected = 0.5 * 2.0 - ((7.0 - 7.5) + (-7.0 + 7.5));
        let (re, rh) = m.constraint_residuals(&st);
        assert!((re - expected).abs() < 1e-14);
        assert_eq!(rh, 0.0);
    }

    #[test]
    fn continuous_fields_satisfy_constraints_for_any_tau() {
        let m = model(4, 0, Flux::Burgers, 1.0);
        let st = State {
            t: 0.0,
            fields: vec![0.3; 12],
            tau: [5.0, -2.0],
        };
        assert_eq!(m.constraint_residuals(&st), (0.0, 0.0));
    }

    #[test]
    fn init_aux_is_consistent() {
        let m = model(32, 2, Flux::Linear, 1.0);
        let u0 = m.space.project(|x| (0.5 * x).sin());
        let (st, _) = m.init_aux(0.0, &u0);
        let r = stepper::spatial_rows(&m, &st.fields, st.tau);
        let nb = m.space.nb();
        for f in [Q, P] {
            assert!(field_of(&r, FIELDS, nb, f).iter().all(|v| v.abs() < 1e-12));
        }
        let (re, rh) = m.constraint_residuals(&st);
        assert!(re.abs() < 1e-11 && rh.abs() < 1e-11);
        let q = m.field(&st, Q);
        let exact = m.space.project(|x| 0.5 * (0.5 * x).cos());
        let err = (&q - &exact).l2_norm_squared().sqrt();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn general_condition_matches_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for flux in [Flux::Burgers, Flux::KdvClassical] {
            let m = model(7, 2, flux, 0.3);
            let st = random_state(&m, &mut rng);
            let (re, _) = m.constraint_residuals(&st);
            assert!((m.general_energy_condition(&st) + re).abs() < 1e-12);
        }
    }

    #[test]
    fn semi_discrete_rates_vanish_when_constraints_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for flux in [Flux::Burgers, Flux::KdvClassical] {
            let m = model(8, 2, flux, 0.7);
            let mut x = random_state(&m, &mut rng).fields;
            stepper::recover_aux(&m, &mut x);
            let (tau, how) = stepper::solve_tau(&m, &x);
            assert_eq!(how, TauSolve::Regular);
            let st = State { t: 0.0, fields: x, tau };
            let (de, dh) = m.invariant_rates(&st);
            let scale = m.invariants(&st.fields).iter().fold(1.0f64, |a, b| a.max(b.abs()));
            assert!(de.abs() < 1e-11 * scale, "{flux:?} dE/dt = {de}");
            assert!(dh.abs() < 1e-11 * scale, "{flux:?} dH/dt = {dh}");
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (scheme, mode) in [
            (Scheme::Midpoint, TauMode::PerStage),
            (Scheme::Irk4, TauMode::PerStage),
            (Scheme::Irk4, TauMode::Shared),
        ] {
            let m = model(4, 1, Flux::KdvClassical, 0.5);
            let st = random_state(&m, &mut rng);
            let tab = scheme.tableau();
            let sys = StageSystem::new(&m, &tab, mode, &st, 0.1);
            let mut x = sys.initial_guess(&st);
            x.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
            let an = sys.jacobian(&x).to_dense();
            let fd = finite_difference_jacobian(&sys, &x, 1e-6).to_dense();
            let scale = an.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for (a, b) in an.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn midpoint_step_conserves_mass_and_energy() {
        let m = model(16, 2, Flux::Burgers, 0.2);
        let u0 = m.space.project(|x| 0.5 * (0.5 * x).sin() + 0.2);
        let (mut st, _) = m.init_aux(0.0, &u0);
        let inv0 = m.invariants(&st.fields);
        let cfg = NewtonConfig::default();
        let tol = cfg.abs_tol;
        let mut stepper = Stepper::new(&m, Scheme::Midpoint, TauMode::PerStage, cfg).unwrap();
        for _ in 0..5 {
            let (next, rep) = stepper.step(&st, 0.1).unwrap();
            assert!(rep.stage_constraint <= tol);
            st = next;
        }
        let inv = m.invariants(&st.fields);
        assert!((inv[0] - inv0[0]).abs() < 1e-13 * (1.0 + inv0[0].abs()));
        assert!((inv[1] - inv0[1]).abs() < 1e-11 * inv0[1]);
    }

    #[test]
    fn irk4_linear_phase_matches_exact() {
        // f = u, eps = 1: exact solution sin(x/2 - 3t/8)
        let m = model(32, 2, Flux::Linear, 1.0);
        let u0 = m.space.project(|x| (0.5 * x).sin());
        let (mut st, _) = m.init_aux(0.0, &u0);
        let mut stepper =
            Stepper::new(&m, Scheme::Irk4, TauMode::PerStage, NewtonConfig::default()).unwrap();
        let h = 4.0 * PI / 32.0;
        let dt = 0.2 * h;
        for _ in 0..4 {
            st = stepper.step(&st, dt).unwrap().0;
        }
        let t = st.t;
        let exact = m.space.project(|x| (0.5 * x - 0.375 * t).sin());
        let err = (&m.field(&st, U) - &exact).l2_norm_squared().sqrt();
        // spatial error at this resolution is a few 1e-5
        assert!(err < 5e-5, "{err}");
    }
}
