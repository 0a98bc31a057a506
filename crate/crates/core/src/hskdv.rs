//! Conservative DG scheme for the coupled Hirota–Satsuma KdV system on a
//! periodic interval,
//!
//! `u_t = a (u_xxx + 6 u u_x) + 2 b v v_x + g1`, `v_t = -v_xxx - 3 u v_x + g2`,
//!
//! written first order as `q = u_x`, `p = q_x + 3u^2`, `u_t = (a p + b v^2)_x`,
//! `w = v_x`, `r = w_x`, `v_t = -r_x - 3 u w`.
//!
//! Traces are central except `p^ = {p} + tau_pu [[u]] + tau_pv [[v]]` and
//! the flux of `v^2`, taken as `{Π v^2}`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::dg::{DgSpace, DofVector};
use crate::gkdv::Source;
use crate::local::{ElementKit, Qp};
use crate::stepper::{self, field_of, set_field, Model, State, TauSolve};

pub const U: usize = 0;
pub const Q: usize = 1;
pub const P: usize = 2;
pub const V: usize = 3;
pub const W: usize = 4;
pub const R: usize = 5;
pub const FIELDS: usize = 6;

/// Weight of `Θ(p, v, v)` in the Hamiltonian constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PvvWeight {
    /// `b`, the weight that makes the Hamiltonian rate vanish.
    B,
    /// Unit weight.
    Unit,
}

impl std::str::FromStr for PvvWeight {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "b" => Ok(PvvWeight::B),
            "1" | "one" | "unit" => Ok(PvvWeight::Unit),
            other => Err(format!("unknown theta_pvv weight '{other}' (expected b or 1)")),
        }
    }
}

#[derive(Clone)]
pub struct HsProblem {
    pub a: f64,
    pub b: f64,
    pub pvv_weight: PvvWeight,
    pub source_u: Option<Source>,
    pub source_v: Option<Source>,
}

impl HsProblem {
    pub fn new(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            pvv_weight: PvvWeight::B,
            source_u: None,
            source_v: None,
        }
    }

    fn pvv(&self) -> f64 {
        match self.pvv_weight {
            PvvWeight::B => self.b,
            PvvWeight::Unit => 1.0,
        }
    }
}

impl fmt::Debug for HsProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HsProblem")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("pvv_weight", &self.pvv_weight)
            .field("source_u", &self.source_u.is_some())
            .field("source_v", &self.source_v.is_some())
            .finish()
    }
}

/// Values of several fields on the two elements sharing a node.
struct NodePair<T: Real> {
    /// Quadrature values on the left and right element.
    ql: Vec<Qp<T>>,
    qr: Vec<Qp<T>>,
    /// Traces at the node from the left and right element.
    tl: Vec<T>,
    tr: Vec<T>,
}

impl<T: Real> NodePair<T> {
    fn new(k: &ElementKit, left: &[&[T]], right: &[&[T]]) -> Self {
        Self {
            ql: left.iter().map(|c| k.at_qp(c)).collect(),
            qr: right.iter().map(|c| k.at_qp(c)).collect(),
            tl: left.iter().map(|c| k.right(c)).collect(),
            tr: right.iter().map(|c| k.left(c)).collect(),
        }
    }

    fn jump(&self, i: usize) -> T {
        self.tl[i] - self.tr[i]
    }

    fn avg(&self, i: usize) -> T {
        (self.tl[i] + self.tr[i]) * 0.5
    }

    /// `(left, right)` traces of the product of fields `i` and `j`.
    fn prod(&self, i: usize, j: usize) -> (T, T) {
        (self.tl[i] * self.tl[j], self.tr[i] * self.tr[j])
    }

    /// `(left, right)` traces of `Π(field_i field_j)`.
    fn proj_prod(&self, k: &ElementKit, i: usize, j: usize) -> (T, T) {
        let mut gl = ElementKit::buf::<T>();
        let mut gr = ElementKit::buf::<T>();
        for q in 0..k.nq {
            gl[q] = self.ql[i][q] * self.ql[j][q];
            gr[q] = self.qr[i][q] * self.qr[j][q];
        }
        (k.projected_ends(&gl).1, k.projected_ends(&gr).0)
    }

    /// `Θ(φ_i, φ_j, φ_l)` with central traces.
    fn theta(&self, k: &ElementKit, i: usize, j: usize, l: usize) -> T {
        let (pl, pr) = self.prod(j, l);
        let avg = |(a, b): (T, T)| (a + b) * 0.5;
        self.jump(i) * avg((pl, pr)) + (pl - pr) * self.avg(i)
            - (self.jump(i) * avg(self.proj_prod(k, j, l))
                + self.jump(j) * avg(self.proj_prod(k, i, l))
                + self.jump(l) * avg(self.proj_prod(k, i, j)))
    }

    /// `Θ` plus the trace-deviation terms `sum_cycl (φ^_i - {φ_i}) [[Π(φ_j φ_l)]]`.
    fn theta_tilde(&self, k: &ElementKit, idx: [usize; 3], dev: [T; 3]) -> T {
        let [i, j, l] = idx;
        let jp = |(a, b): (T, T)| a - b;
        self.theta(k, i, j, l)
            + dev[0] * jp(self.proj_prod(k, j, l))
            + dev[1] * jp(self.proj_prod(k, l, i))
            + dev[2] * jp(self.proj_prod(k, i, j))
    }
}

/// Per-node values `Θ(φ1, φ2, φ3)(x_i)`, node `i` being the left end of
/// element `i`.
pub fn theta(f1: &DofVector, f2: &DofVector, f3: &DofVector) -> Vec<f64> {
    theta_tilde(f1, f2, f3, None)
}

/// Per-node `Θ~(φ1, φ2, φ3)` for traces `φ^_i = {φ_i} + dev_i`; `None`
/// means central traces, where it reduces to `Θ`.
pub fn theta_tilde(
    f1: &DofVector,
    f2: &DofVector,
    f3: &DofVector,
    dev: Option<[&[f64]; 3]>,
) -> Vec<f64> {
    let space = f1.space();
    let k = ElementKit::new(space);
    let n = space.n_elements();
    (0..n)
        .map(|i| {
            let l = (i + n - 1) % n;
            let pair = NodePair::new(
                &k,
                &[f1.element(l), f2.element(l), f3.element(l)],
                &[f1.element(i), f2.element(i), f3.element(i)],
            );
            let d = dev.map_or([0.0; 3], |d| [d[0][i], d[1][i], d[2][i]]);
            pair.theta_tilde(&k, [0, 1, 2], d)
        })
        .collect()
}

/// The HS-KdV scheme on one DG space.
#[derive(Debug, Clone)]
pub struct HsKdv {
    space: Arc<DgSpace>,
    kit: ElementKit,
    pub problem: HsProblem,
}

/// Unpacked view of a state.
#[derive(Debug, Clone)]
pub struct HsState {
    pub t: f64,
    pub u: DofVector,
    pub q: DofVector,
    pub p: DofVector,
    pub v: DofVector,
    pub w: DofVector,
    pub r: DofVector,
    pub tau_pu: f64,
    pub tau_pv: f64,
}

impl HsKdv {
    pub fn new(space: Arc<DgSpace>, problem: HsProblem) -> Self {
        let kit = ElementKit::new(&space);
        Self {
            space,
            kit,
            problem,
        }
    }

    fn nb(&self) -> usize {
        self.space.nb()
    }

    /// Packs `u`, `v` into an element-block vector with zero auxiliaries.
    pub fn pack_uv(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let nb = self.nb();
        let mut x = vec![0.0; self.space.n_elements() * FIELDS * nb];
        set_field(&mut x, FIELDS, nb, U, u);
        set_field(&mut x, FIELDS, nb, V, v);
        x
    }

    pub fn init_aux(&self, t: f64, u0: &DofVector, v0: &DofVector) -> (State, TauSolve) {
        stepper::init_state(self, t, self.pack_uv(u0.coeffs(), v0.coeffs()))
    }

    pub fn field(&self, state: &State, f: usize) -> DofVector {
        DofVector::from_coeffs(self.space.clone(), field_of(&state.fields, FIELDS, self.nb(), f))
    }

    pub fn unpack(&self, state: &State) -> HsState {
        HsState {
            t: state.t,
            u: self.field(state, U),
            q: self.field(state, Q),
            p: self.field(state, P),
            v: self.field(state, V),
            w: self.field(state, W),
            r: self.field(state, R),
            tau_pu: state.tau[0],
            tau_pv: state.tau[1],
        }
    }

    /// `(u_t, v_t)` of the semi-discrete scheme.
    pub fn time_derivative(&self, state: &State) -> (Vec<f64>, Vec<f64>) {
        let nb = self.nb();
        let mut rows = stepper::spatial_rows(self, &state.fields, state.tau);
        if let Some(l) = self.source_load(state.t) {
            for (a, b) in rows.iter_mut().zip(l) {
                *a += b;
            }
        }
        let mut ut = field_of(&rows, FIELDS, nb, U);
        let mut vt = field_of(&rows, FIELDS, nb, V);
        self.space.mass_solve_in_place(&mut ut);
        self.space.mass_solve_in_place(&mut vt);
        (ut, vt)
    }

    /// `(dE/dt, dH/dt)` of the semi-discrete flow at a state.
    pub fn invariant_rates(&self, state: &State) -> (f64, f64) {
        let nb = self.nb();
        let (ut, vt) = self.time_derivative(state);
        // q and w depend linearly on u and v
        let mut dx = self.pack_uv(&ut, &vt);
        stepper::recover_aux(self, &mut dx);
        let qt = field_of(&dx, FIELDS, nb, Q);
        let wt = field_of(&dx, FIELDS, nb, W);
        let f = |i| field_of(&state.fields, FIELDS, nb, i);
        let (u, q, v, w) = (f(U), f(Q), f(V), f(W));
        let (a, b) = (self.problem.a, self.problem.b);
        let de = self
            .space
            .integrate_pointwise(&[&u, &ut, &v, &vt], |x| 2.0 * x[0] * x[1] + 4.0 / 3.0 * b * x[2] * x[3]);
        let dh = self.space.integrate_pointwise(&[&u, &ut, &q, &qt, &v, &vt, &w, &wt], |x| {
            (1.0 + a) * (3.0 * x[0] * x[0] * x[1] - x[2] * x[3])
                + b * (x[1] * x[4] * x[4] + 2.0 * x[0] * x[4] * x[5] - 2.0 * x[6] * x[7])
        });
        (de, dh)
    }

    pub fn constraint_residuals(&self, state: &State) -> (f64, f64) {
        let c = stepper::constraints(self, &state.fields, state.tau);
        (c[0], c[1])
    }

    /// Node sum of the general energy condition with this scheme's traces.
    /// Equals twice the energy constraint.
    pub fn general_energy_condition(&self, state: &State) -> f64 {
        let (a, b) = (self.problem.a, self.problem.b);
        let k = &self.kit;
        self.node_sum(state, |pair| {
            let ju = pair.jump(0);
            let dev_p = state.tau[0] * ju + state.tau[1] * pair.jump(3);
            let (v2l, v2r) = pair.prod(3, 3);
            let avg = |(x, y): (f64, f64)| 0.5 * (x + y);
            2.0 * a * ju * dev_p
                + 2.0 * b * (-(v2l - v2r) * pair.avg(0) + ju * (avg(pair.proj_prod(k, 3, 3)) - 0.5 * (v2l + v2r)))
                - 2.0 * a * (pair.tl[0].powi(3) - pair.tr[0].powi(3))
                + 2.0 * a * ju * 3.0 * avg(pair.proj_prod(k, 0, 0))
                + 4.0 * b * pair.jump(3) * avg(pair.proj_prod(k, 0, 3))
        })
    }

    /// `(direct, rewritten)` forms of the nonlinear coupling term arising in
    /// the Hamiltonian balance; equal for any fields satisfying the
    /// auxiliary relations.
    pub fn coupling_term(&self, state: &State) -> (f64, f64) {
        let b = self.problem.b;
        let k = &self.kit;
        let nb = self.nb();
        let n = self.space.n_elements();
        let bs = FIELDS * nb;
        let mut direct = 0.0;
        for e in 0..n {
            let h = self.space.mesh().width(e);
            let el = &state.fields[e * bs..(e + 1) * bs];
            let c = |f: usize| &el[f * nb..(f + 1) * nb];
            let (u, p, v, w, r) = (k.at_qp(c(U)), k.at_qp(c(P)), k.at_qp(c(V)), k.at_qp(c(W)), k.at_qp(c(R)));
            // v_x on the element from the modal derivative
            let vx = k.at_qp(&modal_derivative(c(V), h));
            let mut uv = ElementKit::buf::<f64>();
            for q in 0..k.nq {
                uv[q] = u[q] * v[q];
            }
            let puv = k.project(&uv);
            let puv_q = k.at_qp(&puv[..nb]);
            let puv_x = k.at_qp(&modal_derivative(&puv[..nb], h));
            let mut g = ElementKit::buf::<f64>();
            for q in 0..k.nq {
                g[q] = 2.0 * b * vx[q] * v[q] * p[q] + 2.0 * b * r[q] * puv_x[q]
                    - 6.0 * b * u[q] * w[q] * (puv_q[q] + r[q]);
            }
            direct += k.integrate(h, &g);
            // -2b <{r}, Π(uv) n> over this element's two faces
            let m = (e + n - 1) % n;
            let pl = (e + 1) % n;
            let rb = |i: usize| &state.fields[i * bs + R * nb..i * bs + (R + 1) * nb];
            let r_avg_right = 0.5 * (k.right(rb(e)) + k.left(rb(pl)));
            let r_avg_left = 0.5 * (k.right(rb(m)) + k.left(rb(e)));
            direct -= 2.0 * b * (r_avg_right * k.right(&puv[..nb]) - r_avg_left * k.left(&puv[..nb]));
        }
        let rewritten = self.node_sum(state, |pair| {
            let avg = |(x, y): (f64, f64)| 0.5 * (x + y);
            2.0 * b * pair.jump(V) * avg(pair.proj_prod(k, V, P)) + 2.0 * b * pair.theta(k, Q, W, V)
                - 2.0 * b * pair.theta(k, R, U, V)
                - 2.0 * b * pair.theta(k, U, W, W)
        }) + self.projection_remainder(state);
        (direct, rewritten)
    }

    /// `6b [(u^2, Π(wv)) - (uw, Π(uv))]`, zero for piecewise constants.
    pub fn projection_remainder(&self, state: &State) -> f64 {
        let bs = FIELDS * self.nb();
        (0..self.space.n_elements())
            .map(|e| self.remainder_on(e, &state.fields[e * bs..(e + 1) * bs]))
            .sum()
    }

    fn remainder_on<T: Real>(&self, e: usize, el: &[T]) -> T {
        let k = &self.kit;
        let nb = k.nb;
        let h = self.space.mesh().width(e);
        let c = |f: usize| &el[f * nb..(f + 1) * nb];
        let (u, v, w) = (k.at_qp(c(U)), k.at_qp(c(V)), k.at_qp(c(W)));
        let mut wv = ElementKit::buf::<T>();
        let mut uv = ElementKit::buf::<T>();
        for q in 0..k.nq {
            wv[q] = w[q] * v[q];
            uv[q] = u[q] * v[q];
        }
        let pwv = k.at_qp(&k.project(&wv)[..nb]);
        let puv = k.at_qp(&k.project(&uv)[..nb]);
        let mut g = ElementKit::buf::<T>();
        for q in 0..k.nq {
            g[q] = u[q] * u[q] * pwv[q] - u[q] * w[q] * puv[q];
        }
        k.integrate(h, &g) * (6.0 * self.problem.b)
    }

    fn node_sum(&self, state: &State, f: impl Fn(&NodePair<f64>) -> f64) -> f64 {
        let nb = self.nb();
        let n = self.space.n_elements();
        let bs = FIELDS * nb;
        (0..n)
            .map(|i| {
                let l = (i + n - 1) % n;
                let pair = self.pair(&state.fields[l * bs..(l + 1) * bs], &state.fields[i * bs..(i + 1) * bs]);
                f(&pair)
            })
            .sum()
    }

    fn pair<T: Real>(&self, left: &[T], right: &[T]) -> NodePair<T> {
        let nb = self.nb();
        let split = |x: &[T]| -> Vec<Vec<T>> { (0..FIELDS).map(|f| x[f * nb..(f + 1) * nb].to_vec()).collect() };
        let (l, r) = (split(left), split(right));
        let lr: Vec<&[T]> = l.iter().map(|v| v.as_slice()).collect();
        let rr: Vec<&[T]> = r.iter().map(|v| v.as_slice()).collect();
        NodePair::new(&self.kit, &lr, &rr)
    }
}

/// Modal coefficients of the derivative of a Legendre expansion on an
/// element of width `h`.
fn modal_derivative(c: &[f64], h: f64) -> Vec<f64> {
    let nb = c.len();
    let mut d = vec![0.0; nb];
    // P_j' = sum_{l < j, l + j odd} (2l + 1) P_l
    for (j, &cj) in c.iter().enumerate() {
        let mut l = (j + 1) % 2;
        while l < j {
            d[l] += cj * (2 * l + 1) as f64;
            l += 2;
        }
    }
    d.iter_mut().for_each(|x| *x *= 2.0 / h);
    d
}

impl Model for HsKdv {
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
        &[U, V]
    }

    fn aux_order(&self) -> &[usize] {
        &[Q, P, W, R]
    }

    fn element_rows<T: Real>(&self, e: usize, nbhd: [&[T]; 3], tau: [T; 2], out: &mut [T]) {
        let k = &self.kit;
        let nb = k.nb;
        let h = self.space.mesh().width(e);
        let (a, b) = (self.problem.a, self.problem.b);
        let fld = |f: usize| -> [&[T]; 3] { nbhd.map(|x| &x[f * nb..(f + 1) * nb]) };
        let (u, q, p, v, w, r) = (fld(U), fld(Q), fld(P), fld(V), fld(W), fld(R));
        let v2 = nbhd.map(|x| {
            let vq = k.at_qp(&x[V * nb..(V + 1) * nb]);
            let mut g = ElementKit::buf::<T>();
            for i in 0..k.nq {
                g[i] = vq[i] * vq[i];
            }
            k.project(&g)
        });
        let uq = k.at_qp(u[1]);
        let wq = k.at_qp(w[1]);
        let mass = |l: usize| self.space.mass(e, l);
        let (ou, rest) = out.split_at_mut(nb);
        let (oq, rest) = rest.split_at_mut(nb);
        let (op, rest) = rest.split_at_mut(nb);
        let (ov, rest) = rest.split_at_mut(nb);
        let (ow, or) = rest.split_at_mut(nb);
        // u_t rows: -[(a p + b v^2, phi') - <a p^ + b {Π v^2}, phi n>]
        k.weak_derivative(p[0], p[1], p[2], -a, ou);
        k.weak_derivative(&v2[0][..nb], &v2[1][..nb], &v2[2][..nb], -b, ou);
        k.jump_pairing(u[0], u[1], u[2], tau[0] * a, ou);
        k.jump_pairing(v[0], v[1], v[2], tau[1] * a, ou);
        // q rows
        for l in 0..nb {
            oq[l] += q[1][l] * mass(l);
        }
        k.weak_derivative(u[0], u[1], u[2], 1.0, oq);
        // p rows
        for l in 0..nb {
            op[l] += p[1][l] * mass(l);
        }
        k.weak_derivative(q[0], q[1], q[2], 1.0, op);
        let mut g = ElementKit::buf::<T>();
        for i in 0..k.nq {
            g[i] = uq[i] * uq[i] * 3.0;
        }
        k.load(h, &g, -1.0, op);
        // v_t rows: (r, phi') - <{r}, phi n> - (3 u w, phi)
        k.weak_derivative(r[0], r[1], r[2], 1.0, ov);
        for i in 0..k.nq {
            g[i] = uq[i] * wq[i] * 3.0;
        }
        k.load(h, &g, -1.0, ov);
        // w rows
        for l in 0..nb {
            ow[l] += w[1][l] * mass(l);
        }
        k.weak_derivative(v[0], v[1], v[2], 1.0, ow);
        // r rows
        for l in 0..nb {
            or[l] += r[1][l] * mass(l);
        }
        k.weak_derivative(w[0], w[1], w[2], 1.0, or);
    }

    fn node_constraint<T: Real>(&self, left: &[T], right: &[T], tau: [T; 2]) -> [T; 2] {
        let k = &self.kit;
        let (a, b) = (self.problem.a, self.problem.b);
        let s = self.pair(left, right);
        let avg = |(x, y): (T, T)| (x + y) * 0.5;
        let (ju, jv, jp) = (s.jump(U), s.jump(V), s.jump(P));
        let (ul, ur) = (s.tl[U], s.tr[U]);
        let r_e = (tau[0] * ju * ju + tau[1] * ju * jv) * a - (ul * ul * ul - ur * ur * ur) * a
            + ju * avg(s.proj_prod(k, U, U)) * (3.0 * a)
            - s.theta(k, U, V, V) * b;
        let (pv2l, pv2r) = s.proj_prod(k, V, V);
        let pen = tau[0] * ju + tau[1] * jv;
        let r_h = (jp * a + (pv2l - pv2r) * b) * pen * a
            + jp * pen * a
            + s.theta(k, Q, W, V) * (2.0 * b)
            - s.theta(k, R, U, V) * (2.0 * b)
            - s.theta(k, U, W, W) * (2.0 * b)
            - s.theta(k, P, V, V) * self.problem.pvv();
        [r_e, r_h]
    }

    fn volume_constraint<T: Real>(&self, e: usize, elem: &[T]) -> [T; 2] {
        [T::zero(), self.remainder_on(e, elem)]
    }

    fn has_volume_constraint(&self) -> bool {
        self.problem.b != 0.0
    }

    fn source_load(&self, t: f64) -> Option<Vec<f64>> {
        let pr = &self.problem;
        if pr.source_u.is_none() && pr.source_v.is_none() {
            return None;
        }
        let nb = self.nb();
        let mut out = vec![0.0; self.space.n_elements() * FIELDS * nb];
        for (f, g) in [(U, &pr.source_u), (V, &pr.source_v)] {
            if let Some(g) = g {
                set_field(&mut out, FIELDS, nb, f, &self.space.load_function(|x| g(x, t)));
            }
        }
        Some(out)
    }

    /// `(∫u, ∫(u^2 + 2b/3 v^2), ∫((1+a)(u^3 - q^2/2) + b(u v^2 - w^2)))`.
    fn invariants(&self, fields: &[f64]) -> [f64; 3] {
        let nb = self.nb();
        let f = |i| field_of(fields, FIELDS, nb, i);
        let (u, q, v, w) = (f(U), f(Q), f(V), f(W));
        let (a, b) = (self.problem.a, self.problem.b);
        [
            self.space.integrate_pointwise(&[&u], |x| x[0]),
            self.space
                .integrate_pointwise(&[&u, &v], |x| x[0] * x[0] + 2.0 / 3.0 * b * x[1] * x[1]),
            self.space.integrate_pointwise(&[&u, &q, &v, &w], |x| {
                (1.0 + a) * (x[0].powi(3) - 0.5 * x[1] * x[1]) + b * (x[0] * x[2] * x[2] - x[3] * x[3])
            }),
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

    fn model(n: usize, k: usize, a: f64, b: f64) -> HsKdv {
        HsKdv::new(DgSpace::uniform(0.0, 10.0, n, k).unwrap(), HsProblem::new(a, b))
    }

    fn random_fields(m: &HsKdv, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..m.space.ndof() * FIELDS).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn solved_state(m: &HsKdv, rng: &mut ChaCha8Rng) -> State {
        let mut x = random_fields(m, rng);
        stepper::recover_aux(m, &mut x);
        let (tau, how) = stepper::solve_tau(m, &x);
        assert_eq!(how, TauSolve::Regular);
        State { t: 0.0, fields: x, tau }
    }

    #[test]
    fn modal_derivative_of_quadratic() {
        // 1 + 2 xi + 3 P_2 on width 2: derivative 2 + 9 xi
        let d = modal_derivative(&[1.0, 2.0, 3.0], 2.0);
        assert_eq!(d, vec![2.0, 9.0, 0.0]);
    }

    #[test]
    fn constants_are_steady() {
        let m = model(5, 2, 1.0, 1.0);
        let u0 = DofVector::constant(m.space.clone(), 0.4);
        let v0 = DofVector::constant(m.space.clone(), -0.3);
        let (st, how) = m.init_aux(0.0, &u0, &v0);
        assert_eq!(how, TauSolve::NoJumps);
        let (ut, vt) = m.time_derivative(&st);
        assert!(ut.iter().chain(&vt).all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn projection_remainder_vanishes_for_piecewise_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = model(9, 0, -0.5, 2.0);
        let st = State {
            t: 0.0,
            fields: random_fields(&m, &mut rng),
            tau: [0.0; 2],
        };
        assert!(m.projection_remainder(&st).abs() < 1e-14);
        let m = model(9, 2, -0.5, 2.0);
        let st = State {
            t: 0.0,
            fields: random_fields(&m, &mut rng),
            tau: [0.0; 2],
        };
        assert!(m.projection_remainder(&st).abs() > 1e-6);
    }

    #[test]
    fn theta_symmetric_in_last_two_and_trilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = DgSpace::uniform(0.0, 1.0, 6, 2).unwrap();
        let rv = |rng: &mut ChaCha8Rng| {
            DofVector::from_coeffs(s.clone(), (0..s.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };
        let (f1, f2, f3, g) = (rv(&mut rng), rv(&mut rng), rv(&mut rng), rv(&mut rng));
        let a = theta(&f1, &f2, &f3);
        let b = theta(&f1, &f3, &f2);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        let combo = DofVector::from_coeffs(
            s.clone(),
            f1.coeffs().iter().zip(g.coeffs()).map(|(x, y)| 2.0 * x - 3.0 * y).collect(),
        );
        let lhs = theta(&combo, &f2, &f3);
        let (t1, tg) = (theta(&f1, &f2, &f3), theta(&g, &f2, &f3));
        for i in 0..6 {
            assert!((lhs[i] - (2.0 * t1[i] - 3.0 * tg[i])).abs() < 1e-13);
        }
        let zero = vec![0.0; 6];
        let tt = theta_tilde(&f1, &f2, &f3, Some([&zero, &zero, &zero]));
        assert_eq!(tt, t1);
    }

    #[test]
    fn theta_vanishes_for_continuous_fields() {
        let s = DgSpace::uniform(0.0, 1.0, 4, 0).unwrap();
        let c = |v: f64| DofVector::constant(s.clone(), v);
        assert!(theta(&c(1.0), &c(2.0), &c(-0.5)).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn energy_condition_is_twice_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model(7, 2, -0.125, -3.0);
        let st = State {
            t: 0.0,
            fields: random_fields(&m, &mut rng),
            tau: [0.3, -0.7],
        };
        let (re, _) = m.constraint_residuals(&st);
        assert!((m.general_energy_condition(&st) - 2.0 * re).abs() < 1e-11);
    }

    #[test]
    fn coupling_term_rewrite_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in [1usize, 2, 3] {
            let m = model(6, k, 0.5, 1.5);
            let mut x = random_fields(&m, &mut rng);
            stepper::recover_aux(&m, &mut x);
            let st = State { t: 0.0, fields: x, tau: [0.0; 2] };
            let (d, r) = m.coupling_term(&st);
            assert!((d - r).abs() < 1e-9 * (1.0 + d.abs()), "k={k}: {d} vs {r}");
        }
    }

    #[test]
    fn semi_discrete_rates_vanish_when_constraints_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (a, b) in [(1.0, 1.0), (-0.125, -3.0), (0.5, 2.0)] {
            let m = model(8, 2, a, b);
            let st = solved_state(&m, &mut rng);
            let (de, dh) = m.invariant_rates(&st);
            let scale = m.invariants(&st.fields).iter().fold(1.0f64, |s, v| s.max(v.abs()));
            assert!(de.abs() < 1e-10 * scale, "a={a} b={b} dE/dt = {de}");
            assert!(dh.abs() < 1e-10 * scale, "a={a} b={b} dH/dt = {dh}");
        }
    }

    #[test]
    fn unit_pvv_weight_breaks_hamiltonian_rate_when_b_differs_from_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = model(8, 2, -0.125, -3.0);
        m.problem.pvv_weight = PvvWeight::Unit;
        let st = solved_state(&m, &mut rng);
        let (de, dh) = m.invariant_rates(&st);
        assert!(de.abs() < 1e-10);
        assert!(dh.abs() > 1e-6, "{dh}");
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (scheme, mode) in [(Scheme::Midpoint, TauMode::PerStage), (Scheme::Irk4, TauMode::Shared)] {
            let m = model(4, 1, -0.125, -3.0);
            let st = State {
                t: 0.0,
                fields: random_fields(&m, &mut rng),
                tau: [0.2, -0.1],
            };
            let tab = scheme.tableau();
            let sys = StageSystem::new(&m, &tab, mode, &st, 0.05);
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
    fn midpoint_steps_conserve_mass_and_energy() {
        let m = model(12, 2, -0.125, -3.0);
        let u0 = m.space.project(|x| 0.3 * (0.2 * std::f64::consts::PI * x).sin());
        let v0 = m.space.project(|x| 0.2 * (0.2 * std::f64::consts::PI * x).cos() + 0.1);
        let (mut st, _) = m.init_aux(0.0, &u0, &v0);
        let inv0 = m.invariants(&st.fields);
        let cfg = NewtonConfig::default();
        let mut stepper = Stepper::new(&m, Scheme::Midpoint, TauMode::PerStage, cfg).unwrap();
        for _ in 0..5 {
            st = stepper.step(&st, 0.05).unwrap().0;
        }
        let inv = m.invariants(&st.fields);
        // midpoint keeps quadratic invariants exactly, the cubic one only approximately
        for (i, tol) in [(0, 1e-12), (1, 1e-10), (2, 1e-4)] {
            let d = (inv[i] - inv0[i]).abs() / (1.0 + inv0[i].abs());
            assert!(d < tol, "invariant {i}: {d}");
        }
    }
}
