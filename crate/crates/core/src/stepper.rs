//! Model-independent machinery for the implicitly penalized DG schemes:
//! stage residuals and their exact Jacobians, recovery of auxiliary fields
//! and penalty parameters, and the time step itself.
//!
//! Storage is element-block: all fields of element `e` are contiguous,
//! field `f` mode `j` at `e * F * nb + f * nb + j`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{Dual, Real, CHUNK};
use crate::dg::DgSpace;
use crate::local::ElementKit;
use crate::rk::{Scheme, Tableau};
use crate::solve::{
    pseudo_inverse, BorderedMatrix, CsrMatrix, Newton, NewtonConfig, NewtonReport,
    NonlinearSystem, SolveError,
};

/// A first-order DG system with one pair of implicitly determined penalty
/// parameters.
pub trait Model: Sync {
    fn space(&self) -> &Arc<DgSpace>;
    fn kit(&self) -> &ElementKit;
    fn n_fields(&self) -> usize;
    /// Fields carrying a time derivative.
    fn evolved(&self) -> &[usize];
    /// Auxiliary fields in an order where each depends only on earlier ones.
    fn aux_order(&self) -> &[usize];

    /// Rows of element `e`. For evolved fields: the weak right-hand side
    /// `(u_t, phi)` without source. For auxiliary fields: the residual of
    /// the defining relation, whose own-field part is `M x_f`.
    /// `nbhd` holds the previous, current and next element blocks.
    fn element_rows<T: Real>(&self, e: usize, nbhd: [&[T]; 3], tau: [T; 2], out: &mut [T]);

    /// Contribution of the node between element blocks `left` and `right`
    /// to the energy and Hamiltonian constraints.
    fn node_constraint<T: Real>(&self, left: &[T], right: &[T], tau: [T; 2]) -> [T; 2];

    /// Element-volume contribution to the constraints.
    fn volume_constraint<T: Real>(&self, _e: usize, _elem: &[T]) -> [T; 2] {
        [T::zero(); 2]
    }

    fn has_volume_constraint(&self) -> bool {
        false
    }

    /// Source load `(g(t), phi)` in element-block layout, zero on auxiliary
    /// fields; `None` when unforced.
    fn source_load(&self, _t: f64) -> Option<Vec<f64>> {
        None
    }

    /// `(mass, energy, hamiltonian)` of a state.
    fn invariants(&self, fields: &[f64]) -> [f64; 3];

    fn block(&self) -> usize {
        self.n_fields() * self.space().nb()
    }
}

/// Fields and penalty parameters at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub fields: Vec<f64>,
    pub tau: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    /// Each stage carries its own penalty pair and constraint pair.
    PerStage,
    /// One penalty pair for the step; constraints summed with weights `b_i`.
    Shared,
}

impl std::str::FromStr for TauMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "per_stage" | "per-stage" | "stage" => Ok(TauMode::PerStage),
            "shared" => Ok(TauMode::Shared),
            other => Err(format!("unknown tau_mode '{other}' (expected per_stage or shared)")),
        }
    }
}

/// Copies field `f` out of an element-block vector into a per-field vector.
pub fn field_of(fields: &[f64], n_fields: usize, nb: usize, f: usize) -> Vec<f64> {
    let n_el = fields.len() / (n_fields * nb);
    let mut out = Vec::with_capacity(n_el * nb);
    for e in 0..n_el {
        let o = e * n_fields * nb + f * nb;
        out.extend_from_slice(&fields[o..o + nb]);
    }
    out
}

/// Writes a per-field vector into slot `f` of an element-block vector.
pub fn set_field(fields: &mut [f64], n_fields: usize, nb: usize, f: usize, values: &[f64]) {
    let n_el = fields.len() / (n_fields * nb);
    for e in 0..n_el {
        let o = e * n_fields * nb + f * nb;
        fields[o..o + nb].copy_from_slice(&values[e * nb..(e + 1) * nb]);
    }
}

/// Element rows of the whole mesh.
pub fn spatial_rows<M: Model>(model: &M, fields: &[f64], tau: [f64; 2]) -> Vec<f64> {
    let n = model.space().n_elements();
    let bs = model.block();
    let mut out = vec![0.0; n * bs];
    for e in 0..n {
        let (m, p) = ((e + n - 1) % n, (e + 1) % n);
        let nbhd = [
            &fields[m * bs..(m + 1) * bs],
            &fields[e * bs..(e + 1) * bs],
            &fields[p * bs..(p + 1) * bs],
        ];
        model.element_rows(e, nbhd, tau, &mut out[e * bs..(e + 1) * bs]);
    }
    out
}

/// Energy and Hamiltonian constraint residuals of a state.
pub fn constraints<M: Model>(model: &M, fields: &[f64], tau: [f64; 2]) -> [f64; 2] {
    let n = model.space().n_elements();
    let bs = model.block();
    let mut c = [0.0; 2];
    for i in 0..n {
        let l = (i + n - 1) % n;
        let r = model.node_constraint(
            &fields[l * bs..(l + 1) * bs],
            &fields[i * bs..(i + 1) * bs],
            tau,
        );
        c[0] += r[0];
        c[1] += r[1];
    }
    if model.has_volume_constraint() {
        for e in 0..n {
            let r = model.volume_constraint(e, &fields[e * bs..(e + 1) * bs]);
            c[0] += r[0];
            c[1] += r[1];
        }
    }
    c
}

/// Recomputes every auxiliary field from the evolved ones.
pub fn recover_aux<M: Model>(model: &M, fields: &mut [f64]) {
    let space = model.space().clone();
    let nb = space.nb();
    let bs = model.block();
    for &f in model.aux_order() {
        let rows = spatial_rows(model, fields, [0.0; 2]);
        for e in 0..space.n_elements() {
            for l in 0..nb {
                let i = e * bs + f * nb + l;
                fields[i] -= rows[i] / space.mass(e, l);
            }
        }
    }
}

/// How the penalty pair of a state was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSolve {
    Regular,
    /// All constraint coefficients vanish: `tau = (0, 0)`.
    NoJumps,
    /// Nearly singular system: minimal-norm least squares.
    MinNorm,
}

/// Threshold below which the constraint coefficients are treated as zero.
pub const TAU_ZERO: f64 = 1e-28;
/// Relative determinant threshold for the minimal-norm fallback.
pub const TAU_DET_REL: f64 = 1e-24;

/// Solves `c0 + g tau = 0` for the penalty pair, falling back to zero when
/// every coefficient vanishes and to the minimal-norm solution when `g` is
/// nearly singular.
pub fn solve_pair(c0: [f64; 2], g: [[f64; 2]; 2]) -> ([f64; 2], TauSolve) {
    let scale = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale < TAU_ZERO {
        return ([0.0, 0.0], TauSolve::NoJumps);
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    if det.abs() >= TAU_DET_REL * scale * scale {
        let t0 = (-c0[0] * g[1][1] + c0[1] * g[0][1]) / det;
        let t1 = (-c0[1] * g[0][0] + c0[0] * g[1][0]) / det;
        return ([t0, t1], TauSolve::Regular);
    }
    let (pinv, _) = pseudo_inverse(&DMatrix::from_row_slice(2, 2, &[g[0][0], g[0][1], g[1][0], g[1][1]]), 1e-12);
    let t0 = -(pinv[0] * c0[0] + pinv[1] * c0[1]);
    let t1 = -(pinv[2] * c0[0] + pinv[3] * c0[1]);
    ([t0, t1], TauSolve::MinNorm)
}

/// Constraint values at `tau = 0` and their coefficients in `tau`.
fn affine_constraints<M: Model>(model: &M, fields: &[f64]) -> ([f64; 2], [[f64; 2]; 2]) {
    let c0 = constraints(model, fields, [0.0, 0.0]);
    let c1 = constraints(model, fields, [1.0, 0.0]);
    let c2 = constraints(model, fields, [0.0, 1.0]);
    (c0, [[c1[0] - c0[0], c2[0] - c0[0]], [c1[1] - c0[1], c2[1] - c0[1]]])
}

/// Solves the constraints (affine in the penalty pair) for `tau`.
pub fn solve_tau<M: Model>(model: &M, fields: &[f64]) -> ([f64; 2], TauSolve) {
    let (c0, g) = affine_constraints(model, fields);
    solve_pair(c0, g)
}

/// Regularized second row of the penalty system. On the line where the
/// energy constraint holds, `tau = tau_E + s d`, the Hamiltonian constraint
/// varies as `kappa s`; the row is the stationarity condition of
/// `rH^2 + mu^2 (d . tau)^2` with `mu = mu_rel |gH|`.
#[derive(Debug, Clone, Copy)]
struct RegularizedRow {
    d: [f64; 2],
    kappa: f64,
    mu2: f64,
}

impl RegularizedRow {
    fn new(g: [[f64; 2]; 2], mu_rel: f64) -> Option<Self> {
        let ne = g[0][0].hypot(g[0][1]);
        if ne < TAU_ZERO {
            return None;
        }
        let d = [-g[0][1] / ne, g[0][0] / ne];
        let nh = g[1][0].hypot(g[1][1]);
        let mu = mu_rel * nh;
        Some(Self {
            d,
            kappa: g[1][0] * d[0] + g[1][1] * d[1],
            mu2: mu * mu,
        })
    }

    /// Coefficients of the row in `tau`.
    fn coeffs(&self, g: [[f64; 2]; 2]) -> [f64; 2] {
        [
            self.kappa * g[1][0] + self.mu2 * self.d[0],
            self.kappa * g[1][1] + self.mu2 * self.d[1],
        ]
    }

    /// Row value from the Hamiltonian constraint value at `tau`.
    fn value(&self, r_h: f64, tau: [f64; 2]) -> f64 {
        self.kappa * r_h + self.mu2 * (self.d[0] * tau[0] + self.d[1] * tau[1])
    }
}

/// Penalty pair meeting the energy constraint exactly and the Hamiltonian
/// constraint in the regularized least-squares sense. The system is
/// nonsingular whenever the energy coefficients do not all vanish; with
/// `mu_rel = 0` and a regular pair it reproduces [`solve_pair`].
pub fn solve_regularized(c0: [f64; 2], g: [[f64; 2]; 2], mu_rel: f64) -> ([f64; 2], TauSolve) {
    let Some(row) = RegularizedRow::new(g, mu_rel) else {
        return solve_pair(c0, g);
    };
    let h = row.coeffs(g);
    let rhs = [-c0[0], -row.kappa * c0[1]];
    let det = g[0][0] * h[1] - g[0][1] * h[0];
    if det == 0.0 {
        return solve_pair(c0, g);
    }
    let t0 = (rhs[0] * h[1] - g[0][1] * rhs[1]) / det;
    let t1 = (g[0][0] * rhs[1] - rhs[0] * h[0]) / det;
    ([t0, t1], TauSolve::Regular)
}

/// Regularized penalty pair of a state, see [`solve_regularized`].
pub fn regularized_tau<M: Model>(model: &M, fields: &[f64], mu_rel: f64) -> [f64; 2] {
    let (c0, g) = affine_constraints(model, fields);
    solve_regularized(c0, g, mu_rel).0
}

/// Builds a full state from evolved-field data: auxiliaries by linear
/// solves, then the penalty pair.
pub fn init_state<M: Model>(model: &M, t: f64, mut fields: Vec<f64>) -> (State, TauSolve) {
    recover_aux(model, &mut fields);
    let (tau, how) = solve_tau(model, &fields);
    (State { t, fields, tau }, how)
}

/// The coupled stage system of one implicit Runge–Kutta step.
pub struct StageSystem<'a, M: Model> {
    model: &'a M,
    tab: &'a Tableau,
    mode: TauMode,
    un: &'a [f64],
    dt: f64,
    /// Per-stage source loads (element-block, one per stage).
    loads: Vec<Option<Vec<f64>>>,
    /// Re-solve the penalties after every Newton update.
    project_border: bool,
    /// When set, the Hamiltonian constraint is imposed in the regularized
    /// sense of [`solve_regularized`] with this relative weight.
    regularization: Option<f64>,
}

impl<'a, M: Model> StageSystem<'a, M> {
    pub fn new(model: &'a M, tab: &'a Tableau, mode: TauMode, state: &'a State, dt: f64) -> Self {
        let loads = (0..tab.s).map(|i| model.source_load(state.t + tab.c[i] * dt)).collect();
        Self {
            model,
            tab,
            mode,
            un: &state.fields,
            dt,
            loads,
            project_border: false,
            regularization: None,
        }
    }

    pub fn with_regularization(mut self, mu_rel: Option<f64>) -> Self {
        self.regularization = mu_rel;
        self
    }

    pub fn with_border_projection(mut self, on: bool) -> Self {
        self.project_border = on;
        self
    }

    fn n_el(&self) -> usize {
        self.model.space().n_elements()
    }

    fn bs(&self) -> usize {
        self.model.block()
    }

    fn n_tau(&self) -> usize {
        match self.mode {
            TauMode::PerStage => 2 * self.tab.s,
            TauMode::Shared => 2,
        }
    }

    /// Index of the penalty pair used by stage `j`.
    fn tau_base(&self, j: usize) -> usize {
        match self.mode {
            TauMode::PerStage => 2 * j,
            TauMode::Shared => 0,
        }
    }

    /// Weight of stage `j` constraints in border row `tau_base(j) + r`.
    fn constraint_weight(&self, j: usize) -> f64 {
        match self.mode {
            TauMode::PerStage => 1.0,
            TauMode::Shared => self.tab.b[j],
        }
    }

    #[inline]
    fn core_index(&self, e: usize, stage: usize, local: usize) -> usize {
        (e * self.tab.s + stage) * self.bs() + local
    }

    /// Initial guess: every stage at the previous level.
    pub fn initial_guess(&self, state: &State) -> Vec<f64> {
        let s = self.tab.s;
        let bs = self.bs();
        let mut x = vec![0.0; self.dim()];
        for e in 0..self.n_el() {
            for i in 0..s {
                let o = self.core_index(e, i, 0);
                x[o..o + bs].copy_from_slice(&state.fields[e * bs..(e + 1) * bs]);
            }
        }
        let n = self.n_core();
        for j in 0..self.n_tau() / 2 {
            x[n + 2 * j] = state.tau[0];
            x[n + 2 * j + 1] = state.tau[1];
        }
        x
    }

    /// Stage `i` fields in element-block layout.
    pub fn stage_fields(&self, x: &[f64], i: usize) -> Vec<f64> {
        let bs = self.bs();
        let mut out = Vec::with_capacity(self.n_el() * bs);
        for e in 0..self.n_el() {
            let o = self.core_index(e, i, 0);
            out.extend_from_slice(&x[o..o + bs]);
        }
        out
    }

    pub fn stage_tau(&self, x: &[f64], i: usize) -> [f64; 2] {
        let o = self.n_core() + self.tau_base(i);
        [x[o], x[o + 1]]
    }

    /// Per-stage constraint residuals at a solution vector.
    pub fn stage_constraints(&self, x: &[f64]) -> Vec<[f64; 2]> {
        (0..self.tab.s)
            .map(|i| constraints(self.model, &self.stage_fields(x, i), self.stage_tau(x, i)))
            .collect()
    }

    /// `u^n + sum_i d_i (U_i - u^n)` on evolved fields; auxiliaries copied
    /// from the previous level (they are recomputed afterwards).
    pub fn advance(&self, x: &[f64]) -> Vec<f64> {
        let nb = self.model.space().nb();
        let bs = self.bs();
        let mut out = self.un.to_vec();
        for e in 0..self.n_el() {
            for &f in self.model.evolved() {
                for l in 0..nb {
                    let loc = f * nb + l;
                    let un = self.un[e * bs + loc];
                    let mut v = un;
                    for i in 0..self.tab.s {
                        v += self.tab.d[i] * (x[self.core_index(e, i, loc)] - un);
                    }
                    out[e * bs + loc] = v;
                }
            }
        }
        out
    }

    /// Weighted constraint values at zero penalties and their coefficients,
    /// one entry per penalty pair.
    fn border_blocks(&self, x: &[f64]) -> Vec<([f64; 2], [[f64; 2]; 2])> {
        let mut blocks = vec![([0.0; 2], [[0.0; 2]; 2]); self.n_tau() / 2];
        for j in 0..self.tab.s {
            let (c0, g) = affine_constraints(self.model, &self.stage_fields(x, j));
            let w = self.constraint_weight(j);
            let b = &mut blocks[self.tau_base(j) / 2];
            for r in 0..2 {
                b.0[r] += w * c0[r];
                for c in 0..2 {
                    b.1[r][c] += w * g[r][c];
                }
            }
        }
        blocks
    }

    /// Re-solves every penalty pair for the current stage fields. The
    /// constraints are affine in the penalties, so this is exact.
    pub fn solve_border(&self, x: &mut [f64]) -> TauSolve {
        let n = self.n_core();
        let mut worst = TauSolve::NoJumps;
        for (i, (c0, g)) in self.border_blocks(x).into_iter().enumerate() {
            let (tau, how) = match self.regularization {
                None => solve_pair(c0, g),
                Some(mu) => solve_regularized(c0, g, mu),
            };
            x[n + 2 * i] = tau[0];
            x[n + 2 * i + 1] = tau[1];
            worst = match (worst, how) {
                (TauSolve::MinNorm, _) | (_, TauSolve::MinNorm) => TauSolve::MinNorm,
                (TauSolve::Regular, _) | (_, TauSolve::Regular) => TauSolve::Regular,
                _ => TauSolve::NoJumps,
            };
        }
        worst
    }

    fn is_evolved(&self) -> Vec<bool> {
        let mut ev = vec![false; self.model.n_fields()];
        for &f in self.model.evolved() {
            ev[f] = true;
        }
        ev
    }
}

/// The stage system with the penalties held fixed: the core equations only.
struct FrozenPenalties<'s, 'a, M: Model> {
    sys: &'s StageSystem<'a, M>,
    tau: Vec<f64>,
}

impl<M: Model> FrozenPenalties<'_, '_, M> {
    fn full(&self, core: &[f64]) -> Vec<f64> {
        let mut x = core.to_vec();
        x.extend_from_slice(&self.tau);
        x
    }
}

impl<M: Model> NonlinearSystem for FrozenPenalties<'_, '_, M> {
    fn n_core(&self) -> usize {
        self.sys.n_core()
    }

    fn n_border(&self) -> usize {
        0
    }

    fn residual(&self, x: &[f64], out: &mut [f64]) {
        let mut r = vec![0.0; self.sys.dim()];
        self.sys.residual(&self.full(x), &mut r);
        out.copy_from_slice(&r[..x.len()]);
    }

    fn jacobian(&self, x: &[f64]) -> BorderedMatrix {
        BorderedMatrix::without_border(self.sys.jacobian(&self.full(x)).core)
    }
}

impl<M: Model> NonlinearSystem for StageSystem<'_, M> {
    fn correct(&self, x: &mut [f64]) {
        if self.project_border {
            self.solve_border(x);
        }
    }

    fn n_core(&self) -> usize {
        self.n_el() * self.tab.s * self.bs()
    }

    fn n_border(&self) -> usize {
        self.n_tau()
    }

    fn residual(&self, x: &[f64], out: &mut [f64]) {
        let s = self.tab.s;
        let nb = self.model.space().nb();
        let bs = self.bs();
        let ev = self.is_evolved();
        let space = self.model.space();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(s);
        for j in 0..s {
            let mut g = spatial_rows(self.model, &self.stage_fields(x, j), self.stage_tau(x, j));
            if let Some(load) = &self.loads[j] {
                for (gi, li) in g.iter_mut().zip(load) {
                    *gi += li;
                }
            }
            rows.push(g);
        }
        for e in 0..self.n_el() {
            for i in 0..s {
                for f in 0..self.model.n_fields() {
                    for l in 0..nb {
                        let loc = f * nb + l;
                        let r = self.core_index(e, i, loc);
                        out[r] = if ev[f] {
                            let mut acc = space.mass(e, l) * (x[r] - self.un[e * bs + loc]);
                            for (j, g) in rows.iter().enumerate() {
                                acc -= self.dt * self.tab.a(i, j) * g[e * bs + loc];
                            }
                            acc
                        } else {
                            rows[i][e * bs + loc]
                        };
                    }
                }
            }
        }
        let n = self.n_core();
        out[n..].iter_mut().for_each(|v| *v = 0.0);
        for (j, c) in self.stage_constraints(x).into_iter().enumerate() {
            let w = self.constraint_weight(j);
            let o = n + self.tau_base(j);
            out[o] += w * c[0];
            out[o + 1] += w * c[1];
        }
        if let Some(mu) = self.regularization {
            for (b, (_, g)) in self.border_blocks(x).into_iter().enumerate() {
                let o = n + 2 * b;
                out[o + 1] = match RegularizedRow::new(g, mu) {
                    Some(row) => row.value(out[o + 1], [x[o], x[o + 1]]),
                    None => out[o + 1],
                };
            }
        }
    }

    fn jacobian(&self, x: &[f64]) -> BorderedMatrix {
        let s = self.tab.s;
        let n_el = self.n_el();
        let nb = self.model.space().nb();
        let bs = self.bs();
        let nc = self.n_core();
        let m = self.n_tau();
        let ev = self.is_evolved();
        let space = self.model.space();
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(n_el * s * bs * 3 * s * bs);
        let mut cols = vec![vec![0.0; nc]; m];
        let mut brows = vec![vec![0.0; nc]; m];
        let mut corner = vec![0.0; m * m];

        // mass part of evolved rows
        for e in 0..n_el {
            for i in 0..s {
                for &f in self.model.evolved() {
                    for l in 0..nb {
                        let r = self.core_index(e, i, f * nb + l);
                        trip.push((r, r, space.mass(e, l)));
                    }
                }
            }
        }

        let nv = 3 * bs + 2;
        let mut nbhd = vec![Dual::cst(0.0); 3 * bs];
        let mut out = vec![Dual::cst(0.0); bs];
        for j in 0..s {
            let tj = self.stage_tau(x, j);
            let tb = self.tau_base(j);
            for e in 0..n_el {
                let els = [(e + n_el - 1) % n_el, e, (e + 1) % n_el];
                for c0 in (0..nv).step_by(CHUNK) {
                    let seed = |v: usize| (v >= c0 && v < c0 + CHUNK).then(|| v - c0);
                    for (k, &el) in els.iter().enumerate() {
                        for loc in 0..bs {
                            let v = k * bs + loc;
                            nbhd[v] = Dual::var(x[self.core_index(el, j, loc)], seed(v));
                        }
                    }
                    let tau = [Dual::var(tj[0], seed(3 * bs)), Dual::var(tj[1], seed(3 * bs + 1))];
                    out.iter_mut().for_each(|o| *o = Dual::cst(0.0));
                    self.model.element_rows(
                        e,
                        [&nbhd[..bs], &nbhd[bs..2 * bs], &nbhd[2 * bs..]],
                        tau,
                        &mut out,
                    );
                    for (loc, o) in out.iter().enumerate() {
                        let f = loc / nb;
                        for (k, &dv) in o.d.iter().enumerate() {
                            let v = c0 + k;
                            if v >= nv || dv == 0.0 {
                                continue;
                            }
                            let col = if v < 3 * bs {
                                Some(self.core_index(els[v / bs], j, v % bs))
                            } else {
                                None
                            };
                            let mut put = |row: usize, val: f64| match col {
                                Some(c) => trip.push((row, c, val)),
                                None => cols[tb + v - 3 * bs][row] += val,
                            };
                            if ev[f] {
                                for i in 0..s {
                                    let a = self.tab.a(i, j);
                                    if a != 0.0 {
                                        put(self.core_index(e, i, loc), -self.dt * a * dv);
                                    }
                                }
                            } else {
                                put(self.core_index(e, j, loc), dv);
                            }
                        }
                    }
                }
            }

            // constraint rows of stage j
            let w = self.constraint_weight(j);
            let nvn = 2 * bs + 2;
            let mut pair = vec![Dual::cst(0.0); 2 * bs];
            for i in 0..n_el {
                let els = [(i + n_el - 1) % n_el, i];
                for c0 in (0..nvn).step_by(CHUNK) {
                    let seed = |v: usize| (v >= c0 && v < c0 + CHUNK).then(|| v - c0);
                    for (k, &el) in els.iter().enumerate() {
                        for loc in 0..bs {
                            let v = k * bs + loc;
                            pair[v] = Dual::var(x[self.core_index(el, j, loc)], seed(v));
                        }
                    }
                    let tau = [Dual::var(tj[0], seed(2 * bs)), Dual::var(tj[1], seed(2 * bs + 1))];
                    let r = self.model.node_constraint(&pair[..bs], &pair[bs..], tau);
                    for (ri, rv) in r.iter().enumerate() {
                        for (k, &dv) in rv.d.iter().enumerate() {
                            let v = c0 + k;
                            if v >= nvn || dv == 0.0 {
                                continue;
                            }
                            if v < 2 * bs {
                                brows[tb + ri][self.core_index(els[v / bs], j, v % bs)] += w * dv;
                            } else {
                                corner[(tb + ri) * m + tb + v - 2 * bs] += w * dv;
                            }
                        }
                    }
                }
            }
            if self.model.has_volume_constraint() {
                let mut el = vec![Dual::cst(0.0); bs];
                for e in 0..n_el {
                    for c0 in (0..bs).step_by(CHUNK) {
                        for loc in 0..bs {
                            let seed = (loc >= c0 && loc < c0 + CHUNK).then(|| loc - c0);
                            el[loc] = Dual::var(x[self.core_index(e, j, loc)], seed);
                        }
                        let r = self.model.volume_constraint(e, &el);
                        for (ri, rv) in r.iter().enumerate() {
                            for (k, &dv) in rv.d.iter().enumerate() {
                                let v = c0 + k;
                                if v < bs && dv != 0.0 {
                                    brows[tb + ri][self.core_index(e, j, v)] += w * dv;
                                }
                            }
                        }
                    }
                }
            }
        }
        // The row scaling depends on the fields too; that dependence is
        // dropped, which costs only the convergence rate.
        if let Some(mu) = self.regularization {
            for (b, (_, g)) in self.border_blocks(x).into_iter().enumerate() {
                let r = 2 * b + 1;
                if let Some(row) = RegularizedRow::new(g, mu) {
                    brows[r].iter_mut().for_each(|v| *v *= row.kappa);
                    let h = row.coeffs(g);
                    corner[r * m..(r + 1) * m].iter_mut().for_each(|v| *v = 0.0);
                    corner[r * m + r - 1] = h[0];
                    corner[r * m + r] = h[1];
                }
            }
        }
        BorderedMatrix {
            core: CsrMatrix::from_triplets(nc, nc, trip),
            cols,
            rows: brows,
            corner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub newton_iterations: usize,
    pub factorizations: usize,
    pub newton_residual: f64,
    /// Largest stage constraint residual at the accepted solution.
    pub stage_constraint: f64,
    /// Whether the step had to be split into two halves.
    pub halved: bool,
    /// Relative weight when the Hamiltonian constraint had to be
    /// regularized; `None` when both constraints hold.
    pub regularization: Option<f64>,
    pub tau_solve: TauSolve,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("step from t = {t} with dt = {dt} failed: {source}")]
pub struct StepError {
    pub t: f64,
    pub dt: f64,
    #[source]
    pub source: SolveError,
}

/// When the penalties are poorly determined, re-solving them after
/// every update feeds their noise into the core residual and the full
/// iteration stalls above tolerance. Converges the core with the
/// penalties frozen and accepts if the whole system then meets the
/// tolerance.
fn polish<M: Model>(solver: &mut Newton, sys: &StageSystem<M>, x: &mut [f64], key: u64) -> Option<NewtonReport> {
    let n = sys.n_core();
    let frozen = FrozenPenalties {
        sys,
        tau: x[n..].to_vec(),
    };
    let mut core = x[..n].to_vec();
    solver.invalidate();
    let rep = solver.solve(&frozen, &mut core, key).ok()?;
    let mut trial = x.to_vec();
    trial[..n].copy_from_slice(&core);
    let mut r = vec![0.0; trial.len()];
    sys.residual(&trial, &mut r);
    let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (norm <= solver.config.abs_tol).then(|| {
        x.copy_from_slice(&trial);
        NewtonReport {
            final_residual: norm,
            ..rep
        }
    })
}

/// Time integrator for one model; owns a Newton solver whose factorization
/// is reused across steps of equal size.
pub struct Stepper<'a, M: Model> {
    model: &'a M,
    tableau: Tableau,
    mode: TauMode,
    newton: Newton,
    /// Solver for the frozen-penalty predictor.
    predictor: Newton,
    /// Regularization weight of the previous step, if it needed one.
    last_regularization: Option<f64>,
}

impl<'a, M: Model> Stepper<'a, M> {
    pub fn new(model: &'a M, scheme: Scheme, mode: TauMode, newton: NewtonConfig) -> Result<Self, SolveError> {
        Ok(Self {
            model,
            tableau: scheme.tableau(),
            mode,
            predictor: Newton::new(newton.clone())?,
            newton: Newton::new(newton)?,
            last_regularization: None,
        })
    }

    pub fn model(&self) -> &M {
        self.model
    }

    pub fn tableau(&self) -> &Tableau {
        &self.tableau
    }

    pub fn newton_config(&self) -> &NewtonConfig {
        &self.newton.config
    }

    fn attempt(&mut self, state: &State, dt: f64, reg: Option<f64>) -> Result<(State, StepReport), SolveError> {
        // Near a smooth solution the constraint coefficients are tiny, so a
        // full Newton step from the previous level over-corrects the
        // penalties. Predict the stages with the penalties frozen, then solve
        // the penalties exactly, and keep them solved after every update.
        let start_tau = match reg {
            None => state.tau,
            Some(mu) => regularized_tau(self.model, &state.fields, mu),
        };
        let sys = StageSystem::new(self.model, &self.tableau, self.mode, state, dt)
            .with_border_projection(true)
            .with_regularization(reg);
        let mut x = sys.initial_guess(state);
        let n = sys.n_core();
        for p in x[n..].chunks_mut(2) {
            p.copy_from_slice(&start_tau);
        }
        let frozen = FrozenPenalties {
            sys: &sys,
            tau: x[n..].to_vec(),
        };
        let mut core = x[..n].to_vec();
        let key = dt.to_bits() ^ reg.map_or(0, f64::to_bits);
        if self.predictor.solve(&frozen, &mut core, key).is_ok() {
            x[..n].copy_from_slice(&core);
        } else {
            self.predictor.invalidate();
        }
        sys.solve_border(&mut x);
        let rep = match self.newton.solve(&sys, &mut x, key) {
            Ok(r) => r,
            Err(e @ SolveError::NotConverged { residual, .. })
                if residual <= POLISH_WINDOW * self.newton.config.abs_tol =>
            {
                polish(&mut self.predictor, &sys, &mut x, key).ok_or(e)?
            }
            Err(e) => return Err(e),
        };
        let stage_constraint = sys
            .stage_constraints(&x)
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut fields = sys.advance(&x);
        recover_aux(self.model, &mut fields);
        let (tau, how) = solve_tau(self.model, &fields);
        Ok((
            State {
                t: state.t + dt,
                fields,
                tau,
            },
            StepReport {
                newton_iterations: rep.iterations,
                factorizations: rep.factorizations,
                newton_residual: rep.final_residual,
                stage_constraint,
                halved: false,
                regularization: reg,
                tau_solve: how,
            },
        ))
    }

    fn halves(&mut self, state: &State, dt: f64, reg: Option<f64>) -> Result<(State, StepReport), SolveError> {
        self.newton.invalidate();
        self.predictor.invalidate();
        let half = 0.5 * dt;
        let out = self.attempt(state, half, reg).and_then(|(mid, r1)| {
            let (end, r2) = self.attempt(&mid, half, reg)?;
            Ok((
                end,
                StepReport {
                    newton_iterations: r1.newton_iterations + r2.newton_iterations,
                    factorizations: r1.factorizations + r2.factorizations,
                    newton_residual: r1.newton_residual.max(r2.newton_residual),
                    stage_constraint: r1.stage_constraint.max(r2.stage_constraint),
                    halved: true,
                    regularization: reg,
                    tau_solve: r2.tau_solve,
                },
            ))
        });
        self.newton.invalidate();
        self.predictor.invalidate();
        out
    }

    /// One step of size `dt`. On Newton failure it retries as two half
    /// steps. Where the two constraints are nearly dependent and no nearby
    /// solution meets both, the Hamiltonian constraint is regularized with
    /// increasing weight; the report marks such steps.
    pub fn step(&mut self, state: &State, dt: f64) -> Result<(State, StepReport), StepError> {
        let out = self.try_step(state, dt);
        self.last_regularization = out.as_ref().ok().and_then(|(_, r)| r.regularization);
        out
    }

    fn try_step(&mut self, state: &State, dt: f64) -> Result<(State, StepReport), StepError> {
        // Inside a degenerate stretch the exact attempt gets only a few
        // iterations: it either converges fast or not at all.
        let full_iter = self.newton.config.max_iter;
        if self.last_regularization.is_some() {
            self.newton.config.max_iter = full_iter.min(PROBE_ITERATIONS);
        }
        let exact = self.attempt(state, dt, None);
        self.newton.config.max_iter = full_iter;
        if let Ok(r) = exact {
            return Ok(r);
        }
        // Inside a degenerate stretch the halved exact step rarely helps;
        // resume the ladder where the previous step stopped.
        let from = match self.last_regularization {
            None => {
                if let Ok(r) = self.halves(state, dt, None) {
                    return Ok(r);
                }
                0
            }
            Some(mu) => REGULARIZATION_LADDER.iter().position(|&m| m >= mu).unwrap_or(0),
        };
        for &mu in &REGULARIZATION_LADDER[from..] {
            if let Ok(r) = self.attempt(state, dt, Some(mu)) {
                return Ok(r);
            }
        }
        let mu = REGULARIZATION_LADDER[REGULARIZATION_LADDER.len() - 1];
        self.halves(state, dt, Some(mu))
            .map_err(|source| StepError { t: state.t, dt, source })
    }
}

/// Newton iterations of the exact attempt right after a regularized step.
const PROBE_ITERATIONS: usize = 4;
/// Stalled residuals within this multiple of the tolerance get polished.
const POLISH_WINDOW: f64 = 1e4;

/// Relative weights tried, in order, when both constraints cannot be met.
pub const REGULARIZATION_LADDER: [f64; 3] = [1e-3, 1e-2, 1e-1];

/// `ceil(T / dt)` steps of equal size landing exactly on `T`.
pub fn uniform_steps(t_final: f64, dt: f64) -> (usize, f64) {
    let n = ((t_final / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, t_final / n as f64)
}
