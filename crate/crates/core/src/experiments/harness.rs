//! Convergence studies, conservation time series and snapshot runs.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::config::Config;
use super::exact::{l2_error, Experiment};
use crate::dg::{DgError, DgSpace, DofVector};
use crate::gkdv::{Gkdv, GkdvProblem};
use crate::hskdv::{HsKdv, HsProblem};
use crate::solve::{NewtonConfig, SolveError};
use crate::stepper::{self, field_of, set_field, uniform_steps, Model, State, StepError, Stepper, TauSolve};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("mesh setup failed for k = {k}, N = {n}: {source}")]
    Mesh {
        k: usize,
        n: usize,
        #[source]
        source: DgError,
    },
    #[error("solver setup failed: {0}")]
    Newton(#[from] SolveError),
    #[error("exact solution fails the PDE residual probe: {0:.3e} > {PROBE_TOL:.0e}")]
    Reference(f64),
    #[error("k = {k}, N = {n}: {source}")]
    Step {
        k: usize,
        n: usize,
        #[source]
        source: StepError,
    },
}

/// Sample points of the residual probe run before any error measurement.
pub const PROBE_POINTS: usize = 200;
pub const PROBE_TOL: f64 = 1e-6;

/// Solver counters accumulated over a trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub dt: f64,
    pub newton_iterations: usize,
    pub factorizations: usize,
    /// Largest stage-constraint residual over constrained steps.
    pub max_stage_constraint: f64,
    pub max_newton_residual: f64,
    pub halved_steps: usize,
    pub min_norm_tau_steps: usize,
    /// Steps that regularized the Hamiltonian constraint because both
    /// could not be met.
    pub regularized_steps: usize,
    /// Largest relative regularization weight used.
    pub max_regularization: f64,
}

impl RunStats {
    fn record(&mut self, rep: &stepper::StepReport) {
        self.steps += 1;
        self.newton_iterations += rep.newton_iterations;
        self.factorizations += rep.factorizations;
        match rep.regularization {
            None => self.max_stage_constraint = self.max_stage_constraint.max(rep.stage_constraint),
            Some(mu) => {
                self.regularized_steps += 1;
                self.max_regularization = self.max_regularization.max(mu);
            }
        }
        self.max_newton_residual = self.max_newton_residual.max(rep.newton_residual);
        self.halved_steps += rep.halved as usize;
        self.min_norm_tau_steps += (rep.tau_solve == TauSolve::MinNorm) as usize;
    }
}

pub fn newton_config(cfg: &Config) -> NewtonConfig {
    NewtonConfig {
        abs_tol: cfg.newton_tol,
        max_iter: cfg.newton_max_iter,
        reuse_jacobian: cfg.reuse_jacobian,
        ..NewtonConfig::default()
    }
}

/// Either scheme on one mesh.
pub enum Solver {
    Gkdv(Gkdv),
    Hs(HsKdv),
}

impl Solver {
    pub fn build(exp: &Arc<Experiment>, cfg: &Config, k: usize, n: usize) -> Result<Self, RunError> {
        let (a, b) = exp.domain();
        let space = DgSpace::uniform(a, b, n, k).map_err(|source| RunError::Mesh { k, n, source })?;
        let (su, sv) = exp.sources();
        Ok(if exp.is_system() {
            let mut p = HsProblem::new(exp.a, exp.b);
            p.pvv_weight = cfg.theta_pvv;
            p.source_u = su;
            p.source_v = sv;
            Solver::Hs(HsKdv::new(space, p))
        } else {
            Solver::Gkdv(Gkdv::new(
                space,
                GkdvProblem {
                    epsilon: exp.epsilon,
                    flux: exp.flux(),
                    source: su,
                },
            ))
        })
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        match self {
            Solver::Gkdv(m) => m.space(),
            Solver::Hs(m) => m.space(),
        }
    }

    pub fn invariants(&self, fields: &[f64]) -> [f64; 3] {
        match self {
            Solver::Gkdv(m) => m.invariants(fields),
            Solver::Hs(m) => m.invariants(fields),
        }
    }

    pub fn n_fields(&self) -> usize {
        match self {
            Solver::Gkdv(m) => m.n_fields(),
            Solver::Hs(m) => m.n_fields(),
        }
    }

    /// Projected exact data at `t0`, auxiliaries and penalties recovered.
    pub fn initial_state(&self, exp: &Experiment, t0: f64) -> State {
        match self {
            Solver::Gkdv(m) => initial_state(m, exp, t0),
            Solver::Hs(m) => initial_state(m, exp, t0),
        }
    }

    /// Steps from `state` to `t_final`, calling `observe(step, state)` after
    /// the initial state and after every accepted step. On failure the last
    /// good state is returned with the error.
    pub fn integrate(
        &self,
        cfg: &Config,
        state: State,
        t_final: f64,
        dt: f64,
        observe: &mut dyn FnMut(usize, &State),
    ) -> Result<(State, RunStats), (StepError, State, RunStats)> {
        match self {
            Solver::Gkdv(m) => integrate(m, cfg, state, t_final, dt, observe),
            Solver::Hs(m) => integrate(m, cfg, state, t_final, dt, observe),
        }
    }

    pub fn field(&self, state: &State, f: usize) -> DofVector {
        let nb = self.space().nb();
        DofVector::from_coeffs(self.space().clone(), field_of(&state.fields, self.n_fields(), nb, f))
    }

    /// Stage constraint residuals of a state (energy, Hamiltonian).
    pub fn constraints(&self, state: &State) -> [f64; 2] {
        match self {
            Solver::Gkdv(m) => stepper::constraints(m, &state.fields, state.tau),
            Solver::Hs(m) => stepper::constraints(m, &state.fields, state.tau),
        }
    }
}

fn initial_state<M: Model>(m: &M, exp: &Experiment, t0: f64) -> State {
    let space = m.space();
    let nb = space.nb();
    let mut x = vec![0.0; space.n_elements() * m.n_fields() * nb];
    for &f in m.evolved() {
        let p = space.project(|y| exp.fields(y, t0)[f]);
        set_field(&mut x, m.n_fields(), nb, f, p.coeffs());
    }
    stepper::init_state(m, t0, x).0
}

fn integrate<M: Model>(
    m: &M,
    cfg: &Config,
    mut state: State,
    t_final: f64,
    dt: f64,
    observe: &mut dyn FnMut(usize, &State),
) -> Result<(State, RunStats), (StepError, State, RunStats)> {
    let (n, dt) = uniform_steps(t_final - state.t, dt);
    let mut stats = RunStats {
        dt,
        ..RunStats::default()
    };
    let mut stepper = match Stepper::new(m, cfg.scheme, cfg.tau_mode, newton_config(cfg)) {
        Ok(s) => s,
        Err(source) => {
            let t = state.t;
            return Err((StepError { t, dt, source }, state, stats));
        }
    };
    observe(0, &state);
    for i in 1..=n {
        match stepper.step(&state, dt) {
            Ok((next, rep)) => {
                stats.record(&rep);
                state = next;
                observe(i, &state);
            }
            Err(e) => return Err((e, state, stats)),
        }
    }
    Ok((state, stats))
}

/// One `(k, N)` member of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub n: usize,
    /// L2 error per field, in storage order.
    pub errors: Vec<f64>,
    /// Observed order per field against the previous row of the same `k`.
    pub orders: Vec<Option<f64>>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub fields: Vec<&'static str>,
    pub rows: Vec<ConvergenceRow>,
    /// Scaled PDE residual of the exact solution used as reference.
    pub probe_residual: f64,
    pub wall_seconds: f64,
}

/// `log(e_coarse / e_fine) / log(N_fine / N_coarse)`.
pub fn observed_order(e_coarse: f64, e_fine: f64, n_coarse: usize, n_fine: usize) -> f64 {
    (e_coarse / e_fine).ln() / (n_fine as f64 / n_coarse as f64).ln()
}

/// Runs one member to `T` and measures the errors of all fields.
pub fn run_member(exp: &Arc<Experiment>, cfg: &Config, k: usize, n: usize) -> Result<ConvergenceRow, RunError> {
    let solver = Solver::build(exp, cfg, k, n)?;
    let space = solver.space().clone();
    let h = space.mesh().max_width();
    let st0 = solver.initial_state(exp, 0.0);
    let (st, stats) = solver
        .integrate(cfg, st0, cfg.t_final, cfg.step_size(k, h), &mut |_, _| {})
        .map_err(|(source, _, _)| RunError::Step { k, n, source })?;
    let nb = space.nb();
    let nf = solver.n_fields();
    let errors = (0..nf)
        .map(|f| l2_error(&space, &field_of(&st.fields, nf, nb, f), |x| exp.fields(x, st.t)[f]))
        .collect();
    Ok(ConvergenceRow {
        k,
        n,
        errors,
        orders: vec![None; nf],
        stats,
    })
}

/// Runs every `(k, N)` of the configuration on up to `workers` threads.
/// Rows come back in `(k, N)` order; on failure the completed rows are
/// returned alongside the first error.
pub fn run_convergence(
    cfg: &Config,
    workers: usize,
) -> Result<ConvergenceTable, (ConvergenceTable, RunError)> {
    let start = Instant::now();
    let exp = Arc::new(Experiment::from_config(cfg));
    let residual = exp.probe(PROBE_POINTS, cfg.t_final);
    if !(residual <= PROBE_TOL) {
        let table = ConvergenceTable {
            fields: exp.field_names().to_vec(),
            rows: Vec::new(),
            probe_residual: residual,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        return Err((table, RunError::Reference(residual)));
    }
    let members: Vec<(usize, usize)> = cfg.k.iter().flat_map(|&k| cfg.n_list.iter().map(move |&n| (k, n))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<ConvergenceRow, RunError>> =
        pool.install(|| members.par_iter().map(|&(k, n)| run_member(&exp, cfg, k, n)).collect());
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    for i in 1..rows.len() {
        let (prev, cur) = (&rows[i - 1], &rows[i]);
        if prev.k == cur.k && prev.n < cur.n {
            let orders = prev
                .errors
                .iter()
                .zip(&cur.errors)
                .map(|(&a, &b)| Some(observed_order(a, b, prev.n, cur.n)))
                .collect();
            rows[i].orders = orders;
        }
    }
    let table = ConvergenceTable {
        fields: exp.field_names().to_vec(),
        rows,
        probe_residual: residual,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    match first_err {
        None => Ok(table),
        Some(e) => Err((table, e)),
    }
}

/// Invariants at one sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub values: [f64; 3],
    pub deviations: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeSeries {
    pub k: usize,
    pub n: usize,
    pub samples: Vec<Sample>,
    pub stats: RunStats,
    /// Largest constraint residual of the sampled end-of-step states.
    pub max_state_constraint: f64,
    pub wall_seconds: f64,
}

impl TimeSeries {
    /// `max_t |X(t) - X(0)| / max(|X(0)|, 1)` per invariant.
    pub fn max_relative_deviation(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        if let Some(first) = self.samples.first() {
            for s in &self.samples {
                for i in 0..3 {
                    out[i] = f64::max(out[i], s.deviations[i].abs() / first.values[i].abs().max(1.0));
                }
            }
        }
        out
    }

    /// Ratio of the largest deviation of invariant `i` over the second half
    /// of the run to that over the first half; values near or below one
    /// indicate no secular growth.
    pub fn growth_ratio(&self, i: usize, floor: f64) -> f64 {
        let Some(last) = self.samples.last() else {
            return 0.0;
        };
        let mid = 0.5 * last.t;
        let (mut a, mut b) = (floor, floor);
        for s in &self.samples {
            let d = s.deviations[i].abs();
            if s.t <= mid {
                a = a.max(d);
            } else {
                b = b.max(d);
            }
        }
        b / a
    }
}

fn single(cfg: &Config) -> (usize, usize) {
    (cfg.k[0], cfg.n_list[0])
}

/// Long-time run sampling the invariants every `snap_every` steps and at
/// the final step. On failure the samples up to the last good state are
/// returned with the error.
pub fn run_conservation(cfg: &Config) -> Result<TimeSeries, (TimeSeries, RunError)> {
    let start = Instant::now();
    let exp = Arc::new(Experiment::from_config(cfg));
    let (k, n) = single(cfg);
    let empty = |stats| TimeSeries {
        k,
        n,
        samples: Vec::new(),
        stats,
        max_state_constraint: 0.0,
        wall_seconds: 0.0,
    };
    let solver = Solver::build(&exp, cfg, k, n).map_err(|e| (empty(RunStats::default()), e))?;
    let h = solver.space().mesh().max_width();
    let st0 = solver.initial_state(&exp, 0.0);
    let dt = cfg.step_size(k, h);
    let (n_steps, _) = uniform_steps(cfg.t_final, dt);
    let stride = cfg.snap_every;
    let mut samples: Vec<Sample> = Vec::new();
    let mut worst = 0.0f64;
    let mut observe = |i: usize, st: &State| {
        if i % stride != 0 && i != n_steps {
            return;
        }
        let values = solver.invariants(&st.fields);
        let base = samples.first().map_or(values, |s| s.values);
        let deviations = [values[0] - base[0], values[1] - base[1], values[2] - base[2]];
        let c = solver.constraints(st);
        worst = worst.max(c[0].abs()).max(c[1].abs());
        samples.push(Sample { t: st.t, values, deviations });
    };
    let out = solver.integrate(cfg, st0, cfg.t_final, dt, &mut observe);
    let finish = |stats| TimeSeries {
        k,
        n,
        samples: samples.clone(),
        stats,
        max_state_constraint: worst,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    match out {
        Ok((_, stats)) => Ok(finish(stats)),
        Err((source, _, stats)) => Err((finish(stats), RunError::Step { k, n, source })),
    }
}

/// Field values sampled at one time.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub x: Vec<f64>,
    /// One column per evolved field (`u`, or `u` and `v`).
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub k: usize,
    pub n: usize,
    pub fields: Vec<&'static str>,
    pub snapshots: Vec<Snapshot>,
    pub final_errors: Vec<f64>,
    pub stats: RunStats,
}

/// Single trajectory with `(x, u_h(x))` snapshots at `4(k+1)` points per
/// element every `snap_every` steps.
pub fn run_trajectory(cfg: &Config) -> Result<Trajectory, (Trajectory, RunError)> {
    let exp = Arc::new(Experiment::from_config(cfg));
    let (k, n) = single(cfg);
    let evolved: Vec<usize> = if exp.is_system() { vec![0, 3] } else { vec![0] };
    let names: Vec<&'static str> = evolved.iter().map(|&f| exp.field_names()[f]).collect();
    let blank = |stats| Trajectory {
        k,
        n,
        fields: names.clone(),
        snapshots: Vec::new(),
        final_errors: Vec::new(),
        stats,
    };
    let solver = Solver::build(&exp, cfg, k, n).map_err(|e| (blank(RunStats::default()), e))?;
    let space = solver.space().clone();
    let h = space.mesh().max_width();
    let dt = cfg.step_size(k, h);
    let (n_steps, _) = uniform_steps(cfg.t_final, dt);
    let per = 4 * (k + 1);
    let mut snaps = Vec::new();
    let mut observe = |i: usize, st: &State| {
        if i % cfg.snap_every != 0 && i != n_steps {
            return;
        }
        let mut x = Vec::new();
        let mut values = Vec::new();
        for &f in &evolved {
            let s = solver.field(st, f).sample(per);
            x = s.iter().map(|p| p.0).collect();
            values.push(s.iter().map(|p| p.1).collect());
        }
        snaps.push(Snapshot { step: i, t: st.t, x, values });
    };
    let st0 = solver.initial_state(&exp, 0.0);
    let out = solver.integrate(cfg, st0, cfg.t_final, dt, &mut observe);
    let nb = space.nb();
    let nf = solver.n_fields();
    match out {
        Ok((st, stats)) => {
            let final_errors = evolved
                .iter()
                .map(|&f| l2_error(&space, &field_of(&st.fields, nf, nb, f), |x| exp.fields(x, st.t)[f]))
                .collect();
            Ok(Trajectory {
                k,
                n,
                fields: names,
                snapshots: snaps,
                final_errors,
                stats,
            })
        }
        Err((source, _, stats)) => {
            let mut t = blank(stats);
            t.snapshots = snaps;
            Err((t, RunError::Step { k, n, source }))
        }
    }
}
