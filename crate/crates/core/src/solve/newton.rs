use super::bordered::{BorderedLu, BorderedMatrix};
use super::SolveError;

/// Square system `F(x) = 0` whose last `n_border` unknowns and equations
/// are dense couplings (the penalty parameters and their constraints).
pub trait NonlinearSystem {
    fn n_core(&self) -> usize;
    fn n_border(&self) -> usize;
    fn residual(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, x: &[f64]) -> BorderedMatrix;

    /// Optional cheap correction applied after every Newton update, e.g.
    /// re-solving unknowns on which the residual depends affinely.
    fn correct(&self, _x: &mut [f64]) {}

    fn dim(&self) -> usize {
        self.n_core() + self.n_border()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    /// Converged once `max|F| <= abs_tol + rel_tol * max|F(x0)|`.
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub jacobian_mode: JacobianMode,
    pub fd_step: f64,
    /// Keep a factorization across iterations and calls while it still
    /// contracts the residual by `refactor_ratio` per iteration.
    pub reuse_jacobian: bool,
    pub refactor_ratio: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 0.0,
            max_iter: 40,
            jacobian_mode: JacobianMode::Analytic,
            fd_step: 1e-7,
            reuse_jacobian: true,
            refactor_ratio: 0.25,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidConfig(m.to_string()));
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return bad("abs_tol must be positive");
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol < 1.0) {
            return bad("rel_tol must lie in [0, 1)");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(1e-9..=1e-5).contains(&self.fd_step) {
            return bad("fd_step must lie in [1e-9, 1e-5]");
        }
        if !(self.refactor_ratio > 0.0 && self.refactor_ratio < 1.0) {
            return bad("refactor_ratio must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
    pub factorizations: usize,
    pub history: Vec<f64>,
}

/// Column-by-column forward differences of the residual, relative step
/// `fd_step * max(1, |x_j|)`.
pub fn finite_difference_jacobian<S: NonlinearSystem + ?Sized>(
    sys: &S,
    x: &[f64],
    fd_step: f64,
) -> BorderedMatrix {
    let dim = sys.dim();
    let mut f0 = vec![0.0; dim];
    sys.residual(x, &mut f0);
    let mut a = vec![0.0; dim * dim];
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; dim];
    for j in 0..dim {
        let h = fd_step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        sys.residual(&xp, &mut fp);
        xp[j] = x[j];
        for i in 0..dim {
            a[i * dim + j] = (fp[i] - f0[i]) / h;
        }
    }
    BorderedMatrix::from_dense(dim, sys.n_border(), &a)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Full Newton steps allowed to double the residual before giving up.
const MAX_STALLS: usize = 3;
/// Multiple of the tolerance below which residual growth is ignored.
const STALL_FLOOR: f64 = 1e4;

/// Newton solver holding a factorization that can be reused (chord
/// iteration) across iterations and across calls with the same `key`.
#[derive(Debug, Default)]
pub struct Newton {
    pub config: NewtonConfig,
    cached: Option<(u64, BorderedLu)>,
}

impl Newton {
    pub fn new(config: NewtonConfig) -> Result<Self, SolveError> {
        config.validate()?;
        Ok(Self {
            config,
            cached: None,
        })
    }

    /// Drops any stored factorization.
    pub fn invalidate(&mut self) {
        self.cached = None;
    }

    fn factor<S: NonlinearSystem + ?Sized>(
        &self,
        sys: &S,
        x: &[f64],
        iteration: usize,
    ) -> Result<BorderedLu, SolveError> {
        let jac = match self.config.jacobian_mode {
            JacobianMode::Analytic => sys.jacobian(x),
            JacobianMode::FiniteDifference => {
                finite_difference_jacobian(sys, x, self.config.fd_step)
            }
        };
        BorderedLu::factor(&jac).map_err(|source| SolveError::Singular { iteration, source })
    }

    /// Solves in place. `key` identifies the operator family (mesh, step
    /// size, stage layout); a stored factorization is only reused when the
    /// key matches.
    pub fn solve<S: NonlinearSystem + ?Sized>(
        &mut self,
        sys: &S,
        x: &mut [f64],
        key: u64,
    ) -> Result<NewtonReport, SolveError> {
        let dim = sys.dim();
        assert_eq!(x.len(), dim, "unknown vector has the wrong length");
        if !self.config.reuse_jacobian || self.cached.as_ref().is_some_and(|(k, _)| *k != key) {
            self.cached = None;
        }
        let mut r = vec![0.0; dim];
        sys.residual(x, &mut r);
        let mut norm = max_abs(&r);
        if !norm.is_finite() {
            return Err(SolveError::NonFinite { iteration: 0 });
        }
        let tol = self.config.abs_tol + self.config.rel_tol * norm;
        let mut report = NewtonReport {
            iterations: 0,
            initial_residual: norm,
            final_residual: norm,
            converged: norm <= tol,
            factorizations: 0,
            history: vec![norm],
        };
        // true when the stored factorization was built at the current iterate
        let mut fresh = false;
        // full Newton steps that doubled the residual
        let mut stalls = 0;
        while !report.converged && report.iterations < self.config.max_iter {
            let it = report.iterations;
            if self.cached.is_none() {
                self.cached = Some((key, self.factor(sys, x, it)?));
                report.factorizations += 1;
                fresh = true;
            }
            let dx = self.cached.as_ref().unwrap().1.solve(&r);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi -= d;
            }
            sys.correct(x);
            sys.residual(x, &mut r);
            let next = max_abs(&r);
            report.iterations += 1;
            report.history.push(next);
            if !next.is_finite() {
                self.cached = None;
                return Err(SolveError::NonFinite { iteration: it + 1 });
            }
            // growth at the roundoff floor is not a stall
            if fresh && next > 2.0 * norm && next > STALL_FLOOR * tol {
                stalls += 1;
                if stalls >= MAX_STALLS {
                    self.cached = None;
                    return Err(SolveError::NotConverged {
                        iterations: report.iterations,
                        residual: next,
                    });
                }
            }
            let slow = next > self.config.refactor_ratio * norm;
            if !self.config.reuse_jacobian || (slow && !fresh) {
                self.cached = None;
            }
            fresh = false;
            norm = next;
            report.final_residual = norm;
            report.converged = norm <= tol;
        }
        if !report.converged {
            self.cached = None;
            return Err(SolveError::NotConverged {
                iterations: report.iterations,
                residual: report.final_residual,
            });
        }
        Ok(report)
    }
}

/// One-shot Newton solve without factorization reuse across calls.
pub fn newton_solve<S: NonlinearSystem + ?Sized>(
    sys: &S,
    x: &mut [f64],
    config: &NewtonConfig,
) -> Result<NewtonReport, SolveError> {
    Newton::new(config.clone())?.solve(sys, x, 0)
}
