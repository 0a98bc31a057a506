//! Exact and manufactured solutions, finite-difference PDE probes and the
//! error norm.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use super::config::{Config, ProblemId, XiPhase};
use crate::dg::{gauss_rule, legendre_all, DgSpace};
use crate::gkdv::{Flux, Source};
use crate::specialfn::{elliptic_k, jacobi_sn_cn_dn};

/// Resolved parameters of one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Experiment {
    pub id: ProblemId,
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub lambda: f64,
    pub x0: f64,
    pub xi_phase: XiPhase,
    /// `K(m)` for the cnoidal wave.
    k_m: f64,
}

/// `(f, f_x, f_xx)` at a point.
pub type Jet = [f64; 3];

impl Experiment {
    pub fn from_config(c: &Config) -> Self {
        Self {
            id: c.problem,
            epsilon: c.epsilon,
            a: c.a,
            b: c.b,
            m: c.m,
            lambda: c.lambda,
            x0: c.x0,
            xi_phase: c.xi_phase,
            k_m: elliptic_k(c.m).unwrap_or(f64::NAN),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self.id {
            ProblemId::Exp1 => (0.0, 4.0 * PI),
            ProblemId::Exp5 => (-50.0, 50.0),
            _ => (0.0, 1.0),
        }
    }

    pub fn is_system(&self) -> bool {
        self.id.is_system()
    }

    /// Flux of the scalar equation.
    pub fn flux(&self) -> Flux {
        match self.id {
            ProblemId::Exp1 => Flux::Linear,
            _ => Flux::Burgers,
        }
    }

    /// Names of the DG fields, in storage order.
    pub fn field_names(&self) -> &'static [&'static str] {
        if self.is_system() {
            &["u", "q", "p", "v", "w", "r"]
        } else {
            &["u", "q", "p"]
        }
    }

    /// Cnoidal amplitude and speed.
    pub fn cnoidal(&self) -> (f64, f64) {
        let k2 = self.k_m * self.k_m;
        (192.0 * self.m * self.epsilon * k2, 64.0 * self.epsilon * (2.0 * self.m - 1.0) * k2)
    }

    /// `omega` of the solitary wave.
    pub fn omega(&self) -> f64 {
        -self.b / (8.0 * (4.0 * self.a + 1.0) * self.lambda.powi(4))
    }

    fn xi(&self, x: f64, t: f64) -> f64 {
        let w = self.omega();
        let phase = match self.xi_phase {
            XiPhase::Literal => 1.0 / (2.0 * w.ln()),
            XiPhase::HalfLog => 0.5 * w.ln(),
        };
        self.lambda * (x - self.x0 - self.lambda * self.lambda * t) + phase
    }

    /// Jet of `u`.
    pub fn u_jet(&self, x: f64, t: f64) -> Jet {
        match self.id {
            ProblemId::Exp1 => {
                let th = 0.5 * x - (0.5 - self.epsilon / 8.0) * t;
                [th.sin(), 0.5 * th.cos(), -0.25 * th.sin()]
            }
            ProblemId::Exp2 | ProblemId::Exp4 => sine_jet(x, t),
            ProblemId::Exp3 => {
                let (amp, speed) = self.cnoidal();
                let s = 4.0 * self.k_m;
                let z = s * (x - speed * t - self.x0);
                let (sn, cn, dn) = jacobi_sn_cn_dn(z, self.m).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
                let ux = -2.0 * amp * s * cn * sn * dn;
                let uxx = -2.0 * amp * s * s * (cn * cn * dn * dn - sn * sn * dn * dn - self.m * sn * sn * cn * cn);
                [amp * cn * cn, ux, uxx]
            }
            ProblemId::Exp5 => {
                let l = self.lambda;
                let xi = self.xi(x, t);
                let (s, th) = (1.0 / xi.cosh(), xi.tanh());
                let s2 = s * s;
                [2.0 * l * l * s2, -4.0 * l.powi(3) * s2 * th, 2.0 * l.powi(4) * (4.0 * s2 - 6.0 * s2 * s2)]
            }
        }
    }

    /// Jet of `v` (zero for scalar problems).
    pub fn v_jet(&self, x: f64, t: f64) -> Jet {
        match self.id {
            ProblemId::Exp4 => sine_jet(x, t),
            ProblemId::Exp5 => {
                let l = self.lambda;
                let c = 0.5 / self.omega().sqrt();
                let xi = self.xi(x, t);
                let (s, th) = (1.0 / xi.cosh(), xi.tanh());
                [c * s, -c * l * s * th, c * l * l * (s - 2.0 * s * s * s)]
            }
            _ => [0.0; 3],
        }
    }

    /// Exact values of every DG field at `(x, t)`, in storage order.
    pub fn fields(&self, x: f64, t: f64) -> Vec<f64> {
        let u = self.u_jet(x, t);
        if self.is_system() {
            let v = self.v_jet(x, t);
            vec![u[0], u[1], u[2] + 3.0 * u[0] * u[0], v[0], v[1], v[2]]
        } else {
            vec![u[0], u[1], self.epsilon * u[2] + self.flux().f(u[0])]
        }
    }

    pub fn has_source(&self) -> bool {
        matches!(self.id, ProblemId::Exp2 | ProblemId::Exp4)
    }

    /// Source of the `u` equation.
    pub fn source_u(&self, x: f64, t: f64) -> f64 {
        let th = 2.0 * PI * x + t;
        let (s, c) = th.sin_cos();
        let k = 2.0 * PI;
        match self.id {
            ProblemId::Exp2 => c - self.epsilon * k.powi(3) * c + k * s * c,
            ProblemId::Exp4 => c - self.a * (-k.powi(3) * c + 6.0 * k * s * c) - 2.0 * self.b * k * s * c,
            _ => 0.0,
        }
    }

    /// Source of the `v` equation.
    pub fn source_v(&self, x: f64, t: f64) -> f64 {
        let th = 2.0 * PI * x + t;
        let (s, c) = th.sin_cos();
        let k = 2.0 * PI;
        match self.id {
            ProblemId::Exp4 => c - k.powi(3) * c + 3.0 * k * s * c,
            _ => 0.0,
        }
    }

    pub fn sources(self: &Arc<Self>) -> (Option<Source>, Option<Source>) {
        if !self.has_source() {
            return (None, None);
        }
        let a = self.clone();
        let su: Source = Arc::new(move |x, t| a.source_u(x, t));
        let sv = self.is_system().then(|| {
            let b = self.clone();
            Arc::new(move |x, t| b.source_v(x, t)) as Source
        });
        (Some(su), sv)
    }

    /// Characteristic length used to size probe stencils.
    fn length_scale(&self) -> f64 {
        match self.id {
            ProblemId::Exp1 => 2.0,
            ProblemId::Exp2 | ProblemId::Exp4 => 1.0 / (2.0 * PI),
            ProblemId::Exp3 => 1.0 / (4.0 * self.k_m),
            ProblemId::Exp5 => 1.0 / self.lambda,
        }
    }

    /// Scaled PDE residual at `(x, t)` with every derivative of the exact
    /// solution taken by finite differences: `|residual| / (1 + max|term|)`
    /// over the equations.
    pub fn pde_residual(&self, x: f64, t: f64) -> f64 {
        self.residual_of(&|x, t| self.u_jet(x, t)[0], &|x, t| self.v_jet(x, t)[0], x, t)
    }

    /// Scaled residual of arbitrary candidate fields `u`, `v` in this
    /// experiment's equations.
    pub fn residual_of(
        &self,
        u: &dyn Fn(f64, f64) -> f64,
        v: &dyn Fn(f64, f64) -> f64,
        x: f64,
        t: f64,
    ) -> f64 {
        let hx = 0.02 * self.length_scale();
        let ht = hx / (1.0 + self.speed_scale());
        let offs: Vec<f64> = (-4..=4).map(|i| i as f64).collect();
        let wx = fornberg(0.0, &offs.iter().map(|o| o * hx).collect::<Vec<_>>(), 3);
        let wt = fornberg(0.0, &offs.iter().map(|o| o * ht).collect::<Vec<_>>(), 1);
        let dx = |f: &dyn Fn(f64) -> f64, order: usize| -> f64 {
            offs.iter().enumerate().map(|(i, o)| wx[order][i] * f(x + o * hx)).sum()
        };
        let dt = |f: &dyn Fn(f64) -> f64| -> f64 {
            offs.iter().enumerate().map(|(i, o)| wt[1][i] * f(t + o * ht)).sum()
        };
        let scaled = |terms: &[f64]| {
            let r: f64 = terms.iter().sum();
            r.abs() / (1.0 + terms.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        };
        let (u0, v0) = (u(x, t), v(x, t));
        let ut = dt(&|s| u(x, s));
        let (ux, uxxx) = (dx(&|y| u(y, t), 1), dx(&|y| u(y, t), 3));
        if !self.is_system() {
            let fx = self.flux();
            let f_x = dx(&|y| fx.f(u(y, t)), 1);
            return scaled(&[ut, self.epsilon * uxxx, f_x, -self.source_u(x, t)]);
        }
        let vt = dt(&|s| v(x, s));
        let (vx, vxxx) = (dx(&|y| v(y, t), 1), dx(&|y| v(y, t), 3));
        let r1 = scaled(&[
            ut,
            -self.a * uxxx,
            -6.0 * self.a * u0 * ux,
            -2.0 * self.b * v0 * vx,
            -self.source_u(x, t),
        ]);
        let r2 = scaled(&[vt, vxxx, 3.0 * u0 * vx, -self.source_v(x, t)]);
        r1.max(r2)
    }

    fn speed_scale(&self) -> f64 {
        match self.id {
            ProblemId::Exp3 => self.cnoidal().1.abs(),
            ProblemId::Exp5 => self.lambda * self.lambda,
            _ => 1.0,
        }
    }

    /// Largest scaled residual over `n` points of the domain at times
    /// `{0, t_final}`.
    pub fn probe(&self, n: usize, t_final: f64) -> f64 {
        let (a, b) = self.domain();
        let mut worst = 0.0f64;
        for t in [0.0, t_final] {
            for i in 0..n {
                let x = a + (b - a) * (i as f64 + 0.37) / n as f64;
                worst = worst.max(self.pde_residual(x, t));
            }
        }
        worst
    }
}

fn sine_jet(x: f64, t: f64) -> Jet {
    let k = 2.0 * PI;
    let (s, c) = (k * x + t).sin_cos();
    [s, k * c, -k * k * s]
}

/// Finite-difference weights at `z` on nodes `x` for derivatives
/// `0..=m`; `w[d][j]` multiplies `f(x_j)`.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// `||u_h - u||_{L2}` with `2(k+1) + 4` Gauss points per element.
pub fn l2_error(space: &DgSpace, coeffs: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
    let nb = space.nb();
    let rule = gauss_rule(space.rule().len() + 4);
    let table: Vec<Vec<f64>> = rule.points.iter().map(|&xi| legendre_all(space.degree(), xi)).collect();
    let mesh = space.mesh();
    let mut sum = 0.0;
    for e in 0..space.n_elements() {
        let c = &coeffs[e * nb..(e + 1) * nb];
        let h = mesh.width(e);
        for (q, &xi) in rule.points.iter().enumerate() {
            let uh: f64 = c.iter().zip(&table[q]).map(|(a, p)| a * p).sum();
            let d = uh - exact(mesh.map(e, xi));
            sum += 0.5 * h * rule.weights[q] * d * d;
        }
    }
    sum.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(text: &str) -> Experiment {
        Experiment::from_config(&Config::parse(text).unwrap())
    }

    #[test]
    fn fornberg_reproduces_polynomials() {
        let x: Vec<f64> = (-3..=3).map(|i| 0.1 * i as f64).collect();
        let w = fornberg(0.0, &x, 3);
        // f = 1 + 2x + 3x^2 + 4x^3 at 0: f' = 2, f'' = 6, f''' = 24
        let f = |x: f64| 1.0 + 2.0 * x + 3.0 * x * x + 4.0 * x * x * x;
        let d = |k: usize| -> f64 { x.iter().zip(&w[k]).map(|(xi, wi)| wi * f(*xi)).sum() };
        assert!((d(0) - 1.0).abs() < 1e-12);
        assert!((d(1) - 2.0).abs() < 1e-10);
        assert!((d(2) - 6.0).abs() < 1e-8);
        assert!((d(3) - 24.0).abs() < 1e-6);
    }

    #[test]
    fn reference_values() {
        assert_eq!(exp("problem = exp1").u_jet(0.0, 0.0)[0], 0.0);
        let e3 = exp("problem = exp3");
        let (amp, _) = e3.cnoidal();
        assert!((e3.u_jet(0.0, 0.0)[0] - amp).abs() < 1e-14);
        let e5 = exp("problem = exp5");
        assert!((e5.omega() - 12.0).abs() < 1e-12);
        // peak of u is 2 lambda^2 wherever xi = 0
        let x_peak = -1.0 / (2.0 * 12f64.ln()) / 0.5;
        assert!((e5.u_jet(x_peak, 0.0)[0] - 0.5).abs() < 1e-14);
        let e2 = exp("problem = exp2");
        assert!((e2.source_u(0.0, 0.0) - (1.0 - 8.0 * PI.powi(3))).abs() < 1e-11);
    }

    #[test]
    fn closed_form_derivatives_match_differences() {
        for text in [
            "problem = exp1",
            "problem = exp2",
            "problem = exp3",
            "problem = exp4",
            "problem = exp5",
            "problem = exp5\nxi_phase = half_log",
        ] {
            let e = exp(text);
            let (a, b) = e.domain();
            let h = 1e-4 * (b - a).min(1.0);
            for i in 0..7 {
                let x = a + (b - a) * (i as f64 + 0.3) / 7.0;
                for jet in [Experiment::u_jet, Experiment::v_jet] {
                    let f = |y| jet(&e, y, 0.03)[0];
                    let j = jet(&e, x, 0.03);
                    let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
                    let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
                    let s = 1.0 + j[1].abs().max(j[2].abs());
                    assert!((d1 - j[1]).abs() < 1e-6 * s, "{text} x={x}");
                    assert!((d2 - j[2]).abs() < 1e-4 * s, "{text} x={x}: {d2} vs {}", j[2]);
                }
            }
        }
    }

    #[test]
    fn exact_solutions_pass_pde_probe() {
        for text in [
            "problem = exp1",
            "problem = exp2\nepsilon = 0.01",
            "problem = exp3",
            "problem = exp4",
            "problem = exp5",
            "problem = exp5\nxi_phase = half_log",
        ] {
            let r = exp(text).probe(50, 0.1);
            assert!(r < 1e-6, "{text}: {r}");
        }
    }

    #[test]
    fn probe_detects_wrong_wave_speed() {
        for text in ["problem = exp3", "problem = exp5"] {
            let e = exp(text);
            let u = |x: f64, t: f64| e.u_jet(x, 1.05 * t)[0];
            let v = |x: f64, t: f64| e.v_jet(x, 1.05 * t)[0];
            let (a, b) = e.domain();
            let worst = (0..40)
                .map(|i| e.residual_of(&u, &v, a + (b - a) * (i as f64 + 0.37) / 40.0, 0.0))
                .fold(0.0f64, f64::max);
            assert!(worst > 1e-3, "{text}: {worst}");
        }
    }

    #[test]
    fn l2_error_of_sine_against_zero() {
        let s = DgSpace::uniform(0.0, 1.0, 16, 2).unwrap();
        let e = l2_error(&s, &vec![0.0; s.ndof()], |x| (2.0 * PI * x).sin());
        assert!((e - 0.5f64.sqrt()).abs() < 1e-12);
        let p = s.project(|x| 1.0 + x - 2.0 * x * x);
        assert!(l2_error(&s, p.coeffs(), |x| 1.0 + x - 2.0 * x * x) < 1e-13);
    }

    #[test]
    fn solitary_wave_mass() {
        let e = exp("problem = exp5");
        let s = DgSpace::uniform(-50.0, 50.0, 200, 4).unwrap();
        let u = s.project(|x| e.u_jet(x, 0.0)[0]);
        assert!((u.integral() - 4.0 * e.lambda).abs() < 1e-8);
    }
}
