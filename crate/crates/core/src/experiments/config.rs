//! Flat `key = value` run configuration.
//!
//! Grammar: one assignment per line, `#` starts a comment, blank lines are
//! ignored. Values are reals (`0.1`, `1e-3`, `1/576`), integers, lists of
//! integers separated by commas or spaces, or bare words.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::hskdv::PvvWeight;
use crate::rk::Scheme;
use crate::stepper::TauMode;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error")?;
        if let Some(l) = self.line {
            write!(f, " at line {l}")?;
        }
        if let Some(k) = &self.field {
            write!(f, " (field '{k}')")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        field: Some(field.to_string()),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Exp5,
}

impl ProblemId {
    pub fn name(self) -> &'static str {
        match self {
            ProblemId::Exp1 => "exp1",
            ProblemId::Exp2 => "exp2",
            ProblemId::Exp3 => "exp3",
            ProblemId::Exp4 => "exp4",
            ProblemId::Exp5 => "exp5",
        }
    }

    /// Coupled two-component system.
    pub fn is_system(self) -> bool {
        matches!(self, ProblemId::Exp4 | ProblemId::Exp5)
    }

    /// Keys that parametrize this problem.
    fn parameters(self) -> &'static [&'static str] {
        match self {
            ProblemId::Exp1 | ProblemId::Exp2 => &["epsilon"],
            ProblemId::Exp3 => &["epsilon", "m", "x0"],
            ProblemId::Exp4 => &["a", "b", "theta_pvv"],
            ProblemId::Exp5 => &["a", "b", "lambda", "x0", "xi_phase", "theta_pvv"],
        }
    }
}

impl std::str::FromStr for ProblemId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exp1" => Ok(ProblemId::Exp1),
            "exp2" => Ok(ProblemId::Exp2),
            "exp3" => Ok(ProblemId::Exp3),
            "exp4" => Ok(ProblemId::Exp4),
            "exp5" => Ok(ProblemId::Exp5),
            other => Err(format!("unknown problem '{other}' (expected exp1..exp5)")),
        }
    }
}

/// Time-step rule as a function of the mesh width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DtRule {
    /// The per-experiment defaults.
    Default,
    /// `c h`
    Linear(f64),
    /// `c h^2`
    Quadratic(f64),
}

impl DtRule {
    pub fn dt(self, problem: ProblemId, k: usize, h: f64) -> f64 {
        match self {
            DtRule::Linear(c) => c * h,
            DtRule::Quadratic(c) => c * h * h,
            DtRule::Default => match problem {
                ProblemId::Exp1 | ProblemId::Exp2 => {
                    if k <= 2 {
                        0.2 * h
                    } else {
                        4.0 * h * h
                    }
                }
                ProblemId::Exp3 => match k {
                    0 | 2 => 0.2 * h,
                    1 => 0.04 * h,
                    _ => 0.01,
                },
                ProblemId::Exp4 => match k {
                    0 => 0.2 * h,
                    1 => 0.04,
                    _ => 0.01,
                },
                ProblemId::Exp5 => 0.01,
            },
        }
    }
}

impl std::str::FromStr for DtRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if t.eq_ignore_ascii_case("default") {
            return Ok(DtRule::Default);
        }
        let bad = || format!("invalid dt_rule '{s}' (expected default, C*h or C*h^2)");
        let (coef, quadratic) = if let Some(c) = t.strip_suffix("h^2") {
            (c, true)
        } else if let Some(c) = t.strip_suffix('h') {
            (c, false)
        } else {
            return Err(bad());
        };
        let coef = coef.strip_suffix('*').unwrap_or(coef);
        let c = if coef.is_empty() { 1.0 } else { parse_real(coef).map_err(|_| bad())? };
        if !(c > 0.0 && c.is_finite()) {
            return Err(bad());
        }
        Ok(if quadratic { DtRule::Quadratic(c) } else { DtRule::Linear(c) })
    }
}

/// Phase constant of the solitary-wave solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum XiPhase {
    /// `1 / (2 log omega)`
    Literal,
    /// `log(omega) / 2`
    HalfLog,
}

impl std::str::FromStr for XiPhase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "literal" => Ok(XiPhase::Literal),
            "half_log" => Ok(XiPhase::HalfLog),
            other => Err(format!("unknown xi_phase '{other}' (expected literal or half_log)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub problem: ProblemId,
    pub k: Vec<usize>,
    pub n_list: Vec<usize>,
    /// Fixed step; overrides `dt_rule`.
    pub dt: Option<f64>,
    pub dt_rule: DtRule,
    pub t_final: f64,
    pub scheme: Scheme,
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub lambda: f64,
    pub x0: f64,
    pub out_prefix: String,
    pub snap_every: usize,
    pub tau_mode: TauMode,
    pub xi_phase: XiPhase,
    pub theta_pvv: PvvWeight,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub reuse_jacobian: bool,
}

const KEYS: &[&str] = &[
    "problem",
    "k",
    "N_list",
    "dt",
    "dt_rule",
    "T",
    "scheme",
    "epsilon",
    "a",
    "b",
    "m",
    "lambda",
    "x0",
    "out_prefix",
    "snap_every",
    "tau_mode",
    "xi_phase",
    "theta_pvv",
    "newton_tol",
    "newton_max_iter",
    "reuse_jacobian",
];

/// Accepts a decimal real or a ratio `p/q` of two reals.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
            p / q
        }
        None => s.parse().map_err(|_| format!("'{s}' is not a number"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    let items: Vec<&str> = s.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items
        .iter()
        .map(|t| t.parse::<usize>().map_err(|_| format!("'{t}' is not a non-negative integer")))
        .collect()
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("'{other}' is not a boolean")),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            field: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError {
                line: Some(line),
                field: None,
                message: format!("expected 'key = value', got '{body}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(Some(line), key, "unknown key"));
            }
            if value.is_empty() {
                return Err(err(Some(line), key, "missing value"));
            }
            if let Some((first, _, _)) = entries.iter().find(|(_, k, _)| *k == key) {
                return Err(err(Some(line), key, format!("duplicate key (first set at line {first})")));
            }
            entries.push((line, key, value));
        }
        let find = |k: &str| entries.iter().find(|(_, key, _)| *key == k).map(|(l, _, v)| (*l, *v));
        fn get<T>(
            found: Option<(usize, &str)>,
            key: &str,
            parse: impl Fn(&str) -> Result<T, String>,
        ) -> Result<Option<T>, ConfigError> {
            match found {
                None => Ok(None),
                Some((l, v)) => parse(v).map(Some).map_err(|m| err(Some(l), key, m)),
            }
        }

        let problem: ProblemId = get(find("problem"), "problem", |v| v.parse())?
            .ok_or_else(|| err(None, "problem", "required key missing"))?;
        for key in ["epsilon", "a", "b", "m", "lambda", "x0", "xi_phase", "theta_pvv"] {
            if let Some((l, _)) = find(key) {
                if !problem.parameters().contains(&key) {
                    return Err(err(Some(l), key, format!("does not apply to problem {}", problem.name())));
                }
            }
        }
        let real = |v: &str| parse_real(v);
        let positive = |key: &'static str| {
            move |v: &str| {
                let x = parse_real(v)?;
                if x > 0.0 {
                    Ok(x)
                } else {
                    Err(format!("{key} must be positive"))
                }
            }
        };

        let k = get(find("k"), "k", parse_list)?.unwrap_or_else(|| vec![2]);
        if let Some(&bad) = k.iter().find(|&&d| d > crate::dg::MAX_DEGREE) {
            return Err(err(find("k").map(|f| f.0), "k", format!("degree {bad} exceeds {}", crate::dg::MAX_DEGREE)));
        }
        let n_list = get(find("N_list"), "N_list", parse_list)?.unwrap_or_else(|| vec![8, 16, 32, 64]);
        if let Some(&bad) = n_list.iter().find(|&&n| n < 2) {
            return Err(err(find("N_list").map(|f| f.0), "N_list", format!("need at least 2 elements, got {bad}")));
        }
        let dt = get(find("dt"), "dt", positive("dt"))?;
        let dt_rule = get(find("dt_rule"), "dt_rule", |v| v.parse())?;
        if let (Some(_), Some(_)) = (dt, dt_rule) {
            return Err(err(find("dt_rule").map(|f| f.0), "dt_rule", "set either dt or dt_rule, not both"));
        }
        let t_final = get(find("T"), "T", positive("T"))?.unwrap_or(0.1);

        let (eps_default, a_default, b_default) = match problem {
            ProblemId::Exp3 => (1.0 / 576.0, 0.0, 0.0),
            ProblemId::Exp4 => (0.0, 1.0, 1.0),
            ProblemId::Exp5 => (0.0, -0.125, -3.0),
            _ => (1.0, 0.0, 0.0),
        };
        let epsilon = get(find("epsilon"), "epsilon", positive("epsilon"))?.unwrap_or(eps_default);
        let a = get(find("a"), "a", real)?.unwrap_or(a_default);
        let b = get(find("b"), "b", real)?.unwrap_or(b_default);
        let m = get(find("m"), "m", |v| {
            let x = parse_real(v)?;
            if (0.0..1.0).contains(&x) {
                Ok(x)
            } else {
                Err("m must lie in [0, 1)".into())
            }
        })?
        .unwrap_or(0.9);
        let lambda = get(find("lambda"), "lambda", positive("lambda"))?.unwrap_or(0.5);
        let x0 = get(find("x0"), "x0", real)?.unwrap_or(0.0);
        if problem == ProblemId::Exp5 {
            let omega = -b / (8.0 * (4.0 * a + 1.0) * lambda.powi(4));
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(err(find("b").or(find("a")).map(|f| f.0), "b", format!("omega = {omega} must be positive")));
            }
        }
        if problem == ProblemId::Exp4 && (1.0 + a).abs() < 1e-14 {
            return Err(err(find("a").map(|f| f.0), "a", "a = -1 makes the Hamiltonian degenerate"));
        }

        let out_prefix = find("out_prefix").map_or_else(|| problem.name().to_string(), |(_, v)| v.to_string());
        if out_prefix.contains(['/', '\\']) {
            return Err(err(find("out_prefix").map(|f| f.0), "out_prefix", "must be a file name prefix, not a path"));
        }
        let snap_every = get(find("snap_every"), "snap_every", |v| match v.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("'{v}' is not a positive integer")),
            Ok(n) => Ok(n),
        })?
        .unwrap_or(1);
        let newton_tol = get(find("newton_tol"), "newton_tol", positive("newton_tol"))?.unwrap_or(1e-12);
        let newton_max_iter = get(find("newton_max_iter"), "newton_max_iter", |v| match v.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("'{v}' is not a positive integer")),
            Ok(n) => Ok(n),
        })?
        .unwrap_or(40);

        Ok(Config {
            problem,
            k,
            n_list,
            dt,
            dt_rule: dt_rule.unwrap_or(DtRule::Default),
            t_final,
            scheme: get(find("scheme"), "scheme", |v| v.parse())?.unwrap_or(Scheme::Irk4),
            epsilon,
            a,
            b,
            m,
            lambda,
            x0,
            out_prefix,
            snap_every,
            tau_mode: get(find("tau_mode"), "tau_mode", |v| v.parse())?.unwrap_or(TauMode::PerStage),
            xi_phase: get(find("xi_phase"), "xi_phase", |v| v.parse())?.unwrap_or(XiPhase::Literal),
            theta_pvv: get(find("theta_pvv"), "theta_pvv", |v| v.parse())?.unwrap_or(PvvWeight::B),
            newton_tol,
            newton_max_iter,
            reuse_jacobian: get(find("reuse_jacobian"), "reuse_jacobian", parse_bool)?.unwrap_or(true),
        })
    }

    /// Step size used on a mesh of width `h` for degree `k`.
    pub fn step_size(&self, k: usize, h: f64) -> f64 {
        self.dt.unwrap_or_else(|| self.dt_rule.dt(self.problem, k, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let c = Config::parse(
            "# exp 3\nproblem = exp3\nk = 2\nN_list = 8, 16 32\nepsilon = 1/576 # inline\nT = 0.1\n\
             scheme = IRK4\ntau_mode = shared\nsnap_every = 5\n",
        )
        .unwrap();
        assert_eq!(c.problem, ProblemId::Exp3);
        assert_eq!(c.n_list, vec![8, 16, 32]);
        assert!((c.epsilon - 1.0 / 576.0).abs() < 1e-18);
        assert_eq!(c.tau_mode, TauMode::Shared);
        assert_eq!(c.snap_every, 5);
        assert_eq!(c.dt_rule, DtRule::Default);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let e = Config::parse("problem = exp1\n\nT = -1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert_eq!(e.field.as_deref(), Some("T"));
        let e = Config::parse("problem = exp1\nfoo = 1\n").unwrap_err();
        assert_eq!((e.line, e.field.as_deref()), (Some(2), Some("foo")));
        let e = Config::parse("problem = exp1\nk = 2\nk = 3\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = Config::parse("problem = exp1\nlambda = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("does not apply"), "{e}");
        let e = Config::parse("k = 2\n").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("problem"));
        let e = Config::parse("problem = exp3\nm = 1\n").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("m"));
        let e = Config::parse("problem = exp1\njunk line\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = Config::parse("problem = exp5\na = -0.25\n").unwrap_err();
        assert!(e.message.contains("omega"));
    }

    #[test]
    fn dt_rules() {
        assert_eq!("0.2*h".parse::<DtRule>().unwrap(), DtRule::Linear(0.2));
        assert_eq!("4h^2".parse::<DtRule>().unwrap(), DtRule::Quadratic(4.0));
        assert!("4x".parse::<DtRule>().is_err());
        let h = 0.1;
        assert!((DtRule::Default.dt(ProblemId::Exp1, 2, h) - 0.02).abs() < 1e-15);
        assert!((DtRule::Default.dt(ProblemId::Exp1, 4, h) - 0.04).abs() < 1e-15);
        assert_eq!(DtRule::Default.dt(ProblemId::Exp5, 2, h), 0.01);
        let c = Config::parse("problem = exp1\ndt = 0.5\n").unwrap();
        assert_eq!(c.step_size(2, 1.0), 0.5);
        assert!(Config::parse("problem = exp1\ndt = 0.5\ndt_rule = 0.2h\n").is_err());
    }
}
