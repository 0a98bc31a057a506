use super::quadrature::QuadratureRule;

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    let mut dp_prev = 0.0;
    let mut dp = 1.0;
    for j in 1..n {
        let jf = j as f64;
        let p_next = ((2.0 * jf + 1.0) * x * p - jf * p_prev) / (jf + 1.0);
        // P'_{j+1} = P'_{j-1} + (2j+1) P_j
        let dp_next = dp_prev + (2.0 * jf + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// Values of `P_0..=P_k` at `x`.
pub fn legendre_all(k: usize, x: f64) -> Vec<f64> {
    (0..=k).map(|j| legendre_with_derivative(j, x).0).collect()
}

/// Legendre modes tabulated at the points of a quadrature rule.
///
/// `values[q * (k + 1) + j] = P_j(xi_q)`, `derivs` likewise holds the
/// reference derivative `dP_j/dxi`.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub k: usize,
    pub n_q: usize,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl BasisTable {
    pub fn new(k: usize, rule: &QuadratureRule) -> Self {
        let nb = k + 1;
        let n_q = rule.len();
        let mut values = vec![0.0; n_q * nb];
        let mut derivs = vec![0.0; n_q * nb];
        for (q, &x) in rule.points.iter().enumerate() {
            for j in 0..nb {
                let (p, dp) = legendre_with_derivative(j, x);
                values[q * nb + j] = p;
                derivs[q * nb + j] = dp;
            }
        }
        Self {
            k,
            n_q,
            values,
            derivs,
        }
    }

    #[inline]
    pub fn value(&self, q: usize, j: usize) -> f64 {
        self.values[q * (self.k + 1) + j]
    }

    #[inline]
    pub fn deriv(&self, q: usize, j: usize) -> f64 {
        self.derivs[q * (self.k + 1) + j]
    }
}

/// `P_j(1) = 1`.
#[inline]
pub fn right_end(_j: usize) -> f64 {
    1.0
}

/// `P_j(-1) = (-1)^j`.
#[inline]
pub fn left_end(j: usize) -> f64 {
    if j % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}
