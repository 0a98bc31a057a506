use nalgebra::DMatrix;

use super::banded::{rcm_ordering, BandedLu};
use super::sparse::CsrMatrix;
use super::LinearError;

/// `[K B; C D]` with a sparse periodic core `K` (n x n) and a thin dense
/// border of `m` rows and columns.
#[derive(Debug, Clone)]
pub struct BorderedMatrix {
    pub core: CsrMatrix,
    /// `cols[i]` is column `i` of `B`, length `n`.
    pub cols: Vec<Vec<f64>>,
    /// `rows[i]` is row `i` of `C`, length `n`.
    pub rows: Vec<Vec<f64>>,
    /// `D`, row-major `m x m`.
    pub corner: Vec<f64>,
}

impl BorderedMatrix {
    pub fn without_border(core: CsrMatrix) -> Self {
        Self {
            core,
            cols: Vec::new(),
            rows: Vec::new(),
            corner: Vec::new(),
        }
    }

    /// Splits a dense row-major `(n+m) x (n+m)` matrix.
    pub fn from_dense(dim: usize, m: usize, a: &[f64]) -> Self {
        let n = dim - m;
        let mut core = vec![0.0; n * n];
        for r in 0..n {
            core[r * n..(r + 1) * n].copy_from_slice(&a[r * dim..r * dim + n]);
        }
        let cols = (0..m).map(|i| (0..n).map(|r| a[r * dim + n + i]).collect()).collect();
        let rows = (0..m).map(|i| a[(n + i) * dim..(n + i) * dim + n].to_vec()).collect();
        let mut corner = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                corner[i * m + j] = a[(n + i) * dim + n + j];
            }
        }
        Self {
            core: CsrMatrix::from_dense(n, n, &core),
            cols,
            rows,
            corner,
        }
    }

    pub fn n_core(&self) -> usize {
        self.core.n_rows()
    }

    pub fn n_border(&self) -> usize {
        self.cols.len()
    }

    pub fn dim(&self) -> usize {
        self.n_core() + self.n_border()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_core();
        let m = self.n_border();
        let mut y = self.core.matvec(&x[..n]);
        for (i, col) in self.cols.iter().enumerate() {
            let xi = x[n + i];
            for (yr, c) in y.iter_mut().zip(col) {
                *yr += c * xi;
            }
        }
        for i in 0..m {
            let mut s: f64 = self.rows[i].iter().zip(&x[..n]).map(|(a, b)| a * b).sum();
            for j in 0..m {
                s += self.corner[i * m + j] * x[n + j];
            }
            y.push(s);
        }
        y
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n_core();
        let m = self.n_border();
        let dim = n + m;
        let mut a = vec![0.0; dim * dim];
        let core = self.core.to_dense();
        for r in 0..n {
            a[r * dim..r * dim + n].copy_from_slice(&core[r * n..(r + 1) * n]);
            for i in 0..m {
                a[r * dim + n + i] = self.cols[i][r];
            }
        }
        for i in 0..m {
            a[(n + i) * dim..(n + i) * dim + n].copy_from_slice(&self.rows[i]);
            for j in 0..m {
                a[(n + i) * dim + n + j] = self.corner[i * m + j];
            }
        }
        a
    }
}

/// Relative singular-value cutoff for the border Schur complement. Below it
/// the penalty directions are treated as undetermined and the minimal-norm
/// update is taken.
pub const BORDER_RCOND: f64 = 1e-12;

/// Block elimination of a [`BorderedMatrix`]: banded LU of the core, then a
/// pseudo-inverted `m x m` Schur complement for the border unknowns.
#[derive(Debug, Clone)]
pub struct BorderedLu {
    core: BandedLu,
    /// `K^{-1} B`, one vector per border column.
    kinv_b: Vec<Vec<f64>>,
    rows: Vec<Vec<f64>>,
    /// Pseudo-inverse of `S = D - C K^{-1} B`, row-major.
    schur_pinv: Vec<f64>,
    schur_rank: usize,
}

impl BorderedLu {
    pub fn factor(a: &BorderedMatrix) -> Result<Self, LinearError> {
        let perm = rcm_ordering(&a.core);
        let core = BandedLu::factor(&a.core, perm)?;
        let m = a.n_border();
        let kinv_b: Vec<Vec<f64>> = a.cols.iter().map(|c| core.solve(c)).collect();
        let mut s = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let cx: f64 = a.rows[i].iter().zip(&kinv_b[j]).map(|(p, q)| p * q).sum();
                s[(i, j)] = a.corner[i * m + j] - cx;
            }
        }
        let (schur_pinv, schur_rank) = pseudo_inverse(&s, BORDER_RCOND);
        Ok(Self {
            core,
            kinv_b,
            rows: a.rows.clone(),
            schur_pinv,
            schur_rank,
        })
    }

    /// Numerical rank of the border Schur complement.
    pub fn schur_rank(&self) -> usize {
        self.schur_rank
    }

    pub fn core_condition_estimate(&self) -> f64 {
        self.core.condition_estimate()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.core.dim();
        let m = self.kinv_b.len();
        let z = self.core.solve(&rhs[..n]);
        let g: Vec<f64> = (0..m)
            .map(|i| rhs[n + i] - self.rows[i].iter().zip(&z).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        let y: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| self.schur_pinv[i * m + j] * g[j]).sum())
            .collect();
        let mut x = z;
        for (j, col) in self.kinv_b.iter().enumerate() {
            for (xi, c) in x.iter_mut().zip(col) {
                *xi -= c * y[j];
            }
        }
        x.extend(y);
        x
    }
}

/// Moore–Penrose pseudo-inverse (row-major) and numerical rank, with
/// singular values below `rcond * sigma_max` discarded.
pub fn pseudo_inverse(s: &DMatrix<f64>, rcond: f64) -> (Vec<f64>, usize) {
    let m = s.nrows();
    if m == 0 {
        return (Vec::new(), 0);
    }
    let svd = s.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let cut = rcond * smax;
    let mut out = vec![0.0; m * m];
    let mut rank = 0;
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv > cut && sv > 0.0 {
            rank += 1;
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] += vt[(k, i)] * u[(j, k)] / sv;
                }
            }
        }
    }
    (out, rank)
}
