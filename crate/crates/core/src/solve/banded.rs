use std::collections::VecDeque;

use super::sparse::CsrMatrix;
use super::LinearError;

/// Reverse Cuthill–McKee ordering of the symmetrized sparsity pattern.
///
/// Returns `perm` with `perm[new] = old`. Each connected component is
/// started from a pseudo-peripheral vertex found by repeated BFS.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        for (c, _) in a.row(r) {
            if c != r {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_last_level = |start: usize, visited: &[bool]| -> (usize, usize) {
        // returns (a minimum-degree vertex in the last level, eccentricity)
        let mut seen = visited.to_vec();
        let mut level = vec![start];
        seen[start] = true;
        let mut depth = 0;
        loop {
            let mut next = Vec::new();
            for &v in &level {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                let best = *level.iter().min_by_key(|&&v| degree[v]).unwrap();
                return (best, depth);
            }
            level = next;
            depth += 1;
        }
    };

    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| degree[v])
            .unwrap();
        let mut start = seed;
        let (mut far, mut ecc) = bfs_last_level(start, &visited);
        for _ in 0..4 {
            let (next, e2) = bfs_last_level(far, &visited);
            if e2 <= ecc {
                break;
            }
            (start, far, ecc) = (far, next, e2);
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| degree[w]);
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// LU factorization with partial pivoting of a (row/column permuted)
/// banded matrix, in LAPACK `gbtrf` storage.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    perm: Vec<usize>,
}

impl BandedLu {
    /// Factors `P^T A P` where `perm[new] = old` (use RCM for periodic
    /// block structures).
    pub fn factor(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self, LinearError> {
        let n = a.n_rows();
        assert_eq!(n, a.n_cols(), "banded LU needs a square matrix");
        assert_eq!(perm.len(), n);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for r in 0..n {
            for (c, _) in a.row(r) {
                let (i, j) = (inv[r], inv[c]);
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n.max(1)];
        for r in 0..n {
            for (c, v) in a.row(r) {
                let (i, j) = (inv[r], inv[c]);
                ab[j * ldab + kv + i - j] += v;
            }
        }
        let scale = a.max_abs();
        let mut lu = Self {
            n,
            kl,
            ku,
            ldab,
            ab,
            ipiv: vec![0; n],
            perm,
        };
        lu.factor_in_place(scale)?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    fn factor_in_place(&mut self, scale: f64) -> Result<(), LinearError> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let tiny = 1e-15 * scale;
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.ab[self.at(j, j)].abs();
            for r in 1..=km {
                let v = self.ab[self.at(j + r, j)].abs();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            self.ipiv[j] = j + jp;
            if !(best > tiny) {
                return Err(LinearError::Singular {
                    column: j,
                    condition_estimate: self.pivot_ratio(j),
                });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let (a, b) = (self.at(j, c), self.at(j + jp, c));
                    self.ab.swap(a, b);
                }
            }
            let piv = self.ab[self.at(j, j)];
            for r in 1..=km {
                let i = self.at(j + r, j);
                self.ab[i] /= piv;
            }
            for c in j + 1..=ju {
                let ajc = self.ab[self.at(j, c)];
                if ajc != 0.0 {
                    for r in 1..=km {
                        let l = self.ab[self.at(j + r, j)];
                        let i = self.at(j + r, c);
                        self.ab[i] -= l * ajc;
                    }
                }
            }
        }
        Ok(())
    }

    /// `max |u_jj| / min |u_jj|` over the factored leading columns.
    fn pivot_ratio(&self, upto: usize) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for j in 0..=upto.min(self.n.saturating_sub(1)) {
            let v = self.ab[self.at(j, j)].abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn condition_estimate(&self) -> f64 {
        self.pivot_ratio(self.n.saturating_sub(1))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut b: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = self.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for r in 1..=km {
                    b[j + r] -= self.ab[self.at(j + r, j)] * bj;
                }
            }
        }
        let kv = self.kl + self.ku;
        for j in (0..n).rev() {
            b[j] /= self.ab[self.at(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.ab[self.at(i, j)] * bj;
                }
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = b[new];
        }
        x
    }
}
