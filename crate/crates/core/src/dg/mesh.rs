use super::DgError;

/// Periodic partition of `[a, b]` into `n` elements.
///
/// Node `i` (for `i < n`) sits between element `i - 1` (wrapping to `n - 1`)
/// and element `i`; node `n` coincides with node 0 under the periodic
/// identification, so interface sums run over nodes `0..n` only.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
    widths: Vec<f64>,
}

impl Mesh {
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self, DgError> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(DgError::InvalidDomain { a, b });
        }
        if n < 2 {
            return Err(DgError::TooFewElements(n));
        }
        let h = (b - a) / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|i| a + h * i as f64).collect();
        nodes[n] = b;
        Self::from_nodes(nodes)
    }

    /// Builds a (possibly nonuniform) mesh from strictly increasing nodes.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, DgError> {
        if nodes.len() < 3 {
            return Err(DgError::TooFewElements(nodes.len().saturating_sub(1)));
        }
        let widths: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        if widths.iter().any(|&h| !(h > 0.0)) {
            return Err(DgError::NonIncreasingNodes);
        }
        Ok(Self {
            a: nodes[0],
            b: *nodes.last().unwrap(),
            nodes,
            widths,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn width(&self, e: usize) -> f64 {
        self.widths[e]
    }

    pub fn max_width(&self) -> f64 {
        self.widths.iter().cloned().fold(0.0, f64::max)
    }

    pub fn center(&self, e: usize) -> f64 {
        0.5 * (self.nodes[e] + self.nodes[e + 1])
    }

    /// Maps a reference coordinate in `[-1, 1]` to physical space on element `e`.
    pub fn map(&self, e: usize, xi: f64) -> f64 {
        self.center(e) + 0.5 * self.widths[e] * xi
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Element containing `x` (wrapped periodically) and its reference coordinate.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let l = self.length();
        let mut y = (x - self.a) % l;
        if y < 0.0 {
            y += l;
        }
        let y = self.a + y;
        let e = match self
            .nodes
            .binary_search_by(|probe| probe.partial_cmp(&y).unwrap())
        {
            Ok(i) => i.min(self.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.len() - 1),
        };
        let xi = 2.0 * (y - self.center(e)) / self.widths[e];
        (e, xi.clamp(-1.0, 1.0))
    }

    /// Element to the left of node `i` under periodic wrap.
    pub fn left_of_node(&self, i: usize) -> usize {
        if i == 0 {
            self.len() - 1
        } else {
            i - 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn uniform_widths() {
        let m = Mesh::uniform(0.0, 4.0 * PI, 8).unwrap();
        assert_eq!(m.len(), 8);
        for &h in m.widths() {
            assert!((h - PI / 2.0).abs() < 1e-14);
        }
        let m = Mesh::uniform(-50.0, 50.0, 32).unwrap();
        assert!((m.width(3) - 3.125).abs() < 1e-14);
        let m = Mesh::uniform(0.0, 1.0, 128).unwrap();
        assert_eq!(m.nodes()[64], 0.5);
        assert_eq!(m.nodes()[0], 0.0);
        assert_eq!(m.nodes()[128], 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Mesh::uniform(0.0, 1.0, 1),
            Err(DgError::TooFewElements(1))
        ));
        assert!(Mesh::uniform(1.0, 1.0, 4).is_err());
        assert!(Mesh::uniform(2.0, 1.0, 4).is_err());
        assert!(Mesh::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn locate_wraps() {
        let m = Mesh::uniform(0.0, 1.0, 4).unwrap();
        let (e, xi) = m.locate(0.3);
        assert_eq!(e, 1);
        assert!((m.map(e, xi) - 0.3).abs() < 1e-14);
        let (e, xi) = m.locate(1.3);
        assert_eq!(e, 1);
        assert!((m.map(e, xi) - 0.3).abs() < 1e-12);
        let (e, _) = m.locate(-0.1);
        assert_eq!(e, 3);
        assert_eq!(m.left_of_node(0), 3);
    }
}
