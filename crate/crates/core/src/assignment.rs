//! Optimal bipartite assignment (Kuhn-Munkres with row/column potentials).
//!
//! The solver accepts rectangular matrices with forbidden cells. It returns a
//! matching of maximum cardinality among allowed cells and, among those, one
//! of optimal total cost. Rows are inserted in increasing index order and
//! column scans keep the lowest index on ties, so results are reproducible.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Minimize,
    Maximize,
}

/// Dense cost matrix where `None` marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<Option<f64>>,
}

impl CostMatrix {
    /// A matrix with every pair forbidden.
    pub fn forbidden(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![None; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut m = Self::forbidden(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if let Some(v) = f(r, c) {
                    m.set(r, c, v);
                }
            }
        }
        m
    }

    /// Builds from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self::from_fn(rows.len(), cols, |r, c| Some(rows[r][c]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        assert!(value.is_finite(), "cost entries must be finite");
        self.values[r * self.cols + c] = Some(value);
    }

    pub fn forbid(&mut self, r: usize, c: usize) {
        self.values[r * self.cols + c] = None;
    }

    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs
            .iter()
            .map(|&(r, c)| self.get(r, c).expect("forbidden pair in matching"))
            .sum()
    }
}

/// Solves the assignment problem; pairs come back sorted by row.
pub fn solve_assignment(costs: &CostMatrix, objective: Objective) -> Vec<(usize, usize)> {
    let (rows, cols) = (costs.rows, costs.cols);
    let n = rows.max(cols);
    if n == 0 || costs.values.iter().all(Option::is_none) {
        return Vec::new();
    }

    let sign = match objective {
        Objective::Minimize => 1.0,
        Objective::Maximize => -1.0,
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in costs.values.iter().flatten() {
        lo = lo.min(sign * v);
        hi = hi.max(sign * v);
    }
    // A forbidden cell must cost more than any swap among allowed cells can save.
    let forbidden_cost = hi + (hi - lo + 1.0) * n as f64;

    // Square matrix, 1-based as in the classic potentials formulation.
    let mut a = vec![0.0; (n + 1) * (n + 1)];
    for r in 0..n {
        for c in 0..n {
            let v = if r < rows && c < cols {
                costs.get(r, c).map_or(forbidden_cost, |v| sign * v)
            } else {
                0.0
            };
            a[(r + 1) * (n + 1) + c + 1] = v;
        }
    }

    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 * (n + 1) + j] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let (r, c) = (p[j] - 1, j - 1);
            (r < rows && c < cols && costs.get(r, c).is_some()).then_some((r, c))
        })
        .collect();
    pairs.sort_unstable();
    pairs
}
