//! Dense two-phase simplex method with Bland's rule.
//!
//! Solves `min c.x` subject to `A x = b`, `x >= 0`. Intended for the small
//! programs built by the splitting solver: a handful of rows and a few
//! thousand columns. Returned solutions are basic, so at most `rows`
//! entries of `x` are non-zero.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("constraint matrix is {rows}x{cols} but {what} has length {len}")]
    Shape {
        rows: usize,
        cols: usize,
        what: &'static str,
        len: usize,
    },
    #[error("linear program is infeasible (phase-one residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("linear program is unbounded below")]
    Unbounded,
    #[error("simplex stopped after {iterations} pivots without reaching optimality")]
    IterationLimit { iterations: usize },
}

#[derive(Clone, Debug)]
pub struct LpSolution<T = f64> {
    pub x: Vec<T>,
    pub objective: T,
    /// Column indices of the final basis (redundant rows dropped).
    pub basis: Vec<usize>,
    pub iterations: usize,
}

struct Tableau<T> {
    rows: usize,
    width: usize,
    /// `rows` constraint rows followed by one cost row; the last column is
    /// the right-hand side.
    cells: Vec<T>,
    basis: Vec<usize>,
    tol: T,
}

impl<T: Real> Tableau<T> {
    fn at(&self, r: usize, c: usize) -> T {
        self.cells[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> T {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.at(row, col);
        for c in 0..w {
            self.cells[row * w + c] /= p;
        }
        for r in 0..=self.rows {
            if r == row {
                continue;
            }
            let f = self.at(r, col);
            if f == T::zero() {
                continue;
            }
            for c in 0..w {
                let delta = f * self.cells[row * w + c];
                self.cells[r * w + c] -= delta;
            }
            self.cells[r * w + col] = T::zero();
        }
        self.basis[row] = col;
    }

    /// Runs Bland-rule pivots over columns `< eligible` until optimal.
    fn optimize(&mut self, eligible: usize, max_iter: usize, used: &mut usize) -> Result<(), LpError> {
        let cost = self.rows;
        loop {
            let Some(col) = (0..eligible).find(|&c| self.at(cost, c) < -self.tol) else {
                return Ok(());
            };
            let mut leave: Option<(usize, T)> = None;
            for r in 0..self.rows {
                let a = self.at(r, col);
                if a > self.tol {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let tie = (ratio - lratio).abs() <= self.tol * (T::one() + lratio.abs());
                            if ratio < lratio && !tie || tie && self.basis[r] < self.basis[lr] {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            if *used >= max_iter {
                return Err(LpError::IterationLimit { iterations: *used });
            }
            self.pivot(row, col);
            *used += 1;
        }
    }

    fn remove_row(&mut self, row: usize) {
        let w = self.width;
        self.cells.drain(row * w..(row + 1) * w);
        self.basis.remove(row);
        self.rows -= 1;
    }
}

/// Pivot tolerance: `1e-11` for `f64`, scaled up for coarser types.
fn default_tol<T: Real>() -> T {
    let floor = T::lit(1e-11);
    let scaled = T::epsilon() * T::lit(1000.0);
    if scaled > floor {
        scaled
    } else {
        floor
    }
}

/// Minimizes `c.x` subject to `a x = b`, `x >= 0`.
pub fn solve<T: Real>(
    c: &[T],
    a: &[Vec<T>],
    b: &[T],
    max_iter: usize,
) -> Result<LpSolution<T>, LpError> {
    let m = a.len();
    let n = c.len();
    if b.len() != m {
        return Err(LpError::Shape { rows: m, cols: n, what: "b", len: b.len() });
    }
    if let Some(row) = a.iter().find(|row| row.len() != n) {
        return Err(LpError::Shape { rows: m, cols: n, what: "row of A", len: row.len() });
    }

    // Columns: n structural, m artificial, rhs.
    let width = n + m + 1;
    let mut cells = vec![T::zero(); (m + 1) * width];
    for r in 0..m {
        let sign = if b[r] < T::zero() { -T::one() } else { T::one() };
        for j in 0..n {
            cells[r * width + j] = sign * a[r][j];
        }
        cells[r * width + n + r] = T::one();
        cells[r * width + width - 1] = sign * b[r];
    }
    // Phase-one cost row: minimize the artificial sum, expressed in the
    // starting basis.
    for r in 0..m {
        for j in 0..n {
            let v = cells[r * width + j];
            cells[m * width + j] -= v;
        }
        let rhs = cells[r * width + width - 1];
        cells[m * width + width - 1] -= rhs;
    }
    let tol = default_tol::<T>();
    let mut t = Tableau {
        rows: m,
        width,
        cells,
        basis: (n..n + m).collect(),
        tol,
    };
    let mut used = 0;
    t.optimize(n + m, max_iter, &mut used)?;

    let residual = -t.rhs(t.rows);
    let scale = b.iter().fold(T::one(), |acc, &x| acc.max(x.abs()));
    if residual > T::lit(1e-9) * scale {
        return Err(LpError::Infeasible { residual: residual.to_f64_lossy() });
    }

    // Drive artificials out of the basis; rows where that fails are
    // linear combinations of the others.
    let mut r = 0;
    while r < t.rows {
        if t.basis[r] >= n {
            let col = (0..n)
                .filter(|&j| t.at(r, j).abs() > tol)
                .max_by(|&i, &j| t.at(r, i).abs().partial_cmp(&t.at(r, j).abs()).expect("finite"));
            match col {
                Some(j) => {
                    t.pivot(r, j);
                    used += 1;
                }
                None => {
                    t.remove_row(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    // Phase-two cost row in the current basis.
    let cost = t.rows;
    for j in 0..width {
        t.cells[cost * width + j] = if j < n { c[j] } else { T::zero() };
    }
    for r in 0..t.rows {
        let cb = c[t.basis[r]];
        if cb == T::zero() {
            continue;
        }
        for j in 0..width {
            let v = t.cells[r * width + j];
            t.cells[cost * width + j] -= cb * v;
        }
    }
    t.optimize(n, max_iter, &mut used)?;

    let mut x = vec![T::zero(); n];
    for r in 0..t.rows {
        x[t.basis[r]] = t.rhs(r).max(T::zero());
    }
    let objective = c.iter().zip(&x).map(|(&ci, &xi)| ci * xi).sum();
    Ok(LpSolution {
        x,
        objective,
        basis: t.basis,
        iterations: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program() {
        // min -x0 - 2 x1  s.t. x0 + x1 + s0 = 4, x1 + s1 = 3
        let c = [-1.0f64, -2.0, 0.0, 0.0];
        let a = vec![vec![1.0, 1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]];
        let sol = solve(&c, &a, &[4.0, 3.0], 100).unwrap();
        assert!((sol.objective + 7.0).abs() < 1e-12);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // x0 + x1 = 1 stated twice, once negated.
        let c = [2.0f64, 1.0];
        let a = vec![vec![1.0, 1.0], vec![-1.0, -1.0]];
        let sol = solve(&c, &a, &[1.0, -1.0], 100).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert_eq!(sol.basis.len(), 1);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let a = vec![vec![1.0, 1.0]];
        assert!(matches!(
            solve(&[1.0, 1.0], &a, &[-1.0], 100),
            Err(LpError::Infeasible { .. })
        ));
        let a = vec![vec![1.0, -1.0]];
        assert_eq!(solve(&[0.0, -1.0], &a, &[1.0], 100).unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn convex_envelope_on_a_line() {
        // Lower envelope of f at 0.5 from points on [0, 1].
        let pts = [0.0, 0.25, 0.5, 0.75, 1.0];
        let f = [1.0f64, 0.2, 0.9, 0.4, 1.0];
        let a = vec![vec![1.0; 5], pts.to_vec()];
        let sol = solve(&f, &a, &[1.0, 0.5], 100).unwrap();
        assert!((sol.objective - 0.3).abs() < 1e-12);
        assert!(sol.x.iter().filter(|&&x| x > 0.0).count() <= 2);
    }

    #[test]
    fn iteration_cap() {
        let c = [-1.0f64, -2.0, 0.0, 0.0];
        let a = vec![vec![1.0, 1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]];
        assert!(matches!(
            solve(&c, &a, &[4.0, 3.0], 0),
            Err(LpError::IterationLimit { .. })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let c = [-1.0f32, -2.0, 0.0, 0.0];
        let a = vec![vec![1.0f32, 1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]];
        let sol = solve(&c, &a, &[4.0, 3.0], 100).unwrap();
        assert!((sol.objective + 7.0).abs() < 1e-5);
    }
}
