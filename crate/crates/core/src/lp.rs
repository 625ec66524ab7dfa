//! Dense two-phase simplex for small equality-form linear programs:
//!
//! minimize cᵀx subject to Ax = b, x ≥ 0.
//!
//! Pivoting follows Bland's rule (lowest eligible index enters, lowest
//! basic index breaks ratio ties), which rules out cycling.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const EPS: f64 = 1e-11;

struct Tableau {
    /// m constraint rows followed by the cost row; last column is the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn m(&self) -> usize {
        self.basis.len()
    }

    fn width(&self) -> usize {
        self.rows[0].len() - 1
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in &mut self.rows[r] {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Runs simplex iterations over columns `< allowed`.
    fn optimize(&mut self, allowed: usize) -> Result<(), LpError> {
        let m = self.m();
        let rhs = self.width();
        loop {
            let cost = &self.rows[m];
            let Some(enter) = (0..allowed).find(|&j| cost[j] < -EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.rows[i][enter];
                if a > EPS {
                    let ratio = self.rows[i][rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS || (ratio <= lr + EPS && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, enter);
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.objective.len();
    let m = lp.constraints.len();
    if lp.rhs.len() != m {
        return Err(LpError::Dimension(format!("{m} constraint rows but {} rhs values", lp.rhs.len())));
    }
    if let Some(row) = lp.constraints.iter().find(|r| r.len() != n) {
        return Err(LpError::Dimension(format!("row of length {} for {n} variables", row.len())));
    }

    // columns: n structural, m artificial, rhs
    let mut rows = Vec::with_capacity(m + 1);
    for (i, (a, &b)) in lp.constraints.iter().zip(&lp.rhs).enumerate() {
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; n + m + 1];
        for (j, v) in a.iter().enumerate() {
            row[j] = sign * v;
        }
        row[n + i] = 1.0;
        row[n + m] = sign * b;
        rows.push(row);
    }
    // phase one: minimize the sum of artificials
    let mut cost = vec![0.0; n + m + 1];
    for row in &rows {
        for j in 0..n {
            cost[j] -= row[j];
        }
        cost[n + m] -= row[n + m];
    }
    rows.push(cost);
    let mut t = Tableau { rows, basis: (n..n + m).collect(), pivots: 0 };
    t.optimize(n + m)?;
    let residual = -t.rows[m][n + m];
    let scale = 1.0 + lp.rhs.iter().map(|b| b.abs()).fold(0.0, f64::max);
    if residual > 1e-9 * scale {
        return Err(LpError::Infeasible(residual));
    }

    // drive remaining artificials out of the basis; rows where that is
    // impossible are redundant and dropped
    let mut i = 0;
    while i < t.m() {
        if t.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t.rows[i][j].abs() > 1e-9) {
                t.pivot(i, j);
            } else {
                t.rows.remove(i);
                t.basis.remove(i);
                continue;
            }
        }
        i += 1;
    }

    // phase two
    let m = t.m();
    let width = n + lp.constraints.len();
    let mut cost = vec![0.0; width + 1];
    cost[..n].copy_from_slice(&lp.objective);
    for (r, &b) in t.basis.iter().enumerate() {
        let cb = lp.objective[b];
        if cb != 0.0 {
            for (v, rv) in cost.iter_mut().zip(&t.rows[r]) {
                *v -= cb * rv;
            }
        }
    }
    t.rows[m] = cost;
    t.optimize(n)?;

    let mut x = vec![0.0; n];
    for (r, &b) in t.basis.iter().enumerate() {
        x[b] = t.rows[r][width];
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective, pivots: t.pivots })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program() {
        // min -x - y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
        let lp = LinearProgram {
            objective: vec![-1.0, -1.0, 0.0, 0.0],
            constraints: vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]],
            rhs: vec![4.0, 6.0],
        };
        let s = solve(&lp).unwrap();
        assert!((s.objective + 2.8).abs() < 1e-12);
        assert!((s.x[0] - 1.6).abs() < 1e-12 && (s.x[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram { objective: vec![1.0], constraints: vec![vec![1.0], vec![1.0]], rhs: vec![1.0, 2.0] };
        assert!(matches!(solve(&lp), Err(LpError::Infeasible(_))));
        let lp = LinearProgram { objective: vec![-1.0, 0.0], constraints: vec![vec![1.0, -1.0]], rhs: vec![1.0] };
        assert_eq!(solve(&lp), Err(LpError::Unbounded));
        let lp = LinearProgram { objective: vec![1.0], constraints: vec![vec![1.0, 2.0]], rhs: vec![1.0] };
        assert!(matches!(solve(&lp), Err(LpError::Dimension(_))));
    }

    #[test]
    fn redundant_rows_and_negative_rhs() {
        let lp = LinearProgram {
            objective: vec![2.0, 1.0],
            constraints: vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![-1.0, -1.0]],
            rhs: vec![1.0, 2.0, -1.0],
        };
        let s = solve(&lp).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_transportation() {
        // 2x2 transport with equal supplies/demands; highly degenerate
        let lp = LinearProgram {
            objective: vec![0.0, 1.0, 1.0, 0.0],
            constraints: vec![
                vec![1.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 1.0],
                vec![1.0, 0.0, 1.0, 0.0],
                vec![0.0, 1.0, 0.0, 1.0],
            ],
            rhs: vec![0.5, 0.5, 0.5, 0.5],
        };
        let s = solve(&lp).unwrap();
        assert!(s.objective.abs() < 1e-12);
    }
}
