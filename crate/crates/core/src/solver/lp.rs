//! Dense two-phase simplex for small linear programs over x ≥ 0.

use crate::error::{Result, SaaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Row {
            coeffs,
            relation: Relation::Le,
            rhs,
        }
    }
    pub fn eq(coeffs: Vec<f64>, rhs: f64) -> Self {
        Row {
            coeffs,
            relation: Relation::Eq,
            rhs,
        }
    }
    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Row {
            coeffs,
            relation: Relation::Ge,
            rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 50_000;

struct Tableau {
    /// rows × (cols + 1); last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f.abs() > 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Minimizes `cost · x` over columns `allowed`, starting from the
    /// current feasible basis.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        let m = self.t.len();
        let mut stalls = 0usize;
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(SaaError::Convergence {
                    iterations: self.pivots,
                    residual: f64::NAN,
                });
            }
            // Reduced costs d_j = c_j − c_Bᵀ B⁻¹ a_j.
            let reduced = |j: usize, t: &Vec<Vec<f64>>, basis: &[usize]| -> f64 {
                cost[j] - (0..m).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>()
            };
            let bland = stalls > 50;
            let mut enter = None;
            let mut best = -1e-10;
            for j in 0..self.cols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let d = reduced(j, &self.t, &self.basis);
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else {
                return Ok(());
            };
            let mut leave: Option<usize> = None;
            let mut ratio = f64::INFINITY;
            for i in 0..m {
                let a = self.t[i][c];
                if a > EPS {
                    let r = self.t[i][self.cols] / a;
                    let better =
                        r < ratio - EPS || (r <= ratio + EPS && leave.is_some_and(|l| self.basis[i] < self.basis[l]));
                    if better {
                        ratio = r;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return Err(SaaError::Infeasible("linear program is unbounded".into()));
            };
            if ratio.abs() <= EPS {
                stalls += 1;
            } else {
                stalls = 0;
            }
            self.pivot(r, c);
        }
    }
}

/// Minimizes `cost · x` subject to `rows` and x ≥ 0.
pub fn minimize(cost: &[f64], rows: &[Row]) -> Result<LpSolution> {
    let n = cost.len();
    if rows.iter().any(|r| r.coeffs.len() != n) {
        return Err(SaaError::Domain("LP row width does not match the cost vector".into()));
    }
    let m = rows.len();
    // Normalize to non-negative right-hand sides.
    let rows: Vec<Row> = rows
        .iter()
        .map(|r| {
            if r.rhs < 0.0 {
                let relation = match r.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                Row {
                    coeffs: r.coeffs.iter().map(|v| -v).collect(),
                    relation,
                    rhs: -r.rhs,
                }
            } else {
                r.clone()
            }
        })
        .collect();
    let n_slack = rows.iter().filter(|r| r.relation != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.relation != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let mut is_art = vec![false; cols];
    let (mut s, mut a) = (n, n + n_slack);
    for (i, r) in rows.iter().enumerate() {
        t[i][..n].copy_from_slice(&r.coeffs);
        t[i][cols] = r.rhs;
        match r.relation {
            Relation::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                is_art[a] = true;
                a += 1;
            }
            Relation::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                is_art[a] = true;
                a += 1;
            }
        }
    }
    let mut tab = Tableau {
        t,
        basis,
        cols,
        pivots: 0,
    };

    if n_art > 0 {
        let phase1: Vec<f64> = (0..cols).map(|j| if is_art[j] { 1.0 } else { 0.0 }).collect();
        tab.optimize(&phase1, &vec![true; cols])?;
        let infeas: f64 = (0..m).filter(|&i| is_art[tab.basis[i]]).map(|i| tab.t[i][cols]).sum();
        let scale = 1.0 + rows.iter().map(|r| r.rhs).fold(0.0, f64::max);
        if infeas > 1e-9 * scale {
            return Err(SaaError::Infeasible(format!(
                "linear constraints are inconsistent (phase-one residual {infeas:.3e})"
            )));
        }
        // Drive remaining (zero-level) artificials out of the basis.
        for i in 0..m {
            if is_art[tab.basis[i]] {
                if let Some(j) = (0..cols).find(|&j| !is_art[j] && tab.t[i][j].abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
    }
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art[j]).collect();
    let mut full_cost = vec![0.0; cols];
    full_cost[..n].copy_from_slice(cost);
    tab.optimize(&full_cost, &allowed)?;

    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.t[i][cols].max(0.0);
        }
    }
    let objective = cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective,
        pivots: tab.pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let rows = vec![
            Row::le(vec![1.0, 0.0], 4.0),
            Row::le(vec![0.0, 2.0], 12.0),
            Row::le(vec![3.0, 2.0], 18.0),
        ];
        let s = minimize(&[-3.0, -5.0], &rows).unwrap();
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y s.t. x + y = 1, y ≥ 0.3
        let rows = vec![Row::eq(vec![1.0, 1.0], 1.0), Row::ge(vec![0.0, 1.0], 0.3)];
        let s = minimize(&[1.0, 2.0], &rows).unwrap();
        assert!((s.x[0] - 0.7).abs() < 1e-12 && (s.x[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_and_infeasible() {
        let rows = vec![Row::le(vec![-1.0], -2.0)];
        let s = minimize(&[1.0], &rows).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        let bad = vec![Row::le(vec![1.0], 1.0), Row::ge(vec![1.0], 2.0)];
        assert!(matches!(minimize(&[1.0], &bad), Err(SaaError::Infeasible(_))));
    }

    #[test]
    fn unbounded_is_reported() {
        let rows = vec![Row::ge(vec![1.0], 1.0)];
        assert!(minimize(&[-1.0], &rows).is_err());
    }
}
