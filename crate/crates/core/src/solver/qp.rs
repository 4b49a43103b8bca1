//! Dense strictly convex quadratic programs via the Goldfarb–Idnani dual
//! active-set method.
//!
//! Solves   min ½ xᵀGx + aᵀx   s.t.  cᵢᵀx = bᵢ (equalities),  cⱼᵀx ≥ bⱼ (inequalities)
//! for symmetric positive definite G.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Result, SaaError};

/// A linear constraint row `coeffs · x (= or ≥) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        Constraint { coeffs, rhs }
    }

    fn slack(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x) - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hypot(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

const MAX_ITER: usize = 10_000;

struct State {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
}

impl State {
    /// d = Jᵀ np
    fn compute_d(&self, np: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|k| self.j[(k, i)] * np[k]).sum())
            .collect()
    }

    /// z = J[:, iq..] d[iq..]
    fn update_z(&self, d: &[f64], iq: usize) -> Vec<f64> {
        (0..self.n)
            .map(|i| (iq..self.n).map(|k| self.j[(i, k)] * d[k]).sum())
            .collect()
    }

    /// r = R⁻¹ d[..iq] by back substitution.
    fn update_r(&self, d: &[f64], iq: usize) -> Vec<f64> {
        let mut r = vec![0.0; iq];
        for i in (0..iq).rev() {
            let s: f64 = ((i + 1)..iq).map(|k| self.r[(i, k)] * r[k]).sum();
            r[i] = (d[i] - s) / self.r[(i, i)];
        }
        r
    }

    fn add_constraint(&mut self, d: &mut [f64], iq: &mut usize) -> bool {
        let n = self.n;
        let mut jj = n - 1;
        while jj > *iq {
            let mut cc = d[jj - 1];
            let mut ss = d[jj];
            let h = hypot(cc, ss);
            if h != 0.0 {
                d[jj] = 0.0;
                ss /= h;
                cc /= h;
                if cc < 0.0 {
                    cc = -cc;
                    ss = -ss;
                    d[jj - 1] = -h;
                } else {
                    d[jj - 1] = h;
                }
                let xny = ss / (1.0 + cc);
                for k in 0..n {
                    let t1 = self.j[(k, jj - 1)];
                    let t2 = self.j[(k, jj)];
                    self.j[(k, jj - 1)] = t1 * cc + t2 * ss;
                    self.j[(k, jj)] = xny * (t1 + self.j[(k, jj - 1)]) - t2;
                }
            }
            jj -= 1;
        }
        *iq += 1;
        for i in 0..*iq {
            self.r[(i, *iq - 1)] = d[i];
        }
        if d[*iq - 1].abs() <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(d[*iq - 1].abs());
        true
    }

    fn delete_constraint(&mut self, active: &mut [isize], u: &mut [f64], p: usize, iq: &mut usize, l: isize) {
        let n = self.n;
        let Some(qq) = (p..*iq).find(|&i| active[i] == l) else {
            return;
        };
        for i in qq..(*iq - 1) {
            active[i] = active[i + 1];
            u[i] = u[i + 1];
            for k in 0..n {
                self.r[(k, i)] = self.r[(k, i + 1)];
            }
        }
        active[*iq - 1] = active[*iq];
        u[*iq - 1] = u[*iq];
        active[*iq] = 0;
        u[*iq] = 0.0;
        for k in 0..*iq {
            self.r[(k, *iq - 1)] = 0.0;
        }
        *iq -= 1;
        if *iq == 0 {
            return;
        }
        for jj in qq..*iq {
            let mut cc = self.r[(jj, jj)];
            let mut ss = self.r[(jj + 1, jj)];
            let h = hypot(cc, ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in (jj + 1)..*iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                self.r[(jj, k)] = t1 * cc + t2 * ss;
                self.r[(jj + 1, k)] = xny * (t1 + self.r[(jj, k)]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                self.j[(k, jj)] = t1 * cc + t2 * ss;
                self.j[(k, jj + 1)] = xny * (self.j[(k, jj)] + t1) - t2;
            }
        }
    }
}

/// Minimizes ½xᵀGx + aᵀx under the given constraints.
///
/// Returns [`SaaError::Infeasible`] when the constraints admit no point and
/// [`SaaError::Domain`] when G is not positive definite.
pub fn solve(g: &DMatrix<f64>, a: &[f64], eq: &[Constraint], ineq: &[Constraint]) -> Result<QpSolution> {
    let n = g.nrows();
    if n == 0 || g.ncols() != n || a.len() != n {
        return Err(SaaError::Domain("QP dimensions are inconsistent".into()));
    }
    let p = eq.len();
    let m = ineq.len();
    let chol =
        Cholesky::new(g.clone()).ok_or_else(|| SaaError::Domain("QP Hessian is not positive definite".into()))?;
    let l = chol.l();
    let c1 = g.trace();
    // J = L⁻ᵀ
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| SaaError::Domain("QP Cholesky factor is singular".into()))?;
    let mut st = State {
        n,
        j: linv.transpose(),
        r: DMatrix::zeros(n, n),
        r_norm: 1.0,
    };
    let c2 = st.j.trace();

    let a_vec = nalgebra::DVector::from_column_slice(a);
    let mut x: Vec<f64> = (-chol.solve(&a_vec)).iter().copied().collect();
    let mut f = 0.5 * dot(a, &x);

    let mut active: Vec<isize> = vec![0; m + p + 1];
    let mut active_old: Vec<isize> = vec![0; m + p + 1];
    let mut u = vec![0.0; m + p + 1];
    let mut u_old = vec![0.0; m + p + 1];
    let mut iq = 0usize;

    for (i, c) in eq.iter().enumerate() {
        let np = &c.coeffs;
        let mut d = st.compute_d(np);
        let z = st.update_z(&d, iq);
        let r = st.update_r(&d, iq);
        let zn = dot(&z, np);
        let t2 = if dot(&z, &z).abs() > f64::EPSILON {
            -c.slack(&x) / zn
        } else {
            0.0
        };
        for k in 0..n {
            x[k] += t2 * z[k];
        }
        u[iq] = t2;
        for k in 0..iq {
            u[k] -= t2 * r[k];
        }
        f += 0.5 * t2 * t2 * zn;
        active[i] = -(i as isize) - 1;
        if !st.add_constraint(&mut d, &mut iq) {
            return Err(SaaError::Infeasible(
                "equality constraints are linearly dependent".into(),
            ));
        }
    }

    // iai[i] = i while inequality i is inactive, −1 once it is active.
    let mut iai: Vec<isize> = (0..m as isize).collect();
    let mut excluded = vec![false; m];
    let mut s = vec![0.0; m];
    let mut iterations = 0usize;

    'outer: loop {
        iterations += 1;
        if iterations > MAX_ITER {
            let worst = s.iter().copied().fold(0.0, f64::min);
            return Err(SaaError::Convergence {
                iterations,
                residual: -worst,
            });
        }
        for i in p..iq {
            iai[active[i] as usize] = -1;
        }
        let mut psi = 0.0;
        for (i, c) in ineq.iter().enumerate() {
            excluded[i] = false;
            s[i] = c.slack(&x);
            psi += s[i].min(0.0);
        }
        if psi.abs() <= m as f64 * f64::EPSILON * c1 * c2 * 100.0 {
            break 'outer;
        }
        u_old[..iq].copy_from_slice(&u[..iq]);
        active_old[..iq].copy_from_slice(&active[..iq]);
        let x_old = x.clone();

        'choose: loop {
            let mut ss = 0.0;
            let mut ip = 0usize;
            for i in 0..m {
                if s[i] < ss && iai[i] != -1 && !excluded[i] {
                    ss = s[i];
                    ip = i;
                }
            }
            if ss >= 0.0 {
                break 'outer;
            }
            let np = &ineq[ip].coeffs;
            u[iq] = 0.0;
            active[iq] = ip as isize;

            loop {
                iterations += 1;
                if iterations > MAX_ITER {
                    return Err(SaaError::Convergence {
                        iterations,
                        residual: -ss,
                    });
                }
                let mut d = st.compute_d(np);
                let z = st.update_z(&d, iq);
                let r = st.update_r(&d, iq);

                // Partial step length in the dual space.
                let mut l_drop: isize = 0;
                let mut t1 = f64::INFINITY;
                for k in p..iq {
                    if r[k] > 0.0 {
                        let ratio = u[k] / r[k];
                        if ratio < t1 {
                            t1 = ratio;
                            l_drop = active[k];
                        }
                    }
                }
                // Full step length in the primal space.
                let zn = dot(&z, np);
                let t2 = if dot(&z, &z).abs() > f64::EPSILON {
                    -s[ip] / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Err(SaaError::Infeasible("QP constraints are inconsistent".into()));
                }
                if !t2.is_finite() {
                    for k in 0..iq {
                        u[k] -= t * r[k];
                    }
                    u[iq] += t;
                    iai[l_drop as usize] = l_drop;
                    st.delete_constraint(&mut active, &mut u, p, &mut iq, l_drop);
                    continue;
                }
                for k in 0..n {
                    x[k] += t * z[k];
                }
                f += t * zn * (0.5 * t + u[iq]);
                for k in 0..iq {
                    u[k] -= t * r[k];
                }
                u[iq] += t;
                if (t - t2).abs() < f64::EPSILON {
                    if !st.add_constraint(&mut d, &mut iq) {
                        excluded[ip] = true;
                        st.delete_constraint(&mut active, &mut u, p, &mut iq, ip as isize);
                        for (i, v) in iai.iter_mut().enumerate() {
                            *v = i as isize;
                        }
                        for i in p..iq {
                            active[i] = active_old[i];
                            u[i] = u_old[i];
                            iai[active[i] as usize] = -1;
                        }
                        x.copy_from_slice(&x_old);
                        continue 'choose;
                    }
                    iai[ip] = -1;
                    continue 'outer;
                }
                iai[l_drop as usize] = l_drop;
                st.delete_constraint(&mut active, &mut u, p, &mut iq, l_drop);
                s[ip] = ineq[ip].slack(&x);
            }
        }
    }

    let _ = f;
    let gx: Vec<f64> = (0..n).map(|i| (0..n).map(|k| g[(i, k)] * x[k]).sum()).collect();
    let objective = 0.5 * dot(&x, &gx) + dot(a, &x);
    Ok(QpSolution {
        x,
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_minimum() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let s = solve(&g, &[-2.0, -4.0], &[], &[]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn textbook_problem() {
        // min ½x'Gx + a'x with the classic quadprog example.
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let a = [0.0, -5.0, 0.0];
        let ineq = vec![
            Constraint::new(vec![-4.0, -3.0, 0.0], -8.0),
            Constraint::new(vec![2.0, 1.0, 0.0], 2.0),
            Constraint::new(vec![0.0, -2.0, 1.0], 0.0),
        ];
        let s = solve(&g, &a, &[], &ineq).unwrap();
        let expected = [0.4761905, 1.0476190, 2.0952381];
        for (x, e) in s.x.iter().zip(expected) {
            assert!((x - e).abs() < 1e-6, "{:?}", s.x);
        }
    }

    #[test]
    fn simplex_projection_as_qp() {
        let g = DMatrix::<f64>::identity(3, 3);
        let v = [0.9, 0.5, -0.2];
        let a: Vec<f64> = v.iter().map(|x| -x).collect();
        let eq = vec![Constraint::new(vec![1.0; 3], 1.0)];
        let ineq: Vec<Constraint> = (0..3)
            .map(|i| {
                let mut c = vec![0.0; 3];
                c[i] = 1.0;
                Constraint::new(c, 0.0)
            })
            .collect();
        let s = solve(&g, &a, &eq, &ineq).unwrap();
        assert!((s.x[0] - 0.7).abs() < 1e-12);
        assert!((s.x[1] - 0.3).abs() < 1e-12);
        assert!(s.x[2].abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        let g = DMatrix::<f64>::identity(1, 1);
        let ineq = vec![Constraint::new(vec![1.0], 1.0), Constraint::new(vec![-1.0], 0.0)];
        assert!(matches!(solve(&g, &[0.0], &[], &ineq), Err(SaaError::Infeasible(_))));
    }
}
