//! Numerical building blocks shared by the construction methods and the
//! ensemble combiners.

pub mod lp;
pub mod qp;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaaError};
pub use qp::Constraint;

/// Per-asset box bounds on a long-only, fully invested weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn unit(n: usize) -> Self {
        Bounds {
            lo: vec![0.0; n],
            hi: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(SaaError::Domain("bounds have inconsistent length".into()));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(0.0..=1.0).contains(l) || !(0.0..=1.0).contains(h) || l > h {
                return Err(SaaError::Infeasible(format!("bound [{l}, {h}] is not inside [0, 1]")));
            }
        }
        let lo: f64 = self.lo.iter().sum();
        let hi: f64 = self.hi.iter().sum();
        if lo > 1.0 + 1e-12 || hi < 1.0 - 1e-12 {
            return Err(SaaError::Infeasible(format!(
                "bounds admit no fully invested portfolio (sum lo {lo}, sum hi {hi})"
            )));
        }
        Ok(())
    }

    pub fn is_default(&self) -> bool {
        self.lo.iter().all(|l| *l == 0.0) && self.hi.iter().all(|h| *h == 1.0)
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        w.len() == self.n()
            && (w.iter().sum::<f64>() - 1.0).abs() <= tol
            && w.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
    }

    /// Euclidean projection onto {w : Σw = 1, lo ≤ w ≤ hi}.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let at = |tau: f64| -> Vec<f64> {
            v.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .map(|(x, (l, h))| (x - tau).clamp(*l, *h))
                .collect()
        };
        let total = |tau: f64| at(tau).iter().sum::<f64>();
        let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
        let (mut a, mut b) = (vmin - 1.0, vmax);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if total(mid) > 1.0 {
                a = mid;
            } else {
                b = mid;
            }
            if b - a < 1e-16 {
                break;
            }
        }
        let mut w = at(0.5 * (a + b));
        // Spread the rounding residue over coordinates strictly inside their box.
        let resid = 1.0 - w.iter().sum::<f64>();
        let free: Vec<usize> = (0..w.len())
            .filter(|&i| w[i] > self.lo[i] && w[i] < self.hi[i])
            .collect();
        if !free.is_empty() {
            for &i in &free {
                w[i] = (w[i] + resid / free.len() as f64).clamp(self.lo[i], self.hi[i]);
            }
        }
        w
    }

    /// Equality Σw = 1 plus the box rows, in the QP convention c·x ≥ b.
    pub fn qp_rows(&self) -> (Vec<Constraint>, Vec<Constraint>) {
        let n = self.n();
        let eq = vec![Constraint::new(vec![1.0; n], 1.0)];
        let mut ineq = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut c = vec![0.0; n];
            c[i] = 1.0;
            ineq.push(Constraint::new(c, self.lo[i]));
            if self.hi[i] < 1.0 {
                let mut c = vec![0.0; n];
                c[i] = -1.0;
                ineq.push(Constraint::new(c, -self.hi[i]));
            }
        }
        (eq, ineq)
    }

    /// Largest weight any asset can carry given the other assets' floors.
    pub fn effective_hi(&self, i: usize) -> f64 {
        let others: f64 = self
            .lo
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, l)| l)
            .sum();
        self.hi[i].min(1.0 - others)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_onto_plain_simplex() {
        let b = Bounds::unit(3);
        let w = b.project(&[0.9, 0.5, -0.2]);
        assert!((w[0] - 0.7).abs() < 1e-12 && (w[1] - 0.3).abs() < 1e-12 && w[2] == 0.0);
        assert!(b.contains(&w, 1e-12));
    }

    #[test]
    fn projection_respects_caps() {
        let b = Bounds {
            lo: vec![0.1, 0.0, 0.0],
            hi: vec![0.5, 0.5, 0.5],
        };
        let w = b.project(&[1.0, 0.0, 0.0]);
        assert!(b.contains(&w, 1e-12), "{w:?}");
        assert!((w[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_bounds_rejected() {
        let b = Bounds {
            lo: vec![0.6, 0.6],
            hi: vec![1.0, 1.0],
        };
        assert!(matches!(b.validate(), Err(SaaError::Infeasible(_))));
    }
}
