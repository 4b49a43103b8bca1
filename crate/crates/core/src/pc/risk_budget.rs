use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{MethodId, PcInputs, PcProposal};
use crate::error::{Result, SaaError};
use crate::linalg;
use crate::risk;

const MAX_ITER: usize = 10_000;

/// Equal risk contribution by Newton's method on
/// ½yᵀΣy − (1/n)Σ ln yᵢ, whose minimizer satisfies yᵢ(Σy)ᵢ = 1/n.
pub(crate) fn erc_weights(sigma: &DMatrix<f64>) -> Result<(Vec<f64>, f64, usize)> {
    let n = sigma.nrows();
    let b = 1.0 / n as f64;
    let scale = linalg::mean_diagonal(sigma);
    if scale <= 0.0 || (0..n).any(|i| sigma[(i, i)] <= 0.0) {
        return Err(SaaError::Domain("risk parity needs positive variances".into()));
    }
    let s = sigma / scale;
    let f = |y: &[f64]| 0.5 * linalg::quad_form(&s, y) - b * y.iter().map(|v| v.ln()).sum::<f64>();
    let mut y: Vec<f64> = (0..n).map(|i| 1.0 / s[(i, i)].sqrt()).collect();
    let v = linalg::quad_form(&s, &y).sqrt();
    y.iter_mut().for_each(|x| *x /= v);

    let residual = |y: &[f64]| {
        let w = linalg::normalize(y.to_vec());
        risk::risk_contributions(&w, &s)
            .iter()
            .map(|rc| (rc - b).abs())
            .fold(0.0, f64::max)
    };
    for iter in 0..MAX_ITER {
        let sy = linalg::mat_vec(&s, &y);
        let res = residual(&y);
        if res <= 1e-13 {
            return Ok((linalg::normalize(y), res, iter));
        }
        let g = DVector::from_fn(n, |i, _| sy[i] - b / y[i]);
        let mut h = s.clone();
        for i in 0..n {
            h[(i, i)] += b / (y[i] * y[i]);
        }
        let step = h
            .cholesky()
            .ok_or_else(|| SaaError::Domain("risk parity Hessian lost definiteness".into()))?
            .solve(&g);
        let f0 = f(&y);
        let decrement = g.dot(&step);
        if decrement <= 1e-15 * f0.abs().max(1e-300) {
            // Below the objective's resolution: pure Newton steps while the
            // residual still falls.
            let cand: Vec<f64> = (0..n).map(|i| y[i] - step[i]).collect();
            if cand.iter().all(|v| *v > 0.0) && residual(&cand) < 0.5 * res {
                y = cand;
                continue;
            }
            return if res <= 1e-8 {
                Ok((linalg::normalize(y), res, iter))
            } else {
                Err(SaaError::Convergence {
                    iterations: iter,
                    residual: res,
                })
            };
        }
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = (0..n).map(|i| y[i] - t * step[i]).collect();
            if cand.iter().all(|v| *v > 0.0) && f(&cand) <= f0 - 1e-4 * t * decrement {
                y = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-16 {
                // No further progress possible at machine precision.
                let res = residual(&y);
                if res <= 1e-8 {
                    return Ok((linalg::normalize(y), res, iter));
                }
                return Err(SaaError::Convergence {
                    iterations: iter,
                    residual: res,
                });
            }
        }
    }
    Err(SaaError::Convergence {
        iterations: MAX_ITER,
        residual: residual(&y),
    })
}

pub fn risk_parity_erc(inputs: &PcInputs) -> Result<PcProposal> {
    let (w, res, iters) = erc_weights(&inputs.sigma)?;
    if res > 1e-8 {
        return Err(SaaError::Convergence {
            iterations: iters,
            residual: res,
        });
    }
    PcProposal::build(
        MethodId::RiskParity,
        inputs,
        w,
        "Equal ex-ante risk contribution from every asset.",
        BTreeMap::from([
            ("rc_residual".to_string(), res),
            ("newton_iterations".to_string(), iters as f64),
        ]),
    )
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Demeaned monthly returns.
fn demeaned(scenarios: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = scenarios.clone();
    for j in 0..x.ncols() {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
    }
    x
}

/// Smoothed Rockafellar–Uryasev objective ζ + kΣ μ·softplus((Lₜ − ζ)/μ).
struct SmoothTail<'a> {
    x: &'a DMatrix<f64>,
    k: f64,
    mu: f64,
}

impl SmoothTail<'_> {
    fn losses(&self, y: &[f64]) -> Vec<f64> {
        (0..self.x.nrows())
            .map(|t| -(0..y.len()).map(|i| self.x[(t, i)] * y[i]).sum::<f64>())
            .collect()
    }

    fn value(&self, losses: &[f64], zeta: f64) -> f64 {
        zeta + self.k
            * losses
                .iter()
                .map(|l| self.mu * softplus((l - zeta) / self.mu))
                .sum::<f64>()
    }

    /// ζ minimizing the objective for fixed losses: kΣσ((Lₜ−ζ)/μ) = 1.
    fn best_zeta(&self, losses: &[f64]) -> f64 {
        let lo0 = losses.iter().copied().fold(f64::INFINITY, f64::min) - 50.0 * self.mu;
        let hi0 = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 50.0 * self.mu;
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = losses.iter().map(|l| sigmoid((l - mid) / self.mu)).sum::<f64>() * self.k;
            if s > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn contributions(&self, y: &[f64]) -> Vec<f64> {
        let losses = self.losses(y);
        let zeta = self.best_zeta(&losses);
        let n = y.len();
        let mut grad = vec![0.0; n];
        for (t, l) in losses.iter().enumerate() {
            let p = self.k * sigmoid((l - zeta) / self.mu);
            for i in 0..n {
                grad[i] -= p * self.x[(t, i)];
            }
        }
        y.iter().zip(&grad).map(|(a, g)| a * g).collect()
    }

    /// Minimizes F(y, ζ) = R(y, ζ) − c·Σ (1/n) ln yᵢ from the warm start.
    fn solve(&self, c: f64, y: &mut Vec<f64>, zeta: &mut f64) -> Result<usize> {
        let n = y.len();
        let b = 1.0 / n as f64;
        let obj = |y: &[f64], z: f64| self.value(&self.losses(y), z) - c * b * y.iter().map(|v| v.ln()).sum::<f64>();
        let mut prev_sg = f64::INFINITY;
        for iter in 0..200 {
            let losses = self.losses(y);
            let mut g = DVector::<f64>::zeros(n + 1);
            let mut h = DMatrix::<f64>::zeros(n + 1, n + 1);
            g[n] = 1.0;
            for (t, l) in losses.iter().enumerate() {
                let z = (l - *zeta) / self.mu;
                let p = sigmoid(z);
                let w2 = self.k * p * (1.0 - p) / self.mu;
                // a = ∂(Lₜ − ζ)/∂(y, ζ) = (−xₜ, −1)
                let a: Vec<f64> = (0..n).map(|i| -self.x[(t, i)]).chain(std::iter::once(-1.0)).collect();
                for i in 0..=n {
                    g[i] += self.k * p * a[i];
                    if w2 > 0.0 {
                        for j in 0..=i {
                            h[(i, j)] += w2 * a[i] * a[j];
                        }
                    }
                }
            }
            for i in 0..n {
                g[i] -= c * b / y[i];
                h[(i, i)] += c * b / (y[i] * y[i]);
            }
            for i in 0..=n {
                for j in 0..i {
                    h[(j, i)] = h[(i, j)];
                }
            }
            let scale_g: f64 = g
                .iter()
                .take(n)
                .zip(y.iter())
                .map(|(gi, yi)| (gi * yi).abs())
                .fold(g[n].abs(), f64::max);
            if scale_g <= 1e-14 * c.max(1e-300) {
                return Ok(iter);
            }
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    let mut hr = h;
                    let ridge = 1e-12 * (0..=n).map(|i| hr[(i, i)]).fold(0.0, f64::max);
                    for i in 0..=n {
                        hr[(i, i)] += ridge;
                    }
                    hr.cholesky()
                        .ok_or_else(|| SaaError::Domain("tail-risk Hessian is not definite".into()))?
                        .solve(&g)
                }
            };
            let f0 = obj(y, *zeta);
            let dec = g.dot(&step);
            if dec <= 1e-28 {
                return Ok(iter);
            }
            if dec <= 1e-15 * f0.abs() {
                // Below the objective's resolution: take pure Newton steps
                // while they still shrink the gradient.
                if scale_g >= 0.5 * prev_sg {
                    return Ok(iter);
                }
                prev_sg = scale_g;
                let cand: Vec<f64> = (0..n).map(|i| y[i] - step[i]).collect();
                if cand.iter().any(|v| *v <= 0.0) {
                    return Ok(iter);
                }
                *y = cand;
                *zeta -= step[n];
                continue;
            }
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = (0..n).map(|i| y[i] - t * step[i]).collect();
                let cz = *zeta - t * step[n];
                if cand.iter().all(|v| *v > 0.0) && obj(&cand, cz) <= f0 - 1e-4 * t * dec {
                    *y = cand;
                    *zeta = cz;
                    break;
                }
                t *= 0.5;
                if t < 1e-14 {
                    return Ok(iter);
                }
            }
        }
        Err(SaaError::Convergence {
            iterations: 200,
            residual: f64::NAN,
        })
    }
}

/// Normalized smoothed tail contributions of `w` at smoothing width `mu`
/// (monthly loss units).
pub fn smoothed_tail_contributions(w: &[f64], scenarios: &DMatrix<f64>, alpha: f64, mu: f64) -> Vec<f64> {
    let x = demeaned(scenarios);
    let st = SmoothTail {
        x: &x,
        k: 1.0 / ((1.0 - alpha) * x.nrows() as f64),
        mu,
    };
    let cc = st.contributions(w);
    let total: f64 = cc.iter().sum();
    cc.iter().map(|c| c / total).collect()
}

/// Equalizes component contributions to a smoothed deviation CVaR of the
/// scenario losses.
pub fn tail_risk_parity(inputs: &PcInputs) -> Result<PcProposal> {
    let n = inputs.n();
    let x = demeaned(&inputs.scenarios);
    let t = x.nrows();
    let k = 1.0 / ((1.0 - inputs.cvar_level) * t as f64);
    let ew = vec![1.0 / n as f64; n];
    let loss_scale = {
        let l: Vec<f64> = (0..t)
            .map(|r| -(0..n).map(|i| x[(r, i)] * ew[i]).sum::<f64>())
            .collect();
        linalg::mean(&l.iter().map(|v| v.abs()).collect::<Vec<_>>())
    };
    if loss_scale <= 0.0 {
        return Err(SaaError::Domain("scenario returns have no dispersion".into()));
    }

    let (w0, _, _) = erc_weights(&inputs.sigma)?;
    let mut y = w0;
    let mut st = SmoothTail {
        x: &x,
        k,
        mu: 0.1 * loss_scale,
    };
    let mut zeta = st.best_zeta(&st.losses(&y));
    let mut c = st.value(&st.losses(&y), zeta).max(1e-12);
    let mut iters = 0;
    for frac in [1e-1, 1e-2, 1e-3] {
        st.mu = frac * loss_scale;
        zeta = st.best_zeta(&st.losses(&y));
        // y(c) is close to linear in c; rescale c until Σy = 1.
        for _ in 0..100 {
            iters += st.solve(c, &mut y, &mut zeta)?;
            let s: f64 = y.iter().sum();
            if (s - 1.0).abs() <= 1e-13 {
                break;
            }
            c /= s;
            y.iter_mut().for_each(|v| *v /= s);
            zeta /= s;
        }
    }
    let s: f64 = y.iter().sum();
    let w: Vec<f64> = y.iter().map(|v| v / s).collect();
    let cc = st.contributions(&w);
    let total: f64 = cc.iter().sum();
    let norm: Vec<f64> = cc.iter().map(|v| v / total).collect();
    let spread =
        norm.iter().copied().fold(f64::NEG_INFINITY, f64::max) - norm.iter().copied().fold(f64::INFINITY, f64::min);
    if spread > 1e-4 {
        return Err(SaaError::Convergence {
            iterations: iters,
            residual: spread,
        });
    }
    PcProposal::build(
        MethodId::TailRiskParity,
        inputs,
        w,
        format!(
            "Equal contributions to smoothed deviation CVaR at {:.0}% (contribution spread {spread:.1e}).",
            inputs.cvar_level * 100.0
        ),
        BTreeMap::from([
            ("contribution_spread".to_string(), spread),
            ("smoothing".to_string(), st.mu),
            ("newton_iterations".to_string(), iters as f64),
        ]),
    )
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    #[test]
    fn erc_diagonal_is_inverse_vol() {
        let p = risk_parity_erc(&inputs(&[0.05; 3], diag(&[0.1, 0.2, 0.4]), no_scenarios(3))).unwrap();
        let iv = linalg::normalize(vec![10.0, 5.0, 2.5]);
        assert!(linalg::l1_distance(&p.weights, &iv) < 1e-10, "{:?}", p.weights);
    }

    #[test]
    fn erc_identity_is_equal() {
        let p = risk_parity_erc(&inputs(&[0.05; 4], diag(&[0.2; 4]), no_scenarios(4))).unwrap();
        assert!(p.weights.iter().all(|w| (w - 0.25).abs() < 1e-12));
    }

    #[test]
    fn trp_identical_assets_equal() {
        let sc = DMatrix::from_fn(60, 2, |t, _| 0.03 * (((t * 37) % 11) as f64 - 5.0) / 5.0);
        let s = DMatrix::from_element(2, 2, 0.02);
        let mut inp = inputs(&[0.05; 2], s, sc);
        inp.sigma[(0, 0)] += 1e-4;
        inp.sigma[(1, 1)] += 1e-4;
        let p = tail_risk_parity(&inp).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 1e-6, "{:?}", p.weights);
    }
}
