use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::mean_variance::max_sharpe_point;
use super::{MethodId, PcInputs, PcProposal};
use crate::error::{Result, SaaError};
use crate::linalg;
use crate::solver::Bounds;

/// Moves `w` along the segment toward `anchor` until `ok` holds, returning
/// the feasible end of the bracket.
fn pull_toward(w: &[f64], anchor: &[f64], ok: impl Fn(&[f64]) -> bool) -> Vec<f64> {
    if ok(w) {
        return w.to_vec();
    }
    let mix = |t: f64| -> Vec<f64> { w.iter().zip(anchor).map(|(a, b)| (1.0 - t) * a + t * b).collect() };
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if ok(&mix(mid)) {
            b = mid;
        } else {
            a = mid;
        }
    }
    if b >= 1.0 {
        return anchor.to_vec();
    }
    mix(b)
}

/// Maximum-entropy weights on the bounded simplex (the bounded water-fill).
fn entropy_max(bounds: &Bounds) -> Vec<f64> {
    bounds.project(&vec![0.0; bounds.n()])
}

/// argmax H(w) + λ(eᵀw − s·σ(w)) over the open simplex by Newton's method
/// with the budget row in the KKT system.
fn entropy_lagrangian(e: &[f64], sigma: &DMatrix<f64>, s: f64, lambda: f64, start: &[f64]) -> Result<Vec<f64>> {
    let n = e.len();
    // Φ = −F, minimized.
    let phi = |w: &[f64]| -> f64 {
        let vol = linalg::quad_form(sigma, w).max(0.0).sqrt();
        w.iter().map(|x| x * x.ln()).sum::<f64>() - lambda * (linalg::dot(e, w) - s * vol)
    };
    let mut w: Vec<f64> = start.iter().map(|x| x.max(1e-12)).collect();
    let tot: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= tot);
    for _ in 0..500 {
        let sw = linalg::mat_vec(sigma, &w);
        let vol = linalg::dot(&w, &sw).max(1e-300).sqrt();
        let mut kkt = DMatrix::<f64>::zeros(n + 1, n + 1);
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for i in 0..n {
            let grad = w[i].ln() + 1.0 - lambda * (e[i] - s * sw[i] / vol);
            rhs[i] = -grad;
            for j in 0..n {
                let mut h = lambda * s * (sigma[(i, j)] / vol - sw[i] * sw[j] / vol.powi(3));
                if i == j {
                    h += 1.0 / w[i];
                }
                kkt[(i, j)] = h;
            }
            kkt[(i, n)] = 1.0;
            kkt[(n, i)] = 1.0;
        }
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| SaaError::Domain("entropy KKT system is singular".into()))?;
        let dw: Vec<f64> = (0..n).map(|i| sol[i]).collect();
        let dec: f64 = -(0..n).map(|i| rhs[i] * dw[i]).sum::<f64>();
        if dec.abs() <= 1e-24 {
            return Ok(w);
        }
        let f0 = phi(&w);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = (0..n).map(|i| w[i] + t * dw[i]).collect();
            if cand.iter().all(|x| *x > 0.0) && phi(&cand) <= f0 + 1e-4 * t * dec {
                w = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-16 {
                return Ok(w);
            }
        }
    }
    Ok(w)
}

pub fn max_entropy(inputs: &PcInputs, floor_frac: f64) -> Result<PcProposal> {
    if !(0.0..=1.0).contains(&floor_frac) {
        return Err(SaaError::Domain("Sharpe floor fraction must lie in [0, 1]".into()));
    }
    let (w_star, s_star) = max_sharpe_point(inputs)?;
    let floor = floor_frac * s_star;
    let base = entropy_max(&inputs.bounds);
    let mut details = BTreeMap::from([("s_star".to_string(), s_star), ("sharpe_floor".to_string(), floor)]);
    let build = |w: Vec<f64>, why: String, mut details: BTreeMap<String, f64>| {
        details.insert("entropy".into(), linalg::entropy(&w));
        PcProposal::build(MethodId::MaxEntropy, inputs, w, why, details)
    };
    if floor_frac == 0.0 || inputs.sharpe(&base) >= floor {
        return build(base, "Sharpe floor inactive; maximum-entropy weights.".into(), details);
    }
    if floor_frac >= 1.0 {
        return build(
            w_star,
            "Floor equals S*; the maximum-Sharpe portfolio is the only feasible point.".into(),
            details,
        );
    }
    if s_star <= 0.0 {
        let w = pull_toward(&base, &w_star, |w| inputs.sharpe(w) >= floor);
        return build(
            w,
            "Non-positive S*; entropy maximum pulled toward the tangency portfolio.".into(),
            details,
        );
    }

    let e = inputs.excess();
    let slack = |w: &[f64]| linalg::dot(&e, w) - floor * linalg::quad_form(&inputs.sigma, w).max(0.0).sqrt();
    let solve = |lambda: f64, start: &[f64]| entropy_lagrangian(&e, &inputs.sigma, floor, lambda, start);

    let mut hi = 1.0;
    let mut w_hi = solve(hi, &base)?;
    while slack(&w_hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(SaaError::Convergence {
                iterations: 40,
                residual: -slack(&w_hi),
            });
        }
        w_hi = solve(hi, &w_hi)?;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let w = solve(mid, &w_hi)?;
        if slack(&w) >= 0.0 {
            hi = mid;
            w_hi = w;
        } else {
            lo = mid;
        }
    }
    let w = pull_toward(&w_hi, &w_star, |w| inputs.sharpe(w) >= floor);
    details.insert("lambda".into(), hi);
    build(
        w,
        format!(
            "Maximum weight entropy subject to Sharpe at least {:.0}% of S* ({:.3}).",
            floor_frac * 100.0,
            floor
        ),
        details,
    )
}

/// Vertex of the bounded simplex that puts as much weight as possible on `i`.
fn vertex(bounds: &Bounds, i: usize) -> Vec<f64> {
    let mut w = bounds.lo.clone();
    let mut left = 1.0 - w.iter().sum::<f64>();
    let add = (bounds.hi[i] - w[i]).min(left);
    w[i] += add;
    left -= add;
    for k in 0..w.len() {
        if left <= 0.0 {
            break;
        }
        let add = (bounds.hi[k] - w[k]).min(left).max(0.0);
        w[k] += add;
        left -= add;
    }
    w
}

/// Maximizes tracking variance against the peer centroid subject to
/// Sharpe ≥ floor_frac·S*, by multistart projected gradient ascent.
pub fn adversarial_diversifier(inputs: &PcInputs, peers: &[Vec<f64>], floor_frac: f64) -> Result<PcProposal> {
    let n = inputs.n();
    if peers.is_empty() {
        return Err(SaaError::Value(
            "adversarial diversifier needs at least one peer".into(),
        ));
    }
    if peers.iter().any(|p| p.len() != n) {
        return Err(SaaError::Domain("peer weights do not match the universe".into()));
    }
    let (w_star, s_star) = max_sharpe_point(inputs)?;
    let floor = if s_star > 0.0 { floor_frac * s_star } else { s_star };
    let mut centroid = vec![0.0; n];
    for p in peers {
        for i in 0..n {
            centroid[i] += p[i] / peers.len() as f64;
        }
    }
    let tv = |w: &[f64]| linalg::quad_form(&inputs.sigma, &linalg::sub(w, &centroid));
    let feasible = |w: &[f64]| inputs.sharpe(w) >= floor;
    let mut details = BTreeMap::from([
        ("s_star".to_string(), s_star),
        ("sharpe_floor".to_string(), floor),
        ("peers".to_string(), peers.len() as f64),
    ]);
    if floor_frac >= 1.0 {
        details.insert("tracking_variance".into(), tv(&w_star));
        return PcProposal::build(
            MethodId::Adversarial,
            inputs,
            w_star,
            "Floor equals S*; collapses to the maximum-Sharpe portfolio.",
            details,
        );
    }

    let bounds = &inputs.bounds;
    let mut starts: Vec<Vec<f64>> = peers.to_vec();
    starts.extend((0..n).map(|i| vertex(bounds, i)));
    starts.push(w_star.clone());
    starts.push(entropy_max(bounds));

    let ascend = |start: &[f64]| -> Vec<f64> {
        let mut w = pull_toward(&bounds.project(start), &w_star, feasible);
        let mut f = tv(&w);
        let mut eta = 1.0;
        for _ in 0..2000 {
            if eta < 1e-10 {
                break;
            }
            let g = linalg::mat_vec(&inputs.sigma, &linalg::sub(&w, &centroid));
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 1e-300 {
                break;
            }
            let trial: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a + eta * b / norm).collect();
            let cand = pull_toward(&bounds.project(&trial), &w_star, feasible);
            let fc = tv(&cand);
            if fc > f + 1e-15 {
                w = cand;
                f = fc;
                eta = (eta * 2.0).min(1.0);
            } else {
                eta *= 0.5;
            }
        }
        w
    };
    let results: Vec<Vec<f64>> = starts.iter().map(|s| ascend(s)).collect();
    let mut best = 0;
    for (k, w) in results.iter().enumerate() {
        if tv(w) > tv(&results[best]) {
            best = k;
        }
    }
    let w = results[best].clone();
    let t = tv(&w);
    details.insert("tracking_variance".into(), t);
    PcProposal::build(
        MethodId::Adversarial,
        inputs,
        w,
        format!(
            "Furthest portfolio from the centroid of {} peers (tracking error {:.2}%) with Sharpe at least {:.3}.",
            peers.len(),
            t.sqrt() * 100.0,
            floor
        ),
        details,
    )
}
