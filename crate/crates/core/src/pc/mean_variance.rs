use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{qp_min, MethodId, PcInputs, PcParams, PcProposal};
use crate::error::{Result, SaaError};
use crate::exec::Execution;
use crate::linalg;
use crate::solver::{Bounds, Constraint};

pub(crate) fn gmv_weights(sigma: &DMatrix<f64>, bounds: &Bounds) -> Result<Vec<f64>> {
    let (eq, ineq) = bounds.qp_rows();
    qp_min(sigma, &vec![0.0; sigma.nrows()], &eq, &ineq)
}

pub fn gmv(inputs: &PcInputs) -> Result<PcProposal> {
    let w = gmv_weights(&inputs.sigma, &inputs.bounds)?;
    PcProposal::build(
        MethodId::Gmv,
        inputs,
        w,
        "Minimum ex-ante variance on the bounded simplex.",
        BTreeMap::new(),
    )
}

/// Largest value of vᵀw over the bounded simplex (greedy fill).
pub(crate) fn max_linear(v: &[f64], bounds: &Bounds) -> f64 {
    let mut w = bounds.lo.clone();
    let mut left = 1.0 - w.iter().sum::<f64>();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    for i in idx {
        let add = (bounds.hi[i] - w[i]).min(left).max(0.0);
        w[i] += add;
        left -= add;
    }
    linalg::dot(v, &w)
}

/// argmax vᵀw/√(wᵀΣw) on the bounded simplex, through the homogeneous
/// program min yᵀΣy s.t. vᵀy = 1 with the bounds scaled by Σy.
/// Needs some feasible w with vᵀw > 0.
pub(crate) fn max_ratio_weights(v: &[f64], sigma: &DMatrix<f64>, bounds: &Bounds) -> Result<Vec<f64>> {
    let n = v.len();
    if max_linear(v, bounds) <= 0.0 {
        return Err(SaaError::Infeasible("no portfolio has a positive numerator".into()));
    }
    let eq = vec![Constraint::new(v.to_vec(), 1.0)];
    let mut ineq = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut c = vec![-bounds.lo[i]; n];
        c[i] += 1.0;
        ineq.push(Constraint::new(c, 0.0));
        if bounds.hi[i] < 1.0 {
            let mut c = vec![bounds.hi[i]; n];
            c[i] -= 1.0;
            ineq.push(Constraint::new(c, 0.0));
        }
    }
    let y = qp_min(sigma, &vec![0.0; n], &eq, &ineq)?;
    let s: f64 = y.iter().sum();
    if s <= 0.0 {
        return Err(SaaError::Value("homogeneous solution has no mass".into()));
    }
    Ok(y.iter().map(|x| (x / s).max(0.0)).collect())
}

/// Tangency weights for excess returns `ex`, falling back to the minimum
/// variance portfolio when no portfolio earns a positive excess return.
pub(crate) fn tangency(ex: &[f64], sigma: &DMatrix<f64>, bounds: &Bounds) -> Result<(Vec<f64>, bool)> {
    if max_linear(ex, bounds) <= 1e-12 {
        return Ok((gmv_weights(sigma, bounds)?, true));
    }
    Ok((max_ratio_weights(ex, sigma, bounds)?, false))
}

fn tangency_proposal(
    method: MethodId,
    inputs: &PcInputs,
    mu: &[f64],
    why: &str,
    mut details: BTreeMap<String, f64>,
) -> Result<PcProposal> {
    let ex: Vec<f64> = mu.iter().map(|m| m - inputs.rf).collect();
    let (w, fallback) = tangency(&ex, &inputs.sigma, &inputs.bounds)?;
    let mut rationale = why.to_string();
    if fallback {
        rationale.push_str(" No portfolio earns a positive excess return; minimum variance used instead.");
    }
    let s = super::sharpe_ratio(&w, mu, &inputs.sigma, inputs.rf);
    details.insert("sharpe_on_method_mu".into(), s);
    PcProposal::build(method, inputs, w, rationale, details)
}

/// Maximum-Sharpe weights and their Sharpe ratio S*.
pub(crate) fn max_sharpe_point(inputs: &PcInputs) -> Result<(Vec<f64>, f64)> {
    let (w, _) = tangency(&inputs.excess(), &inputs.sigma, &inputs.bounds)?;
    let s = inputs.sharpe(&w);
    Ok((w, s))
}

pub fn max_sharpe(inputs: &PcInputs) -> Result<PcProposal> {
    let p = tangency_proposal(
        MethodId::MaxSharpe,
        inputs,
        &inputs.mu,
        "Tangency portfolio on the final CMAs.",
        BTreeMap::new(),
    )?;
    let mut p = p;
    p.details.insert("s_star".into(), p.diagnostics.sharpe);
    Ok(p)
}

pub fn max_diversification(inputs: &PcInputs) -> Result<PcProposal> {
    let vols = inputs.vols();
    let w = max_ratio_weights(&vols, &inputs.sigma, &inputs.bounds)?;
    let vol = linalg::quad_form(&inputs.sigma, &w).sqrt();
    let dr = linalg::dot(&vols, &w) / vol;
    PcProposal::build(
        MethodId::MaxDiversification,
        inputs,
        w,
        format!("Maximum diversification ratio ({dr:.3})."),
        BTreeMap::from([("diversification_ratio".to_string(), dr)]),
    )
}

pub fn robust_mv(inputs: &PcInputs, kappa: f64, horizon_months: usize) -> Result<PcProposal> {
    if horizon_months == 0 || kappa < 0.0 {
        return Err(SaaError::Domain(
            "robust MV needs kappa ≥ 0 and a positive horizon".into(),
        ));
    }
    let root_t = (horizon_months as f64).sqrt();
    let mu: Vec<f64> = inputs
        .mu
        .iter()
        .zip(inputs.vols())
        .map(|(m, s)| m - kappa * s / root_t)
        .collect();
    tangency_proposal(
        MethodId::RobustMv,
        inputs,
        &mu,
        &format!("Tangency on worst-case returns (box radius {kappa}·σ/√{horizon_months})."),
        BTreeMap::from([("kappa".to_string(), kappa)]),
    )
}

/// Black-Litterman posterior mean of excess returns:
/// π + τΣPᵀ(PτΣPᵀ + Ω)⁻¹(Q − Pπ).
pub fn bl_posterior(
    pi: &[f64],
    sigma: &DMatrix<f64>,
    tau: f64,
    p: &DMatrix<f64>,
    q: &[f64],
    omega: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let k = p.nrows();
    if k == 0 {
        return Ok(pi.to_vec());
    }
    let ts = sigma * tau;
    let pi_v = DVector::from_column_slice(pi);
    let q_v = DVector::from_column_slice(q);
    let m = p * &ts * p.transpose() + omega;
    let inv = m
        .try_inverse()
        .ok_or_else(|| SaaError::Domain("view covariance is singular".into()))?;
    let post = &pi_v + &ts * p.transpose() * inv * (q_v - p * &pi_v);
    Ok(post.iter().copied().collect())
}

pub fn black_litterman(inputs: &PcInputs, tau: f64, delta: f64) -> Result<PcProposal> {
    let n = inputs.n();
    let caps = inputs
        .caps
        .as_ref()
        .ok_or_else(|| SaaError::Value("Black-Litterman needs market-cap weights".into()))?;
    if tau <= 0.0 {
        return Err(SaaError::Domain("tau must be positive".into()));
    }
    let pi = linalg::mat_vec(&inputs.sigma, caps)
        .into_iter()
        .map(|x| delta * x)
        .collect::<Vec<_>>();
    let views: Vec<usize> = (0..n).filter(|&i| inputs.confidence[i] > 0.0).collect();
    let k = views.len();
    let p = DMatrix::from_fn(k, n, |r, c| if views[r] == c { 1.0 } else { 0.0 });
    let q: Vec<f64> = views.iter().map(|&i| inputs.mu[i] - inputs.rf).collect();
    let omega = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            let i = views[r];
            tau * inputs.sigma[(i, i)] / inputs.confidence[i]
        } else {
            0.0
        }
    });
    let post = bl_posterior(&pi, &inputs.sigma, tau, &p, &q, &omega)?;
    let mu: Vec<f64> = post.iter().map(|x| x + inputs.rf).collect();
    let mut details: BTreeMap<String, f64> = BTreeMap::new();
    details.insert("views".into(), k as f64);
    for (slug, x) in inputs.slugs().iter().zip(&post) {
        details.insert(format!("posterior_excess.{slug}"), *x);
    }
    tangency_proposal(
        MethodId::BlackLitterman,
        inputs,
        &mu,
        &format!("Equilibrium prior (delta {delta}, tau {tau}) blended with {k} absolute CMA views, then tangency."),
        details,
    )
}

/// Bootstrap draw b of (μ, Σ): μᵇ = μ + s·12(m_b − m), Σᵇ = (1−s)Σ + s·Sᵇ with
/// Sᵇ the (optionally shrunk) annualized covariance of the resampled rows.
fn bootstrap_draw(inputs: &PcInputs, params: &PcParams, b: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let x = &inputs.scenarios;
    let (t, n) = (x.nrows(), x.ncols());
    let s = params.resample_noise;
    if s == 0.0 {
        return Ok((inputs.mu.clone(), inputs.sigma.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.resample_seed);
    rng.set_stream(b as u64);
    let rows: Vec<usize> = (0..t).map(|_| rng.random_range(0..t)).collect();
    let full_mean: Vec<f64> = (0..n).map(|i| x.column(i).mean()).collect();
    let mut m = vec![0.0; n];
    for &r in &rows {
        for i in 0..n {
            m[i] += x[(r, i)] / t as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for &r in &rows {
        for i in 0..n {
            let di = x[(r, i)] - m[i];
            for j in 0..=i {
                cov[(i, j)] += di * (x[(r, j)] - m[j]);
            }
        }
    }
    let denom = (t.max(2) - 1) as f64;
    for i in 0..n {
        for j in 0..=i {
            let mut v = cov[(i, j)] / denom * 12.0;
            if i != j {
                v *= 1.0 - params.resample_shrinkage;
            }
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let mu = (0..n)
        .map(|i| inputs.mu[i] + s * 12.0 * (m[i] - full_mean[i]))
        .collect();
    let sigma = &inputs.sigma * (1.0 - s) + cov * s;
    Ok((mu, sigma))
}

pub fn resampled_frontier(inputs: &PcInputs, params: &PcParams, exec: Execution) -> Result<PcProposal> {
    let b = params.resamples;
    if b == 0 {
        return Err(SaaError::Domain("resampling needs at least one draw".into()));
    }
    let draws: Vec<Result<Vec<f64>>> = exec.map_range(b, |k| {
        let (mu, sigma) = bootstrap_draw(inputs, params, k)?;
        let ex: Vec<f64> = mu.iter().map(|m| m - inputs.rf).collect();
        Ok(tangency(&ex, &sigma, &inputs.bounds)?.0)
    });
    let n = inputs.n();
    let mut avg = vec![0.0; n];
    let mut used = 0usize;
    for w in draws.iter().flatten() {
        for (a, x) in avg.iter_mut().zip(w) {
            *a += x;
        }
        used += 1;
    }
    if used == 0 {
        return Err(SaaError::Convergence {
            iterations: b,
            residual: f64::NAN,
        });
    }
    let w = linalg::normalize(avg);
    let mut why = format!(
        "Average of {used} bootstrap tangency portfolios (seed {}).",
        params.resample_seed
    );
    if used < b {
        why.push_str(&format!(" {} draws failed and were skipped.", b - used));
    }
    PcProposal::build(
        MethodId::Resampled,
        inputs,
        w,
        why,
        BTreeMap::from([("draws".to_string(), used as f64)]),
    )
}

/// min ‖Bᵀw − b‖² on the bounded simplex, with a small variance term that
/// selects the lowest-risk portfolio among exact fits.
pub fn tpa_two_factor(inputs: &PcInputs, loadings: &[[f64; 2]], budget: [f64; 2]) -> Result<PcProposal> {
    let n = inputs.n();
    if loadings.len() != n {
        return Err(SaaError::Domain("factor loadings do not match the universe".into()));
    }
    let bmat = DMatrix::from_fn(n, 2, |i, k| loadings[i][k]);
    let fit = &bmat * bmat.transpose();
    let fit_scale = linalg::mean_diagonal(&fit).max(1e-12);
    let var_scale = linalg::mean_diagonal(&inputs.sigma).max(1e-12);
    let eps = 1e-7 * fit_scale / var_scale;
    let g = fit + &inputs.sigma * eps;
    let a: Vec<f64> = (0..n)
        .map(|i| -(loadings[i][0] * budget[0] + loadings[i][1] * budget[1]))
        .collect();
    let (eq, ineq) = inputs.bounds.qp_rows();
    let w = qp_min(&g, &a, &eq, &ineq)?;
    let exposure = [0, 1].map(|k| (0..n).map(|i| loadings[i][k] * w[i]).sum::<f64>());
    let resid = ((exposure[0] - budget[0]).powi(2) + (exposure[1] - budget[1]).powi(2)).sqrt();
    PcProposal::build(
        MethodId::Tpa,
        inputs,
        w,
        format!(
            "Equity/bond factor budget ({:.2}, {:.2}) matched to ({:.4}, {:.4}).",
            budget[0], budget[1], exposure[0], exposure[1]
        ),
        BTreeMap::from([
            ("equity_exposure".to_string(), exposure[0]),
            ("bond_exposure".to_string(), exposure[1]),
            ("budget_residual".to_string(), resid),
        ]),
    )
}
