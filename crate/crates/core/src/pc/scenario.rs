use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::mean_variance::max_linear;
use super::{qp_min, MethodId, PcInputs, PcProposal};
use crate::error::{Result, SaaError};
use crate::linalg;
use crate::risk;
use crate::solver::lp::{self, Row};
use crate::solver::{Bounds, Constraint};

/// Rockafellar–Uryasev CVaR of monthly returns: min over ζ of
/// ζ + E[(L − ζ)⁺]/(1 − α) with L = −r.
pub fn ru_cvar(returns: &[f64], alpha: f64) -> f64 {
    let mut losses: Vec<f64> = returns.iter().map(|r| -r).collect();
    losses.sort_by(f64::total_cmp);
    let t = losses.len();
    let k = 1.0 / ((1.0 - alpha) * t as f64);
    let mut suffix = vec![0.0; t + 1];
    for i in (0..t).rev() {
        suffix[i] = suffix[i + 1] + losses[i];
    }
    (0..t)
        .map(|j| {
            let z = losses[j];
            let tail = suffix[j + 1] - z * (t - j - 1) as f64;
            z + k * tail
        })
        .fold(f64::INFINITY, f64::min)
}

/// Annualized downside deviation below `mar` (decimal/yr).
pub fn downside_deviation(returns: &[f64], mar: f64) -> f64 {
    let m = mar / 12.0;
    let ss: f64 = returns.iter().map(|r| (r - m).min(0.0).powi(2)).sum();
    (ss / returns.len() as f64).sqrt() * 12f64.sqrt()
}

fn row_of(x: &DMatrix<f64>, t: usize) -> Vec<f64> {
    (0..x.ncols()).map(|i| x[(t, i)]).collect()
}

/// LP rows Σw' = 1 − Σlo and w' ≤ hi − lo over the shifted weights w' = w − lo,
/// padded with `extra` zero columns.
fn simplex_rows(bounds: &Bounds, extra: usize) -> Vec<Row> {
    let n = bounds.n();
    let width = n + extra;
    let mut c = vec![0.0; width];
    c[..n].iter_mut().for_each(|v| *v = 1.0);
    let mut rows = vec![Row::eq(c, 1.0 - bounds.lo.iter().sum::<f64>())];
    for i in 0..n {
        if bounds.hi[i] < 1.0 {
            let mut c = vec![0.0; width];
            c[i] = 1.0;
            rows.push(Row::le(c, bounds.hi[i] - bounds.lo[i]));
        }
    }
    rows
}

pub fn cvar_min(inputs: &PcInputs) -> Result<PcProposal> {
    let n = inputs.n();
    let x = &inputs.scenarios;
    let t = x.nrows();
    let alpha = inputs.cvar_level;
    let k = 1.0 / ((1.0 - alpha) * t as f64);
    let lo = &inputs.bounds.lo;
    // Columns: w' (n), ζ⁺, ζ⁻, u (T).
    let width = n + 2 + t;
    let mut cost = vec![0.0; width];
    cost[n] = 1.0;
    cost[n + 1] = -1.0;
    cost[n + 2..].iter_mut().for_each(|c| *c = k);
    let mut rows = simplex_rows(&inputs.bounds, 2 + t);
    for s in 0..t {
        let r = row_of(x, s);
        let mut c = vec![0.0; width];
        c[..n].copy_from_slice(&r);
        c[n] = 1.0;
        c[n + 1] = -1.0;
        c[n + 2 + s] = 1.0;
        rows.push(Row::ge(c, -linalg::dot(&r, lo)));
    }
    let sol = lp::minimize(&cost, &rows)?;
    let w: Vec<f64> = (0..n).map(|i| lo[i] + sol.x[i]).collect();
    let cvar = ru_cvar(&risk::portfolio_returns(&w, x), alpha);
    PcProposal::build(
        MethodId::Cvar,
        inputs,
        w,
        format!(
            "Minimum historical CVaR at {:.0}% over {t} monthly scenarios ({:.2}% monthly).",
            alpha * 100.0,
            cvar * 100.0
        ),
        BTreeMap::from([
            ("cvar_monthly".to_string(), cvar),
            ("lp_pivots".to_string(), sol.pivots as f64),
        ]),
    )
}

pub fn mean_downside(inputs: &PcInputs, mar: f64) -> Result<PcProposal> {
    let n = inputs.n();
    let x = &inputs.scenarios;
    let t = x.nrows();
    let m = mar / 12.0;
    let xs: Vec<Vec<f64>> = (0..t).map(|s| row_of(x, s).iter().map(|r| r - m).collect()).collect();
    let e: Vec<f64> = inputs.mu.iter().map(|v| v - mar).collect();
    let bounds = &inputs.bounds;
    let (eq_w, ineq_w) = bounds.qp_rows();

    let finish = |w: Vec<f64>, why: String| {
        let rets = risk::portfolio_returns(&w, x);
        let dd = downside_deviation(&rets, mar);
        let ratio = if dd > 0.0 {
            linalg::dot(&e, &w) / dd
        } else {
            f64::INFINITY
        };
        let mut details = BTreeMap::from([("downside_deviation".to_string(), dd), ("mar".to_string(), mar)]);
        if ratio.is_finite() {
            details.insert("sortino".into(), ratio);
        }
        PcProposal::build(MethodId::MeanDownside, inputs, w, why, details)
    };

    // A pad of zero columns lets the QP rows over w be reused with (w, d).
    let pad = |c: &Constraint, extra: usize| {
        let mut v = c.coeffs.clone();
        v.extend(std::iter::repeat_n(0.0, extra));
        Constraint::new(v, c.rhs)
    };
    let shortfall_g = |ridge: f64| {
        DMatrix::from_fn(n + t, n + t, |i, j| {
            if i != j {
                0.0
            } else if i < n {
                ridge
            } else {
                1.0
            }
        })
    };
    let shortfall_rows = |ineq: &mut Vec<Constraint>| {
        for (s, xr) in xs.iter().enumerate() {
            let mut c = xr.clone();
            c.extend(std::iter::repeat_n(0.0, t));
            c[n + s] = 1.0;
            ineq.push(Constraint::new(c.clone(), 0.0));
            let mut d = vec![0.0; n + t];
            d[n + s] = 1.0;
            ineq.push(Constraint::new(d, 0.0));
        }
    };

    if max_linear(&e, bounds) <= 0.0 {
        // No portfolio beats the MAR: minimize downside deviation instead.
        let eq: Vec<Constraint> = eq_w.iter().map(|c| pad(c, t)).collect();
        let mut ineq: Vec<Constraint> = ineq_w.iter().map(|c| pad(c, t)).collect();
        shortfall_rows(&mut ineq);
        let z = qp_min(&shortfall_g(0.0), &vec![0.0; n + t], &eq, &ineq)?;
        return finish(
            z[..n].to_vec(),
            "No portfolio earns more than the MAR; minimum downside deviation chosen.".into(),
        );
    }

    // Zero-downside portfolios have an unbounded ratio; take the lowest-vol one.
    let lo = &bounds.lo;
    let mut rows = simplex_rows(bounds, 0);
    for xr in &xs {
        rows.push(Row::ge(xr.clone(), -linalg::dot(xr, lo)));
    }
    let cost: Vec<f64> = e.iter().map(|v| -v).collect();
    if let Ok(sol) = lp::minimize(&cost, &rows) {
        let best = -sol.objective + linalg::dot(&e, lo);
        if best > 1e-9 {
            let mut ineq = ineq_w.clone();
            for xr in &xs {
                ineq.push(Constraint::new(xr.clone(), 0.0));
            }
            ineq.push(Constraint::new(e.clone(), 1e-9));
            let w = qp_min(&inputs.sigma, &vec![0.0; n], &eq_w, &ineq)?;
            return finish(
                w,
                "Some portfolios never fall below the MAR; the lowest-volatility one is chosen.".into(),
            );
        }
    }

    // Homogeneous program in (y, d): min Σd² s.t. eᵀy = 1, dₜ ≥ −xₜᵀy, d ≥ 0.
    let mut ecoef = e.clone();
    ecoef.extend(std::iter::repeat_n(0.0, t));
    let eq = vec![Constraint::new(ecoef, 1.0)];
    let mut ineq = Vec::new();
    for i in 0..n {
        let mut c = vec![-bounds.lo[i]; n];
        c[i] += 1.0;
        ineq.push(pad(&Constraint::new(c, 0.0), t));
        if bounds.hi[i] < 1.0 {
            let mut c = vec![bounds.hi[i]; n];
            c[i] -= 1.0;
            ineq.push(pad(&Constraint::new(c, 0.0), t));
        }
    }
    shortfall_rows(&mut ineq);
    let z = qp_min(&shortfall_g(0.0), &vec![0.0; n + t], &eq, &ineq)?;
    let y = &z[..n];
    let s: f64 = y.iter().sum();
    if s <= 0.0 {
        return Err(SaaError::Value("mean-downside solution has no mass".into()));
    }
    finish(
        y.iter().map(|v| (v / s).max(0.0)).collect(),
        format!(
            "Maximum return over MAR per unit of downside deviation (MAR {:.2}%).",
            mar * 100.0
        ),
    )
}

/// Log-wealth drawdown windows for constant-mix portfolio `w`.
struct Paths<'a> {
    x: &'a DMatrix<f64>,
}

impl Paths<'_> {
    /// (worst window log return, start, end) with window (start, end].
    fn worst(&self, w: &[f64]) -> Result<(f64, usize, usize)> {
        let rets = risk::portfolio_returns(w, self.x);
        let mut level = 0.0;
        let (mut peak, mut peak_at) = (0.0, 0usize);
        let mut worst = (0.0, 0, 0);
        for (t, r) in rets.iter().enumerate() {
            if *r <= -1.0 {
                return Err(SaaError::Domain("portfolio return at or below -100%".into()));
            }
            level += r.ln_1p();
            if level - peak < worst.0 {
                worst = (level - peak, peak_at, t + 1);
            }
            if level > peak {
                peak = level;
                peak_at = t + 1;
            }
        }
        Ok(worst)
    }

    /// Gradient of Σ ln(1 + rᵤᵀw) over window (start, end].
    fn gradient(&self, w: &[f64], start: usize, end: usize) -> Vec<f64> {
        let n = w.len();
        let mut g = vec![0.0; n];
        for u in start..end {
            let r = row_of(self.x, u);
            let d = 1.0 + linalg::dot(&r, w);
            for i in 0..n {
                g[i] += r[i] / d;
            }
        }
        g
    }
}

const MAX_CUTS: usize = 300;

/// Maximizes the worst window log return (the minimum-drawdown portfolio).
fn min_drawdown_point(paths: &Paths<'_>, bounds: &Bounds) -> Result<(Vec<f64>, f64)> {
    let n = bounds.n();
    let lo = &bounds.lo;
    // Columns: w' (n), z⁻ with z = −z⁻ ≤ 0 the window floor.
    let mut cost = vec![0.0; n + 1];
    cost[n] = 1.0;
    let mut rows = simplex_rows(bounds, 1);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut w = bounds.project(&vec![0.0; n]);
    for _ in 0..MAX_CUTS {
        let (g, s, e) = paths.worst(&w)?;
        if best.as_ref().is_none_or(|(_, b)| g > *b) {
            best = Some((w.clone(), g));
        }
        if e == 0 {
            break;
        }
        let grad = paths.gradient(&w, s, e);
        let mut c = grad.clone();
        c.push(1.0);
        rows.push(Row::ge(c, -g + linalg::dot(&grad, &w) - linalg::dot(&grad, lo)));
        let sol = lp::minimize(&cost, &rows)?;
        let upper = -sol.x[n];
        w = (0..n).map(|i| lo[i] + sol.x[i]).collect();
        let incumbent = best.as_ref().map(|b| b.1).unwrap_or(f64::NEG_INFINITY);
        if upper - incumbent <= 1e-11 {
            let (g2, _, _) = paths.worst(&w)?;
            if g2 > incumbent {
                best = Some((w.clone(), g2));
            }
            break;
        }
    }
    Ok(best.expect("at least one evaluation"))
}

pub fn maxdd_constrained(inputs: &PcInputs, dd_limit: f64) -> Result<PcProposal> {
    if dd_limit < 0.0 {
        return Err(SaaError::Domain("drawdown limit must be non-negative".into()));
    }
    let n = inputs.n();
    let bounds = &inputs.bounds;
    let lo = &bounds.lo;
    let paths = Paths { x: &inputs.scenarios };
    let cost: Vec<f64> = inputs.mu.iter().map(|m| -m).collect();
    let mut rows = simplex_rows(bounds, 0);
    let to_w = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| lo[i] + x[i]).collect() };

    let report = |w: Vec<f64>, why: String| {
        let mdd = risk::max_drawdown(&risk::wealth_path(&risk::portfolio_returns(&w, &inputs.scenarios)));
        PcProposal::build(
            MethodId::MaxDrawdown,
            inputs,
            w,
            why,
            BTreeMap::from([("max_drawdown".to_string(), mdd), ("dd_limit".to_string(), dd_limit)]),
        )
    };

    if dd_limit >= 1.0 {
        let sol = lp::minimize(&cost, &rows)?;
        return report(to_w(&sol.x), "Drawdown limit is slack; maximum expected return.".into());
    }
    let floor = (1.0 - dd_limit).ln();
    let mut w = to_w(&lp::minimize(&cost, &rows)?.x);
    let mut cuts = 0;
    loop {
        let (g, s, e) = paths.worst(&w)?;
        if g >= floor {
            return report(
                w,
                format!(
                    "Maximum expected return with historical drawdown within {:.1}%.",
                    dd_limit * 100.0
                ),
            );
        }
        if g >= floor - 1e-10 || cuts >= MAX_CUTS {
            break;
        }
        let grad = paths.gradient(&w, s, e);
        rows.push(Row::ge(
            grad.clone(),
            floor - g + linalg::dot(&grad, &w) - linalg::dot(&grad, lo),
        ));
        match lp::minimize(&cost, &rows) {
            Ok(sol) => w = to_w(&sol.x),
            // The cuts have excluded every portfolio: the limit is unattainable.
            Err(SaaError::Infeasible(_)) => break,
            Err(e) => return Err(e),
        }
        cuts += 1;
    }

    // Pull back toward the minimum-drawdown portfolio until feasible.
    let (w_f, g_f) = min_drawdown_point(&paths, bounds)?;
    if g_f < floor {
        let mdd = 1.0 - g_f.exp();
        return report(
            w_f,
            format!(
                "No portfolio meets the {:.1}% drawdown limit; minimum-drawdown portfolio ({:.2}%) returned.",
                dd_limit * 100.0,
                mdd * 100.0
            ),
        );
    }
    let mix = |t: f64| -> Vec<f64> { w.iter().zip(&w_f).map(|(a, b)| (1.0 - t) * a + t * b).collect() };
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if paths.worst(&mix(mid))?.0 >= floor {
            b = mid;
        } else {
            a = mid;
        }
    }
    report(
        mix(b),
        format!(
            "Maximum expected return with historical drawdown within {:.1}%.",
            dd_limit * 100.0
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    #[test]
    fn ru_cvar_matches_tail_mean() {
        let r: Vec<f64> = (0..20).map(|i| i as f64 / 100.0 - 0.1).collect();
        // α = 0.9 over 20 rows: mean of the two worst losses.
        assert!((ru_cvar(&r, 0.9) - 0.095).abs() < 1e-12);
    }

    #[test]
    fn cvar_single_row_picks_best_asset() {
        let sc = DMatrix::from_row_slice(1, 3, &[0.01, 0.03, -0.02]);
        let p = cvar_min(&inputs(&[0.05; 3], diag(&[0.1; 3]), sc)).unwrap();
        assert!((p.weights[1] - 1.0).abs() < 1e-12, "{:?}", p.weights);
    }

    #[test]
    fn cvar_dominance() {
        let sc = DMatrix::from_fn(24, 2, |t, i| {
            0.02 * (((t * 5) % 7) as f64 - 3.0) / 3.0 + 0.001 * i as f64
        });
        let p = cvar_min(&inputs(&[0.05; 2], diag(&[0.1; 2]), sc)).unwrap();
        assert!((p.weights[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slack_drawdown_picks_max_mu() {
        let sc = no_scenarios(3);
        let p = maxdd_constrained(&inputs(&[0.05, 0.09, 0.07], diag(&[0.1; 3]), sc), 1.0).unwrap();
        assert!((p.weights[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tight_drawdown_goes_to_cash() {
        // Asset 2 never loses; the others do.
        let sc = DMatrix::from_fn(36, 3, |t, i| match i {
            2 => 0.0,
            _ => 0.04 * (((t * 3 + i) % 5) as f64 - 2.0) / 2.0,
        });
        let p = maxdd_constrained(&inputs(&[0.09, 0.08, 0.02], diag(&[0.1, 0.1, 0.001]), sc), 0.0).unwrap();
        assert!((p.weights[2] - 1.0).abs() < 1e-6, "{:?}", p.weights);
        assert!(p.details["max_drawdown"] >= -1e-12);
    }
}
