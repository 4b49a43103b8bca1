//! Portfolio risk metrics, backtests and policy compliance.

mod ips;

pub use ips::{ips_compliance, Benchmark, IpsCheck, IpsFlag, IpsPolicy};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaaError};
use crate::linalg;
use crate::market::PERIODS_PER_YEAR;

pub fn ex_ante_vol(w: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    if w.len() != sigma.nrows() {
        return Err(SaaError::Domain(format!(
            "{} weights for a {}x{} covariance",
            w.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !linalg::is_psd(sigma) {
        return Err(SaaError::Domain("covariance is not positive semidefinite".into()));
    }
    Ok(linalg::quad_form(sigma, w).max(0.0).sqrt())
}

/// Cumulative wealth starting at 1.0, one entry per period plus the start.
pub fn wealth_path(returns: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(returns.len() + 1);
    let mut level = 1.0;
    w.push(level);
    for r in returns {
        level *= 1.0 + r;
        w.push(level);
    }
    w
}

/// Worst peak-to-trough decline, reported as a non-positive number.
pub fn max_drawdown(path: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &x in path {
        peak = peak.max(x);
        if peak > 0.0 {
            worst = worst.min(x / peak - 1.0);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rebalancing {
    #[default]
    Monthly,
    Quarterly,
    BuyAndHold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestStats {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub returns: Vec<f64>,
    pub path: Vec<f64>,
    pub stats: BacktestStats,
}

/// Simulates holding `w` over the scenario rows; `rf` is the annual rate
/// subtracted in the Sharpe ratio.
pub fn backtest(w: &[f64], scenarios: &DMatrix<f64>, rebalancing: Rebalancing, rf: f64) -> Result<Backtest> {
    let t = scenarios.nrows();
    if t == 0 {
        return Err(SaaError::InsufficientData("backtest over an empty panel".into()));
    }
    if w.len() != scenarios.ncols() {
        return Err(SaaError::Domain("weights do not match panel width".into()));
    }
    let mut holding = w.to_vec();
    let mut returns = Vec::with_capacity(t);
    for row in 0..t {
        let rebalance = match rebalancing {
            Rebalancing::Monthly => true,
            Rebalancing::Quarterly => row % 3 == 0,
            Rebalancing::BuyAndHold => row == 0,
        };
        if rebalance {
            holding.copy_from_slice(w);
        }
        let gross: Vec<f64> = holding
            .iter()
            .enumerate()
            .map(|(j, h)| h * (1.0 + scenarios[(row, j)]))
            .collect();
        let before: f64 = holding.iter().sum();
        let after: f64 = gross.iter().sum();
        let r = if before > 0.0 { after / before - 1.0 } else { 0.0 };
        returns.push(r);
        if after > 0.0 {
            holding = gross.iter().map(|g| g / after).collect();
        }
    }
    let path = wealth_path(&returns);
    let ann_return = PERIODS_PER_YEAR * linalg::mean(&returns);
    let ann_vol = PERIODS_PER_YEAR.sqrt() * linalg::sample_std(&returns);
    let sharpe = if ann_vol > 0.0 {
        (ann_return - rf) / ann_vol
    } else {
        0.0
    };
    let stats = BacktestStats {
        ann_return,
        ann_vol,
        sharpe,
        max_drawdown: max_drawdown(&path),
    };
    Ok(Backtest { returns, path, stats })
}

/// Portfolio returns per scenario row.
pub fn portfolio_returns(w: &[f64], scenarios: &DMatrix<f64>) -> Vec<f64> {
    (0..scenarios.nrows())
        .map(|t| (0..w.len()).map(|j| w[j] * scenarios[(t, j)]).sum())
        .collect()
}

/// Historical VaR and CVaR of losses (positive numbers) at confidence `alpha`.
///
/// VaR is the lower empirical quantile: sorted losses at index ⌊α(n−1)⌋.
/// CVaR averages every sorted loss from that index upward.
pub fn var_cvar_of_returns(returns: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if returns.is_empty() {
        return Err(SaaError::InsufficientData("no scenarios".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(SaaError::Domain(format!("alpha {alpha} outside [0, 1)")));
    }
    let mut losses: Vec<f64> = returns.iter().map(|r| -r).collect();
    losses.sort_by(f64::total_cmp);
    let k = (alpha * (losses.len() - 1) as f64).floor() as usize;
    let var = losses[k];
    let cvar = linalg::mean(&losses[k..]);
    Ok((var, cvar))
}

pub fn historical_var_cvar(w: &[f64], scenarios: &DMatrix<f64>, alpha: f64) -> Result<(f64, f64)> {
    var_cvar_of_returns(&portfolio_returns(w, scenarios), alpha)
}

pub fn effective_n(w: &[f64]) -> f64 {
    linalg::entropy(w).exp()
}

pub fn herfindahl(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum()
}

pub fn top_weight(w: &[f64]) -> f64 {
    w.iter().copied().fold(0.0, f64::max)
}

/// Fractional risk contributions wᵢ(Σw)ᵢ / wᵀΣw. A zero-variance portfolio
/// reports its weights instead.
pub fn risk_contributions(w: &[f64], sigma: &DMatrix<f64>) -> Vec<f64> {
    let sw = linalg::mat_vec(sigma, w);
    let var = linalg::dot(w, &sw);
    if var <= 0.0 {
        return w.to_vec();
    }
    w.iter().zip(&sw).map(|(a, b)| a * b / var).collect()
}

pub fn tracking_error(w: &[f64], b: &[f64], sigma: &DMatrix<f64>) -> f64 {
    linalg::quad_form(sigma, &linalg::sub(w, b)).max(0.0).sqrt()
}

/// Per-asset factor exposures used for the tilt metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorExposures {
    pub equity_beta: BTreeMap<String, f64>,
    pub duration: BTreeMap<String, f64>,
}

impl FactorExposures {
    fn exposure(map: &BTreeMap<String, f64>, slugs: &[String], w: &[f64]) -> f64 {
        slugs
            .iter()
            .zip(w)
            .map(|(s, x)| x * map.get(s).copied().unwrap_or(0.0))
            .sum()
    }

    pub fn equity_beta_of(&self, slugs: &[String], w: &[f64]) -> f64 {
        Self::exposure(&self.equity_beta, slugs, w)
    }

    pub fn duration_of(&self, slugs: &[String], w: &[f64]) -> f64 {
        Self::exposure(&self.duration, slugs, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub ex_ante_vol: Option<f64>,
    pub backtest: Option<BacktestStats>,
    pub backtest_vol: Option<f64>,
    pub var_95: Option<f64>,
    pub cvar_95: Option<f64>,
    pub max_drawdown: Option<f64>,
    pub effective_n: f64,
    pub herfindahl: f64,
    pub top_weight: f64,
    pub risk_contributions: BTreeMap<String, f64>,
    pub equity_beta_tilt: f64,
    pub duration_tilt: f64,
    pub tracking_error: Option<f64>,
    pub ips_flags: Vec<IpsFlag>,
    pub commentary: String,
    pub unavailable: Vec<String>,
}

impl RiskReport {
    pub fn ips_pass_fraction(&self) -> f64 {
        if self.ips_flags.is_empty() {
            return 0.0;
        }
        self.ips_flags.iter().filter(|f| f.pass).count() as f64 / self.ips_flags.len() as f64
    }

    pub fn is_compliant(&self) -> bool {
        !self.ips_flags.is_empty() && self.ips_flags.iter().all(|f| f.pass)
    }

    pub fn flag(&self, check: IpsCheck) -> Option<&IpsFlag> {
        self.ips_flags.iter().find(|f| f.check == check)
    }
}

/// Read-only context shared by every report.
pub struct RiskContext<'a> {
    pub slugs: &'a [String],
    pub sigma: &'a DMatrix<f64>,
    pub scenarios: &'a DMatrix<f64>,
    /// Annual rate used for backtest Sharpe ratios.
    pub backtest_rf: f64,
    pub rebalancing: Rebalancing,
    pub policy: &'a IpsPolicy,
    pub factors: &'a FactorExposures,
    pub alpha: f64,
}

pub fn cro_report(w: &[f64], ctx: &RiskContext<'_>) -> RiskReport {
    let mut unavailable = Vec::new();
    let vol = match ex_ante_vol(w, ctx.sigma) {
        Ok(v) => Some(v),
        Err(e) => {
            unavailable.push(format!("ex_ante_vol: {e}"));
            None
        }
    };
    let bt = match backtest(w, ctx.scenarios, ctx.rebalancing, ctx.backtest_rf) {
        Ok(b) => Some(b.stats),
        Err(e) => {
            unavailable.push(format!("backtest: {e}"));
            None
        }
    };
    let (var_95, cvar_95) = match historical_var_cvar(w, ctx.scenarios, ctx.alpha) {
        Ok((v, c)) => (Some(v), Some(c)),
        Err(e) => {
            unavailable.push(format!("var: {e}"));
            (None, None)
        }
    };
    let b = &ctx.policy.benchmark.weights;
    let te = if b.len() == w.len() {
        Some(tracking_error(w, b, ctx.sigma))
    } else {
        unavailable.push("tracking_error: benchmark width mismatch".into());
        None
    };
    let rc = risk_contributions(w, ctx.sigma);
    let risk_contributions = ctx.slugs.iter().cloned().zip(rc).collect();
    let equity_beta_tilt = ctx.factors.equity_beta_of(ctx.slugs, w) - ctx.factors.equity_beta_of(ctx.slugs, b);
    let duration_tilt = ctx.factors.duration_of(ctx.slugs, w) - ctx.factors.duration_of(ctx.slugs, b);
    let max_dd = bt.map(|s| s.max_drawdown);
    let ips_flags = ips_compliance(w, ctx.slugs, vol, te, max_dd, ctx.policy);
    let commentary = commentary(&ips_flags, effective_n(w), top_weight(w), &unavailable);
    RiskReport {
        ex_ante_vol: vol,
        backtest_vol: bt.map(|s| s.ann_vol),
        backtest: bt,
        var_95,
        cvar_95,
        max_drawdown: max_dd,
        effective_n: effective_n(w),
        herfindahl: herfindahl(w),
        top_weight: top_weight(w),
        risk_contributions,
        equity_beta_tilt,
        duration_tilt,
        tracking_error: te,
        ips_flags,
        commentary,
        unavailable,
    }
}

fn commentary(flags: &[IpsFlag], eff_n: f64, top: f64, unavailable: &[String]) -> String {
    let failed: Vec<String> = flags
        .iter()
        .filter(|f| !f.pass)
        .map(|f| f.check.label().to_string())
        .collect();
    let mut parts = Vec::new();
    if failed.is_empty() {
        parts.push("All IPS checks pass.".to_string());
    } else {
        parts.push(format!("IPS breaches: {}.", failed.join(", ")));
    }
    parts.push(format!(
        "Effective number of assets {}, largest weight {}%.",
        crate::json::fixed_string(eff_n, 1),
        crate::json::fixed_string(100.0 * top, 1)
    ));
    if top > 0.4 {
        parts.push("Concentration is high.".to_string());
    }
    if !unavailable.is_empty() {
        parts.push(format!("{} metric(s) unavailable.", unavailable.len()));
    }
    parts.join(" ")
}
