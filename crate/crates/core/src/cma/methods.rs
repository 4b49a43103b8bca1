use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{CmaCandidate, CmaMethod};
use crate::error::{Result, SaaError};
use crate::linalg;
use crate::market::{FundamentalsSnapshot, PERIODS_PER_YEAR};
use crate::regime::Regime;

/// Minimum history for the historical premium method.
pub const MIN_HISTORY_MONTHS: usize = 120;
/// Minimum regime-matched months before the conditional method falls back.
pub const MIN_REGIME_MONTHS: usize = 24;

fn candidate(method: CmaMethod, confidence: f64, components: Vec<(&str, f64)>, rationale: String) -> CmaCandidate {
    let estimate = components.iter().map(|(_, v)| v).sum();
    CmaCandidate {
        method,
        estimate,
        confidence: confidence.clamp(0.0, 1.0),
        components: components.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        rationale,
    }
}

/// Monthly excess returns; `rf_hist` of `None` uses the current rate flat.
fn excess(series: &[f64], rf_hist: Option<&[f64]>, rf: f64) -> Vec<f64> {
    match rf_hist {
        Some(h) => series.iter().zip(h).map(|(r, f)| r - f).collect(),
        None => series.iter().map(|r| r - rf / PERIODS_PER_YEAR).collect(),
    }
}

pub fn historical_erp_method(
    series: &[f64],
    rf_hist: Option<&[f64]>,
    rf: f64,
    confidence: f64,
) -> Option<CmaCandidate> {
    if series.len() < MIN_HISTORY_MONTHS {
        return None;
    }
    let erp = PERIODS_PER_YEAR * linalg::mean(&excess(series, rf_hist, rf));
    Some(candidate(
        CmaMethod::HistoricalErp,
        confidence,
        vec![("erp", erp), ("rf", rf)],
        format!(
            "Full-sample premium of {}% over {} months added to the current risk-free rate.",
            pct(erp),
            series.len()
        ),
    ))
}

/// Conditional premium over months labeled with the current regime.
pub fn regime_adjusted_method(
    series: &[f64],
    rf_hist: Option<&[f64]>,
    rf: f64,
    labels: &[Option<Regime>],
    current: Regime,
    confidence: f64,
) -> Option<CmaCandidate> {
    let ex = excess(series, rf_hist, rf);
    let matched: Vec<f64> = ex
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Some(current))
        .map(|(x, _)| *x)
        .collect();
    if matched.len() < MIN_REGIME_MONTHS {
        let hist = historical_erp_method(series, rf_hist, rf, confidence)?;
        let erp = hist.components["erp"];
        return Some(candidate(
            CmaMethod::RegimeAdjusted,
            confidence * 0.5,
            vec![("regime_erp", erp), ("rf", rf)],
            format!(
                "Only {} {current} months in history; fell back to the unconditional premium at half confidence.",
                matched.len()
            ),
        ));
    }
    let erp = PERIODS_PER_YEAR * linalg::mean(&matched);
    Some(candidate(
        CmaMethod::RegimeAdjusted,
        confidence,
        vec![("regime_erp", erp), ("rf", rf)],
        format!(
            "Premium of {}% over the {} historical {current} months.",
            pct(erp),
            matched.len()
        ),
    ))
}

/// Reverse-optimized equilibrium returns π = δΣw for every asset.
pub fn bl_equilibrium_method(
    sigma: &DMatrix<f64>,
    cap_weights: &[f64],
    rf: f64,
    delta: f64,
    confidence: f64,
) -> Result<Vec<CmaCandidate>> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(SaaError::Domain(format!("risk aversion {delta} must be positive")));
    }
    if !linalg::is_psd(sigma) {
        return Err(SaaError::Domain("covariance is not positive semidefinite".into()));
    }
    let total: f64 = cap_weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SaaError::Domain(format!("cap weights sum to {total}, not 1")));
    }
    let pi = linalg::mat_vec(sigma, cap_weights);
    Ok(pi
        .into_iter()
        .map(|p| {
            let premium = delta * p;
            candidate(
                CmaMethod::BlEquilibrium,
                confidence,
                vec![("implied_premium", premium), ("rf", rf)],
                format!(
                    "Equilibrium premium {}% implied by market-cap weights at risk aversion {delta}.",
                    pct(premium)
                ),
            )
        })
        .collect())
}

/// Carry plus CAPE reversion toward `anchor` amortized over `horizon_years`.
pub fn inverse_gordon_method(
    fund: &FundamentalsSnapshot,
    anchor: Option<f64>,
    horizon_years: f64,
    confidence: f64,
) -> Option<CmaCandidate> {
    let dy = fund.dividend_yield?;
    let bb = fund.buyback_yield?;
    let g = fund.earnings_growth?;
    let cape = fund.cape.filter(|c| *c > 0.0)?;
    let anchor = anchor.filter(|a| *a > 0.0)?;
    let valuation = (anchor / cape).powf(1.0 / horizon_years) - 1.0;
    Some(candidate(
        CmaMethod::InverseGordon,
        confidence,
        vec![
            ("dividend_yield", dy),
            ("buyback_yield", bb),
            ("earnings_growth", g),
            ("valuation_change", valuation),
        ],
        format!(
            "Carry {}% plus CAPE reversion from {cape:.1} to {anchor:.1} over {horizon_years} years ({}%/yr).",
            pct(dy + bb + g),
            pct(valuation)
        ),
    ))
}

pub fn cape_implied_method(
    fund: &FundamentalsSnapshot,
    expected_inflation: f64,
    confidence: f64,
) -> Option<CmaCandidate> {
    let cape = fund.cape.filter(|c| *c > 0.0)?;
    Some(candidate(
        CmaMethod::ImpliedErp,
        confidence,
        vec![("real_ey", 1.0 / cape), ("inflation", expected_inflation)],
        format!(
            "Cyclically adjusted earnings yield of {}% at CAPE {cape:.1}.",
            pct(1.0 / cape)
        ),
    ))
}

pub fn survey_method(value: Option<f64>, confidence: f64) -> Option<CmaCandidate> {
    let v = value.filter(|v| v.is_finite())?;
    Some(CmaCandidate {
        method: CmaMethod::Survey,
        estimate: v,
        confidence: confidence.clamp(0.0, 1.0),
        components: BTreeMap::new(),
        rationale: format!("Consensus survey forecast of {}%.", pct(v)),
    })
}

/// Yield to maturity net of expected credit loss.
pub fn fixed_income_cma(fund: &FundamentalsSnapshot, credit_loss: f64) -> Option<CmaCandidate> {
    let ytm = fund.yield_to_maturity?;
    Some(candidate(
        CmaMethod::FixedIncome,
        0.8,
        vec![("yield_to_maturity", ytm), ("credit_loss", -credit_loss)],
        format!("Yield {}% less expected credit loss {}%.", pct(ytm), pct(credit_loss)),
    ))
}

pub fn cash_cma(rf: f64) -> CmaCandidate {
    candidate(
        CmaMethod::FixedIncome,
        0.8,
        vec![("rf", rf)],
        format!("Cash earns the risk-free rate of {}%.", pct(rf)),
    )
}

/// Confidence-weighted average of the supplied candidates.
pub fn auto_blend(candidates: &[CmaCandidate]) -> Option<CmaCandidate> {
    let inputs: Vec<&CmaCandidate> = candidates.iter().filter(|c| c.method != CmaMethod::AutoBlend).collect();
    if inputs.is_empty() {
        return None;
    }
    let total_conf: f64 = inputs.iter().map(|c| c.confidence).sum();
    let mean_conf = total_conf / inputs.len() as f64;
    let (weights, confidence, note): (Vec<f64>, f64, &str) = if total_conf > 0.0 {
        (
            inputs.iter().map(|c| c.confidence / total_conf).collect(),
            mean_conf,
            "confidence-weighted",
        )
    } else {
        (
            vec![1.0 / inputs.len() as f64; inputs.len()],
            0.0,
            "unweighted (all confidences zero)",
        )
    };
    let mut components = BTreeMap::new();
    for (c, w) in inputs.iter().zip(&weights) {
        *components.entry(c.method.key().to_string()).or_insert(0.0) += w * c.estimate;
    }
    let estimate = components.values().sum();
    Some(CmaCandidate {
        method: CmaMethod::AutoBlend,
        estimate,
        confidence,
        components,
        rationale: format!("Auto-blend of {} methods, {note}.", inputs.len()),
    })
}

pub(crate) fn pct(x: f64) -> String {
    crate::json::fixed_string(100.0 * x, 2)
}
