use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::methods::pct;
use super::{CmaCandidate, CmaMethod, SignalBundle};
use crate::error::{Result, SaaError};
use crate::regime::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispersionClass {
    Tight,
    Moderate,
    Wide,
}

/// Spread in decimal/yr; "<3pp" is Tight and ">6pp" is Wide.
pub fn classify_dispersion(spread: f64) -> DispersionClass {
    // Rounding to 1e-10 pp keeps 0.07 − 0.04 on the 3.0pp boundary.
    let pp = (spread * 100.0 * 1e10).round() / 1e10;
    if pp < 3.0 {
        DispersionClass::Tight
    } else if pp > 6.0 {
        DispersionClass::Wide
    } else {
        DispersionClass::Moderate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeDecision {
    pub dispersion_class: DispersionClass,
    pub spread: f64,
    pub selected_weights: BTreeMap<CmaMethod, f64>,
    /// Weighted estimate before the range clamp.
    pub unclamped_estimate: f64,
    pub final_estimate: f64,
    pub confidence: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeSettings {
    pub pe_rich: f64,
    pub pe_cheap: f64,
    pub tilt: f64,
    pub signal_adjustment: f64,
}

impl Default for JudgeSettings {
    fn default() -> Self {
        JudgeSettings {
            pe_rich: 30.0,
            pe_cheap: 12.0,
            tilt: 0.20,
            signal_adjustment: 0.10,
        }
    }
}

/// Regime base weights over the methods present in `available`.
pub fn base_weights(regime: Regime, available: &[CmaMethod]) -> BTreeMap<CmaMethod, f64> {
    use CmaMethod::*;
    let has = |m: &CmaMethod| available.contains(m);
    let mut w: BTreeMap<CmaMethod, f64> = BTreeMap::new();
    match regime {
        Regime::LateCycle => {
            for (m, v) in [(InverseGordon, 0.30), (ImpliedErp, 0.30), (RegimeAdjusted, 0.25)] {
                if has(&m) {
                    w.insert(m, v);
                }
            }
            let others: Vec<CmaMethod> = [HistoricalErp, BlEquilibrium, Survey]
                .into_iter()
                .filter(|m| has(m))
                .collect();
            for m in &others {
                w.insert(*m, 0.15 / others.len() as f64);
            }
        }
        Regime::Expansion => {
            w.insert(AutoBlend, 1.0);
        }
        Regime::Recession => {
            for m in [RegimeAdjusted, BlEquilibrium] {
                if has(&m) {
                    w.insert(m, 0.5);
                }
            }
        }
        Regime::Recovery => {
            w.insert(AutoBlend, 0.6);
            if has(&RegimeAdjusted) {
                w.insert(RegimeAdjusted, 0.4);
            }
        }
    }
    let total: f64 = w.values().sum();
    if total <= 0.0 {
        return BTreeMap::from([(AutoBlend, 1.0)]);
    }
    w.values_mut().for_each(|v| *v /= total);
    w
}

/// Adds `tilt` of weight onto `targets` pro-rata to their current weights
/// (equally when all are zero), then renormalizes.
fn apply_tilt(w: &mut BTreeMap<CmaMethod, f64>, targets: &[CmaMethod], available: &[CmaMethod], tilt: f64) {
    let present: Vec<CmaMethod> = targets.iter().copied().filter(|m| available.contains(m)).collect();
    if present.is_empty() {
        return;
    }
    let current: f64 = present.iter().map(|m| w.get(m).copied().unwrap_or(0.0)).sum();
    for m in &present {
        let share = if current > 0.0 {
            w.get(m).copied().unwrap_or(0.0) / current
        } else {
            1.0 / present.len() as f64
        };
        *w.entry(*m).or_insert(0.0) += tilt * share;
    }
    let total: f64 = w.values().sum();
    w.values_mut().for_each(|v| *v /= total);
}

/// Rule-based selection over methods 1–6 plus the auto-blend.
pub fn judge_select(
    candidates: &[CmaCandidate],
    regime: Regime,
    trailing_pe: Option<f64>,
    signals: &SignalBundle,
    settings: &JudgeSettings,
) -> Result<JudgeDecision> {
    let blend = candidates
        .iter()
        .find(|c| c.method == CmaMethod::AutoBlend)
        .ok_or_else(|| SaaError::Value("judge requires an auto-blend candidate".into()))?;
    let methods: Vec<&CmaCandidate> = candidates.iter().filter(|c| c.method.is_primary()).collect();
    let lo = methods.iter().map(|c| c.estimate).fold(f64::INFINITY, f64::min);
    let hi = methods.iter().map(|c| c.estimate).fold(f64::NEG_INFINITY, f64::max);
    let spread = if methods.is_empty() { 0.0 } else { hi - lo };

    if methods.len() < 3 {
        let final_estimate = if methods.is_empty() {
            blend.estimate
        } else {
            blend.estimate.clamp(lo, hi)
        };
        return Ok(JudgeDecision {
            dispersion_class: classify_dispersion(spread),
            spread,
            selected_weights: BTreeMap::from([(CmaMethod::AutoBlend, 1.0)]),
            unclamped_estimate: blend.estimate,
            final_estimate,
            confidence: blend.confidence,
            rationale: format!(
                "Only {} primary methods available; auto-blend passed through.",
                methods.len()
            ),
        });
    }

    let class = classify_dispersion(spread);
    let available: Vec<CmaMethod> = methods.iter().map(|c| c.method).collect();
    let mut notes = vec![format!("Method spread {}pp is {:?}.", pct(spread), class)];
    let weights = if class == DispersionClass::Tight {
        notes.push("Tight agreement: auto-blend accepted.".into());
        BTreeMap::from([(CmaMethod::AutoBlend, 1.0)])
    } else {
        let mut w = base_weights(regime, &available);
        notes.push(format!("Base weights from the {regime} table."));
        match trailing_pe {
            Some(pe) if pe > settings.pe_rich => {
                apply_tilt(
                    &mut w,
                    &[CmaMethod::InverseGordon, CmaMethod::ImpliedErp],
                    &available,
                    settings.tilt,
                );
                notes.push(format!(
                    "Trailing P/E {pe:.1} above {}: valuation methods tilted up.",
                    settings.pe_rich
                ));
            }
            Some(pe) if pe < settings.pe_cheap => {
                apply_tilt(
                    &mut w,
                    &[CmaMethod::HistoricalErp, CmaMethod::BlEquilibrium],
                    &available,
                    settings.tilt,
                );
                notes.push(format!(
                    "Trailing P/E {pe:.1} below {}: historical and equilibrium tilted up.",
                    settings.pe_cheap
                ));
            }
            _ => {}
        }
        w
    };

    let lookup = |m: &CmaMethod| -> &CmaCandidate {
        if *m == CmaMethod::AutoBlend {
            blend
        } else {
            methods
                .iter()
                .find(|c| c.method == *m)
                .expect("weights only cover available methods")
        }
    };
    let unclamped: f64 = weights.iter().map(|(m, w)| w * lookup(m).estimate).sum();
    let final_estimate = unclamped.clamp(lo, hi);
    if final_estimate != unclamped {
        notes.push("Weighted estimate clamped to the method range.".into());
    }
    let mut confidence: f64 = weights.iter().map(|(m, w)| w * lookup(m).confidence).sum();

    let direction = final_estimate - blend.estimate;
    let net = signals.net();
    if direction.abs() > 1e-12 && net != 0 {
        if (direction > 0.0) == (net > 0) {
            confidence *= 1.0 + settings.signal_adjustment;
            notes.push("Signals confirm the adjustment.".into());
        } else {
            confidence *= 1.0 - settings.signal_adjustment;
            notes.push("Signals argue against the adjustment; confidence hedged.".into());
        }
    }

    Ok(JudgeDecision {
        dispersion_class: class,
        spread,
        selected_weights: weights,
        unclamped_estimate: unclamped,
        final_estimate,
        confidence: confidence.clamp(0.0, 1.0),
        rationale: notes.join(" "),
    })
}
