//! Capital market assumptions: per-asset expected-return methods, the
//! confidence-weighted blend and the rule-based judge.

mod judge;
mod methods;

pub use judge::{base_weights, classify_dispersion, judge_select, DispersionClass, JudgeDecision, JudgeSettings};
pub use methods::{
    auto_blend, bl_equilibrium_method, cape_implied_method, cash_cma, fixed_income_cma, historical_erp_method,
    inverse_gordon_method, regime_adjusted_method, survey_method, MIN_HISTORY_MONTHS, MIN_REGIME_MONTHS,
};

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Execution;
use crate::json;
use crate::linalg;
use crate::market::{self, AlignedPanel, AssetCategory, FundamentalsSnapshot, PERIODS_PER_YEAR};
use crate::regime::Regime;
use crate::risk;

pub const CMA_SCHEMA: &str = "cma/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmaMethod {
    HistoricalErp,
    RegimeAdjusted,
    BlEquilibrium,
    InverseGordon,
    ImpliedErp,
    Survey,
    AutoBlend,
    /// Yield-based path for fixed income and cash; never judged.
    FixedIncome,
}

impl CmaMethod {
    pub const PRIMARY: [CmaMethod; 6] = [
        CmaMethod::HistoricalErp,
        CmaMethod::RegimeAdjusted,
        CmaMethod::BlEquilibrium,
        CmaMethod::InverseGordon,
        CmaMethod::ImpliedErp,
        CmaMethod::Survey,
    ];

    /// Methods 1–6, the ones that define the judge's admissible range.
    pub fn is_primary(self) -> bool {
        Self::PRIMARY.contains(&self)
    }

    pub fn key(self) -> &'static str {
        match self {
            CmaMethod::HistoricalErp => "historical-erp",
            CmaMethod::RegimeAdjusted => "regime-adjusted",
            CmaMethod::BlEquilibrium => "bl-equilibrium",
            CmaMethod::InverseGordon => "inverse-gordon",
            CmaMethod::ImpliedErp => "implied-erp",
            CmaMethod::Survey => "survey",
            CmaMethod::AutoBlend => "auto-blend",
            CmaMethod::FixedIncome => "fixed-income",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaCandidate {
    pub method: CmaMethod,
    pub estimate: f64,
    pub confidence: f64,
    pub components: BTreeMap<String, f64>,
    pub rationale: String,
}

/// Sign flags: +1 supportive, −1 adverse, 0 neutral or unavailable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalBundle {
    /// Sign of the trailing 12-month compounded return.
    pub momentum: i8,
    /// Sign of the price index relative to its 10-month moving average.
    pub trend: i8,
    /// Sign of (anchor − CAPE): cheap is positive.
    pub valuation: i8,
}

impl SignalBundle {
    pub fn net(&self) -> i32 {
        self.momentum as i32 + self.trend as i32 + self.valuation as i32
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

pub fn compute_signals(series: &[f64], cape: Option<f64>, anchor: Option<f64>) -> SignalBundle {
    let momentum = if series.len() >= 12 {
        sign(series[series.len() - 12..].iter().map(|r| 1.0 + r).product::<f64>() - 1.0)
    } else {
        0
    };
    let trend = if series.len() >= 10 {
        let mut level = 1.0;
        let path: Vec<f64> = series
            .iter()
            .map(|r| {
                level *= 1.0 + r;
                level
            })
            .collect();
        let ma = linalg::mean(&path[path.len() - 10..]);
        sign(path[path.len() - 1] - ma)
    } else {
        0
    };
    let valuation = match (cape, anchor) {
        (Some(c), Some(a)) => sign(a - c),
        _ => 0,
    };
    SignalBundle {
        momentum,
        trend,
        valuation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalCma {
    pub asset: String,
    pub expected_return: f64,
    pub volatility: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalStats {
    pub observations: usize,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub mean: f64,
    pub volatility: f64,
    pub max_drawdown: f64,
}

/// Everything produced for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetCma {
    pub asset: String,
    pub category: AssetCategory,
    pub candidates: Vec<CmaCandidate>,
    pub judge: Option<JudgeDecision>,
    pub signals: SignalBundle,
    pub stats: HistoricalStats,
    pub final_cma: FinalCma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaSet {
    pub regime: Regime,
    pub risk_free_rate: f64,
    pub assets: Vec<AssetCma>,
}

impl CmaSet {
    pub fn mu(&self) -> Vec<f64> {
        self.assets.iter().map(|a| a.final_cma.expected_return).collect()
    }

    pub fn get(&self, slug: &str) -> Option<&AssetCma> {
        self.assets.iter().find(|a| a.asset == slug)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfidences {
    pub historical_erp: f64,
    pub regime_adjusted: f64,
    pub bl_equilibrium: f64,
    pub inverse_gordon: f64,
    pub implied_erp: f64,
}

impl Default for MethodConfidences {
    fn default() -> Self {
        MethodConfidences {
            historical_erp: 0.5,
            regime_adjusted: 0.5,
            bl_equilibrium: 0.6,
            inverse_gordon: 0.7,
            implied_erp: 0.6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetCmaSettings {
    pub survey: Option<f64>,
    pub survey_confidence: Option<f64>,
    pub credit_loss: Option<f64>,
    pub cape_anchor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaSettings {
    pub risk_aversion: f64,
    pub expected_inflation: f64,
    pub horizon_years: f64,
    pub confidences: MethodConfidences,
    pub judge: JudgeSettings,
    pub assets: BTreeMap<String, AssetCmaSettings>,
}

impl Default for CmaSettings {
    fn default() -> Self {
        CmaSettings {
            risk_aversion: 2.5,
            expected_inflation: 0.0,
            horizon_years: 3.0,
            confidences: MethodConfidences::default(),
            judge: JudgeSettings::default(),
            assets: BTreeMap::new(),
        }
    }
}

/// Shared, read-only inputs for the per-asset CMA fan-out.
pub struct CmaContext<'a> {
    pub panel: &'a AlignedPanel,
    pub sigma: &'a DMatrix<f64>,
    pub cap_weights: &'a [f64],
    pub risk_free_rate: f64,
    pub regime: Regime,
    /// Regime label per panel row (None where no indicator history exists).
    pub labels: &'a [Option<Regime>],
    pub as_of: Option<NaiveDate>,
    pub settings: &'a CmaSettings,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    })
}

impl CmaContext<'_> {
    fn cape_anchor(&self, slug: &str) -> Option<f64> {
        let configured = self.settings.assets.get(slug).and_then(|a| a.cape_anchor);
        configured.or_else(|| {
            let rows = self.panel.fundamentals.get(slug)?;
            median(
                rows.iter()
                    .filter(|r| match (self.as_of, r.as_of) {
                        (Some(limit), Some(d)) => d <= limit,
                        _ => true,
                    })
                    .filter_map(|r| r.cape)
                    .collect(),
            )
        })
    }

    fn rf_history(&self) -> Option<Vec<f64>> {
        self.panel.universe.cash_index().map(|k| self.panel.column(k))
    }

    fn run_asset(&self, index: usize, bl: &[CmaCandidate]) -> Result<AssetCma> {
        let asset = &self.panel.universe.assets()[index];
        let slug = asset.slug.as_str();
        let series = self.panel.column(index);
        let rf = self.risk_free_rate;
        let rf_hist = self.rf_history();
        let conf = &self.settings.confidences;
        let asset_cfg = self.settings.assets.get(slug).cloned().unwrap_or_default();
        let empty = FundamentalsSnapshot::default();
        let fund = self.panel.latest_fundamentals(slug, self.as_of).unwrap_or(&empty);
        let anchor = self.cape_anchor(slug);

        let moments = market::sample_moments(&series)?;
        let wealth = risk::wealth_path(&series);
        let stats = HistoricalStats {
            observations: series.len(),
            start: self.panel.dates.first().copied(),
            end: self.panel.dates.last().copied(),
            mean: moments.mean,
            volatility: moments.vol,
            max_drawdown: risk::max_drawdown(&wealth),
        };
        let signals = compute_signals(&series, fund.cape, anchor);

        let mut candidates = Vec::new();
        let judge;
        let fixed_income = match asset.category {
            AssetCategory::Cash => Some(cash_cma(rf)),
            AssetCategory::FixedIncome => fixed_income_cma(fund, asset_cfg.credit_loss.unwrap_or(0.0)),
            _ => None,
        };
        if let Some(c) = fixed_income {
            candidates.push(c);
            judge = None;
        } else {
            let rf_h = rf_hist.as_deref();
            candidates.extend(historical_erp_method(&series, rf_h, rf, conf.historical_erp));
            candidates.extend(regime_adjusted_method(
                &series,
                rf_h,
                rf,
                self.labels,
                self.regime,
                conf.regime_adjusted,
            ));
            candidates.push(bl[index].clone());
            candidates.extend(inverse_gordon_method(
                fund,
                anchor,
                self.settings.horizon_years,
                conf.inverse_gordon,
            ));
            candidates.extend(cape_implied_method(
                fund,
                self.settings.expected_inflation,
                conf.implied_erp,
            ));
            candidates.extend(survey_method(
                asset_cfg.survey,
                asset_cfg.survey_confidence.unwrap_or(0.5),
            ));
            let blend = auto_blend(&candidates).expect("equilibrium candidate always present");
            candidates.push(blend);
            judge = Some(judge_select(
                &candidates,
                self.regime,
                fund.trailing_pe,
                &signals,
                &self.settings.judge,
            )?);
        }

        let (expected_return, confidence) = match &judge {
            Some(j) => (j.final_estimate, j.confidence),
            None => (candidates[0].estimate, candidates[0].confidence),
        };
        Ok(AssetCma {
            asset: slug.to_string(),
            category: asset.category,
            candidates,
            judge,
            signals,
            stats,
            final_cma: FinalCma {
                asset: slug.to_string(),
                expected_return,
                // Cash can have (near) zero sample vol; keep the triple valid.
                volatility: moments.vol.max(1e-6),
                confidence,
            },
        })
    }
}

/// Runs every asset's CMA pipeline, merged in universe order.
pub fn build_cma_set(ctx: &CmaContext<'_>, exec: Execution) -> Result<CmaSet> {
    let bl = bl_equilibrium_method(
        ctx.sigma,
        ctx.cap_weights,
        ctx.risk_free_rate,
        ctx.settings.risk_aversion,
        ctx.settings.confidences.bl_equilibrium,
    )?;
    let n = ctx.panel.n_assets();
    let results = exec.map_range(n, |i| ctx.run_asset(i, &bl));
    let assets = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CmaSet {
        regime: ctx.regime,
        risk_free_rate: ctx.risk_free_rate,
        assets,
    })
}

/// Aligns dated regime labels to panel rows (month-end dates matched by year and month).
pub fn align_labels(dates: &[NaiveDate], labels: &[(NaiveDate, Regime)]) -> Vec<Option<Regime>> {
    use chrono::Datelike;
    let by_month: BTreeMap<(i32, u32), Regime> = labels.iter().map(|(d, r)| ((d.year(), d.month()), *r)).collect();
    dates
        .iter()
        .map(|d| by_month.get(&(d.year(), d.month())).copied())
        .collect()
}

#[derive(Serialize)]
struct MethodsArtifact<'a> {
    schema_version: &'static str,
    asset: &'a str,
    candidates: &'a [CmaCandidate],
}

#[derive(Serialize)]
struct CmaArtifact<'a> {
    schema_version: &'static str,
    asset: &'a str,
    category: AssetCategory,
    final_cma: &'a FinalCma,
    judge: &'a Option<JudgeDecision>,
}

#[derive(Serialize)]
struct SignalsArtifact<'a> {
    schema_version: &'static str,
    asset: &'a str,
    signals: &'a SignalBundle,
}

#[derive(Serialize)]
struct StatsArtifact<'a> {
    schema_version: &'static str,
    asset: &'a str,
    stats: &'a HistoricalStats,
    annualization_factor: f64,
}

/// Writes the per-asset artifacts plus `cma-set.json`; returns relative path → digest.
pub fn emit_cma_artifacts(set: &CmaSet, dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut digests = BTreeMap::new();
    for a in &set.assets {
        let sub = dir.join(&a.asset);
        let files: [(&str, String); 4] = [
            (
                "cma_methods.json",
                json::to_canonical_string(&MethodsArtifact {
                    schema_version: CMA_SCHEMA,
                    asset: &a.asset,
                    candidates: &a.candidates,
                })?,
            ),
            (
                "cma.json",
                json::to_canonical_string(&CmaArtifact {
                    schema_version: CMA_SCHEMA,
                    asset: &a.asset,
                    category: a.category,
                    final_cma: &a.final_cma,
                    judge: &a.judge,
                })?,
            ),
            (
                "signals.json",
                json::to_canonical_string(&SignalsArtifact {
                    schema_version: CMA_SCHEMA,
                    asset: &a.asset,
                    signals: &a.signals,
                })?,
            ),
            (
                "historical_stats.json",
                json::to_canonical_string(&StatsArtifact {
                    schema_version: CMA_SCHEMA,
                    asset: &a.asset,
                    stats: &a.stats,
                    annualization_factor: PERIODS_PER_YEAR,
                })?,
            ),
        ];
        for (name, body) in files {
            let digest = json::write_bytes(&sub.join(name), body.as_bytes())?;
            digests.insert(format!("{}/{name}", a.asset), digest);
        }
    }
    digests.insert(
        "cma-set.json".to_string(),
        json::write_artifact(&dir.join("cma-set.json"), set)?,
    );
    Ok(digests)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signals_follow_signs() {
        let up = vec![0.01; 24];
        let s = compute_signals(&up, Some(30.0), Some(20.0));
        assert_eq!(
            s,
            SignalBundle {
                momentum: 1,
                trend: 1,
                valuation: -1
            }
        );
        assert_eq!(s.net(), 1);
        let flat = compute_signals(&[0.0; 5], None, None);
        assert_eq!(flat, SignalBundle::default());
    }

    #[test]
    fn method_keys_match_serde_names() {
        for m in CmaMethod::PRIMARY {
            assert_eq!(serde_json::to_value(m).unwrap(), m.key());
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
