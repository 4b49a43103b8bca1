//! Forecast feedback: past CMA runs scored against realized returns, and the
//! rule-driven change log derived from that record.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::config::FeedbackThresholds;
use crate::cma::{CmaMethod, CmaSet, SignalBundle};
use crate::error::Result;
use crate::json;
use crate::linalg;
use crate::market::{ReturnSeries, PERIODS_PER_YEAR};
use crate::regime::Regime;

pub const FEEDBACK_SCHEMA: &str = "feedback/1";
pub const CHANGE_LOG_SCHEMA: &str = "change-log/1";

/// What a past run predicted for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastAsset {
    pub slug: String,
    pub predicted: f64,
    pub signals: SignalBundle,
    pub methods: BTreeMap<CmaMethod, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastRun {
    pub as_of: NaiveDate,
    pub regime: Regime,
    pub risk_free_rate: f64,
    pub assets: Vec<PastAsset>,
}

impl PastRun {
    pub fn from_cma_set(as_of: NaiveDate, set: &CmaSet) -> Self {
        PastRun {
            as_of,
            regime: set.regime,
            risk_free_rate: set.risk_free_rate,
            assets: set
                .assets
                .iter()
                .map(|a| PastAsset {
                    slug: a.asset.clone(),
                    predicted: a.final_cma.expected_return,
                    signals: a.signals,
                    methods: a.candidates.iter().map(|c| (c.method, c.estimate)).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFeedback {
    pub as_of: NaiveDate,
    pub regime: Regime,
    pub realized_regime: Option<Regime>,
    /// Months of realized data inside the window (at most the window).
    pub months: usize,
    pub rank_ic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub schema: String,
    pub window_months: usize,
    pub runs: Vec<RunFeedback>,
    pub regime_accuracy: Option<f64>,
    pub rank_ic: Option<f64>,
    pub signal_hit_rate: Option<f64>,
    /// Mean absolute error, decimal/yr, by method, asset and the run's regime.
    pub per_method_error: BTreeMap<CmaMethod, BTreeMap<String, BTreeMap<Regime, f64>>>,
    pub note: Option<String>,
}

impl FeedbackRecord {
    pub fn digest(&self) -> Result<String> {
        Ok(json::sha256_hex(json::to_canonical_string(self)?.as_bytes()))
    }
}

/// Annualized arithmetic return over the first `window` observations dated
/// after `as_of`; `None` when there are none.
fn realized_after(series: &ReturnSeries, as_of: NaiveDate, window: usize) -> Option<(f64, usize)> {
    let r: Vec<f64> = series
        .dates
        .iter()
        .zip(&series.returns)
        .filter(|(d, _)| **d > as_of)
        .take(window)
        .map(|(_, r)| *r)
        .collect();
    (!r.is_empty()).then(|| (PERIODS_PER_YEAR * linalg::mean(&r), r.len()))
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

/// Absolute-error sum and count by method, asset and regime.
type ErrorSums = BTreeMap<CmaMethod, BTreeMap<String, BTreeMap<Regime, (f64, usize)>>>;

/// Scores `runs` against `realized` over a rolling window. `labels` are
/// regime labels recomputed from realized indicators, matched by month.
pub fn compute_feedback(
    runs: &[PastRun],
    realized: &[ReturnSeries],
    labels: Option<&[(NaiveDate, Regime)]>,
    window: usize,
) -> FeedbackRecord {
    let by_month: Option<BTreeMap<(i32, u32), Regime>> =
        labels.map(|l| l.iter().map(|(d, r)| ((d.year(), d.month()), *r)).collect());
    let mut run_rows = Vec::new();
    let (mut regime_hits, mut regime_n) = (0usize, 0usize);
    let (mut signal_hits, mut signal_n) = (0usize, 0usize);
    let mut errors: ErrorSums = BTreeMap::new();
    let mut ics = Vec::new();

    for run in runs {
        let mut predicted = Vec::new();
        let mut actual = Vec::new();
        let mut months = 0;
        for a in &run.assets {
            let Some(series) = realized.iter().find(|s| s.asset == a.slug) else {
                continue;
            };
            let Some((r, m)) = realized_after(series, run.as_of, window) else {
                continue;
            };
            months = months.max(m);
            predicted.push(a.predicted);
            actual.push(r);
            let excess = sign(r - run.risk_free_rate);
            for s in [a.signals.momentum, a.signals.trend, a.signals.valuation] {
                if s != 0 {
                    signal_n += 1;
                    signal_hits += usize::from(s == excess);
                }
            }
            for (method, est) in &a.methods {
                let e = errors
                    .entry(*method)
                    .or_default()
                    .entry(a.slug.clone())
                    .or_default()
                    .entry(run.regime)
                    .or_insert((0.0, 0));
                e.0 += (est - r).abs();
                e.1 += 1;
            }
        }
        if predicted.is_empty() {
            continue;
        }
        let ic = if predicted.len() >= 2 {
            linalg::spearman(&predicted, &actual)
        } else {
            None
        };
        ics.extend(ic);
        let realized_regime = by_month
            .as_ref()
            .and_then(|m| m.get(&(run.as_of.year(), run.as_of.month())).copied());
        if let Some(r) = realized_regime {
            regime_n += 1;
            regime_hits += usize::from(r == run.regime);
        }
        run_rows.push(RunFeedback {
            as_of: run.as_of,
            regime: run.regime,
            realized_regime,
            months,
            rank_ic: ic,
        });
    }

    let ratio = |hits: usize, n: usize| (n > 0).then(|| hits as f64 / n as f64);
    let note = if run_rows.is_empty() {
        Some("No past run overlaps the realized data.".to_string())
    } else {
        None
    };
    FeedbackRecord {
        schema: FEEDBACK_SCHEMA.into(),
        window_months: window,
        runs: run_rows,
        regime_accuracy: ratio(regime_hits, regime_n),
        rank_ic: (!ics.is_empty()).then(|| linalg::mean(&ics)),
        signal_hit_rate: ratio(signal_hits, signal_n),
        per_method_error: errors
            .into_iter()
            .map(|(m, assets)| {
                let assets = assets
                    .into_iter()
                    .map(|(slug, regimes)| (slug, regimes.into_iter().map(|(r, (s, n))| (r, s / n as f64)).collect()))
                    .collect();
                (m, assets)
            })
            .collect(),
        note,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rule: String,
    /// The config entry a human would change.
    pub target: String,
    pub evidence: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeLog {
    pub schema: String,
    pub record_digest: String,
    pub recommendations: Vec<Recommendation>,
}

/// Recommendations only; nothing is modified.
pub fn emit_change_log(record: &FeedbackRecord, t: &FeedbackThresholds) -> Result<ChangeLog> {
    let mut recs = Vec::new();
    let fmt4 = |x: f64| json::fixed_string(x, 4);
    if let Some(a) = record.regime_accuracy.filter(|a| *a < t.min_regime_accuracy) {
        recs.push(Recommendation {
            rule: "regime-accuracy-below-threshold".into(),
            target: "macro.weights".into(),
            evidence: format!("regime_accuracy = {} < {}", fmt4(a), fmt4(t.min_regime_accuracy)),
            action: "Revisit the macro dimension weights and thresholds.".into(),
        });
    }
    if let Some(ic) = record.rank_ic.filter(|ic| *ic < t.min_rank_ic) {
        recs.push(Recommendation {
            rule: "rank-ic-below-threshold".into(),
            target: "cma.judge".into(),
            evidence: format!("rank_ic = {} < {}", fmt4(ic), fmt4(t.min_rank_ic)),
            action: "Reduce the judge's tilt toward the current method mix.".into(),
        });
    }
    if let Some(h) = record.signal_hit_rate.filter(|h| *h < t.min_hit_rate) {
        recs.push(Recommendation {
            rule: "signal-hit-rate-below-threshold".into(),
            target: "cma.judge.signal_adjustment".into(),
            evidence: format!("signal_hit_rate = {} < {}", fmt4(h), fmt4(t.min_hit_rate)),
            action: "Lower the signal confidence adjustment.".into(),
        });
    }
    for (method, assets) in &record.per_method_error {
        for (slug, regimes) in assets {
            for (regime, mae) in regimes {
                if *mae > t.max_method_mae {
                    recs.push(Recommendation {
                        rule: "method-mae-above-threshold".into(),
                        target: format!("cma.confidences.{}", method.key().replace('-', "_")),
                        evidence: format!(
                            "per_method_error[{}][{slug}][{regime}] = {} > {}",
                            method.key(),
                            fmt4(*mae),
                            fmt4(t.max_method_mae)
                        ),
                        action: format!("Reduce the default confidence of {} in {regime} regimes.", method.key()),
                    });
                }
            }
        }
    }
    Ok(ChangeLog {
        schema: CHANGE_LOG_SCHEMA.into(),
        record_digest: record.digest()?,
        recommendations: recs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, 28).unwrap()
    }

    fn series(slug: &str, monthly: f64) -> ReturnSeries {
        let dates: Vec<NaiveDate> = (0..48).map(|k| date(2020 + k / 12, 1 + (k % 12) as u32)).collect();
        ReturnSeries {
            asset: slug.into(),
            returns: vec![monthly; dates.len()],
            dates,
        }
    }

    fn run(offset: f64) -> PastRun {
        PastRun {
            as_of: date(2020, 6),
            regime: Regime::LateCycle,
            risk_free_rate: 0.0,
            assets: [("a", 0.01), ("b", -0.005), ("c", 0.004)]
                .iter()
                .map(|(s, m)| PastAsset {
                    slug: s.to_string(),
                    predicted: 12.0 * m,
                    signals: SignalBundle {
                        momentum: sign(*m),
                        trend: 0,
                        valuation: sign(*m),
                    },
                    methods: BTreeMap::from([(CmaMethod::HistoricalErp, 12.0 * m + offset)]),
                })
                .collect(),
        }
    }

    #[test]
    fn constant_offset_is_the_method_error() {
        let realized = [series("a", 0.01), series("b", -0.005), series("c", 0.004)];
        let rec = compute_feedback(&[run(0.02)], &realized, None, 36);
        for regimes in rec.per_method_error[&CmaMethod::HistoricalErp].values() {
            assert!((regimes[&Regime::LateCycle] - 0.02).abs() < 1e-12);
        }
        assert_eq!(rec.runs[0].months, 36);
        assert_eq!(rec.regime_accuracy, None);
    }

    #[test]
    fn no_overlap_gives_an_empty_record() {
        let mut r = run(0.0);
        r.as_of = date(2030, 1);
        let rec = compute_feedback(&[r], &[series("a", 0.01)], None, 36);
        assert!(rec.runs.is_empty());
        assert!(rec.note.is_some());
    }

    #[test]
    fn change_log_rules_fire_and_cite_the_record() {
        let realized = [series("a", 0.01), series("b", -0.005), series("c", 0.004)];
        let good = compute_feedback(&[run(0.0)], &realized, None, 36);
        let t = FeedbackThresholds::default();
        assert!(emit_change_log(&good, &t).unwrap().recommendations.is_empty());

        let mut bad = good.clone();
        bad.regime_accuracy = Some(0.4);
        let log = emit_change_log(&bad, &t).unwrap();
        assert_eq!(log.recommendations.len(), 1);
        assert_eq!(log.recommendations[0].target, "macro.weights");
        assert_eq!(log.record_digest, bad.digest().unwrap());
        assert_ne!(log.record_digest, good.digest().unwrap());
    }
}
