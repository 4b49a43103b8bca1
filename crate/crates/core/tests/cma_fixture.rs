//! CMA stage on the bundled 18-asset panel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use proptest::prelude::*;

use saa_core::cma::{
    auto_blend, judge_select, CmaCandidate, CmaMethod, CmaSet, DispersionClass, JudgeSettings, SignalBundle,
};
use saa_core::market::parse_returns_csv;
use saa_core::pipeline::{self, LoadedConfig, RunOptions};
use saa_core::regime::Regime;
use saa_core::Execution;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// One sequential run shared by every test in this file.
fn run_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cma_fixture_run");
        let _ = std::fs::remove_dir_all(&out);
        let cfg = LoadedConfig::load(&fixtures().join("config.toml")).unwrap();
        let opts = RunOptions {
            as_of: None,
            seed: None,
            exec: Execution::Sequential,
        };
        pipeline::run_pipeline(&cfg, &out, opts).unwrap();
        out
    })
}

fn cma_set() -> CmaSet {
    let text = std::fs::read_to_string(run_dir().join("02-cma/cma-set.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn estimate(set: &CmaSet, slug: &str, m: CmaMethod) -> f64 {
    set.get(slug)
        .unwrap()
        .candidates
        .iter()
        .find(|c| c.method == m)
        .unwrap()
        .estimate
}

/// Judge adjustment in percentage points, rounded to one decimal.
fn delta_pp(set: &CmaSet, slug: &str) -> f64 {
    let a = set.get(slug).unwrap();
    let blend = estimate(set, slug, CmaMethod::AutoBlend);
    ((a.final_cma.expected_return - blend) * 1000.0).round() / 10.0
}

#[test]
fn panel_series_share_one_calendar() {
    let f = std::fs::File::open(fixtures().join("returns.csv")).unwrap();
    let series = parse_returns_csv(f, "returns.csv").unwrap();
    assert_eq!(series.len(), 18);
    for s in &series {
        assert_eq!(s.returns.len(), 360, "{}", s.asset);
        assert_eq!(s.dates, series[0].dates, "{}", s.asset);
    }
}

#[test]
fn historical_stats_match_recomputation() {
    let f = std::fs::File::open(fixtures().join("returns.csv")).unwrap();
    let series = parse_returns_csv(f, "returns.csv").unwrap();
    let lc = series.iter().find(|s| s.asset == "us-large-cap").unwrap();
    let n = lc.returns.len() as f64;
    let mean = lc.returns.iter().sum::<f64>() / n;
    let var = lc.returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut peak = 1.0f64;
    let mut wealth = 1.0;
    let mut mdd = 0.0f64;
    for r in &lc.returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        mdd = mdd.min(wealth / peak - 1.0);
    }
    let set = cma_set();
    let stats = &set.get("us-large-cap").unwrap().stats;
    assert!((stats.mean - 12.0 * mean).abs() < 1e-10);
    assert!((stats.volatility - (12.0 * var).sqrt()).abs() < 1e-10);
    assert!((stats.max_drawdown - mdd).abs() < 1e-10);
}

#[test]
fn us_large_cap_method_row() {
    let set = cma_set();
    let expected = [
        (CmaMethod::HistoricalErp, 12.5),
        (CmaMethod::RegimeAdjusted, 9.8),
        (CmaMethod::BlEquilibrium, 9.3),
        (CmaMethod::InverseGordon, 4.3),
        (CmaMethod::ImpliedErp, 4.0),
    ];
    for (m, pct) in expected {
        let got = 100.0 * estimate(&set, "us-large-cap", m);
        assert!((got - pct).abs() < 0.05, "{}: {got}", m.key());
    }
    let judge = set.get("us-large-cap").unwrap().judge.as_ref().unwrap();
    assert_eq!(judge.dispersion_class, DispersionClass::Wide);
    assert_eq!(delta_pp(&set, "us-large-cap"), -1.1);
}

#[test]
fn us_growth_valuation_methods_dominate() {
    let set = cma_set();
    let judge = set.get("us-growth").unwrap().judge.as_ref().unwrap();
    let valuation: f64 = [CmaMethod::InverseGordon, CmaMethod::ImpliedErp]
        .iter()
        .map(|m| judge.selected_weights.get(m).copied().unwrap_or(0.0))
        .sum();
    assert!(valuation > 0.6, "valuation weight {valuation}");
    assert!((100.0 * estimate(&set, "us-growth", CmaMethod::ImpliedErp) - 3.2).abs() < 0.05);
    assert_eq!(delta_pp(&set, "us-growth"), -2.0);
}

#[test]
fn small_cap_agreement_leaves_blend_untouched() {
    let set = cma_set();
    let judge = set.get("us-small-cap").unwrap().judge.as_ref().unwrap();
    assert_eq!(judge.dispersion_class, DispersionClass::Tight);
    assert_eq!(delta_pp(&set, "us-small-cap"), 0.0);
}

#[test]
fn fixed_income_and_cash_skip_the_judge() {
    let set = cma_set();
    for slug in ["intermediate-treasuries", "ig-corporates", "cash"] {
        assert!(set.get(slug).unwrap().judge.is_none(), "{slug}");
    }
}

fn candidate(method: CmaMethod, estimate: f64, confidence: f64) -> CmaCandidate {
    CmaCandidate {
        method,
        estimate,
        confidence,
        components: BTreeMap::new(),
        rationale: String::new(),
    }
}

proptest! {
    #[test]
    fn judge_stays_inside_the_method_range(
        ests in prop::collection::vec(-0.05f64..0.20, 1..=6),
        confs in prop::collection::vec(0.05f64..1.0, 6),
        regime in 0usize..4,
        pe in prop::option::of(5.0f64..45.0),
        sig in prop::array::uniform3(-1i8..=1),
    ) {
        let mut cands: Vec<CmaCandidate> = ests
            .iter()
            .zip(CmaMethod::PRIMARY)
            .zip(&confs)
            .map(|((e, m), c)| candidate(m, *e, *c))
            .collect();
        let lo = ests.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ests.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        cands.push(auto_blend(&cands).unwrap());
        let signals = SignalBundle { momentum: sig[0], trend: sig[1], valuation: sig[2] };
        let d = judge_select(&cands, Regime::ALL[regime], pe, &signals, &JudgeSettings::default()).unwrap();
        prop_assert!(d.final_estimate >= lo - 1e-12 && d.final_estimate <= hi + 1e-12);
        if d.dispersion_class == DispersionClass::Tight {
            prop_assert_eq!(d.selected_weights.get(&CmaMethod::AutoBlend).copied(), Some(1.0));
        }
        let total: f64 = d.selected_weights.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}
