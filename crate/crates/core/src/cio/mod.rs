//! The CIO: candidate scoring, seven ensemble combiners, compliance-gated
//! selection and the board memo.

mod memo;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use memo::{render_board_memo, BenchmarkStats, MemoInputs, DEFAULT_DRIFT_TRIGGER};

use crate::error::{Result, SaaError};
use crate::exec::Execution;
use crate::json;
use crate::linalg;
use crate::pc::{self, MethodId, PcInputs, PcProposal};
use crate::regime::Regime;
use crate::review::scoring::{self, family_index};
use crate::review::{CandidateFacts, CompositeRanking, IpsScoring, RegimeTable, ScoreWeights, SixScores};
use crate::risk::{self, RiskContext, RiskReport};

/// Floor on tracking error in the inverse-TE combiner.
pub const TE_FLOOR: f64 = 1e-6;
/// Additive weight keeping non-positive-Sharpe candidates in the mix.
pub const SHARPE_EPSILON: f64 = 1e-3;
/// Candidates beyond this percentile of L1 distance to the centroid are trimmed.
pub const TRIM_PERCENTILE: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMethod {
    SimpleAverage,
    InverseTrackingError,
    BacktestSharpe,
    MetaOptimization,
    RegimeConditional,
    CompositeScore,
    TrimmedMean,
}

impl EnsembleMethod {
    pub const ALL: [EnsembleMethod; 7] = [
        EnsembleMethod::SimpleAverage,
        EnsembleMethod::InverseTrackingError,
        EnsembleMethod::BacktestSharpe,
        EnsembleMethod::MetaOptimization,
        EnsembleMethod::RegimeConditional,
        EnsembleMethod::CompositeScore,
        EnsembleMethod::TrimmedMean,
    ];

    pub fn key(self) -> &'static str {
        match self {
            EnsembleMethod::SimpleAverage => "simple-average",
            EnsembleMethod::InverseTrackingError => "inverse-tracking-error",
            EnsembleMethod::BacktestSharpe => "backtest-sharpe",
            EnsembleMethod::MetaOptimization => "meta-optimization",
            EnsembleMethod::RegimeConditional => "regime-conditional",
            EnsembleMethod::CompositeScore => "composite-score",
            EnsembleMethod::TrimmedMean => "trimmed-mean",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnsembleMethod::SimpleAverage => "Simple Average",
            EnsembleMethod::InverseTrackingError => "Inverse Tracking Error",
            EnsembleMethod::BacktestSharpe => "Backtest Sharpe",
            EnsembleMethod::MetaOptimization => "Meta-Optimization",
            EnsembleMethod::RegimeConditional => "Regime Conditional",
            EnsembleMethod::CompositeScore => "Composite Score",
            EnsembleMethod::TrimmedMean => "Trimmed Mean",
        }
    }
}

impl fmt::Display for EnsembleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDiagnostics {
    pub expected_return: f64,
    pub vol: f64,
    pub sharpe: f64,
    pub effective_n: f64,
    /// Ex-ante, against the IPS benchmark.
    pub tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub method: EnsembleMethod,
    /// Registry-ordered (candidate, weight) pairs summing to 1.
    pub candidate_weights: Vec<(MethodId, f64)>,
    pub asset_weights: Vec<f64>,
    pub diagnostics: EnsembleDiagnostics,
    pub note: Option<String>,
}

impl EnsembleResult {
    pub fn candidate_weight(&self, m: MethodId) -> f64 {
        self.candidate_weights
            .iter()
            .find(|(k, _)| *k == m)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn artifact(&self, slugs: &[String]) -> Value {
        let candidates: BTreeMap<&str, Value> = self
            .candidate_weights
            .iter()
            .map(|(m, w)| (m.key(), json::fixed(*w, 6)))
            .collect();
        let assets: BTreeMap<&String, Value> = slugs
            .iter()
            .zip(&self.asset_weights)
            .map(|(s, w)| (s, json::fixed(*w, 6)))
            .collect();
        let d = &self.diagnostics;
        json!({
            "method": self.method.key(),
            "candidate_weights": candidates,
            "asset_weights": assets,
            "diagnostics": {
                "expected_return": json::fixed(d.expected_return, 6),
                "vol": json::fixed(d.vol, 6),
                "sharpe": json::fixed(d.sharpe, 6),
                "effective_n": json::fixed(d.effective_n, 6),
                "tracking_error": json::fixed(d.tracking_error, 6),
            },
            "note": self.note,
        })
    }
}

/// Everything the combiners read. `reports` and `sensitivities` align with
/// `proposals`.
pub struct CioContext<'a> {
    pub inputs: &'a PcInputs,
    pub proposals: &'a [PcProposal],
    pub reports: &'a [RiskReport],
    pub sensitivities: &'a [f64],
    pub ranking: &'a CompositeRanking,
    pub regime: Regime,
    pub regime_table: &'a RegimeTable,
    pub benchmark: &'a [f64],
    pub weights: &'a ScoreWeights,
}

impl CioContext<'_> {
    fn sigma(&self) -> &DMatrix<f64> {
        &self.inputs.sigma
    }

    fn centroid(&self) -> Vec<f64> {
        let m = self.proposals.len() as f64;
        (0..self.inputs.n())
            .map(|i| self.proposals.iter().map(|p| p.weights[i]).sum::<f64>() / m)
            .collect()
    }

    fn fit(&self, p: &PcProposal) -> f64 {
        self.regime_table.fit(self.regime, p.category)
    }
}

/// Six-dimension scores of the candidates; a failing IPS check zeroes the
/// compliance dimension.
pub fn score_candidates(ctx: &CioContext<'_>) -> Vec<SixScores> {
    let facts: Vec<CandidateFacts> = ctx
        .proposals
        .iter()
        .enumerate()
        .map(|(k, p)| crate::review::candidate_facts(p, &ctx.reports[k], ctx.inputs, ctx.fit(p), ctx.sensitivities[k]))
        .collect();
    scoring::score_all(&facts, ctx.weights, IpsScoring::AllOrNothing)
}

fn normalized(raw: Vec<f64>) -> Option<Vec<f64>> {
    let s: f64 = raw.iter().sum();
    (s > 0.0 && s.is_finite()).then(|| raw.iter().map(|x| x / s).collect())
}

/// Combines candidate portfolios by one method.
pub fn combine(method: EnsembleMethod, ctx: &CioContext<'_>) -> Result<EnsembleResult> {
    let props = ctx.proposals;
    let m = props.len();
    if m < 2 {
        return Err(SaaError::Value("an ensemble needs at least two proposals".into()));
    }
    let equal = vec![1.0 / m as f64; m];
    let mut note = None;
    let c: Vec<f64> = match method {
        EnsembleMethod::SimpleAverage => equal,
        EnsembleMethod::InverseTrackingError => {
            let centroid = ctx.centroid();
            let raw = props
                .iter()
                .map(|p| 1.0 / risk::tracking_error(&p.weights, &centroid, ctx.sigma()).max(TE_FLOOR))
                .collect();
            normalized(raw).expect("inverse TE weights are positive")
        }
        EnsembleMethod::BacktestSharpe => {
            let raw = ctx
                .reports
                .iter()
                .map(|r| r.backtest.map_or(0.0, |b| b.sharpe.max(0.0)) + SHARPE_EPSILON)
                .collect();
            normalized(raw).expect("epsilon keeps weights positive")
        }
        EnsembleMethod::MetaOptimization => {
            let n = ctx.inputs.n();
            let w = DMatrix::from_fn(n, m, |i, k| props[k].weights[i]);
            let cov = w.transpose() * ctx.sigma() * &w;
            let cov = (&cov + cov.transpose()) * 0.5;
            let ex: Vec<f64> = props
                .iter()
                .map(|p| linalg::dot(&ctx.inputs.mu, &p.weights) - ctx.inputs.rf)
                .collect();
            let (c, fallback) = pc::tangency(&ex, &cov, &crate::solver::Bounds::unit(m))?;
            if fallback {
                note = Some("No candidate earns a positive excess return; minimum-variance mix used.".into());
            }
            linalg::normalize(c.iter().map(|x| x.max(0.0)).collect())
        }
        EnsembleMethod::RegimeConditional => {
            let table = ctx.regime_table.weights(ctx.regime);
            let mut count = [0usize; 4];
            for p in props {
                count[family_index(p.category)] += 1;
            }
            let raw = props
                .iter()
                .map(|p| {
                    let f = family_index(p.category);
                    table[f] / count[f] as f64
                })
                .collect();
            match normalized(raw) {
                Some(c) => c,
                None => {
                    note = Some("Regime table gives no weight to any present category; simple average used.".into());
                    equal
                }
            }
        }
        EnsembleMethod::CompositeScore => {
            let raw = props
                .iter()
                .map(|p| ctx.ranking.composite_of(p.method).unwrap_or(0.0))
                .collect();
            match normalized(raw) {
                Some(c) => c,
                None => {
                    note = Some("All composite scores are zero; simple average used.".into());
                    equal
                }
            }
        }
        EnsembleMethod::TrimmedMean => {
            let centroid = ctx.centroid();
            let dist: Vec<f64> = props
                .iter()
                .map(|p| linalg::l1_distance(&p.weights, &centroid))
                .collect();
            let cut = percentile(&dist, TRIM_PERCENTILE);
            let keep: Vec<bool> = dist.iter().map(|d| *d <= cut).collect();
            let kept = keep.iter().filter(|k| **k).count();
            if kept == 0 {
                note = Some("Every candidate was trimmed; simple average used.".into());
                equal
            } else {
                let dropped: Vec<&str> = props
                    .iter()
                    .zip(&keep)
                    .filter(|(_, k)| !**k)
                    .map(|(p, _)| p.method.key())
                    .collect();
                if !dropped.is_empty() {
                    note = Some(format!("Trimmed: {}.", dropped.join(", ")));
                }
                keep.iter().map(|k| if *k { 1.0 / kept as f64 } else { 0.0 }).collect()
            }
        }
    };
    Ok(assemble(method, ctx, c, note))
}

/// Linear-interpolation percentile of `xs` at `q` ∈ [0, 1].
fn percentile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn assemble(method: EnsembleMethod, ctx: &CioContext<'_>, c: Vec<f64>, note: Option<String>) -> EnsembleResult {
    let n = ctx.inputs.n();
    let asset_weights: Vec<f64> = (0..n)
        .map(|i| ctx.proposals.iter().zip(&c).map(|(p, ck)| ck * p.weights[i]).sum())
        .collect();
    let diagnostics = EnsembleDiagnostics {
        expected_return: linalg::dot(&ctx.inputs.mu, &asset_weights),
        vol: linalg::quad_form(ctx.sigma(), &asset_weights).max(0.0).sqrt(),
        sharpe: ctx.inputs.sharpe(&asset_weights),
        effective_n: risk::effective_n(&asset_weights),
        tracking_error: risk::tracking_error(&asset_weights, ctx.benchmark, ctx.sigma()),
    };
    EnsembleResult {
        method,
        candidate_weights: ctx.proposals.iter().map(|p| p.method).zip(c).collect(),
        asset_weights,
        diagnostics,
        note,
    }
}

/// All seven combiners, in their fixed order.
pub fn combine_all(ctx: &CioContext<'_>, exec: Execution) -> Result<Vec<EnsembleResult>> {
    exec.map(&EnsembleMethod::ALL, |m| combine(*m, ctx))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScore {
    pub method: EnsembleMethod,
    pub compliant: bool,
    pub scores: SixScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CioDecision {
    pub chosen: EnsembleResult,
    pub report: RiskReport,
    pub candidate_scores: Vec<(MethodId, SixScores)>,
    pub ensemble_scores: Vec<EnsembleScore>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Escalation {
    pub ensemble_scores: Vec<EnsembleScore>,
    pub failures: Vec<(EnsembleMethod, Vec<String>)>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CioOutcome {
    Decision(Box<CioDecision>),
    Escalation(Escalation),
}

/// Scores every ensemble with the same six dimensions (regime fit and
/// estimation risk inherited through the candidate mix), drops the
/// non-compliant ones and picks the best; ties go to higher effective N.
pub fn select_ensemble(results: &[EnsembleResult], ctx: &CioContext<'_>, risk_ctx: &RiskContext<'_>) -> CioOutcome {
    let reports: Vec<RiskReport> = results
        .iter()
        .map(|r| risk::cro_report(&r.asset_weights, risk_ctx))
        .collect();
    let facts: Vec<CandidateFacts> = results
        .iter()
        .zip(&reports)
        .map(|(r, rep)| {
            let mix = |f: &dyn Fn(usize) -> f64| -> f64 {
                r.candidate_weights.iter().enumerate().map(|(k, (_, c))| c * f(k)).sum()
            };
            CandidateFacts {
                backtest_sharpe: rep.backtest.map(|b| b.sharpe),
                ips_pass_fraction: rep.ips_pass_fraction(),
                effective_n: rep.effective_n,
                n_assets: r.asset_weights.len(),
                regime_fit: mix(&|k| ctx.fit(&ctx.proposals[k])),
                mu_sensitivity: mix(&|k| ctx.sensitivities[k]),
                cma_utilization: scoring::cma_utilization(&r.asset_weights, &ctx.inputs.mu),
            }
        })
        .collect();
    let scores = scoring::score_all(&facts, ctx.weights, IpsScoring::Fraction);
    let ensemble_scores: Vec<EnsembleScore> = results
        .iter()
        .zip(&reports)
        .zip(&scores)
        .map(|((r, rep), s)| EnsembleScore {
            method: r.method,
            compliant: rep.is_compliant(),
            scores: *s,
        })
        .collect();

    let best = (0..results.len())
        .filter(|k| reports[*k].is_compliant())
        .max_by(|a, b| {
            scores[*a]
                .total
                .total_cmp(&scores[*b].total)
                .then(
                    results[*a]
                        .diagnostics
                        .effective_n
                        .total_cmp(&results[*b].diagnostics.effective_n),
                )
                // Earlier methods win exact ties.
                .then(b.cmp(a))
        });
    let Some(k) = best else {
        let failures = results
            .iter()
            .zip(&reports)
            .map(|(r, rep)| {
                let failed = rep
                    .ips_flags
                    .iter()
                    .filter(|f| !f.pass)
                    .map(|f| f.check.label().to_string())
                    .collect();
                (r.method, failed)
            })
            .collect();
        return CioOutcome::Escalation(Escalation {
            ensemble_scores,
            failures,
            message: "No ensemble satisfies every IPS check; human review required.".into(),
        });
    };
    let chosen = results[k].clone();
    let compliant = ensemble_scores.iter().filter(|e| e.compliant).count();
    let rationale = format!(
        "{} selected in a {} regime: score {:.3} (regime fit {:.3}, backtest Sharpe percentile {:.3}) \
         among {compliant} IPS-compliant ensembles of {}. Expected return {:.2}%, volatility {:.2}%, \
         tracking error {:.2}%, effective N {:.1}.",
        chosen.method,
        ctx.regime,
        scores[k].total,
        scores[k].regime_fit,
        scores[k].sharpe,
        results.len(),
        chosen.diagnostics.expected_return * 100.0,
        chosen.diagnostics.vol * 100.0,
        chosen.diagnostics.tracking_error * 100.0,
        chosen.diagnostics.effective_n,
    );
    let candidate_scores = ctx
        .proposals
        .iter()
        .map(|p| p.method)
        .zip(score_candidates(ctx))
        .collect();
    CioOutcome::Decision(Box::new(CioDecision {
        chosen,
        report: reports[k].clone(),
        candidate_scores,
        ensemble_scores,
        rationale,
    }))
}

/// Writes ensembles.json and either cio_decision.json or escalation.json.
pub fn emit_cio(
    results: &[EnsembleResult],
    outcome: &CioOutcome,
    slugs: &[String],
    dir: &Path,
) -> Result<BTreeMap<String, String>> {
    let mut d = BTreeMap::new();
    let ens: Vec<Value> = results.iter().map(|r| r.artifact(slugs)).collect();
    let v = json!({ "schema": "ensembles/1", "ensembles": ens });
    d.insert(
        "ensembles.json".into(),
        json::write_artifact(&dir.join("ensembles.json"), &v)?,
    );
    let score_rows = |s: &[EnsembleScore]| -> Vec<Value> {
        s.iter()
            .map(|e| json!({ "method": e.method.key(), "compliant": e.compliant, "scores": e.scores }))
            .collect()
    };
    match outcome {
        CioOutcome::Decision(dec) => {
            let candidates: Vec<Value> = dec
                .candidate_scores
                .iter()
                .map(|(m, s)| json!({ "method_id": m.key(), "scores": s }))
                .collect();
            let v = json!({
                "schema": "cio-decision/1",
                "chosen": dec.chosen.artifact(slugs),
                "ensemble_scores": score_rows(&dec.ensemble_scores),
                "candidate_scores": candidates,
                "ips_flags": dec.report.ips_flags.iter().map(|f| json!({
                    "check": f.check,
                    "value": f.value.map(|x| json::fixed(x, 6)),
                    "pass": f.pass,
                })).collect::<Vec<_>>(),
                "rationale": dec.rationale,
            });
            d.insert(
                "cio_decision.json".into(),
                json::write_artifact(&dir.join("cio_decision.json"), &v)?,
            );
        }
        CioOutcome::Escalation(esc) => {
            let v = json!({
                "schema": "cio-escalation/1",
                "message": esc.message,
                "ensemble_scores": score_rows(&esc.ensemble_scores),
                "failures": esc.failures.iter().map(|(m, f)| json!({ "method": m.key(), "failed_checks": f })).collect::<Vec<_>>(),
            });
            d.insert(
                "escalation.json".into(),
                json::write_artifact(&dir.join("escalation.json"), &v)?,
            );
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pc::{testutil, Category};
    use crate::regime::{DimensionScores, RegimeView};
    use crate::review::composite_blend;
    use crate::risk::{Benchmark, FactorExposures, IpsPolicy, Rebalancing};
    use chrono::NaiveDate;

    const METHODS: [MethodId; 5] = [
        MethodId::EqualWeight,
        MethodId::Gmv,
        MethodId::RiskParity,
        MethodId::MaxSharpe,
        MethodId::Hrp,
    ];

    struct Fixture {
        inputs: PcInputs,
        proposals: Vec<PcProposal>,
        reports: Vec<RiskReport>,
        sens: Vec<f64>,
        ranking: CompositeRanking,
        policy: IpsPolicy,
        factors: FactorExposures,
        slugs: Vec<String>,
    }

    fn fixture(weights: &[[f64; 4]], vol_band: [f64; 2]) -> Fixture {
        let sigma = testutil::diag(&[0.16, 0.12, 0.06, 0.02]);
        let scen = DMatrix::from_fn(60, 4, |t, i| {
            let s = [0.04, 0.03, 0.015, 0.003][i];
            0.004 + s * ((((t * 13 + i * 5) % 11) as f64 - 5.0) / 5.0)
        });
        let inputs = testutil::inputs(&[0.08, 0.07, 0.04, 0.02], sigma, scen);
        let slugs = inputs.slugs();
        let policy = IpsPolicy {
            universe: slugs.clone(),
            real_return_target: [0.03, 0.05],
            vol_band,
            max_drawdown_limit: -0.9,
            tracking_error_cap: 0.5,
            benchmark: Benchmark {
                weights: vec![0.3, 0.3, 0.4, 0.0],
            },
        };
        let proposals: Vec<PcProposal> = METHODS
            .iter()
            .zip(weights)
            .map(|(m, w)| PcProposal::build(*m, &inputs, w.to_vec(), "fixture", BTreeMap::new()).unwrap())
            .collect();
        let factors = FactorExposures::default();
        let ctx = RiskContext {
            slugs: &slugs,
            sigma: &inputs.sigma,
            scenarios: &inputs.scenarios,
            backtest_rf: 0.0,
            rebalancing: Rebalancing::Monthly,
            policy: &policy,
            factors: &factors,
            alpha: 0.95,
        };
        let reports: Vec<RiskReport> = proposals.iter().map(|p| risk::cro_report(&p.weights, &ctx)).collect();
        let cats: Vec<(MethodId, Category)> = proposals.iter().map(|p| (p.method, p.category)).collect();
        let ranking = composite_blend(
            &cats,
            &[5, 3, 9, 0, -4],
            &[0.5, 0.4, 0.6, 0.3, 0.2],
            0.4,
            Regime::LateCycle,
        )
        .unwrap();
        Fixture {
            sens: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            inputs,
            proposals,
            reports,
            ranking,
            policy,
            factors,
            slugs,
        }
    }

    fn spread() -> Vec<[f64; 4]> {
        vec![
            [0.25, 0.25, 0.25, 0.25],
            [0.05, 0.05, 0.2, 0.7],
            [0.1, 0.15, 0.3, 0.45],
            [0.5, 0.3, 0.15, 0.05],
            [0.2, 0.2, 0.3, 0.3],
        ]
    }

    fn with_ctx<R>(
        f: &Fixture,
        table: &RegimeTable,
        weights: &ScoreWeights,
        go: impl FnOnce(&CioContext<'_>) -> R,
    ) -> R {
        let ctx = CioContext {
            inputs: &f.inputs,
            proposals: &f.proposals,
            reports: &f.reports,
            sensitivities: &f.sens,
            ranking: &f.ranking,
            regime: Regime::LateCycle,
            regime_table: table,
            benchmark: &f.policy.benchmark.weights,
            weights,
        };
        go(&ctx)
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0];
        assert!((percentile(&xs, 0.9) - 10.0).abs() < 1e-12);
        assert!((percentile(&[0.0, 1.0], 0.9) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn keys_round_trip_through_serde() {
        for m in EnsembleMethod::ALL {
            let s = serde_json::to_string(&m).unwrap();
            assert_eq!(s, format!("\"{}\"", m.key()));
        }
    }

    #[test]
    fn identical_proposals_pass_through_every_combiner() {
        let f = fixture(&[[0.4, 0.3, 0.2, 0.1]; 5], [0.0, 1.0]);
        with_ctx(&f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            for r in combine_all(ctx, Execution::Sequential).unwrap() {
                for (a, b) in r.asset_weights.iter().zip(&f.proposals[0].weights) {
                    assert!((a - b).abs() < 1e-12, "{}", r.method);
                }
            }
        });
    }

    #[test]
    fn ensembles_are_convex_combinations() {
        let f = fixture(&spread(), [0.0, 1.0]);
        with_ctx(&f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            let seq = combine_all(ctx, Execution::Sequential).unwrap();
            assert_eq!(seq, combine_all(ctx, Execution::Parallel).unwrap());
            for r in &seq {
                let c: f64 = r.candidate_weights.iter().map(|(_, c)| c).sum();
                assert!((c - 1.0).abs() < 1e-9 && r.candidate_weights.iter().all(|(_, c)| *c >= 0.0));
                for i in 0..4 {
                    let mix: f64 = f
                        .proposals
                        .iter()
                        .map(|p| r.candidate_weight(p.method) * p.weights[i])
                        .sum();
                    assert!((mix - r.asset_weights[i]).abs() < 1e-9);
                }
            }
        });
    }

    #[test]
    fn inverse_te_weights_fall_with_distance_to_centroid() {
        let f = fixture(&spread(), [0.0, 1.0]);
        with_ctx(&f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            let r = combine(EnsembleMethod::InverseTrackingError, ctx).unwrap();
            let centroid = ctx.centroid();
            let mut pairs: Vec<(f64, f64)> = f
                .proposals
                .iter()
                .map(|p| {
                    (
                        risk::tracking_error(&p.weights, &centroid, ctx.sigma()),
                        r.candidate_weight(p.method),
                    )
                })
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(pairs.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-15));
        });
    }

    #[test]
    fn trimmed_mean_without_outliers_is_the_average() {
        // The two farthest candidates tie, so none lies beyond the cut.
        let mut w = vec![[0.25; 4]; 5];
        w[0] = [0.3, 0.2, 0.25, 0.25];
        w[1] = [0.2, 0.3, 0.25, 0.25];
        let f = fixture(&w, [0.0, 1.0]);
        with_ctx(&f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            let t = combine(EnsembleMethod::TrimmedMean, ctx).unwrap();
            let a = combine(EnsembleMethod::SimpleAverage, ctx).unwrap();
            assert_eq!(t.candidate_weights, a.candidate_weights);
            assert_eq!(t.note, None);
        });
        let f = fixture(&spread(), [0.0, 1.0]);
        with_ctx(&f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            let t = combine(EnsembleMethod::TrimmedMean, ctx).unwrap();
            assert_eq!(t.candidate_weights.iter().filter(|(_, c)| *c == 0.0).count(), 1);
            assert!(t.note.as_deref().unwrap().starts_with("Trimmed"));
        });
    }

    #[test]
    fn meta_optimization_beats_every_candidate() {
        let f = fixture(&spread(), [0.0, 1.0]);
        with_ctx(&f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            let r = combine(EnsembleMethod::MetaOptimization, ctx).unwrap();
            let best = f
                .proposals
                .iter()
                .map(|p| f.inputs.sharpe(&p.weights))
                .fold(f64::MIN, f64::max);
            assert!(r.diagnostics.sharpe >= best - 1e-6);
        });
    }

    #[test]
    fn regime_table_splits_within_category() {
        let f = fixture(&spread(), [0.0, 1.0]);
        with_ctx(&f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            let r = combine(EnsembleMethod::RegimeConditional, ctx).unwrap();
            // EW alone in A (0.15), MaxSharpe alone in B (0.20), GMV, RP and HRP share C (0.40); D is empty.
            let c = 0.4 / 3.0;
            let t = [0.15, c, c, 0.20, c];
            for (p, want) in f.proposals.iter().zip(t) {
                assert!((r.candidate_weight(p.method) - want / 0.75).abs() < 1e-12);
            }
        });
    }

    fn select(f: &Fixture) -> CioOutcome {
        let rctx = RiskContext {
            slugs: &f.slugs,
            sigma: &f.inputs.sigma,
            scenarios: &f.inputs.scenarios,
            backtest_rf: 0.0,
            rebalancing: Rebalancing::Monthly,
            policy: &f.policy,
            factors: &f.factors,
            alpha: 0.95,
        };
        with_ctx(f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            let results = combine_all(ctx, Execution::Sequential).unwrap();
            select_ensemble(&results, ctx, &rctx)
        })
    }

    #[test]
    fn decision_is_compliant_and_escalation_when_none_is() {
        let f = fixture(&spread(), [0.0, 1.0]);
        let CioOutcome::Decision(d) = select(&f) else {
            panic!("expected a decision")
        };
        assert!(d.report.is_compliant());
        assert_eq!(d.candidate_scores.len(), 5);
        let f = fixture(&spread(), [0.5, 0.6]);
        let CioOutcome::Escalation(e) = select(&f) else {
            panic!("expected escalation")
        };
        assert_eq!(e.failures.len(), 7);
        assert!(e
            .failures
            .iter()
            .all(|(_, checks)| checks.contains(&"volatility band".to_string())));
    }

    #[test]
    fn failing_ips_zeroes_the_candidate_compliance_score() {
        let f = fixture(&spread(), [0.05, 0.08]);
        with_ctx(&f, &RegimeTable::default(), &ScoreWeights::default(), |ctx| {
            for (s, r) in score_candidates(ctx).iter().zip(&f.reports) {
                if !r.is_compliant() {
                    assert_eq!(s.ips, 0.0);
                }
            }
        });
    }

    #[test]
    fn memo_has_seven_ordered_sections_and_is_stable() {
        let f = fixture(&spread(), [0.0, 1.0]);
        let CioOutcome::Decision(d) = select(&f) else {
            panic!("expected a decision")
        };
        let view = RegimeView {
            regime: Regime::LateCycle,
            confidence: 0.7,
            scores: DimensionScores {
                growth: 0.1,
                inflation: 0.6,
                policy: 0.5,
                financial: 0.2,
            },
            composite: 0.35,
            narrative: "Growth is slowing while inflation stays firm.".into(),
        };
        let memo = |prev: Option<&BTreeMap<String, f64>>| {
            render_board_memo(&MemoInputs {
                as_of: NaiveDate::from_ymd_opt(2025, 6, 30).unwrap(),
                decision: &d,
                inputs: &f.inputs,
                names: None,
                view: &view,
                benchmark: BenchmarkStats {
                    expected_return: 0.05,
                    vol: 0.09,
                    sharpe: 0.55,
                    backtest_sharpe: None,
                },
                previous: prev,
                drift_trigger: DEFAULT_DRIFT_TRIGGER,
            })
        };
        let a = memo(None);
        assert_eq!(a, memo(None));
        let heads: Vec<&str> = a.lines().filter(|l| l.starts_with("## ")).collect();
        assert_eq!(heads.len(), 7);
        for (k, h) in heads.iter().enumerate() {
            assert!(h.starts_with(&format!("## {}.", k + 1)));
        }
        assert!(a.contains("initial allocation"));
        let prev: BTreeMap<String, f64> = f.slugs.iter().map(|s| (s.clone(), 0.25)).collect();
        assert!(memo(Some(&prev)).contains("One-way turnover"));

        let table: Vec<f64> = a
            .lines()
            .skip_while(|l| !l.starts_with("## 3."))
            .take_while(|l| !l.starts_with("## 4."))
            .filter(|l| l.starts_with("| a"))
            .map(|l| {
                l.split('|')
                    .nth(3)
                    .unwrap()
                    .trim()
                    .trim_end_matches('%')
                    .parse()
                    .unwrap()
            })
            .collect();
        assert_eq!(table.len(), 4);
        assert!(table.windows(2).all(|w| w[0] >= w[1]));
    }
}
