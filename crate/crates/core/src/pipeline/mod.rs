//! The six-stage run: macro view, CMAs, covariance, portfolio construction,
//! strategy review and the CIO, with a digest manifest per run.

mod config;
mod feedback;

pub use config::{
    AssetEntry, CioConfig, DataPaths, FeedbackThresholds, IpsConfig, LoadedConfig, MacroConfig, PipelineConfig,
    PortfolioConfig, RiskConfig, Seeds,
};
pub use feedback::{
    compute_feedback, emit_change_log, ChangeLog, FeedbackRecord, PastAsset, PastRun, Recommendation, RunFeedback,
    CHANGE_LOG_SCHEMA, FEEDBACK_SCHEMA,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cio::{self, BenchmarkStats, CioContext, CioOutcome, MemoInputs};
use crate::cma::{self, CmaContext, CmaSet};
use crate::error::{Result, SaaError};
use crate::exec::Execution;
use crate::json;
use crate::market::{self, AlignedPanel, CovarianceEstimate, PERIODS_PER_YEAR};
use crate::pc::{self, MethodId, PcInputs, PcOutcome, PcProposal, REGISTRY};
use crate::regime::{self, DimensionScores, MacroIndicators, Regime, RegimeView};
use crate::review::{self, ReviewSettings};
use crate::risk::{self, RiskContext, RiskReport};

pub const MANIFEST_SCHEMA: &str = "run-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Wall-clock timings live beside the manifest, outside every digest.
pub const TIMINGS_FILE: &str = "timings.json";
pub const STAGES: [&str; 6] = ["01-macro", "02-cma", "03-covariance", "04-pc", "05-review", "06-cio"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    /// Relative path inside the stage directory → SHA-256.
    pub digests: BTreeMap<String, String>,
    pub schemas: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Decision,
    Escalation,
    Failed,
}

impl RunOutcome {
    /// 0 decision, 2 escalation, 1 error.
    pub fn exit_code(self) -> i32 {
        match self {
            RunOutcome::Decision => 0,
            RunOutcome::Escalation => 2,
            RunOutcome::Failed => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub config_path: PathBuf,
    pub config_hash: String,
    pub as_of: NaiveDate,
    pub seeds: Seeds,
    pub regime_override: Option<Regime>,
    pub disabled_methods: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub outcome: RunOutcome,
    pub failed_stage: Option<String>,
}

impl RunManifest {
    pub fn digest_of(&self, stage: &str, file: &str) -> Option<&str> {
        self.stages
            .iter()
            .find(|s| s.name == stage)?
            .digests
            .get(file)
            .map(String::as_str)
    }
}

/// Command-line overrides applied on top of the config.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub as_of: Option<NaiveDate>,
    /// Replaces both the assignment and the resampling seed.
    pub seed: Option<u64>,
    pub exec: Execution,
}

type Digests = BTreeMap<String, String>;

struct Recorder<'a> {
    out: &'a Path,
    stages: Vec<StageRecord>,
    timings: BTreeMap<String, f64>,
    failed: Option<String>,
}

impl Recorder<'_> {
    /// Runs one stage unless an earlier one failed; a failure is recorded,
    /// not propagated, so the manifest still gets written.
    fn stage<T>(&mut self, name: &str, schemas: &[&str], f: impl FnOnce(&Path) -> Result<(T, Digests)>) -> Option<T> {
        let record = |status, digests, error| StageRecord {
            name: name.to_string(),
            status,
            digests,
            schemas: schemas.iter().map(|s| s.to_string()).collect(),
            error,
        };
        if self.failed.is_some() {
            self.stages.push(record(StageStatus::Skipped, Digests::new(), None));
            return None;
        }
        let start = Instant::now();
        let result = f(&self.out.join(name));
        self.timings
            .insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
        match result {
            Ok((value, digests)) => {
                self.stages.push(record(StageStatus::Completed, digests, None));
                Some(value)
            }
            Err(e) => {
                self.failed = Some(name.to_string());
                self.stages
                    .push(record(StageStatus::Failed, Digests::new(), Some(e.to_string())));
                None
            }
        }
    }
}

struct MacroStage {
    view: RegimeView,
    labels: Vec<(NaiveDate, Regime)>,
}

fn macro_stage(cfg: &LoadedConfig, as_of: NaiveDate, dir: &Path) -> Result<(MacroStage, Digests)> {
    let c = &cfg.config;
    let history: Vec<MacroIndicators> = match &c.data.indicators {
        Some(p) => {
            let path = cfg.resolve(p);
            let file = fs::File::open(&path).map_err(|e| SaaError::io(&path, e))?;
            regime::parse_indicators_csv(file, &path.display().to_string())?
                .into_iter()
                .filter(|r| r.as_of <= as_of)
                .collect()
        }
        None => Vec::new(),
    };
    let labels = regime::label_history(&history, &c.macro_.thresholds, &c.macro_.weights)?;
    let view = match (c.regime_override, history.last()) {
        (Some(r), latest) => {
            let (scores, composite) = match latest {
                Some(ind) => {
                    let v = regime::assess(ind, &c.macro_.thresholds, &c.macro_.weights)?;
                    (v.scores, v.composite)
                }
                None => (DimensionScores::uniform(0.0), 0.0),
            };
            RegimeView {
                regime: r,
                confidence: 1.0,
                scores,
                composite,
                narrative: format!(
                    "Regime set to {r} by configuration override; the indicator classification is bypassed."
                ),
            }
        }
        (None, Some(ind)) => regime::assess(ind, &c.macro_.thresholds, &c.macro_.weights)?,
        (None, None) => {
            return Err(SaaError::InsufficientData(format!(
                "no macro indicator row on or before {as_of}"
            )));
        }
    };
    let digests = regime::emit_macro_view(&view, as_of, c.regime_override.is_some(), dir)?;
    Ok((MacroStage { view, labels }, digests))
}

struct MarketState {
    panel: AlignedPanel,
    cov: CovarianceEstimate,
    caps: Vec<f64>,
    rf: f64,
}

/// Configured rate, else the latest risk-free rate in the fundamentals
/// (universe order), else the trailing 12-month cash return, else 0.
fn risk_free_rate(cfg: &PipelineConfig, panel: &AlignedPanel, as_of: NaiveDate) -> f64 {
    if let Some(r) = cfg.portfolio.risk_free_rate {
        return r;
    }
    let from_fundamentals = panel.universe.assets().iter().find_map(|a| {
        panel
            .latest_fundamentals(&a.slug, Some(as_of))
            .and_then(|f| f.risk_free_rate)
    });
    from_fundamentals
        .or_else(|| {
            let k = panel.universe.cash_index()?;
            let col = panel.column(k);
            let tail = &col[col.len().saturating_sub(12)..];
            (!tail.is_empty()).then(|| PERIODS_PER_YEAR * crate::linalg::mean(tail))
        })
        .unwrap_or(0.0)
}

fn load_market(cfg: &LoadedConfig, as_of: NaiveDate) -> Result<MarketState> {
    let c = &cfg.config;
    let universe = c.universe()?;
    let panel = market::load_panel(&cfg.panel_sources(), &universe)?.truncate_to(as_of);
    let sample = market::sample_covariance(&panel)?;
    let shrunk = market::shrink_covariance(&sample, c.portfolio.covariance_shrinkage)?;
    let cov = CovarianceEstimate {
        matrix: market::nearest_psd_repair(&shrunk.matrix)?,
        ..shrunk
    };
    cov.validate()?;
    let n = universe.len();
    let caps = match &panel.caps {
        Some(snap) => snap.weights(&universe)?,
        None => vec![1.0 / n as f64; n],
    };
    let rf = risk_free_rate(c, &panel, as_of);
    Ok(MarketState { panel, cov, caps, rf })
}

fn covariance_artifact(cov: &CovarianceEstimate, dir: &Path) -> Result<Digests> {
    let v = json!({
        "schema": "covariance/1",
        "assets": cov.assets,
        "estimator": cov.estimator,
        "shrinkage_intensity": cov.shrinkage_intensity,
        "annualization_factor": PERIODS_PER_YEAR,
        "matrix": cov.rows(),
        "vols": cov.vols(),
    });
    Ok(BTreeMap::from([(
        "covariance.json".to_string(),
        json::write_artifact(&dir.join("covariance.json"), &v)?,
    )]))
}

fn pc_inputs(cfg: &PipelineConfig, m: &MarketState, cmas: &CmaSet) -> PcInputs {
    PcInputs {
        assets: m.panel.universe.assets().to_vec(),
        mu: cmas.mu(),
        confidence: cmas.assets.iter().map(|a| a.final_cma.confidence).collect(),
        sigma: m.cov.matrix.clone(),
        scenarios: m.panel.returns.clone(),
        caps: Some(m.caps.clone()),
        rf: m.rf,
        bounds: cfg.bounds(),
        target_vol: cfg.portfolio.target_vol,
        cvar_level: cfg.portfolio.cvar_level,
        factor_loadings: cfg.factor_loadings(),
    }
}

/// μ shifted by `bump` standard errors of the annualized mean, alternating
/// in sign across the universe.
fn perturbed_mu(inputs: &PcInputs, bump: f64) -> Vec<f64> {
    let years = inputs.scenarios.nrows() as f64 / PERIODS_PER_YEAR;
    inputs
        .mu
        .iter()
        .zip(inputs.vols())
        .enumerate()
        .map(|(i, (mu, vol))| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            mu + s * bump * vol / years.sqrt()
        })
        .collect()
}

struct PcStage {
    inputs: PcInputs,
    proposals: Vec<PcProposal>,
    sensitivities: Vec<f64>,
}

fn pc_stage(cfg: &PipelineConfig, inputs: PcInputs, exec: Execution, dir: &Path) -> Result<(PcStage, Digests)> {
    let params = cfg.pc_params();
    let registry: Vec<MethodId> = REGISTRY.into_iter().filter(|m| cfg.enabled(*m)).collect();
    let outcomes = pc::run_all(&inputs, &params, &registry, exec)?;
    let mut bumped = inputs.clone();
    bumped.mu = perturbed_mu(&inputs, cfg.portfolio.sensitivity_bump);
    let shifted = pc::run_all(&bumped, &params, &registry, exec)?;

    let proposals: Vec<PcProposal> = outcomes.iter().filter_map(PcOutcome::proposal).cloned().collect();
    let sensitivities: Vec<f64> = proposals
        .iter()
        .map(|p| {
            shifted
                .iter()
                .filter_map(PcOutcome::proposal)
                .find(|q| q.method == p.method)
                .map_or(1.0, |q| review::turnover(&p.weights, &q.weights))
        })
        .collect();
    let mut digests = pc::emit_proposals(&outcomes, dir)?;
    let sens: BTreeMap<&str, Value> = proposals
        .iter()
        .zip(&sensitivities)
        .map(|(p, s)| (p.method.key(), json::fixed(*s, 6)))
        .collect();
    let v = json!({
        "schema": "mu-sensitivity/1",
        "bump_standard_errors": cfg.portfolio.sensitivity_bump,
        "perturbed_mu": bumped.mu.iter().map(|x| json::fixed(*x, 6)).collect::<Vec<_>>(),
        "total_variation": sens,
    });
    digests.insert(
        "sensitivity.json".into(),
        json::write_artifact(&dir.join("sensitivity.json"), &v)?,
    );
    Ok((
        PcStage {
            inputs,
            proposals,
            sensitivities,
        },
        digests,
    ))
}

fn emit_risk_reports(proposals: &[PcProposal], reports: &[RiskReport], dir: &Path) -> Result<Digests> {
    let mut d = Digests::new();
    for (p, r) in proposals.iter().zip(reports) {
        let name = format!("risk/{}.json", p.method.key());
        let v = json!({ "schema": "risk-report/1", "method_id": p.method.key(), "report": r });
        d.insert(name.clone(), json::write_artifact(&dir.join(&name), &v)?);
    }
    Ok(d)
}

/// Weights of a previous `cio_decision.json`, keyed by slug.
fn previous_weights(path: &Path) -> Result<BTreeMap<String, f64>> {
    let v: Value = json::read_json(path)?;
    let map = v
        .pointer("/chosen/asset_weights")
        .and_then(Value::as_object)
        .ok_or_else(|| SaaError::format(path.display().to_string(), "no chosen.asset_weights"))?;
    map.iter()
        .map(|(k, x)| {
            x.as_f64()
                .map(|w| (k.clone(), w))
                .ok_or_else(|| SaaError::format(path.display().to_string(), format!("weight of `{k}` is not a number")))
        })
        .collect()
}

/// Runs every stage into `out` and writes the manifest. Stage failures are
/// recorded in the manifest (outcome `failed`); only an invalid config or
/// an unwritable output directory is returned as an error.
pub fn run_pipeline(cfg: &LoadedConfig, out: &Path, opts: RunOptions) -> Result<RunManifest> {
    let mut cfg = cfg.clone();
    if let Some(d) = opts.as_of {
        cfg.config.as_of = d;
    }
    if let Some(s) = opts.seed {
        cfg.config.seeds = Seeds {
            assignment: s,
            resampling: s,
        };
    }
    cfg.validate()?;
    let c = &cfg.config;
    let as_of = c.as_of;
    let exec = opts.exec;
    fs::create_dir_all(out).map_err(|e| SaaError::io(out, e))?;
    let mut rec = Recorder {
        out,
        stages: Vec::new(),
        timings: BTreeMap::new(),
        failed: None,
    };

    let macro_out = rec.stage(STAGES[0], &[regime::MACRO_VIEW_SCHEMA], |dir| {
        macro_stage(&cfg, as_of, dir)
    });

    let cma_out = rec.stage(STAGES[1], &[cma::CMA_SCHEMA], |dir| {
        let m = macro_out.as_ref().expect("stage runs only after macro");
        // The equilibrium method needs Σ, so it is estimated here and
        // published by the covariance stage.
        let market = load_market(&cfg, as_of)?;
        let labels = cma::align_labels(&market.panel.dates, &m.labels);
        let ctx = CmaContext {
            panel: &market.panel,
            sigma: &market.cov.matrix,
            cap_weights: &market.caps,
            risk_free_rate: market.rf,
            regime: m.view.regime,
            labels: &labels,
            as_of: Some(as_of),
            settings: &c.cma,
        };
        let set = cma::build_cma_set(&ctx, exec)?;
        let d = cma::emit_cma_artifacts(&set, dir)?;
        Ok(((market, set), d))
    });

    let cov_out = rec.stage(STAGES[2], &["covariance/1"], |dir| {
        let (market, _) = cma_out.as_ref().expect("stage runs only after CMAs");
        Ok(((), covariance_artifact(&market.cov, dir)?))
    });
    let _ = cov_out;

    let pc_out = rec.stage(STAGES[3], &["pc-proposal/1", "pc-index/1", "mu-sensitivity/1"], |dir| {
        let (market, set) = cma_out.as_ref().expect("stage runs only after CMAs");
        pc_stage(c, pc_inputs(c, market, set), exec, dir)
    });

    let policy = c.policy()?;
    let slugs = c.slugs();
    let (scenarios, sigma) = match &cma_out {
        Some((m, _)) => (m.panel.returns.clone(), m.cov.matrix.clone()),
        None => (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)),
    };
    let rf = cma_out.as_ref().map_or(0.0, |(m, _)| m.rf);
    let risk_ctx = RiskContext {
        slugs: &slugs,
        sigma: &sigma,
        scenarios: &scenarios,
        backtest_rf: rf,
        rebalancing: c.risk.rebalancing,
        policy: &policy,
        factors: &c.risk.factors,
        alpha: c.risk.alpha,
    };

    let review_schemas = [
        "risk-report/1",
        "review-assignments/1",
        "peer-review/1",
        "ballots/1",
        "ranking/1",
        "shortlist/1",
    ];
    let review_out = rec.stage(STAGES[4], &review_schemas, |dir| {
        let pcs = pc_out.as_ref().expect("stage runs only after PC");
        let regime = macro_out.as_ref().expect("macro ran").view.regime;
        let reports: Vec<RiskReport> = exec.map(&pcs.proposals, |p| risk::cro_report(&p.weights, &risk_ctx));
        let mut d = emit_risk_reports(&pcs.proposals, &reports, dir)?;
        let settings = ReviewSettings {
            seed: c.seeds.assignment,
            regime,
            lambda: &c.lambda_table,
            regime_table: &c.regime_table,
            weights: &c.score_weights,
        };
        let outcome = review::run_review(
            &pcs.proposals,
            &reports,
            &pcs.sensitivities,
            &pcs.inputs,
            &c.pc_params(),
            &risk_ctx,
            &settings,
            exec,
        )?;
        d.extend(review::emit_review(&outcome, c.seeds.assignment, dir)?);
        Ok(((reports, outcome), d))
    });

    let cio_out = rec.stage(
        STAGES[5],
        &["ensembles/1", "cio-decision/1", "cio-escalation/1"],
        |dir| {
            let pcs = pc_out.as_ref().expect("stage runs only after PC");
            let (reports, outcome) = review_out.as_ref().expect("stage runs only after review");
            let view = &macro_out.as_ref().expect("macro ran").view;
            // Shortlisted methods enter the ensemble in their revised form.
            let mut proposals = pcs.proposals.clone();
            let mut reports = reports.clone();
            for r in &outcome.revisions {
                if let Some(k) = proposals.iter().position(|p| p.method == r.proposal.method) {
                    if r.turnover > 0.0 {
                        reports[k] = risk::cro_report(&r.proposal.weights, &risk_ctx);
                    }
                    proposals[k] = r.proposal.clone();
                }
            }
            let ctx = CioContext {
                inputs: &pcs.inputs,
                proposals: &proposals,
                reports: &reports,
                sensitivities: &pcs.sensitivities,
                ranking: &outcome.ranking,
                regime: view.regime,
                regime_table: &c.regime_table,
                benchmark: &policy.benchmark.weights,
                weights: &c.score_weights,
            };
            let results = cio::combine_all(&ctx, exec)?;
            let decision = cio::select_ensemble(&results, &ctx, &risk_ctx);
            let mut d = cio::emit_cio(&results, &decision, &slugs, dir)?;
            if let CioOutcome::Decision(dec) = &decision {
                let b = &policy.benchmark.weights;
                let b_vol = crate::linalg::quad_form(&pcs.inputs.sigma, b).max(0.0).sqrt();
                let previous = match &c.cio.previous_decision {
                    Some(p) => Some(previous_weights(&cfg.resolve(p))?),
                    None => None,
                };
                let names = c.names();
                let memo = cio::render_board_memo(&MemoInputs {
                    as_of,
                    decision: dec,
                    inputs: &pcs.inputs,
                    names: Some(&names),
                    view,
                    benchmark: BenchmarkStats {
                        expected_return: crate::linalg::dot(&pcs.inputs.mu, b),
                        vol: b_vol,
                        sharpe: pcs.inputs.sharpe(b),
                        backtest_sharpe: risk::cro_report(b, &risk_ctx).backtest.map(|s| s.sharpe),
                    },
                    previous: previous.as_ref(),
                    drift_trigger: c.cio.drift_trigger,
                });
                d.insert(
                    "board_memo.md".into(),
                    json::write_bytes(&dir.join("board_memo.md"), memo.as_bytes())?,
                );
            }
            Ok((decision, d))
        },
    );

    let outcome = match (&rec.failed, &cio_out) {
        (None, Some(CioOutcome::Decision(_))) => RunOutcome::Decision,
        (None, Some(CioOutcome::Escalation(_))) => RunOutcome::Escalation,
        _ => RunOutcome::Failed,
    };
    let mut disabled: Vec<String> = c
        .method_toggles
        .iter()
        .filter(|(_, on)| !**on)
        .map(|(k, _)| k.clone())
        .collect();
    disabled.sort();
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        config_path: fs::canonicalize(&cfg.path).unwrap_or_else(|_| cfg.path.clone()),
        config_hash: cfg.hash.clone(),
        as_of,
        seeds: c.seeds,
        regime_override: c.regime_override,
        disabled_methods: disabled,
        stages: rec.stages,
        outcome,
        failed_stage: rec.failed,
    };
    json::write_artifact(&out.join(MANIFEST_FILE), &manifest)?;
    let timings: BTreeMap<&String, Value> = rec.timings.iter().map(|(k, v)| (k, json::fixed(*v, 3))).collect();
    json::write_artifact(&out.join(TIMINGS_FILE), &json!({ "milliseconds": timings }))?;
    Ok(manifest)
}

/// SHA-256 of every file under `dir` except the timings sidecar, keyed by
/// '/'-separated relative path.
pub fn tree_digests(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| SaaError::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| SaaError::io(dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("walked path is under root");
                let key = rel.iter().map(|c| c.to_string_lossy()).collect::<Vec<_>>().join("/");
                if key != TIMINGS_FILE {
                    let bytes = fs::read(&p).map_err(|e| SaaError::io(&p, e))?;
                    out.insert(key, json::sha256_hex(&bytes));
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Files whose digests disagree with the manifest (or are missing).
pub fn verify_manifest(dir: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let tree = tree_digests(dir)?;
    let mut bad = Vec::new();
    for s in &manifest.stages {
        for (file, digest) in &s.digests {
            let key = format!("{}/{file}", s.name);
            if tree.get(&key) != Some(digest) {
                bad.push(key);
            }
        }
    }
    Ok(bad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub replay_dir: PathBuf,
    pub outcome: RunOutcome,
    /// Paths present in only one tree or differing in content.
    pub mismatches: Vec<String>,
}

/// Re-runs a recorded run from its manifest into `out` (default: a
/// `.replay` sibling of the run directory) and compares the two trees.
pub fn replay(manifest_path: &Path, out: Option<&Path>, exec: Execution) -> Result<ReplayReport> {
    let manifest: RunManifest = json::read_json(manifest_path)?;
    let run_dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = LoadedConfig::load(&manifest.config_path)?;
    if cfg.hash != manifest.config_hash {
        return Err(SaaError::Config(format!(
            "{} changed since the run (hash {} vs {})",
            manifest.config_path.display(),
            cfg.hash,
            manifest.config_hash
        )));
    }
    let bad = verify_manifest(&run_dir, &manifest)?;
    if !bad.is_empty() {
        return Err(SaaError::Value(format!(
            "recorded artifacts no longer match the manifest: {}",
            bad.join(", ")
        )));
    }
    let replay_dir = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let name = run_dir
                .file_name()
                .map_or("run".into(), |n| n.to_string_lossy().into_owned());
            run_dir.with_file_name(format!("{name}.replay"))
        }
    };
    if replay_dir.exists() {
        let stale = fs::read_dir(&replay_dir)
            .map_err(|e| SaaError::io(&replay_dir, e))?
            .next()
            .is_some();
        if stale && out.is_none() && replay_dir.join(MANIFEST_FILE).is_file() {
            fs::remove_dir_all(&replay_dir).map_err(|e| SaaError::io(&replay_dir, e))?;
        } else if stale {
            return Err(SaaError::Config(format!(
                "replay directory {} is not empty",
                replay_dir.display()
            )));
        }
    }
    let mut cfg = cfg;
    cfg.config.seeds = manifest.seeds;
    let replayed = run_pipeline(
        &cfg,
        &replay_dir,
        RunOptions {
            as_of: Some(manifest.as_of),
            seed: None,
            exec,
        },
    )?;
    let a = tree_digests(&run_dir)?;
    let b = tree_digests(&replay_dir)?;
    let mut mismatches: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .chain(b.keys().filter(|k| !a.contains_key(*k)).cloned())
        .collect();
    mismatches.sort();
    Ok(ReplayReport {
        replay_dir,
        outcome: replayed.outcome,
        mismatches,
    })
}

/// Past runs under `dir`: `dir` itself when it holds a manifest, else every
/// immediate subdirectory that does, in name order.
pub fn load_past_runs(dir: &Path) -> Result<Vec<PastRun>> {
    let load = |run: &Path| -> Result<PastRun> {
        let m: RunManifest = json::read_json(&run.join(MANIFEST_FILE))?;
        let set: CmaSet = json::read_json(&run.join(STAGES[1]).join("cma-set.json"))?;
        Ok(PastRun::from_cma_set(m.as_of, &set))
    };
    if dir.join(MANIFEST_FILE).is_file() {
        return Ok(vec![load(dir)?]);
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SaaError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    subs.sort();
    subs.iter().map(|p| load(p)).collect()
}
