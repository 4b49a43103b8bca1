//! Portfolio-construction methods.
//!
//! Every method maps the shared [`PcInputs`] to a long-only, fully invested
//! weight vector inside the configured bounds. The registry order below is
//! the order proposals are reported in, independent of completion order.

mod entropy;
mod heuristic;
mod mean_variance;
mod risk_budget;
mod scenario;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Result, SaaError};
use crate::exec::Execution;
use crate::json;
use crate::linalg;
use crate::market::AssetId;
use crate::risk;
use crate::solver::{qp, Bounds, Constraint};

pub use entropy::{adversarial_diversifier, max_entropy};
pub use heuristic::{heuristic_weights, hrp, hrp_leaf_order, min_correlation, volatility_targeting, HeuristicKind};
pub(crate) use mean_variance::tangency;
pub use mean_variance::{
    bl_posterior, black_litterman, gmv, max_diversification, max_sharpe, resampled_frontier, robust_mv, tpa_two_factor,
};
pub use risk_budget::{risk_parity_erc, smoothed_tail_contributions, tail_risk_parity};
pub use scenario::{cvar_min, downside_deviation, maxdd_constrained, mean_downside, ru_cvar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    A,
    B,
    C,
    D,
    E,
}

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::A => "A: Heuristic",
            Category::B => "B: Return-optimized",
            Category::C => "C: Risk-structured",
            Category::D => "D: Non-traditional",
            Category::E => "E: Researcher",
        }
    }

    /// The four review families; the researcher's method reviews within D.
    pub fn family(self) -> Category {
        match self {
            Category::E => Category::D,
            c => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    EqualWeight,
    MarketCap,
    InverseVol,
    InverseVariance,
    VolTargeting,
    MaxSharpe,
    BlackLitterman,
    RobustMv,
    Resampled,
    MeanDownside,
    Gmv,
    RiskParity,
    Hrp,
    MaxDiversification,
    MinCorrelation,
    Cvar,
    MaxDrawdown,
    TailRiskParity,
    Tpa,
    Adversarial,
    MaxEntropy,
}

/// The twenty canonical methods in reporting order.
pub const REGISTRY: [MethodId; 20] = {
    use MethodId::*;
    [
        EqualWeight,
        MarketCap,
        InverseVol,
        InverseVariance,
        VolTargeting,
        MaxSharpe,
        BlackLitterman,
        RobustMv,
        Resampled,
        MeanDownside,
        Gmv,
        RiskParity,
        Hrp,
        MaxDiversification,
        MinCorrelation,
        Cvar,
        MaxDrawdown,
        TailRiskParity,
        Tpa,
        Adversarial,
    ]
};

pub const ALL_METHODS: [MethodId; 21] = {
    let mut all = [MethodId::MaxEntropy; 21];
    let mut i = 0;
    while i < 20 {
        all[i] = REGISTRY[i];
        i += 1;
    }
    all
};

impl MethodId {
    pub fn key(self) -> &'static str {
        use MethodId::*;
        match self {
            EqualWeight => "equal-weight",
            MarketCap => "market-cap",
            InverseVol => "inverse-vol",
            InverseVariance => "inverse-variance",
            VolTargeting => "vol-targeting",
            MaxSharpe => "max-sharpe",
            BlackLitterman => "black-litterman",
            RobustMv => "robust-mv",
            Resampled => "resampled",
            MeanDownside => "mean-downside",
            Gmv => "gmv",
            RiskParity => "risk-parity",
            Hrp => "hrp",
            MaxDiversification => "max-diversification",
            MinCorrelation => "min-correlation",
            Cvar => "cvar",
            MaxDrawdown => "max-drawdown",
            TailRiskParity => "tail-risk-parity",
            Tpa => "tpa",
            Adversarial => "adversarial",
            MaxEntropy => "max-entropy",
        }
    }

    pub fn name(self) -> &'static str {
        use MethodId::*;
        match self {
            EqualWeight => "Equal Weight",
            MarketCap => "Market-Cap",
            InverseVol => "Inverse Vol",
            InverseVariance => "Inverse Variance",
            VolTargeting => "Volatility Targeting",
            MaxSharpe => "Max Sharpe",
            BlackLitterman => "Black-Litterman",
            RobustMv => "Robust MV",
            Resampled => "Resampled",
            MeanDownside => "Mean-Downside",
            Gmv => "GMV",
            RiskParity => "Risk Parity",
            Hrp => "HRP",
            MaxDiversification => "Max Diversification",
            MinCorrelation => "Min Correlation",
            Cvar => "CVaR",
            MaxDrawdown => "Max Drawdown",
            TailRiskParity => "Tail Risk Parity",
            Tpa => "TPA",
            Adversarial => "Adversarial",
            MaxEntropy => "Max Entropy",
        }
    }

    pub fn parse(key: &str) -> Option<MethodId> {
        ALL_METHODS.into_iter().find(|m| m.key() == key)
    }

    pub fn category(self) -> Category {
        use MethodId::*;
        match self {
            EqualWeight | MarketCap | InverseVol | InverseVariance | VolTargeting => Category::A,
            MaxSharpe | BlackLitterman | RobustMv | Resampled | MeanDownside => Category::B,
            Gmv | RiskParity | Hrp | MaxDiversification | MinCorrelation => Category::C,
            Cvar | MaxDrawdown | TailRiskParity | Tpa | Adversarial => Category::D,
            MaxEntropy => Category::E,
        }
    }

    /// Position in the reporting order.
    pub fn order(self) -> usize {
        ALL_METHODS
            .iter()
            .position(|m| *m == self)
            .expect("every method is listed")
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shared inputs for all methods. Returns are decimal/yr except `scenarios`,
/// which holds monthly returns (T × n).
#[derive(Debug, Clone)]
pub struct PcInputs {
    pub assets: Vec<AssetId>,
    pub mu: Vec<f64>,
    /// Confidence of each asset's final CMA, used as Black-Litterman view strength.
    pub confidence: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub scenarios: DMatrix<f64>,
    /// Market-cap weights in universe order.
    pub caps: Option<Vec<f64>>,
    pub rf: f64,
    pub bounds: Bounds,
    pub target_vol: f64,
    pub cvar_level: f64,
    /// Equity and bond factor loadings per asset.
    pub factor_loadings: Vec<[f64; 2]>,
}

impl PcInputs {
    pub fn n(&self) -> usize {
        self.assets.len()
    }

    pub fn slugs(&self) -> Vec<String> {
        self.assets.iter().map(|a| a.slug.clone()).collect()
    }

    pub fn vols(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.sigma[(i, i)].max(0.0).sqrt()).collect()
    }

    pub fn excess(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m - self.rf).collect()
    }

    pub fn cash_index(&self) -> Option<usize> {
        self.assets
            .iter()
            .position(|a| a.category == crate::market::AssetCategory::Cash)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let bad = |m: String| Err(SaaError::Domain(m));
        if n == 0 {
            return bad("no assets".into());
        }
        if self.mu.len() != n || self.confidence.len() != n || self.factor_loadings.len() != n {
            return bad("per-asset vectors do not match the universe".into());
        }
        if self.sigma.nrows() != n || self.sigma.ncols() != n {
            return bad(format!(
                "covariance is {}x{}, expected {n}x{n}",
                self.sigma.nrows(),
                self.sigma.ncols()
            ));
        }
        if !linalg::is_symmetric(&self.sigma, 1e-12) {
            return bad("covariance is not symmetric".into());
        }
        if self.scenarios.ncols() != n || self.scenarios.nrows() == 0 {
            return bad("scenario matrix does not match the universe".into());
        }
        if let Some(c) = &self.caps {
            if c.len() != n {
                return bad("market caps do not match the universe".into());
            }
        }
        if !(self.cvar_level > 0.0 && self.cvar_level < 1.0) {
            return bad(format!("CVaR level {} outside (0, 1)", self.cvar_level));
        }
        if self.bounds.n() != n {
            return bad("bounds do not match the universe".into());
        }
        self.bounds.validate()
    }

    pub fn sharpe(&self, w: &[f64]) -> f64 {
        sharpe_ratio(w, &self.mu, &self.sigma, self.rf)
    }
}

/// (μᵀw − rf)/σ(w); zero for a riskless portfolio.
pub fn sharpe_ratio(w: &[f64], mu: &[f64], sigma: &DMatrix<f64>, rf: f64) -> f64 {
    let vol = linalg::quad_form(sigma, w).max(0.0).sqrt();
    if vol <= 1e-14 {
        return 0.0;
    }
    (linalg::dot(mu, w) - rf) / vol
}

/// Method parameters with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcParams {
    pub bl_tau: f64,
    pub risk_aversion: f64,
    pub robust_kappa: f64,
    /// Sample length for the robust uncertainty box; defaults to the scenario count.
    pub robust_horizon_months: Option<usize>,
    pub resamples: usize,
    pub resample_seed: u64,
    /// Scale on the bootstrap noise; 0 reproduces max-Sharpe exactly.
    pub resample_noise: f64,
    pub resample_shrinkage: f64,
    /// Minimum acceptable return for mean-downside; defaults to rf.
    pub mar: Option<f64>,
    pub dd_limit: f64,
    pub tpa_budget: [f64; 2],
    pub entropy_floor_frac: f64,
    pub adversarial_floor_frac: f64,
    pub researcher_library: Vec<String>,
}

impl Default for PcParams {
    fn default() -> Self {
        PcParams {
            bl_tau: 0.05,
            risk_aversion: 2.5,
            robust_kappa: 1.0,
            robust_horizon_months: None,
            resamples: 200,
            resample_seed: 1,
            resample_noise: 1.0,
            resample_shrinkage: 0.0,
            mar: None,
            dd_limit: 0.25,
            tpa_budget: [0.6, 0.4],
            entropy_floor_frac: 0.8,
            adversarial_floor_frac: 0.75,
            researcher_library: vec![MethodId::MaxEntropy.key().to_string()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub expected_return: f64,
    pub ex_ante_vol: f64,
    pub sharpe: f64,
    pub effective_n: f64,
}

impl Diagnostics {
    pub fn compute(w: &[f64], inputs: &PcInputs) -> Self {
        Diagnostics {
            expected_return: linalg::dot(&inputs.mu, w),
            ex_ante_vol: linalg::quad_form(&inputs.sigma, w).max(0.0).sqrt(),
            sharpe: inputs.sharpe(w),
            effective_n: risk::effective_n(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcProposal {
    pub method: MethodId,
    pub category: Category,
    pub assets: Vec<String>,
    pub weights: Vec<f64>,
    pub diagnostics: Diagnostics,
    /// Method-specific figures (solver residuals, S*, CVaR, ...).
    pub details: BTreeMap<String, f64>,
    pub rationale: String,
}

impl PcProposal {
    /// Cleans solver noise, enforces the bounds and computes diagnostics.
    pub(crate) fn build(
        method: MethodId,
        inputs: &PcInputs,
        raw: Vec<f64>,
        rationale: impl Into<String>,
        details: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let mut rationale = rationale.into();
        let weights = finalize_weights(raw, &inputs.bounds, &mut rationale)?;
        Ok(PcProposal {
            method,
            category: method.category(),
            assets: inputs.slugs(),
            diagnostics: Diagnostics::compute(&weights, inputs),
            weights,
            details,
            rationale,
        })
    }

    pub fn weight_map(&self) -> BTreeMap<String, f64> {
        self.assets.iter().cloned().zip(self.weights.iter().copied()).collect()
    }

    pub fn artifact(&self) -> Value {
        let weights: BTreeMap<&String, Value> = self
            .assets
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| (s, json::fixed(*w, 6)))
            .collect();
        let details: BTreeMap<&String, Value> = self.details.iter().map(|(k, v)| (k, json::fixed(*v, 6))).collect();
        json!({
            "schema": "pc-proposal/1",
            "method_id": self.method.key(),
            "method": self.method.name(),
            "category": self.category.label(),
            "weights": weights,
            "diagnostics": {
                "expected_return": json::fixed(self.diagnostics.expected_return, 6),
                "ex_ante_vol": json::fixed(self.diagnostics.ex_ante_vol, 6),
                "sharpe": json::fixed(self.diagnostics.sharpe, 6),
                "effective_n": json::fixed(self.diagnostics.effective_n, 6),
            },
            "details": details,
            "rationale": self.rationale,
        })
    }
}

fn finalize_weights(raw: Vec<f64>, bounds: &Bounds, note: &mut String) -> Result<Vec<f64>> {
    if raw.len() != bounds.n() || raw.iter().any(|x| !x.is_finite()) {
        return Err(SaaError::Value("method produced a malformed weight vector".into()));
    }
    let mut w: Vec<f64> = raw.iter().map(|x| if x.abs() < 1e-13 { 0.0 } else { *x }).collect();
    if w.iter().any(|x| *x < 0.0) || !bounds.contains(&w, 1e-12) {
        let before = w.clone();
        w = bounds.project(&w);
        let moved = linalg::l1_distance(&before, &w);
        if moved > 1e-9 {
            note.push_str(&format!(" Projected onto the weight bounds (L1 move {moved:.2e})."));
        }
    }
    for (x, (l, h)) in w.iter_mut().zip(bounds.lo.iter().zip(&bounds.hi)) {
        *x = x.clamp(*l, *h);
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(SaaError::Value(format!("weights sum to {s} after finalization")));
    }
    Ok(w)
}

/// ½xᵀGx + aᵀx on the given rows, with G rescaled to unit mean diagonal and
/// a relative ridge of 1e-10 so ties resolve toward the minimum-norm point.
pub(crate) fn qp_min(g: &DMatrix<f64>, a: &[f64], eq: &[Constraint], ineq: &[Constraint]) -> Result<Vec<f64>> {
    let scale = linalg::mean_diagonal(g).abs().max(1e-300);
    let n = g.nrows();
    let mut gs = g / scale;
    for i in 0..n {
        gs[(i, i)] += 1e-10;
    }
    let a_s: Vec<f64> = a.iter().map(|x| x / scale).collect();
    Ok(qp::solve(&gs, &a_s, eq, ineq)?.x)
}

/// A failure entry in the proposal list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcFailure {
    pub method: String,
    pub category: Category,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PcOutcome {
    Proposal(PcProposal),
    Failed(PcFailure),
}

impl PcOutcome {
    pub fn proposal(&self) -> Option<&PcProposal> {
        match self {
            PcOutcome::Proposal(p) => Some(p),
            PcOutcome::Failed(_) => None,
        }
    }
}

/// First library entry not already in the registry.
pub fn researcher_discover(registry: &[MethodId], library: &[String]) -> Option<String> {
    library
        .iter()
        .find(|key| !registry.iter().any(|m| m.key() == key.as_str()))
        .cloned()
}

/// Runs one method other than the adversarial diversifier.
pub fn run_method(method: MethodId, inputs: &PcInputs, params: &PcParams, exec: Execution) -> Result<PcProposal> {
    use MethodId::*;
    match method {
        EqualWeight => heuristic_weights(HeuristicKind::EqualWeight, inputs),
        MarketCap => heuristic_weights(HeuristicKind::MarketCap, inputs),
        InverseVol => heuristic_weights(HeuristicKind::InverseVol, inputs),
        InverseVariance => heuristic_weights(HeuristicKind::InverseVariance, inputs),
        VolTargeting => {
            let base = heuristic::ex_cash_equal_weight(inputs);
            volatility_targeting(inputs, &base)
        }
        MaxSharpe => max_sharpe(inputs),
        BlackLitterman => black_litterman(inputs, params.bl_tau, params.risk_aversion),
        RobustMv => {
            let t = params.robust_horizon_months.unwrap_or(inputs.scenarios.nrows());
            robust_mv(inputs, params.robust_kappa, t)
        }
        Resampled => resampled_frontier(inputs, params, exec),
        MeanDownside => mean_downside(inputs, params.mar.unwrap_or(inputs.rf)),
        Gmv => gmv(inputs),
        RiskParity => risk_parity_erc(inputs),
        Hrp => hrp(inputs),
        MaxDiversification => max_diversification(inputs),
        MinCorrelation => min_correlation(inputs),
        Cvar => cvar_min(inputs),
        MaxDrawdown => maxdd_constrained(inputs, params.dd_limit),
        TailRiskParity => tail_risk_parity(inputs),
        Tpa => tpa_two_factor(inputs, &inputs.factor_loadings, params.tpa_budget),
        MaxEntropy => max_entropy(inputs, params.entropy_floor_frac),
        Adversarial => Err(SaaError::Value("the adversarial diversifier needs its peers".into())),
    }
}

/// Runs the registry: every method except the adversarial diversifier
/// (plus the researcher's discovery) independently, then the adversarial
/// diversifier against the centroid of those results. Output follows the
/// registry order with the discovered method last.
pub fn run_all(inputs: &PcInputs, params: &PcParams, registry: &[MethodId], exec: Execution) -> Result<Vec<PcOutcome>> {
    inputs.validate()?;
    let mut ordered: Vec<MethodId> = registry.to_vec();
    ordered.sort_by_key(|m| m.order());
    ordered.dedup();

    let mut jobs: Vec<(String, Category)> = ordered
        .iter()
        .filter(|m| **m != MethodId::Adversarial)
        .map(|m| (m.key().to_string(), m.category()))
        .collect();
    let discovered = researcher_discover(&ordered, &params.researcher_library);
    if let Some(key) = &discovered {
        jobs.push((key.clone(), Category::E));
    }

    let results: Vec<PcOutcome> = exec.map(&jobs, |(key, category)| {
        let outcome = match MethodId::parse(key) {
            Some(m) => run_method(m, inputs, params, exec),
            None => Err(SaaError::Value(format!("no implementation for method `{key}`"))),
        };
        match outcome {
            Ok(mut p) => {
                p.category = *category;
                PcOutcome::Proposal(p)
            }
            Err(e) => PcOutcome::Failed(PcFailure {
                method: key.clone(),
                category: *category,
                error: e.to_string(),
            }),
        }
    });

    let mut out = Vec::with_capacity(results.len() + 1);
    let (canonical, researcher) = results.split_at(results.len() - usize::from(discovered.is_some()));
    out.extend_from_slice(canonical);
    if ordered.contains(&MethodId::Adversarial) {
        let peers: Vec<Vec<f64>> = results
            .iter()
            .filter_map(|o| o.proposal().map(|p| p.weights.clone()))
            .collect();
        let adv = adversarial_diversifier(inputs, &peers, params.adversarial_floor_frac);
        out.push(match adv {
            Ok(p) => PcOutcome::Proposal(p),
            Err(e) => PcOutcome::Failed(PcFailure {
                method: MethodId::Adversarial.key().into(),
                category: Category::D,
                error: e.to_string(),
            }),
        });
    }
    out.extend_from_slice(researcher);
    Ok(out)
}

/// Writes one file per proposal (or failure) plus an index; returns digests.
pub fn emit_proposals(outcomes: &[PcOutcome], dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut digests = BTreeMap::new();
    let mut index = Vec::new();
    for o in outcomes {
        let (key, value) = match o {
            PcOutcome::Proposal(p) => (p.method.key().to_string(), p.artifact()),
            PcOutcome::Failed(f) => (
                f.method.clone(),
                json!({
                    "schema": "pc-proposal/1",
                    "method_id": f.method,
                    "category": f.category.label(),
                    "failed": true,
                    "error": f.error,
                }),
            ),
        };
        let file = format!("{key}.json");
        digests.insert(file.clone(), json::write_artifact(&dir.join(&file), &value)?);
        index.push(json!({ "method_id": key, "file": file, "failed": o.proposal().is_none() }));
    }
    let idx = json!({ "schema": "pc-index/1", "proposals": index });
    digests.insert(
        "index.json".into(),
        json::write_artifact(&dir.join("index.json"), &idx)?,
    );
    Ok(digests)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_order_and_categories() {
        assert_eq!(REGISTRY.len(), 20);
        assert_eq!(ALL_METHODS[20], MethodId::MaxEntropy);
        let counts = REGISTRY.iter().fold(BTreeMap::new(), |mut m, id| {
            *m.entry(id.category()).or_insert(0) += 1;
            m
        });
        assert!(counts.values().all(|c| *c == 5));
        for m in ALL_METHODS {
            assert_eq!(MethodId::parse(m.key()), Some(m));
        }
    }

    #[test]
    fn researcher_rules() {
        let lib = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            researcher_discover(&REGISTRY, &lib(&["max-entropy"])).as_deref(),
            Some("max-entropy")
        );
        assert_eq!(researcher_discover(&ALL_METHODS, &lib(&["max-entropy"])), None);
        assert_eq!(
            researcher_discover(&ALL_METHODS, &lib(&["min-tracking-error", "max-entropy"])).as_deref(),
            Some("min-tracking-error")
        );
    }

    #[test]
    fn finalize_projects_violations() {
        let b = Bounds {
            lo: vec![0.0; 3],
            hi: vec![0.5; 3],
        };
        let mut note = String::new();
        let w = finalize_weights(vec![0.8, 0.2, 0.0], &b, &mut note).unwrap();
        assert!(b.contains(&w, 1e-12));
        assert!(note.contains("Projected"));
    }
}
