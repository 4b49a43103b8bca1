use serde::{Deserialize, Serialize};

use super::assign::{ReviewAssignment, ReviewKind};
use crate::linalg;
use crate::pc::{MethodId, PcInputs, PcProposal};
use crate::risk::{self, RiskReport};

/// Top weight above which a review flags concentration.
pub const CONCENTRATION_LIMIT: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricScores {
    #[serde(serialize_with = "crate::json::dp4")]
    pub soundness: f64,
    /// `None` when the CRO report is missing.
    pub risk_posture: Option<f64>,
    #[serde(serialize_with = "crate::json::dp4")]
    pub diversification: f64,
    #[serde(serialize_with = "crate::json::dp4")]
    pub regime_fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerReview {
    pub reviewer: MethodId,
    pub target: MethodId,
    pub kind: ReviewKind,
    pub scores: RubricScores,
    /// Weighted mean of the available rubric scores, in [0, 5].
    #[serde(serialize_with = "crate::json::dp4")]
    pub overall: f64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub identity_residual: f64,
    pub flags: Vec<String>,
    pub text: String,
}

impl PeerReview {
    pub fn flags_concentration(&self) -> bool {
        self.flags.iter().any(|f| f == "concentration")
    }
}

/// How far the weights are from the target method's defining identity.
/// Methods defined only by an optimum report the bound/simplex residual.
pub fn identity_residual(p: &PcProposal, inputs: &PcInputs) -> f64 {
    let w = &p.weights;
    let b = &inputs.bounds;
    let simplex = (w.iter().sum::<f64>() - 1.0).abs()
        + w.iter()
            .zip(b.lo.iter().zip(&b.hi))
            .map(|(x, (l, h))| (l - x).max(x - h).max(0.0))
            .sum::<f64>();
    // Relative spread of a quantity that should be constant over held assets.
    let spread = |v: Vec<f64>| {
        let held: Vec<f64> = v
            .into_iter()
            .zip(w)
            .filter(|(_, x)| **x > 1e-12)
            .map(|(v, _)| v)
            .collect();
        let hi = held.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = held.iter().copied().fold(f64::INFINITY, f64::min);
        if held.is_empty() || hi <= 0.0 {
            0.0
        } else {
            (hi - lo) / hi
        }
    };
    let vols = inputs.vols();
    let detail = |k: &str| p.details.get(k).copied().unwrap_or(0.0);
    let specific = match p.method {
        MethodId::EqualWeight => spread(w.clone()),
        MethodId::InverseVol => spread(w.iter().zip(&vols).map(|(x, s)| x * s).collect()),
        MethodId::InverseVariance => spread(w.iter().zip(&vols).map(|(x, s)| x * s * s).collect()),
        MethodId::MarketCap => inputs
            .caps
            .as_ref()
            .map_or(0.0, |c| linalg::l1_distance(w, &linalg::normalize(c.clone()))),
        MethodId::RiskParity => {
            let k = 1.0 / w.len() as f64;
            risk::risk_contributions(w, &inputs.sigma)
                .iter()
                .map(|rc| (rc - k).abs())
                .fold(0.0, f64::max)
        }
        MethodId::TailRiskParity => detail("contribution_spread"),
        MethodId::MaxDrawdown => (-detail("max_drawdown") - detail("dd_limit")).max(0.0),
        MethodId::MaxEntropy | MethodId::Adversarial => (detail("sharpe_floor") - p.diagnostics.sharpe).max(0.0),
        MethodId::Tpa => detail("budget_residual"),
        _ => 0.0,
    };
    simplex + specific
}

fn soundness_score(residual: f64) -> f64 {
    match residual {
        r if r <= 1e-6 => 5.0,
        r if r <= 1e-4 => 4.0,
        r if r <= 1e-2 => 3.0,
        r if r <= 1e-1 => 2.0,
        _ => 1.0,
    }
}

/// 5 when every IPS check passes, at most 2 once any fails.
fn risk_posture_score(report: &RiskReport) -> f64 {
    let failed = report.ips_flags.iter().filter(|f| !f.pass).count();
    if report.ips_flags.is_empty() {
        return 0.0;
    }
    match failed {
        0 => 5.0,
        k => (3.0 - k as f64).max(0.0),
    }
}

/// Rubric review of `target` by `assignment.reviewer`. `regime_fit` is the
/// target's table fit in [0, 1].
pub fn generate_review(
    assignment: &ReviewAssignment,
    target: &PcProposal,
    report: Option<&RiskReport>,
    inputs: &PcInputs,
    regime_fit: f64,
) -> PeerReview {
    let residual = identity_residual(target, inputs);
    let n = target.weights.len() as f64;
    let scores = RubricScores {
        soundness: soundness_score(residual),
        risk_posture: report.map(risk_posture_score),
        diversification: 5.0 * (risk::effective_n(&target.weights) / n).clamp(0.0, 1.0),
        regime_fit: 5.0 * regime_fit.clamp(0.0, 1.0),
    };
    let (ws, wf) = match assignment.kind {
        ReviewKind::Intra => (2.0, 1.0),
        ReviewKind::Inter => (1.0, 2.0),
    };
    let mut parts = vec![
        (scores.soundness, ws),
        (scores.diversification, 1.0),
        (scores.regime_fit, wf),
    ];
    if let Some(r) = scores.risk_posture {
        parts.push((r, 1.0));
    }
    let overall = parts.iter().map(|(s, w)| s * w).sum::<f64>() / parts.iter().map(|(_, w)| w).sum::<f64>();

    let top = risk::top_weight(&target.weights);
    let mut flags = Vec::new();
    if top > CONCENTRATION_LIMIT {
        flags.push("concentration".to_string());
    }
    if report.is_some_and(|r| !r.is_compliant()) {
        flags.push("ips".to_string());
    }
    if scores.soundness < 3.0 {
        flags.push("identity".to_string());
    }

    let focus = match assignment.kind {
        ReviewKind::Intra => "Intra-category review weighted toward method soundness.",
        ReviewKind::Inter => "Inter-category review weighted toward regime fit.",
    };
    let posture = match report {
        None => "Risk posture unavailable: no CRO report.".to_string(),
        Some(r) if r.is_compliant() => "All IPS checks pass.".to_string(),
        Some(r) => {
            let failed: Vec<&str> = r
                .ips_flags
                .iter()
                .filter(|f| !f.pass)
                .map(|f| f.check.label())
                .collect();
            format!("Fails IPS checks: {}.", failed.join(", "))
        }
    };
    let text = format!(
        "{} reviews {}. {focus} Identity residual {residual:.2e} (soundness {:.0}/5). {posture} \
         Effective N {:.2} of {n:.0}; top weight {:.1}%{}. Overall {overall:.2}/5.",
        assignment.reviewer.name(),
        target.method.name(),
        scores.soundness,
        risk::effective_n(&target.weights),
        top * 100.0,
        if top > CONCENTRATION_LIMIT {
            ", flagged as concentrated"
        } else {
            ""
        },
    );
    PeerReview {
        reviewer: assignment.reviewer,
        target: target.method,
        kind: assignment.kind,
        scores,
        overall,
        identity_residual: residual,
        flags,
        text,
    }
}
