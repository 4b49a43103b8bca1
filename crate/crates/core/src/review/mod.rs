//! Strategy review: peer assignment, rubric reviews, Borda voting,
//! vote/metric blending, the diversity shortlist and the revision round.

mod assign;
mod revise;
mod rubric;
pub mod scoring;
mod vote;

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

pub use assign::{assign_reviews, Candidate, ReviewAssignment, ReviewKind};
pub use revise::{cap_weights, revise_proposal, turnover, Revision, MAX_REVISION_TURNOVER};
pub use rubric::{generate_review, identity_residual, PeerReview, RubricScores, CONCENTRATION_LIMIT};
pub use scoring::{CandidateFacts, IpsScoring, RegimeTable, ScoreWeights, SixScores};
pub use vote::{
    cast_ballot, composite_blend, diversity_shortlist, tally_borda, Ballot, CompositeRanking, LambdaTable, RankingRow,
    Shortlist, BOTTOM_POINTS, POINTS_PER_BALLOT, SLOT_POINTS,
};

use crate::error::{Result, SaaError};
use crate::exec::Execution;
use crate::json;
use crate::pc::{PcInputs, PcParams, PcProposal};
use crate::regime::Regime;
use crate::risk::{RiskContext, RiskReport};

/// Scorer facts for one proposal.
pub fn candidate_facts(
    p: &PcProposal,
    report: &RiskReport,
    inputs: &PcInputs,
    regime_fit: f64,
    mu_sensitivity: f64,
) -> CandidateFacts {
    CandidateFacts {
        backtest_sharpe: report.backtest.map(|b| b.sharpe),
        ips_pass_fraction: report.ips_pass_fraction(),
        effective_n: report.effective_n,
        n_assets: p.weights.len(),
        regime_fit,
        mu_sensitivity,
        cma_utilization: scoring::cma_utilization(&p.weights, &inputs.mu),
    }
}

/// Metric score in [0, 1] per candidate.
pub fn metric_scores(facts: &[CandidateFacts], weights: &ScoreWeights) -> Vec<SixScores> {
    scoring::score_all(facts, weights, IpsScoring::Fraction)
}

pub struct ReviewSettings<'a> {
    pub seed: u64,
    pub regime: Regime,
    pub lambda: &'a LambdaTable,
    pub regime_table: &'a RegimeTable,
    pub weights: &'a ScoreWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewOutcome {
    pub assignments: Vec<ReviewAssignment>,
    pub reviews: Vec<PeerReview>,
    pub ballots: Vec<Ballot>,
    pub metric: Vec<SixScores>,
    pub ranking: CompositeRanking,
    pub shortlist: Shortlist,
    pub revisions: Vec<Revision>,
}

/// The full review round over `proposals` (registry order), with one report
/// and one μ-sensitivity per proposal.
pub fn run_review(
    proposals: &[PcProposal],
    reports: &[RiskReport],
    sensitivities: &[f64],
    inputs: &PcInputs,
    params: &PcParams,
    ctx: &RiskContext<'_>,
    settings: &ReviewSettings<'_>,
    exec: Execution,
) -> Result<ReviewOutcome> {
    if reports.len() != proposals.len() || sensitivities.len() != proposals.len() {
        return Err(SaaError::Value(
            "one report and sensitivity per proposal required".into(),
        ));
    }
    let candidates: Vec<Candidate> = proposals
        .iter()
        .map(|p| Candidate {
            method: p.method,
            category: p.category,
        })
        .collect();
    let index = |m| {
        proposals
            .iter()
            .position(|p| p.method == m)
            .expect("assigned method is a candidate")
    };
    let fit: Vec<f64> = proposals
        .iter()
        .map(|p| settings.regime_table.fit(settings.regime, p.category))
        .collect();

    let assignments = assign_reviews(&candidates, settings.seed)?;
    let reviews = exec.map(&assignments, |a| {
        let k = index(a.target);
        generate_review(a, &proposals[k], Some(&reports[k]), inputs, fit[k])
    });
    // Every review is complete before any ballot is cast.
    let ballots = exec
        .map(proposals, |voter| {
            cast_ballot(voter, proposals, &reviews, inputs, params)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let totals = tally_borda(&ballots);
    let votes: Vec<i64> = proposals
        .iter()
        .map(|p| totals.get(&p.method).copied().unwrap_or(0))
        .collect();

    let facts: Vec<CandidateFacts> = proposals
        .iter()
        .enumerate()
        .map(|(k, p)| candidate_facts(p, &reports[k], inputs, fit[k], sensitivities[k]))
        .collect();
    let metric = metric_scores(&facts, settings.weights);
    let cats: Vec<_> = proposals.iter().map(|p| (p.method, p.category)).collect();
    let totals_metric: Vec<f64> = metric.iter().map(|m| m.total).collect();
    let ranking = composite_blend(
        &cats,
        &votes,
        &totals_metric,
        settings.lambda.get(settings.regime),
        settings.regime,
    )?;
    let shortlist = diversity_shortlist(&ranking);

    let revisions = shortlist
        .members
        .iter()
        .map(|m| {
            let k = index(*m);
            let received: Vec<PeerReview> = reviews.iter().filter(|r| r.target == *m).cloned().collect();
            revise_proposal(&proposals[k], &received, &reports[k], ctx, inputs)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ReviewOutcome {
        assignments,
        reviews,
        ballots,
        metric,
        ranking,
        shortlist,
        revisions,
    })
}

/// Writes assignments.json, reviews/*.json, ballots.json, ranking.json and
/// shortlist.json; returns digests keyed by relative path.
pub fn emit_review(outcome: &ReviewOutcome, seed: u64, dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut d = BTreeMap::new();
    let assignments: Vec<_> = outcome
        .assignments
        .iter()
        .map(|a| {
            json!({
                "reviewer": a.reviewer.key(),
                "target": a.target.key(),
                "kind": a.kind,
                "attempt": a.attempt,
            })
        })
        .collect();
    let v = json!({ "schema": "review-assignments/1", "seed": seed, "assignments": assignments });
    d.insert(
        "assignments.json".into(),
        json::write_artifact(&dir.join("assignments.json"), &v)?,
    );

    for r in &outcome.reviews {
        let name = format!("reviews/{}--{}.json", r.reviewer.key(), r.target.key());
        let v = json!({
            "schema": "peer-review/1",
            "reviewer": r.reviewer.key(),
            "target": r.target.key(),
            "kind": r.kind,
            "scores": {
                "soundness": json::fixed(r.scores.soundness, 4),
                "risk_posture": r.scores.risk_posture.map(|x| json::fixed(x, 4)),
                "diversification": json::fixed(r.scores.diversification, 4),
                "regime_fit": json::fixed(r.scores.regime_fit, 4),
            },
            "overall": json::fixed(r.overall, 4),
            "identity_residual": format!("{:.3e}", r.identity_residual),
            "flags": r.flags,
            "text": r.text,
        });
        d.insert(name.clone(), json::write_artifact(&dir.join(&name), &v)?);
    }

    let ballots: Vec<_> = outcome
        .ballots
        .iter()
        .map(|b| {
            json!({
                "voter": b.voter.key(),
                "top_five": b.top_five.iter().map(|m| m.key()).collect::<Vec<_>>(),
                "bottom": b.bottom.key(),
            })
        })
        .collect();
    let v = json!({ "schema": "ballots/1", "ballots": ballots });
    d.insert(
        "ballots.json".into(),
        json::write_artifact(&dir.join("ballots.json"), &v)?,
    );

    let rows: Vec<_> = outcome
        .ranking
        .rows
        .iter()
        .map(|r| {
            json!({
                "rank": r.rank,
                "method_id": r.method.key(),
                "method": r.method.name(),
                "category": r.category.label(),
                "vote": r.vote_total,
                "metric": json::fixed(r.metric_score, 6),
                "composite": json::fixed(r.composite, 6),
            })
        })
        .collect();
    let v = json!({
        "schema": "ranking/1",
        "regime": outcome.ranking.regime,
        "vote_weight": json::fixed(outcome.ranking.vote_weight, 6),
        "rows": rows,
    });
    d.insert(
        "ranking.json".into(),
        json::write_artifact(&dir.join("ranking.json"), &v)?,
    );

    let revisions: Vec<_> = outcome
        .revisions
        .iter()
        .map(|r| {
            json!({
                "method_id": r.proposal.method.key(),
                "turnover": json::fixed(r.turnover, 6),
                "notes": r.notes,
                "proposal": r.proposal.artifact(),
            })
        })
        .collect();
    let v = json!({
        "schema": "shortlist/1",
        "members": outcome.shortlist.members.iter().map(|m| m.key()).collect::<Vec<_>>(),
        "swaps": outcome.shortlist.swaps.iter().map(|(a, b)| [a.key(), b.key()]).collect::<Vec<_>>(),
        "note": outcome.shortlist.note,
        "revisions": revisions,
    });
    d.insert(
        "shortlist.json".into(),
        json::write_artifact(&dir.join("shortlist.json"), &v)?,
    );
    Ok(d)
}
