use super::rubric::{PeerReview, CONCENTRATION_LIMIT};
use crate::error::Result;
use crate::linalg;
use crate::pc::{PcInputs, PcProposal};
use crate::risk::{self, RiskContext, RiskReport};

/// Largest one-way turnover a revision may apply.
pub const MAX_REVISION_TURNOVER: f64 = 0.2;

/// One-way turnover ½‖a − b‖₁.
pub fn turnover(a: &[f64], b: &[f64]) -> f64 {
    0.5 * linalg::l1_distance(a, b)
}

/// Caps the largest weight, spreading the excess pro rata over the other
/// assets without pushing any of them past the cap.
pub fn cap_weights(w: &[f64], cap: f64) -> Vec<f64> {
    let mut w = w.to_vec();
    for _ in 0..w.len() {
        let excess: f64 = w.iter().map(|x| (x - cap).max(0.0)).sum();
        if excess <= 1e-15 {
            break;
        }
        let room: f64 = w.iter().filter(|x| **x < cap).sum();
        if room <= 0.0 {
            break;
        }
        for x in w.iter_mut() {
            if *x >= cap {
                *x = cap;
            } else {
                *x += excess * *x / room;
            }
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct Revision {
    pub proposal: PcProposal,
    pub turnover: f64,
    pub notes: Vec<String>,
}

/// Bounded repair of a shortlisted proposal. IPS failures move the weights
/// along the segment toward the benchmark until compliant; a concentration
/// flag caps the top weight at 40%. Total one-way turnover stays within 0.2.
pub fn revise_proposal(
    proposal: &PcProposal,
    reviews: &[PeerReview],
    report: &RiskReport,
    ctx: &RiskContext<'_>,
    inputs: &PcInputs,
) -> Result<Revision> {
    let original = &proposal.weights;
    let mut w = original.clone();
    let mut notes = Vec::new();

    if !report.is_compliant() {
        let b = &ctx.policy.benchmark.weights;
        let dist = turnover(&w, b);
        let t_max = if dist > 0.0 {
            (MAX_REVISION_TURNOVER / dist).min(1.0)
        } else {
            0.0
        };
        let mix = |t: f64| -> Vec<f64> { w.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect() };
        let ok = |v: &[f64]| risk::cro_report(v, ctx).is_compliant();
        if t_max > 0.0 && ok(&mix(t_max)) {
            let (mut lo, mut hi) = (0.0, t_max);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if ok(&mix(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            w = mix(hi);
            notes.push(format!(
                "Moved {:.1}% toward the benchmark to restore IPS compliance.",
                hi * 100.0
            ));
        } else {
            notes.push("IPS repair infeasible within the revision bound; original weights retained.".into());
        }
    }

    if reviews.iter().any(|r| r.flags_concentration()) && risk::top_weight(&w) > CONCENTRATION_LIMIT {
        let budget = MAX_REVISION_TURNOVER - turnover(&w, original);
        let top = risk::top_weight(&w);
        let cap = CONCENTRATION_LIMIT.max(top - budget.max(0.0));
        if cap < top {
            w = cap_weights(&w, cap);
            notes.push(format!(
                "Top weight capped at {:.1}% after a concentration flag.",
                cap * 100.0
            ));
        }
    }

    if notes.is_empty() {
        return Ok(Revision {
            proposal: proposal.clone(),
            turnover: 0.0,
            notes: vec!["No revision required.".into()],
        });
    }
    let moved = turnover(&w, original);
    let mut details = proposal.details.clone();
    details.insert("revision_turnover".into(), moved);
    let rationale = format!("{} Revised: {}", proposal.rationale, notes.join(" "));
    let mut revised = PcProposal::build(proposal.method, inputs, w, rationale, details)?;
    revised.category = proposal.category;
    Ok(Revision {
        proposal: revised,
        turnover: moved,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_redistributes_pro_rata() {
        let w = cap_weights(&[0.55, 0.30, 0.15], 0.40);
        assert!((w[0] - 0.40).abs() < 1e-15);
        // The freed 0.15 splits 2:1.
        assert!((w[1] - 0.40).abs() < 1e-12);
        assert!((w[2] - 0.20).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cap_iterates_when_others_overflow() {
        let w = cap_weights(&[0.5, 0.38, 0.12], 0.4);
        assert!(w.iter().all(|x| *x <= 0.4 + 1e-12));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
