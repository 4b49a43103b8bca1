use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::rubric::PeerReview;
use crate::error::{Result, SaaError};
use crate::linalg;
use crate::pc::{self, Category, MethodId, PcInputs, PcParams, PcProposal};
use crate::regime::Regime;
use crate::risk;

/// Points for top-five slots 1..5 and for the bottom flag.
pub const SLOT_POINTS: [i64; 5] = [5, 4, 3, 2, 1];
pub const BOTTOM_POINTS: i64 = -2;
/// Net points every ballot injects.
pub const POINTS_PER_BALLOT: i64 = 13;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot<T = MethodId> {
    pub voter: T,
    pub top_five: [T; 5],
    pub bottom: T,
}

impl<T: Ord + Clone + std::fmt::Debug> Ballot<T> {
    pub fn new(voter: T, top_five: [T; 5], bottom: T) -> Result<Self> {
        let distinct: BTreeSet<&T> = top_five.iter().collect();
        if distinct.len() != 5 || top_five.contains(&voter) || bottom == voter || top_five.contains(&bottom) {
            return Err(SaaError::Value(format!(
                "invalid ballot from {voter:?}: top five must be 5 distinct peers and the bottom flag a sixth"
            )));
        }
        Ok(Ballot {
            voter,
            top_five,
            bottom,
        })
    }
}

/// Modified Borda count; every candidate named on any ballot gets a total.
pub fn tally_borda<T: Ord + Clone>(ballots: &[Ballot<T>]) -> BTreeMap<T, i64> {
    let mut totals: BTreeMap<T, i64> = BTreeMap::new();
    for b in ballots {
        for (id, pts) in b.top_five.iter().zip(SLOT_POINTS) {
            *totals.entry(id.clone()).or_default() += pts;
        }
        *totals.entry(b.bottom.clone()).or_default() += BOTTOM_POINTS;
    }
    totals
}

/// A voter's own objective evaluated at someone else's weights (higher is
/// better). Rule-based methods judge by closeness to their own portfolio.
fn own_objective(voter: &PcProposal, w: &[f64], inputs: &PcInputs, params: &PcParams, centroid: &[f64]) -> f64 {
    let sigma = &inputs.sigma;
    let returns = || risk::portfolio_returns(w, &inputs.scenarios);
    let closeness = || -linalg::l1_distance(w, &voter.weights);
    match voter.method {
        MethodId::EqualWeight => linalg::entropy(w),
        MethodId::MaxSharpe | MethodId::RobustMv => inputs.sharpe(w),
        MethodId::MeanDownside => {
            let mar = params.mar.unwrap_or(inputs.rf);
            let dd = pc::downside_deviation(&returns(), mar);
            let ex = linalg::dot(&inputs.mu, w) - mar;
            if dd > 0.0 {
                ex / dd
            } else {
                ex.signum() * 1e6
            }
        }
        MethodId::Gmv => -linalg::quad_form(sigma, w).max(0.0).sqrt(),
        MethodId::RiskParity => {
            let k = 1.0 / w.len() as f64;
            -risk::risk_contributions(w, sigma)
                .iter()
                .map(|rc| (rc - k).abs())
                .fold(0.0, f64::max)
        }
        MethodId::MaxDiversification => {
            let vol = linalg::quad_form(sigma, w).max(0.0).sqrt();
            let weighted: f64 = w.iter().zip(inputs.vols()).map(|(x, s)| x * s).sum();
            if vol > 0.0 {
                weighted / vol
            } else {
                0.0
            }
        }
        MethodId::Cvar => -pc::ru_cvar(&returns(), inputs.cvar_level),
        MethodId::MaxDrawdown => {
            let mdd = risk::max_drawdown(&risk::wealth_path(&returns()));
            let er = linalg::dot(&inputs.mu, w);
            // Feasible portfolios rank above infeasible ones.
            if -mdd <= params.dd_limit {
                er
            } else {
                -1.0 + mdd
            }
        }
        MethodId::MaxEntropy => {
            let floor = voter.details.get("sharpe_floor").copied().unwrap_or(f64::NEG_INFINITY);
            linalg::entropy(w) - if inputs.sharpe(w) >= floor { 0.0 } else { 10.0 }
        }
        MethodId::Adversarial => linalg::quad_form(sigma, &linalg::sub(w, centroid)),
        _ => closeness(),
    }
}

fn minmax(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return vec![0.5; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Scores every peer by ½·(mean received review)/5 + ½·(own objective,
/// min-max normalized over peers); top five by score, bottom the lowest,
/// ties in registry order.
pub fn cast_ballot(
    voter: &PcProposal,
    proposals: &[PcProposal],
    reviews: &[PeerReview],
    inputs: &PcInputs,
    params: &PcParams,
) -> Result<Ballot> {
    let peers: Vec<&PcProposal> = proposals.iter().filter(|p| p.method != voter.method).collect();
    if peers.len() < 6 {
        return Err(SaaError::Value("a ballot needs at least six peers".into()));
    }
    let n = inputs.n();
    let centroid: Vec<f64> = (0..n)
        .map(|i| peers.iter().map(|p| p.weights[i]).sum::<f64>() / peers.len() as f64)
        .collect();
    let objective: Vec<f64> = peers
        .iter()
        .map(|p| own_objective(voter, &p.weights, inputs, params, &centroid))
        .collect();
    let objective = minmax(&objective);
    let mut scored: Vec<(f64, usize, MethodId)> = peers
        .iter()
        .zip(&objective)
        .map(|(p, obj)| {
            let received: Vec<f64> = reviews
                .iter()
                .filter(|r| r.target == p.method)
                .map(|r| r.overall)
                .collect();
            let review = if received.is_empty() {
                0.5
            } else {
                linalg::mean(&received) / 5.0
            };
            (0.5 * review + 0.5 * obj, p.method.order(), p.method)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let top: [MethodId; 5] = std::array::from_fn(|k| scored[k].2);
    // Lowest score; among equals the later registry entry.
    let bottom = scored.last().expect("at least six peers").2;
    Ballot::new(voter.method, top, bottom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub method: MethodId,
    pub category: Category,
    pub vote_total: i64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub metric_score: f64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub composite: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRanking {
    /// Sorted by rank.
    pub rows: Vec<RankingRow>,
    #[serde(serialize_with = "crate::json::dp6")]
    pub vote_weight: f64,
    pub regime: Regime,
}

impl CompositeRanking {
    pub fn composite_of(&self, m: MethodId) -> Option<f64> {
        self.rows.iter().find(|r| r.method == m).map(|r| r.composite)
    }
}

/// Vote weight λ per regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaTable(pub BTreeMap<Regime, f64>);

impl Default for LambdaTable {
    fn default() -> Self {
        LambdaTable(
            Regime::ALL
                .into_iter()
                .map(|r| (r, if r == Regime::LateCycle { 0.40 } else { 0.50 }))
                .collect(),
        )
    }
}

impl LambdaTable {
    pub fn get(&self, regime: Regime) -> f64 {
        self.0.get(&regime).copied().unwrap_or(0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.values().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(SaaError::Config("lambda values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// composite = minmax(λ·minmax(votes) + (1−λ)·minmax(metric)); ranks by
/// composite, ties in input order.
pub fn composite_blend(
    candidates: &[(MethodId, Category)],
    votes: &[i64],
    metric: &[f64],
    lambda: f64,
    regime: Regime,
) -> Result<CompositeRanking> {
    let m = candidates.len();
    if votes.len() != m || metric.len() != m || m == 0 {
        return Err(SaaError::Value("vote, metric and candidate columns must align".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SaaError::Value(format!("vote weight {lambda} outside [0, 1]")));
    }
    let v = minmax(&votes.iter().map(|x| *x as f64).collect::<Vec<_>>());
    let mm = minmax(metric);
    let raw: Vec<f64> = v
        .iter()
        .zip(&mm)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let composite = minmax(&raw);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| composite[*b].total_cmp(&composite[*a]).then(a.cmp(b)));
    let rows = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| RankingRow {
            method: candidates[i].0,
            category: candidates[i].1,
            vote_total: votes[i],
            metric_score: metric[i],
            composite: composite[i],
            rank: rank + 1,
        })
        .collect();
    Ok(CompositeRanking {
        rows,
        vote_weight: lambda,
        regime,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortlist {
    pub members: Vec<MethodId>,
    /// (removed, added) in the order applied.
    pub swaps: Vec<(MethodId, MethodId)>,
    pub note: Option<String>,
}

const FAMILIES: [Category; 4] = [Category::A, Category::B, Category::C, Category::D];

/// Composite top five, swapped until at least three of the four canonical
/// categories are represented. The researcher's category is not one of them.
pub fn diversity_shortlist(ranking: &CompositeRanking) -> Shortlist {
    let rows = &ranking.rows;
    let size = rows.len().min(5);
    let mut members: Vec<usize> = (0..size).collect();
    let present = |members: &[usize]| -> BTreeSet<Category> {
        members
            .iter()
            .map(|&i| rows[i].category)
            .filter(|c| FAMILIES.contains(c))
            .collect()
    };
    let non_empty: BTreeSet<Category> = rows
        .iter()
        .map(|r| r.category)
        .filter(|c| FAMILIES.contains(c))
        .collect();
    let mut swaps = Vec::new();
    if non_empty.len() < 3 {
        return Shortlist {
            members: members.iter().map(|&i| rows[i].method).collect(),
            swaps,
            note: Some(format!(
                "Diversity constraint waived: only {} canonical categories have candidates.",
                non_empty.len()
            )),
        };
    }
    while present(&members).len() < 3 {
        let have = present(&members);
        // Lowest-composite member whose removal keeps every category.
        let out = members.iter().rev().copied().find(|&i| {
            let c = rows[i].category;
            !FAMILIES.contains(&c) || members.iter().filter(|&&j| rows[j].category == c).count() > 1
        });
        let inn = (0..rows.len()).find(|i| {
            !members.contains(i) && FAMILIES.contains(&rows[*i].category) && !have.contains(&rows[*i].category)
        });
        match (out, inn) {
            (Some(o), Some(n)) => {
                swaps.push((rows[o].method, rows[n].method));
                let pos = members.iter().position(|&x| x == o).expect("member");
                members[pos] = n;
                members.sort_unstable();
            }
            _ => break,
        }
    }
    Shortlist {
        members: members.iter().map(|&i| rows[i].method).collect(),
        swaps,
        note: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pc::ALL_METHODS;

    #[test]
    fn single_ballot_points() {
        let b = Ballot::new(0, [1, 2, 3, 4, 5], 6).unwrap();
        let t = tally_borda(&[b]);
        assert_eq!(t.values().copied().collect::<Vec<_>>(), vec![5, 4, 3, 2, 1, -2]);
        assert_eq!(t.values().sum::<i64>(), POINTS_PER_BALLOT);
    }

    #[test]
    fn ballot_rejects_self_and_overlap() {
        assert!(Ballot::new(1, [1, 2, 3, 4, 5], 6).is_err());
        assert!(Ballot::new(0, [1, 2, 3, 4, 5], 5).is_err());
        assert!(Ballot::new(0, [1, 1, 3, 4, 5], 6).is_err());
        assert!(Ballot::new(0, [1, 2, 3, 4, 5], 0).is_err());
    }

    fn candidates() -> Vec<(MethodId, Category)> {
        ALL_METHODS.iter().map(|m| (*m, m.category())).collect()
    }

    #[test]
    fn lambda_extremes_follow_one_column() {
        let c = candidates();
        let votes: Vec<i64> = (0..21).map(|i| (i * 7 % 21) as i64).collect();
        let metric: Vec<f64> = (0..21).map(|i| ((i * 5 % 21) as f64) / 21.0).collect();
        let by_votes = composite_blend(&c, &votes, &metric, 1.0, Regime::LateCycle).unwrap();
        assert!(by_votes.rows.windows(2).all(|w| w[0].vote_total >= w[1].vote_total));
        let by_metric = composite_blend(&c, &votes, &metric, 0.0, Regime::LateCycle).unwrap();
        assert!(by_metric
            .rows
            .windows(2)
            .all(|w| w[0].metric_score >= w[1].metric_score));
        assert_eq!(by_metric.rows[0].composite, 1.0);
        assert_eq!(by_metric.rows[20].composite, 0.0);
    }

    #[test]
    fn degenerate_columns_normalize_to_half() {
        let c = &candidates()[..3];
        let r = composite_blend(c, &[4, 4, 4], &[0.3, 0.3, 0.3], 0.4, Regime::Expansion).unwrap();
        assert!(r.rows.iter().all(|x| x.composite == 0.5));
    }

    #[test]
    fn all_risk_structured_top_five_gets_swapped() {
        use MethodId::*;
        let order = [
            Gmv,
            RiskParity,
            Hrp,
            MaxDiversification,
            MinCorrelation,
            EqualWeight,
            MaxSharpe,
            Cvar,
            MaxEntropy,
        ];
        let c: Vec<_> = order.iter().map(|m| (*m, m.category())).collect();
        let votes: Vec<i64> = (0..9).map(|i| 20 - 2 * i as i64).collect();
        let r = composite_blend(&c, &votes, &[0.5; 9], 1.0, Regime::LateCycle).unwrap();
        let s = diversity_shortlist(&r);
        assert_eq!(
            s.swaps,
            vec![(MinCorrelation, EqualWeight), (MaxDiversification, MaxSharpe)]
        );
        assert_eq!(s.members.len(), 5);
    }
}
