use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::sample::subsequence;

use saa_core::pc::{Category, MethodId, ALL_METHODS};
use saa_core::regime::Regime;
use saa_core::review::{
    assign_reviews, cap_weights, composite_blend, diversity_shortlist, tally_borda, turnover, Ballot, Candidate,
    ReviewKind, BOTTOM_POINTS, POINTS_PER_BALLOT, SLOT_POINTS,
};

/// Ballots over `pool` candidates: voter v ranks the six peers picked by
/// `picks[v]` (indices into the other candidates).
fn ballots(n: usize, pool: usize, picks: &[Vec<usize>]) -> Vec<Ballot<usize>> {
    (0..n)
        .map(|v| {
            let peers: Vec<usize> = (0..pool).filter(|c| *c != v).collect();
            let p: Vec<usize> = picks[v].iter().map(|k| peers[*k]).collect();
            Ballot::new(v, [p[0], p[1], p[2], p[3], p[4]], p[5]).unwrap()
        })
        .collect()
}

fn picks_strategy() -> impl Strategy<Value = (usize, usize, Vec<Vec<usize>>)> {
    (6usize..=40).prop_flat_map(|n| {
        let pool = n.max(7);
        let one = subsequence((0..pool - 1).collect::<Vec<_>>(), 6).prop_shuffle();
        (Just(n), Just(pool), prop::collection::vec(one, n))
    })
}

#[test]
fn points_per_ballot_is_the_slot_sum() {
    assert_eq!(SLOT_POINTS.iter().sum::<i64>() + BOTTOM_POINTS, POINTS_PER_BALLOT);
}

#[test]
fn ballot_rejects_self_votes_and_repeats() {
    assert!(Ballot::new(0, [0, 1, 2, 3, 4], 5).is_err());
    assert!(Ballot::new(0, [1, 1, 2, 3, 4], 5).is_err());
    assert!(Ballot::new(0, [1, 2, 3, 4, 5], 5).is_err());
    assert!(Ballot::new(0, [1, 2, 3, 4, 5], 0).is_err());
    assert!(Ballot::new(0, [1, 2, 3, 4, 5], 6).is_ok());
}

#[test]
fn assignment_is_reproducible_per_seed() {
    let cands: Vec<Candidate> = ALL_METHODS.iter().map(|m| Candidate::of(*m)).collect();
    assert_eq!(assign_reviews(&cands, 42).unwrap(), assign_reviews(&cands, 42).unwrap());
    let differs = (0..20).any(|s| assign_reviews(&cands, s).unwrap() != assign_reviews(&cands, 42).unwrap());
    assert!(differs);
}

#[test]
fn researcher_method_is_reviewed_inside_its_family() {
    let cands: Vec<Candidate> = ALL_METHODS.iter().map(|m| Candidate::of(*m)).collect();
    for seed in 0..100 {
        let a = assign_reviews(&cands, seed).unwrap();
        let intra = a
            .iter()
            .find(|r| r.target == MethodId::MaxEntropy && r.kind == ReviewKind::Intra)
            .unwrap();
        assert_eq!(intra.reviewer.category().family(), Category::D.family());
    }
}

#[test]
fn shortlist_covers_three_families() {
    // Top five all from one family before the swap.
    let methods = [
        MethodId::Gmv,
        MethodId::RiskParity,
        MethodId::Hrp,
        MethodId::MaxDiversification,
        MethodId::MinCorrelation,
        MethodId::MaxSharpe,
        MethodId::EqualWeight,
        MethodId::Cvar,
    ];
    let cats: Vec<_> = methods.iter().map(|m| (*m, m.category())).collect();
    let votes = [40, 35, 30, 25, 20, 5, 3, 1];
    let metric = [0.9, 0.8, 0.7, 0.6, 0.5, 0.3, 0.2, 0.1];
    let ranking = composite_blend(&cats, &votes, &metric, 0.4, Regime::Expansion).unwrap();
    let s = diversity_shortlist(&ranking);
    assert_eq!(s.members.len(), 5);
    let fams: BTreeSet<_> = s.members.iter().map(|m| m.category()).collect();
    assert!(fams.len() >= 3, "{:?}", s.members);
    assert!(!s.swaps.is_empty());
}

proptest! {
    #[test]
    fn borda_total_is_thirteen_per_ballot((n, pool, picks) in picks_strategy()) {
        let b = ballots(n, pool, &picks);
        let totals = tally_borda(&b);
        prop_assert_eq!(totals.values().sum::<i64>(), POINTS_PER_BALLOT * n as i64);
        // Never a self-credit: a voter's own total comes only from others.
        let mut own: BTreeMap<usize, i64> = BTreeMap::new();
        for ballot in &b {
            for (c, p) in ballot.top_five.iter().zip(SLOT_POINTS) {
                prop_assert_ne!(*c, ballot.voter);
                *own.entry(*c).or_default() += p;
            }
            *own.entry(ballot.bottom).or_default() += BOTTOM_POINTS;
        }
        prop_assert_eq!(own, totals);
    }

    #[test]
    fn assignment_graph_is_two_regular(seed in any::<u64>()) {
        let cands: Vec<Candidate> = ALL_METHODS.iter().map(|m| Candidate::of(*m)).collect();
        let a = assign_reviews(&cands, seed).unwrap();
        prop_assert_eq!(a.len(), 42);
        for m in ALL_METHODS {
            let out: Vec<_> = a.iter().filter(|r| r.reviewer == m).map(|r| r.kind).collect();
            let inn: Vec<_> = a.iter().filter(|r| r.target == m).map(|r| r.kind).collect();
            prop_assert_eq!(out.len(), 2);
            prop_assert!(out.contains(&ReviewKind::Intra) && out.contains(&ReviewKind::Inter));
            prop_assert_eq!(inn.len(), 2);
        }
        prop_assert!(a.iter().all(|r| r.reviewer != r.target));
    }

    #[test]
    fn composite_is_min_max_scaled(
        rows in prop::collection::vec((-40i64..100, 0.0f64..1.0), 2..21),
        lambda in 0.0f64..=1.0,
    ) {
        let methods = &ALL_METHODS[..rows.len()];
        let cats: Vec<_> = methods.iter().map(|m| (*m, m.category())).collect();
        let votes: Vec<i64> = rows.iter().map(|r| r.0).collect();
        let metric: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let ranking = composite_blend(&cats, &votes, &metric, lambda, Regime::Recovery).unwrap();
        let c: Vec<f64> = ranking.rows.iter().map(|r| r.composite).collect();
        prop_assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(c.windows(2).all(|p| p[0] >= p[1]));
        prop_assert!(ranking.rows.iter().enumerate().all(|(i, r)| r.rank == i + 1));
        if c[0] > c[c.len() - 1] {
            prop_assert!((c[0] - 1.0).abs() < 1e-12 && c[c.len() - 1].abs() < 1e-12);
        }
    }

    #[test]
    fn capping_keeps_the_simplex(raw in prop::collection::vec(0.01f64..1.0, 3..12), cap in 0.34f64..0.9) {
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let c = cap_weights(&w, cap);
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(c.iter().all(|x| *x <= cap + 1e-12 && *x >= 0.0));
        prop_assert!((turnover(&w, &c) - turnover(&c, &w)).abs() < 1e-15);
    }
}
