use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaaError};
use crate::pc::{Category, MethodId};

/// Restarts allowed before the constraint set is declared infeasible.
const MAX_ATTEMPTS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewKind {
    Intra,
    Inter,
}

/// A candidate as seen by the review round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub method: MethodId,
    pub category: Category,
}

impl Candidate {
    pub fn of(method: MethodId) -> Self {
        Candidate {
            method,
            category: method.category(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewAssignment {
    pub reviewer: MethodId,
    pub target: MethodId,
    pub kind: ReviewKind,
    pub seed: u64,
    /// Restart count; attempt k draws from ChaCha stream k of `seed`.
    pub attempt: u64,
}

/// Intra reviews stay inside a family; the researcher's singleton category
/// shares family D. Inter reviews cross the display category, so the
/// researcher's method is an outsider to everyone.
fn intra_compatible(a: &Candidate, b: &Candidate) -> bool {
    a.category.family() == b.category.family()
}

fn inter_compatible(a: &Candidate, b: &Candidate) -> bool {
    a.category != b.category
}

/// Two reviews per candidate: one inside its family, one outside its
/// category. Every candidate also receives exactly one of each.
pub fn assign_reviews(candidates: &[Candidate], seed: u64) -> Result<Vec<ReviewAssignment>> {
    let n = candidates.len();
    let mut families: BTreeMap<Category, usize> = BTreeMap::new();
    let mut categories: BTreeMap<Category, usize> = BTreeMap::new();
    for c in candidates {
        *families.entry(c.category.family()).or_default() += 1;
        *categories.entry(c.category).or_default() += 1;
    }
    if let Some((f, _)) = families.iter().find(|(_, k)| **k < 2) {
        return Err(SaaError::Config(format!(
            "review family {} needs at least two members",
            f.label()
        )));
    }
    // A cross-category matching exists iff no category holds more than half.
    if categories.values().any(|k| 2 * k > n) {
        return Err(SaaError::Config(
            "one category holds more than half of the candidates".into(),
        ));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let Some(intra) = matching(candidates, &mut rng, intra_compatible) else {
            continue;
        };
        let Some(inter) = matching(candidates, &mut rng, inter_compatible) else {
            continue;
        };
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            for (kind, target) in [(ReviewKind::Intra, intra[i]), (ReviewKind::Inter, inter[i])] {
                out.push(ReviewAssignment {
                    reviewer: candidates[i].method,
                    target: candidates[target].method,
                    kind,
                    seed,
                    attempt,
                });
            }
        }
        return Ok(out);
    }
    Err(SaaError::Config(format!(
        "no valid review assignment found in {MAX_ATTEMPTS} attempts"
    )))
}

/// Seeded randomized matching: reviewers in shuffled order each draw a
/// compatible target with remaining in-degree. `None` on a dead end.
fn matching(
    candidates: &[Candidate],
    rng: &mut ChaCha8Rng,
    ok: fn(&Candidate, &Candidate) -> bool,
) -> Option<Vec<usize>> {
    let n = candidates.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut taken = vec![false; n];
    let mut target = vec![usize::MAX; n];
    for &r in &order {
        let pool: Vec<usize> = (0..n)
            .filter(|&t| t != r && !taken[t] && ok(&candidates[r], &candidates[t]))
            .collect();
        let &t = pool.choose(rng)?;
        taken[t] = true;
        target[r] = t;
    }
    Some(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pc::ALL_METHODS;

    fn registry() -> Vec<Candidate> {
        ALL_METHODS.iter().map(|m| Candidate::of(*m)).collect()
    }

    #[test]
    fn twenty_one_candidates_get_forty_two_reviews() {
        let a = assign_reviews(&registry(), 7).unwrap();
        assert_eq!(a.len(), 42);
        for c in registry() {
            let out: Vec<_> = a.iter().filter(|x| x.reviewer == c.method).collect();
            let inn = a.iter().filter(|x| x.target == c.method).count();
            assert_eq!(out.len(), 2);
            assert_eq!(inn, 2);
            assert!(out.iter().all(|x| x.target != c.method));
            assert_eq!(out[0].kind, ReviewKind::Intra);
            assert_eq!(out[1].kind, ReviewKind::Inter);
        }
    }

    #[test]
    fn same_seed_same_assignment() {
        assert_eq!(
            assign_reviews(&registry(), 3).unwrap(),
            assign_reviews(&registry(), 3).unwrap()
        );
        assert_ne!(
            assign_reviews(&registry(), 3).unwrap(),
            assign_reviews(&registry(), 4).unwrap()
        );
    }

    #[test]
    fn singleton_family_is_rejected() {
        let c = vec![
            Candidate::of(MethodId::EqualWeight),
            Candidate::of(MethodId::MarketCap),
            Candidate::of(MethodId::Gmv),
        ];
        assert!(matches!(assign_reviews(&c, 1), Err(SaaError::Config(_))));
    }
}
