//! The six-dimension candidate scorer shared by the strategy review metric
//! and the CIO.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaaError};
use crate::linalg;
use crate::pc::Category;
use crate::regime::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub sharpe: f64,
    pub ips: f64,
    pub diversification: f64,
    pub regime_fit: f64,
    pub estimation: f64,
    pub cma_utilization: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            sharpe: 0.25,
            ips: 0.15,
            diversification: 0.15,
            regime_fit: 0.20,
            estimation: 0.15,
            cma_utilization: 0.10,
        }
    }
}

impl ScoreWeights {
    fn as_array(&self) -> [f64; 6] {
        [
            self.sharpe,
            self.ips,
            self.diversification,
            self.regime_fit,
            self.estimation,
            self.cma_utilization,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(SaaError::Config(
                "score weights must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

/// How the IPS dimension is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IpsScoring {
    /// Fraction of checks passed.
    Fraction,
    /// 1 when every check passes, else 0.
    AllOrNothing,
}

/// Category weights per regime, in A, B, C, D order. The researcher's
/// category reads the D entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegimeTable(pub BTreeMap<Regime, [f64; 4]>);

impl Default for RegimeTable {
    fn default() -> Self {
        RegimeTable(
            Regime::ALL
                .into_iter()
                .map(|r| match r {
                    Regime::LateCycle => (r, [0.15, 0.20, 0.40, 0.25]),
                    _ => (r, [0.25; 4]),
                })
                .collect(),
        )
    }
}

impl RegimeTable {
    pub fn validate(&self) -> Result<()> {
        for (r, w) in &self.0 {
            if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                return Err(SaaError::Config(format!(
                    "regime table row `{r}` needs nonnegative weights"
                )));
            }
        }
        Ok(())
    }

    /// Row for `regime`, uniform when absent, normalized to sum 1.
    pub fn weights(&self, regime: Regime) -> [f64; 4] {
        let row = self.0.get(&regime).copied().unwrap_or([0.25; 4]);
        let s: f64 = row.iter().sum();
        row.map(|x| x / s)
    }

    /// Fit in [0, 1]: the category's weight relative to the largest.
    pub fn fit(&self, regime: Regime, category: Category) -> f64 {
        let w = self.weights(regime);
        let max = w.iter().copied().fold(0.0, f64::max);
        w[family_index(category)] / max
    }
}

pub(crate) fn family_index(category: Category) -> usize {
    match category.family() {
        Category::A => 0,
        Category::B => 1,
        Category::C => 2,
        _ => 3,
    }
}

/// Raw per-candidate facts the scorer needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFacts {
    pub backtest_sharpe: Option<f64>,
    pub ips_pass_fraction: f64,
    pub effective_n: f64,
    pub n_assets: usize,
    pub regime_fit: f64,
    /// Total-variation move of the weights under a μ perturbation, in [0, 1].
    pub mu_sensitivity: f64,
    pub cma_utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixScores {
    #[serde(serialize_with = "crate::json::dp6")]
    pub sharpe: f64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub ips: f64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub diversification: f64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub regime_fit: f64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub estimation: f64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub cma_utilization: f64,
    #[serde(serialize_with = "crate::json::dp6")]
    pub total: f64,
}

/// Absolute correlation of weights with the μ ranks; 0 when either side is constant.
pub fn cma_utilization(w: &[f64], mu: &[f64]) -> f64 {
    linalg::pearson(w, &linalg::average_ranks(mu)).map_or(0.0, f64::abs)
}

/// Scores every candidate; the Sharpe dimension is a percentile across the set.
pub fn score_all(facts: &[CandidateFacts], weights: &ScoreWeights, ips: IpsScoring) -> Vec<SixScores> {
    let known: Vec<f64> = facts.iter().filter_map(|f| f.backtest_sharpe).collect();
    let pct = |s: f64| {
        if known.len() <= 1 {
            return 1.0;
        }
        let below = known.iter().filter(|x| **x < s).count() as f64;
        let equal = known.iter().filter(|x| **x == s).count() as f64;
        // Mid-rank percentile: ties share the average position.
        (below + 0.5 * (equal - 1.0)) / (known.len() - 1) as f64
    };
    facts
        .iter()
        .map(|f| {
            let ips_score = match ips {
                IpsScoring::Fraction => f.ips_pass_fraction,
                IpsScoring::AllOrNothing => f64::from(f.ips_pass_fraction >= 1.0),
            };
            let dims = [
                f.backtest_sharpe.map_or(0.0, pct),
                ips_score,
                if f.n_assets == 0 {
                    0.0
                } else {
                    (f.effective_n / f.n_assets as f64).clamp(0.0, 1.0)
                },
                f.regime_fit.clamp(0.0, 1.0),
                (1.0 - f.mu_sensitivity).clamp(0.0, 1.0),
                f.cma_utilization.clamp(0.0, 1.0),
            ];
            let total = dims.iter().zip(weights.as_array()).map(|(d, w)| d * w).sum::<f64>();
            SixScores {
                sharpe: dims[0],
                ips: dims[1],
                diversification: dims[2],
                regime_fit: dims[3],
                estimation: dims[4],
                cma_utilization: dims[5],
                total,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts(sharpe: f64) -> CandidateFacts {
        CandidateFacts {
            backtest_sharpe: Some(sharpe),
            ips_pass_fraction: 1.0,
            effective_n: 4.0,
            n_assets: 4,
            regime_fit: 1.0,
            mu_sensitivity: 0.0,
            cma_utilization: 1.0,
        }
    }

    #[test]
    fn default_weights_sum_to_one() {
        ScoreWeights::default().validate().unwrap();
        let s: f64 = ScoreWeights::default().as_array().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_candidate_scores_one() {
        let s = score_all(
            &[facts(0.5), facts(0.2)],
            &ScoreWeights::default(),
            IpsScoring::Fraction,
        );
        assert!((s[0].total - 1.0).abs() < 1e-12);
        assert!((s[1].total - 0.75).abs() < 1e-12);
    }

    #[test]
    fn failing_ips_zeroes_the_all_or_nothing_dimension() {
        let mut f = facts(0.3);
        f.ips_pass_fraction = 0.75;
        let s = score_all(&[f.clone()], &ScoreWeights::default(), IpsScoring::AllOrNothing);
        assert_eq!(s[0].ips, 0.0);
        let s = score_all(&[f], &ScoreWeights::default(), IpsScoring::Fraction);
        assert_eq!(s[0].ips, 0.75);
    }

    #[test]
    fn equal_facts_give_equal_totals() {
        let s = score_all(
            &[facts(0.3), facts(0.3), facts(0.3)],
            &ScoreWeights::default(),
            IpsScoring::Fraction,
        );
        assert!(s.iter().all(|x| x.total == s[0].total));
    }

    #[test]
    fn late_cycle_prefers_risk_structured() {
        let t = RegimeTable::default();
        assert_eq!(t.fit(Regime::LateCycle, Category::C), 1.0);
        assert!((t.fit(Regime::LateCycle, Category::A) - 0.375).abs() < 1e-12);
        assert_eq!(
            t.fit(Regime::LateCycle, Category::E),
            t.fit(Regime::LateCycle, Category::D)
        );
        assert_eq!(t.fit(Regime::Expansion, Category::B), 1.0);
    }

    #[test]
    fn utilization_of_constant_weights_is_zero() {
        assert_eq!(cma_utilization(&[0.25; 4], &[0.01, 0.02, 0.03, 0.04]), 0.0);
        assert!((cma_utilization(&[0.1, 0.2, 0.3, 0.4], &[0.01, 0.02, 0.03, 0.04]) - 1.0).abs() < 1e-12);
    }
}
