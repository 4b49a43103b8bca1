//! Market data ingestion, sample moments and covariance estimation.

mod covariance;
mod panel;

pub use covariance::{
    nearest_psd_repair, sample_covariance, shrink_covariance, CovarianceEstimate, Estimator, PSD_FLOOR,
};
pub use panel::{
    align_series, load_panel, parse_caps_csv, parse_fundamentals_csv, parse_returns_csv, AlignedPanel, PanelSources,
};

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaaError};
use crate::linalg;

/// Months per year; used for every monthly→annual conversion.
pub const PERIODS_PER_YEAR: f64 = 12.0;

/// Minimum observation count for moment and covariance estimates.
pub const MIN_OBSERVATIONS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssetCategory {
    Equity,
    FixedIncome,
    RealAssets,
    Cash,
}

impl fmt::Display for AssetCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AssetCategory::Equity => "Equity",
            AssetCategory::FixedIncome => "Fixed Income",
            AssetCategory::RealAssets => "Real Assets",
            AssetCategory::Cash => "Cash",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AssetId {
    pub slug: String,
    pub category: AssetCategory,
}

impl AssetId {
    pub fn new(slug: impl Into<String>, category: AssetCategory) -> Self {
        AssetId {
            slug: slug.into(),
            category,
        }
    }
}

/// Ordered asset list; the order fixes matrix layout everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Universe {
    assets: Vec<AssetId>,
}

impl Universe {
    pub fn new(assets: Vec<AssetId>) -> Result<Self> {
        if assets.is_empty() {
            return Err(SaaError::Config("universe is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &assets {
            if a.slug.is_empty() || a.slug != a.slug.to_lowercase() {
                return Err(SaaError::Config(format!(
                    "asset slug `{}` must be non-empty lowercase",
                    a.slug
                )));
            }
            if !seen.insert(a.slug.clone()) {
                return Err(SaaError::Config(format!("duplicate asset slug `{}`", a.slug)));
            }
        }
        Ok(Universe { assets })
    }

    pub fn assets(&self) -> &[AssetId] {
        &self.assets
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn slugs(&self) -> Vec<String> {
        self.assets.iter().map(|a| a.slug.clone()).collect()
    }

    pub fn index_of(&self, slug: &str) -> Option<usize> {
        self.assets.iter().position(|a| a.slug == slug)
    }

    pub fn cash_index(&self) -> Option<usize> {
        self.assets.iter().position(|a| a.category == AssetCategory::Cash)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub asset: String,
    pub dates: Vec<NaiveDate>,
    /// Simple monthly returns as decimal fractions.
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FundamentalsSnapshot {
    pub asset: String,
    pub as_of: Option<NaiveDate>,
    pub cape: Option<f64>,
    pub trailing_pe: Option<f64>,
    pub dividend_yield: Option<f64>,
    pub buyback_yield: Option<f64>,
    pub earnings_growth: Option<f64>,
    pub yield_to_maturity: Option<f64>,
    pub risk_free_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCapSnapshot {
    pub as_of: NaiveDate,
    pub caps: BTreeMap<String, f64>,
}

impl MarketCapSnapshot {
    /// Cap weights in universe order; assets without a cap get zero.
    pub fn weights(&self, universe: &Universe) -> Result<Vec<f64>> {
        let raw: Vec<f64> = universe
            .assets()
            .iter()
            .map(|a| self.caps.get(&a.slug).copied().unwrap_or(0.0))
            .collect();
        if raw.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(SaaError::Value("market caps must be finite and nonnegative".into()));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(SaaError::Value(
                "market cap snapshot has no strictly positive entry".into(),
            ));
        }
        Ok(raw.into_iter().map(|c| c / total).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// Annualized arithmetic mean.
    pub mean: f64,
    /// Annualized sample volatility.
    pub vol: f64,
}

pub fn sample_moments(returns: &[f64]) -> Result<Moments> {
    if returns.len() < MIN_OBSERVATIONS {
        return Err(SaaError::InsufficientData(format!(
            "{} observations, need at least {MIN_OBSERVATIONS}",
            returns.len()
        )));
    }
    Ok(Moments {
        mean: PERIODS_PER_YEAR * linalg::mean(returns),
        vol: PERIODS_PER_YEAR.sqrt() * linalg::sample_std(returns),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_zero_vol() {
        let m = sample_moments(&[0.01; 36]).unwrap();
        assert!((m.mean - 0.12).abs() < 1e-12);
        assert!(m.vol < 1e-15);
    }

    #[test]
    fn alternating_series_matches_hand_stdev() {
        let r: Vec<f64> = (0..24).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let m = sample_moments(&r).unwrap();
        assert!(m.mean.abs() < 1e-15);
        // 24 squared deviations of 1e-4 over 23 degrees of freedom.
        let expected = 12f64.sqrt() * (24.0 * 1e-4 / 23.0_f64).sqrt();
        assert!((m.vol - expected).abs() < 1e-15);
        assert!((m.vol - 0.0354).abs() < 1e-4);
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(matches!(sample_moments(&[0.0; 23]), Err(SaaError::InsufficientData(_))));
    }

    #[test]
    fn universe_rejects_duplicates() {
        let a = AssetId::new("us-large-cap", AssetCategory::Equity);
        assert!(Universe::new(vec![a.clone(), a]).is_err());
    }

    #[test]
    fn cap_weights_normalize() {
        let u = Universe::new(vec![
            AssetId::new("a", AssetCategory::Equity),
            AssetId::new("b", AssetCategory::Equity),
        ])
        .unwrap();
        let snap = MarketCapSnapshot {
            as_of: NaiveDate::from_ymd_opt(2026, 3, 1).unwrap(),
            caps: [("a".to_string(), 3.0), ("b".to_string(), 1.0)].into(),
        };
        assert_eq!(snap.weights(&u).unwrap(), vec![0.75, 0.25]);
        let empty = MarketCapSnapshot {
            as_of: snap.as_of,
            caps: BTreeMap::new(),
        };
        assert!(empty.weights(&u).is_err());
    }
}
