use serde::{Deserialize, Serialize};

use crate::error::{Result, SaaError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub weights: Vec<f64>,
}

impl Benchmark {
    /// `equity_share` spread equally over `equity`, the rest over `bonds`.
    pub fn split(slugs: &[String], equity: &[String], bonds: &[String], equity_share: f64) -> Result<Self> {
        if equity.is_empty() || bonds.is_empty() {
            return Err(SaaError::Config("benchmark needs equity and bond slugs".into()));
        }
        let mut w = vec![0.0; slugs.len()];
        for (group, share) in [(equity, equity_share), (bonds, 1.0 - equity_share)] {
            for s in group {
                let k = slugs
                    .iter()
                    .position(|x| x == s)
                    .ok_or_else(|| SaaError::Config(format!("benchmark slug `{s}` not in universe")))?;
                w[k] += share / group.len() as f64;
            }
        }
        Ok(Benchmark { weights: w })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpsPolicy {
    pub universe: Vec<String>,
    /// Real return target over CPI, [lo, hi] decimal/yr (reported, not gated).
    pub real_return_target: [f64; 2],
    pub vol_band: [f64; 2],
    /// Negative number, e.g. −0.25.
    pub max_drawdown_limit: f64,
    pub tracking_error_cap: f64,
    pub benchmark: Benchmark,
}

impl IpsPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SaaError::Config(format!("IPS: {m}")));
        if self.universe.is_empty() {
            return bad("universe is empty");
        }
        if self.vol_band[0] >= self.vol_band[1] || self.real_return_target[0] >= self.real_return_target[1] {
            return bad("bands need lo < hi");
        }
        if self.tracking_error_cap <= 0.0 {
            return bad("tracking error cap must be positive");
        }
        if self.max_drawdown_limit >= 0.0 {
            return bad("drawdown limit must be negative");
        }
        let b = &self.benchmark.weights;
        if b.len() != self.universe.len() || b.iter().any(|x| *x < 0.0) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("benchmark must be a simplex vector over the universe");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpsCheck {
    Universe,
    VolBand,
    TrackingError,
    MaxDrawdown,
}

impl IpsCheck {
    pub fn label(self) -> &'static str {
        match self {
            IpsCheck::Universe => "universe",
            IpsCheck::VolBand => "volatility band",
            IpsCheck::TrackingError => "tracking error",
            IpsCheck::MaxDrawdown => "maximum drawdown",
        }
    }
}

/// One compliance check; `bound` is [lower, upper] with absent sides null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpsFlag {
    pub check: IpsCheck,
    pub value: Option<f64>,
    pub bound: [Option<f64>; 2],
    pub pass: bool,
}

/// Checks universe containment, vol band, TE cap and drawdown limit. A metric
/// that could not be computed fails its check.
pub fn ips_compliance(
    w: &[f64],
    slugs: &[String],
    ex_ante_vol: Option<f64>,
    tracking_error: Option<f64>,
    max_drawdown: Option<f64>,
    policy: &IpsPolicy,
) -> Vec<IpsFlag> {
    let outside: f64 = slugs
        .iter()
        .zip(w)
        .filter(|(s, _)| !policy.universe.contains(s))
        .map(|(_, x)| x.abs())
        .sum();
    let within = |v: Option<f64>, lo: Option<f64>, hi: Option<f64>| match v {
        Some(v) => lo.is_none_or(|l| v >= l) && hi.is_none_or(|h| v <= h),
        None => false,
    };
    let mut flags = vec![IpsFlag {
        check: IpsCheck::Universe,
        value: Some(outside),
        bound: [None, Some(0.0)],
        pass: outside <= 0.0,
    }];
    for (check, value, lo, hi) in [
        (
            IpsCheck::VolBand,
            ex_ante_vol,
            Some(policy.vol_band[0]),
            Some(policy.vol_band[1]),
        ),
        (
            IpsCheck::TrackingError,
            tracking_error,
            None,
            Some(policy.tracking_error_cap),
        ),
        (
            IpsCheck::MaxDrawdown,
            max_drawdown,
            Some(policy.max_drawdown_limit),
            None,
        ),
    ] {
        flags.push(IpsFlag {
            check,
            value,
            bound: [lo, hi],
            pass: within(value, lo, hi),
        });
    }
    flags
}
