//! Macro regime scoring and classification.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaaError};
use crate::json;

pub const MACRO_VIEW_SCHEMA: &str = "macro-view/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Expansion,
    LateCycle,
    Recession,
    Recovery,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Expansion,
        Regime::LateCycle,
        Regime::Recession,
        Regime::Recovery,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Regime::Expansion => "expansion",
            Regime::LateCycle => "late-cycle",
            Regime::Recession => "recession",
            Regime::Recovery => "recovery",
        }
    }

    pub fn parse(s: &str) -> Result<Regime> {
        Regime::ALL
            .into_iter()
            .find(|r| r.label() == s.trim())
            .ok_or_else(|| SaaError::Config(format!("unknown regime `{s}`")))
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimension {
    Growth,
    Inflation,
    Policy,
    Financial,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Growth,
        Dimension::Inflation,
        Dimension::Policy,
        Dimension::Financial,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroIndicators {
    pub as_of: NaiveDate,
    /// Real GDP growth, %/yr.
    pub growth_reading: f64,
    /// CPI inflation, %/yr.
    pub inflation_reading: f64,
    /// Policy-rate change over the trailing 12 months, percentage points.
    pub policy_reading: f64,
    /// Financial conditions index, positive = tight.
    pub financial_conditions_reading: f64,
}

impl MacroIndicators {
    pub fn reading(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Growth => self.growth_reading,
            Dimension::Inflation => self.inflation_reading,
            Dimension::Policy => self.policy_reading,
            Dimension::Financial => self.financial_conditions_reading,
        }
    }
}

/// Piecewise-linear map: `weak` → −1, `neutral` → 0, `strong` → +1.
///
/// `strong` may lie on either side of `neutral`; `weak` must lie on the
/// other side. Readings beyond either end saturate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionThresholds {
    pub weak: f64,
    pub neutral: f64,
    pub strong: f64,
}

impl DimensionThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.weak, self.neutral, self.strong].iter().all(|x| x.is_finite())
            && ((self.weak < self.neutral && self.neutral < self.strong)
                || (self.weak > self.neutral && self.neutral > self.strong));
        if ok {
            Ok(())
        } else {
            Err(SaaError::Config(format!(
                "thresholds {self:?} must be finite with neutral strictly between weak and strong"
            )))
        }
    }

    pub fn score(&self, reading: f64) -> f64 {
        let s = if (reading - self.neutral) * (self.strong - self.neutral) >= 0.0 {
            (reading - self.neutral) / (self.strong - self.neutral)
        } else {
            -(reading - self.neutral) / (self.weak - self.neutral)
        };
        s.clamp(-1.0, 1.0)
    }
}

pub type ThresholdConfig = BTreeMap<Dimension, DimensionThresholds>;

pub fn default_thresholds() -> ThresholdConfig {
    let t = |weak, neutral, strong| DimensionThresholds { weak, neutral, strong };
    BTreeMap::from([
        (Dimension::Growth, t(-1.0, 2.0, 4.0)),
        (Dimension::Inflation, t(4.0, 2.0, 0.5)),
        (Dimension::Policy, t(2.0, 0.0, -2.0)),
        (Dimension::Financial, t(1.0, 0.0, -1.0)),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionWeights {
    pub growth: f64,
    pub inflation: f64,
    pub policy: f64,
    pub financial: f64,
}

impl Default for DimensionWeights {
    fn default() -> Self {
        DimensionWeights {
            growth: 0.35,
            inflation: 0.25,
            policy: 0.20,
            financial: 0.20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    #[serde(serialize_with = "json::dp6")]
    pub growth: f64,
    #[serde(serialize_with = "json::dp6")]
    pub inflation: f64,
    #[serde(serialize_with = "json::dp6")]
    pub policy: f64,
    #[serde(serialize_with = "json::dp6")]
    pub financial: f64,
}

impl DimensionScores {
    pub fn uniform(s: f64) -> Self {
        DimensionScores {
            growth: s,
            inflation: s,
            policy: s,
            financial: s,
        }
    }

    /// Mean of the three conditions dimensions (positive = supportive).
    pub fn conditions(&self) -> f64 {
        (self.inflation + self.policy + self.financial) / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeView {
    pub regime: Regime,
    pub confidence: f64,
    pub scores: DimensionScores,
    pub composite: f64,
    pub narrative: String,
}

pub fn score_dimensions(ind: &MacroIndicators, thresholds: &ThresholdConfig) -> Result<DimensionScores> {
    let mut s = [0.0; 4];
    for (k, d) in Dimension::ALL.into_iter().enumerate() {
        let t = thresholds
            .get(&d)
            .ok_or_else(|| SaaError::Config(format!("missing thresholds for {d:?}")))?;
        t.validate()?;
        let r = ind.reading(d);
        if !r.is_finite() {
            return Err(SaaError::Value(format!("{d:?} reading is not finite")));
        }
        s[k] = t.score(r);
    }
    Ok(DimensionScores {
        growth: s[0],
        inflation: s[1],
        policy: s[2],
        financial: s[3],
    })
}

/// Quadrant rule on (growth, conditions); anything on an axis is LateCycle.
pub fn quadrant(growth: f64, conditions: f64) -> Regime {
    if growth == 0.0 || conditions == 0.0 {
        return Regime::LateCycle;
    }
    match (growth > 0.0, conditions > 0.0) {
        (true, true) => Regime::Expansion,
        (true, false) => Regime::LateCycle,
        (false, false) => Regime::Recession,
        (false, true) => Regime::Recovery,
    }
}

pub fn classify_regime(scores: &DimensionScores, weights: &DimensionWeights) -> Result<RegimeView> {
    let w = [weights.growth, weights.inflation, weights.policy, weights.financial];
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SaaError::Config(format!(
            "dimension weights {w:?} must be nonnegative and sum to 1"
        )));
    }
    let g = scores.growth;
    let c = scores.conditions();
    let regime = quadrant(g, c);
    let confidence = g.abs().min(c.abs()).clamp(0.0, 1.0);
    let composite = w[0] * g + w[1] * scores.inflation + w[2] * scores.policy + w[3] * scores.financial;
    let narrative = format!(
        "The macro environment is classified as {regime} with confidence {}. \
         Growth score {}, conditions score {} (inflation {}, policy {}, financial {}); \
         weighted composite {}.",
        json::fixed_string(confidence, 2),
        json::fixed_string(g, 2),
        json::fixed_string(c, 2),
        json::fixed_string(scores.inflation, 2),
        json::fixed_string(scores.policy, 2),
        json::fixed_string(scores.financial, 2),
        json::fixed_string(composite, 2),
    );
    Ok(RegimeView {
        regime,
        confidence,
        scores: *scores,
        composite,
        narrative,
    })
}

/// Scores and classifies in one step.
pub fn assess(ind: &MacroIndicators, thresholds: &ThresholdConfig, weights: &DimensionWeights) -> Result<RegimeView> {
    classify_regime(&score_dimensions(ind, thresholds)?, weights)
}

/// Structured macro artifact.
#[derive(Debug, Clone, Serialize)]
pub struct MacroViewArtifact {
    pub schema_version: &'static str,
    pub as_of: NaiveDate,
    pub regime: Regime,
    #[serde(serialize_with = "json::dp4")]
    pub confidence: f64,
    #[serde(serialize_with = "json::dp6")]
    pub composite: f64,
    pub scores: DimensionScores,
    pub overridden: bool,
}

pub fn render_narrative(view: &RegimeView, as_of: NaiveDate) -> String {
    format!(
        "# Macro view ({as_of})\n\nRegime: **{}**\n\nConfidence: {}\n\n{}\n",
        view.regime,
        json::fixed_string(view.confidence, 4),
        view.narrative
    )
}

/// Writes `macro-view.json` and `macro-view.md` into `dir`; returns their digests.
pub fn emit_macro_view(
    view: &RegimeView,
    as_of: NaiveDate,
    overridden: bool,
    dir: &Path,
) -> Result<BTreeMap<String, String>> {
    let art = MacroViewArtifact {
        schema_version: MACRO_VIEW_SCHEMA,
        as_of,
        regime: view.regime,
        confidence: view.confidence,
        composite: view.composite,
        scores: view.scores,
        overridden,
    };
    let mut out = BTreeMap::new();
    out.insert(
        "macro-view.json".to_string(),
        json::write_artifact(&dir.join("macro-view.json"), &art)?,
    );
    out.insert(
        "macro-view.md".to_string(),
        json::write_bytes(&dir.join("macro-view.md"), render_narrative(view, as_of).as_bytes())?,
    );
    Ok(out)
}

/// Parses `date,growth,inflation,policy,financial` monthly indicator rows.
pub fn parse_indicators_csv<R: Read>(reader: R, source: &str) -> Result<Vec<MacroIndicators>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SaaError::format(source, format!("missing `{name}` column")))
    };
    let (cd, cg, ci, cp, cf) = (
        col("date")?,
        col("growth")?,
        col("inflation")?,
        col("policy")?,
        col("financial")?,
    );
    let mut out: Vec<MacroIndicators> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let v: f64 = rec[c]
                .parse()
                .map_err(|_| SaaError::format(source, format!("bad number `{}`", &rec[c])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(SaaError::Value(format!("{source}: non-finite indicator")))
            }
        };
        let as_of = NaiveDate::parse_from_str(&rec[cd], "%Y-%m-%d")
            .map_err(|e| SaaError::format(source, format!("bad date `{}`: {e}", &rec[cd])))?;
        if let Some(prev) = out.last() {
            if as_of <= prev.as_of {
                return Err(SaaError::format(source, format!("dates not increasing at {as_of}")));
            }
        }
        out.push(MacroIndicators {
            as_of,
            growth_reading: num(cg)?,
            inflation_reading: num(ci)?,
            policy_reading: num(cp)?,
            financial_conditions_reading: num(cf)?,
        });
    }
    Ok(out)
}

/// Regime label for every indicator row.
pub fn label_history(
    history: &[MacroIndicators],
    thresholds: &ThresholdConfig,
    weights: &DimensionWeights,
) -> Result<Vec<(NaiveDate, Regime)>> {
    history
        .iter()
        .map(|ind| Ok((ind.as_of, assess(ind, thresholds, weights)?.regime)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ind(g: f64, i: f64, p: f64, f: f64) -> MacroIndicators {
        MacroIndicators {
            as_of: NaiveDate::from_ymd_opt(2026, 3, 1).unwrap(),
            growth_reading: g,
            inflation_reading: i,
            policy_reading: p,
            financial_conditions_reading: f,
        }
    }

    #[test]
    fn neutral_reading_scores_zero_and_strong_saturates() {
        let t = default_thresholds();
        let s = score_dimensions(&ind(2.0, 2.0, 0.0, 0.0), &t).unwrap();
        assert_eq!(s, DimensionScores::uniform(0.0));
        let s = score_dimensions(&ind(9.0, -3.0, -5.0, -4.0), &t).unwrap();
        assert_eq!(s, DimensionScores::uniform(1.0));
    }

    #[test]
    fn missing_threshold_is_config_error() {
        let mut t = default_thresholds();
        t.remove(&Dimension::Policy);
        assert!(matches!(
            score_dimensions(&ind(2.0, 2.0, 0.0, 0.0), &t),
            Err(SaaError::Config(_))
        ));
    }

    #[test]
    fn extremes_and_boundary_tie() {
        let w = DimensionWeights::default();
        let v = classify_regime(&DimensionScores::uniform(1.0), &w).unwrap();
        assert_eq!((v.regime, v.confidence), (Regime::Expansion, 1.0));
        let v = classify_regime(&DimensionScores::uniform(0.0), &w).unwrap();
        assert_eq!((v.regime, v.confidence), (Regime::LateCycle, 0.0));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let w = DimensionWeights {
            growth: 0.5,
            ..DimensionWeights::default()
        };
        assert!(classify_regime(&DimensionScores::uniform(0.2), &w).is_err());
    }

    #[test]
    fn quadrants() {
        assert_eq!(quadrant(0.5, -0.5), Regime::LateCycle);
        assert_eq!(quadrant(-0.5, -0.5), Regime::Recession);
        assert_eq!(quadrant(-0.5, 0.5), Regime::Recovery);
    }
}
