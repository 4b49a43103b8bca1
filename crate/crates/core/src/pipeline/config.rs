use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cio::DEFAULT_DRIFT_TRIGGER;
use crate::cma::CmaSettings;
use crate::error::{Result, SaaError};
use crate::market::{AssetCategory, AssetId, PanelSources, Universe};
use crate::pc::{MethodId, PcParams};
use crate::regime::{default_thresholds, DimensionWeights, Regime, ThresholdConfig};
use crate::review::{LambdaTable, RegimeTable, ScoreWeights};
use crate::risk::{Benchmark, FactorExposures, IpsPolicy, Rebalancing};
use crate::solver::Bounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetEntry {
    pub slug: String,
    pub category: AssetCategory,
    /// Display name for the board memo.
    pub name: Option<String>,
    #[serde(default)]
    pub min_weight: Option<f64>,
    #[serde(default)]
    pub max_weight: Option<f64>,
    /// Equity and bond loadings for the two-factor risk budget.
    #[serde(default)]
    pub loadings: Option<[f64; 2]>,
}

/// Paths are relative to the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub returns: Vec<PathBuf>,
    pub fundamentals: Option<PathBuf>,
    pub caps: Option<PathBuf>,
    /// Monthly `date,growth,inflation,policy,financial` rows.
    pub indicators: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpsConfig {
    pub real_return_target: [f64; 2],
    pub vol_band: [f64; 2],
    pub max_drawdown_limit: f64,
    pub tracking_error_cap: f64,
    pub benchmark_equity: Vec<String>,
    pub benchmark_bonds: Vec<String>,
    #[serde(default = "default_equity_share")]
    pub equity_share: f64,
}

fn default_equity_share() -> f64 {
    0.6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub assignment: u64,
    pub resampling: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            assignment: 1,
            resampling: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroConfig {
    pub thresholds: ThresholdConfig,
    pub weights: DimensionWeights,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            thresholds: default_thresholds(),
            weights: DimensionWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioConfig {
    pub target_vol: f64,
    pub cvar_level: f64,
    /// Overrides the risk-free rate otherwise read from fundamentals.
    pub risk_free_rate: Option<f64>,
    pub covariance_shrinkage: f64,
    /// Scale, in standard errors of the mean, of the μ perturbation used to
    /// measure estimation sensitivity.
    pub sensitivity_bump: f64,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            target_vol: 0.10,
            cvar_level: 0.95,
            risk_free_rate: None,
            covariance_shrinkage: 0.2,
            sensitivity_bump: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub rebalancing: Rebalancing,
    pub alpha: f64,
    pub factors: FactorExposures,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            rebalancing: Rebalancing::Monthly,
            alpha: 0.95,
            factors: FactorExposures::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CioConfig {
    pub drift_trigger: f64,
    /// A previous run's `cio_decision.json`, for the changes section.
    pub previous_decision: Option<PathBuf>,
}

impl Default for CioConfig {
    fn default() -> Self {
        CioConfig {
            drift_trigger: DEFAULT_DRIFT_TRIGGER,
            previous_decision: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackThresholds {
    pub window_months: usize,
    pub min_regime_accuracy: f64,
    pub min_rank_ic: f64,
    pub min_hit_rate: f64,
    pub max_method_mae: f64,
}

impl Default for FeedbackThresholds {
    fn default() -> Self {
        FeedbackThresholds {
            window_months: 36,
            min_regime_accuracy: 0.6,
            min_rank_ic: 0.0,
            min_hit_rate: 0.5,
            max_method_mae: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub as_of: NaiveDate,
    pub data: DataPaths,
    pub universe: Vec<AssetEntry>,
    pub ips: IpsConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub regime_override: Option<Regime>,
    /// `method_id = false` removes a method from every stage.
    #[serde(default)]
    pub method_toggles: BTreeMap<String, bool>,
    #[serde(default)]
    pub lambda_table: LambdaTable,
    #[serde(default)]
    pub regime_table: RegimeTable,
    #[serde(default)]
    pub score_weights: ScoreWeights,
    #[serde(default, rename = "macro")]
    pub macro_: MacroConfig,
    #[serde(default)]
    pub cma: CmaSettings,
    #[serde(default)]
    pub pc: PcParams,
    #[serde(default)]
    pub portfolio: PortfolioConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub cio: CioConfig,
    #[serde(default)]
    pub feedback: FeedbackThresholds,
}

/// A parsed config plus the directory its relative paths resolve against
/// and the digest of its bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
    pub path: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SaaError::io(path, e))?;
        let text =
            std::str::from_utf8(&bytes).map_err(|_| SaaError::Config(format!("{} is not UTF-8", path.display())))?;
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| SaaError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig {
            config,
            base_dir,
            path: path.to_path_buf(),
            hash: crate::json::sha256_hex(&bytes),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn panel_sources(&self) -> PanelSources {
        let d = &self.config.data;
        PanelSources {
            returns: d.returns.iter().map(|p| self.resolve(p)).collect(),
            fundamentals: d.fundamentals.as_deref().map(|p| self.resolve(p)),
            caps: d.caps.as_deref().map(|p| self.resolve(p)),
        }
    }

    /// Checks the config and that every referenced data file exists.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let s = self.panel_sources();
        let files = s
            .returns
            .iter()
            .chain(&s.fundamentals)
            .chain(&s.caps)
            .cloned()
            .chain(self.config.data.indicators.as_deref().map(|p| self.resolve(p)))
            .chain(self.config.cio.previous_decision.as_deref().map(|p| self.resolve(p)));
        for f in files {
            if !f.is_file() {
                return Err(SaaError::Config(format!("data file {} not found", f.display())));
            }
        }
        Ok(())
    }
}

impl PipelineConfig {
    pub fn universe(&self) -> Result<Universe> {
        Universe::new(
            self.universe
                .iter()
                .map(|a| AssetId::new(a.slug.clone(), a.category))
                .collect(),
        )
    }

    pub fn slugs(&self) -> Vec<String> {
        self.universe.iter().map(|a| a.slug.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.universe
            .iter()
            .map(|a| a.name.clone().unwrap_or_else(|| a.slug.clone()))
            .collect()
    }

    pub fn policy(&self) -> Result<IpsPolicy> {
        let slugs = self.slugs();
        let ips = &self.ips;
        let policy = IpsPolicy {
            universe: slugs.clone(),
            real_return_target: ips.real_return_target,
            vol_band: ips.vol_band,
            max_drawdown_limit: ips.max_drawdown_limit,
            tracking_error_cap: ips.tracking_error_cap,
            benchmark: Benchmark::split(&slugs, &ips.benchmark_equity, &ips.benchmark_bonds, ips.equity_share)?,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            lo: self.universe.iter().map(|a| a.min_weight.unwrap_or(0.0)).collect(),
            hi: self.universe.iter().map(|a| a.max_weight.unwrap_or(1.0)).collect(),
        }
    }

    /// Configured loadings, else (1, 0) for equity, (0, 1) for fixed income,
    /// (0.5, 0) for real assets and zero for cash.
    pub fn factor_loadings(&self) -> Vec<[f64; 2]> {
        self.universe
            .iter()
            .map(|a| {
                a.loadings.unwrap_or(match a.category {
                    AssetCategory::Equity => [1.0, 0.0],
                    AssetCategory::FixedIncome => [0.0, 1.0],
                    AssetCategory::RealAssets => [0.5, 0.0],
                    AssetCategory::Cash => [0.0, 0.0],
                })
            })
            .collect()
    }

    pub fn enabled(&self, m: MethodId) -> bool {
        self.method_toggles.get(m.key()).copied().unwrap_or(true)
    }

    /// Method parameters with the configured resampling seed and the
    /// researcher's library emptied when max-entropy is toggled off.
    pub fn pc_params(&self) -> PcParams {
        let mut p = self.pc.clone();
        p.resample_seed = self.seeds.resampling;
        p.researcher_library
            .retain(|k| MethodId::parse(k).is_none_or(|m| self.enabled(m)));
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.universe()?;
        self.policy()?;
        self.bounds().validate()?;
        for key in self.method_toggles.keys() {
            if MethodId::parse(key).is_none() {
                return Err(SaaError::Config(format!("unknown method `{key}` in method_toggles")));
            }
        }
        self.lambda_table.validate()?;
        self.regime_table.validate()?;
        self.score_weights.validate()?;
        for t in self.macro_.thresholds.values() {
            t.validate()?;
        }
        if !(0.0..=1.0).contains(&self.portfolio.covariance_shrinkage) {
            return Err(SaaError::Config("covariance_shrinkage must lie in [0, 1]".into()));
        }
        if !(self.cio.drift_trigger > 0.0 && self.cio.drift_trigger < 1.0) {
            return Err(SaaError::Config("drift_trigger must lie in (0, 1)".into()));
        }
        if self.feedback.window_months == 0 {
            return Err(SaaError::Config("feedback window must be positive".into()));
        }
        if self.regime_override.is_none() && self.data.indicators.is_none() {
            return Err(SaaError::Config(
                "either data.indicators or regime_override is required".into(),
            ));
        }
        Ok(())
    }
}
