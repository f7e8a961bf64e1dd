//! Run configuration: a versioned TOML document. Unknown keys anywhere are
//! rejected, and every section is validated before any stage runs.
//!
//! Stochastic components take their seeds from the master `seed` only;
//! each stage derives its own stream from `(seed, stage tag, id)`. The
//! per-component `seed` fields must therefore be left at 0.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackMode};
use crate::cohort::{OutlierParams, SplitSpec, StateConfig, SynthSpec};
use crate::detectors::{DetectorConfig, DetectorKind};
use crate::error::{Error, Result};
use crate::risk::FitKind;
use crate::strategy::StrategyKind;
use crate::victim::{ModelKind, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Artifact directory; the `--out` flag overrides it.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub cohort: CohortSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub victim: VictimConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub detectors: DetectorConfig,
    #[serde(default)]
    pub strategies: StrategiesConfig,
    #[serde(default)]
    pub outliers: OutlierParams,
}

fn default_out() -> PathBuf {
    PathBuf::from("roast-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CohortSource {
    Synth {
        n_patients: usize,
        len: usize,
        /// Noise scale per patient, in patient order.
        noise_profile: Vec<f64>,
        #[serde(default)]
        generator: SynthSpec,
    },
    Csv {
        /// Relative paths resolve against the config file's directory.
        path: PathBuf,
        features: Vec<String>,
        label: String,
        /// Safe interval per feature; defaults to fasting glucose on the
        /// label.
        #[serde(default)]
        safe: Option<StateConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VictimConfig {
    pub model: ModelKind,
    pub window: usize,
    pub train: TrainConfig,
}

impl Default for VictimConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Linear,
            window: 6,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub fit: FitKind,
    /// Risk-factor features; defaults to the attacked feature.
    pub factors: Option<Vec<String>>,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            fit: FitKind::Linear,
            factors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategiesConfig {
    pub kinds: Vec<StrategyKind>,
    pub detectors: Vec<DetectorKind>,
    pub n_random_runs: usize,
    /// Attack that generates outlier-exposure windows; defaults to the
    /// test-time attack mode.
    pub oe_attack: Option<AttackMode>,
}

impl Default for StrategiesConfig {
    fn default() -> Self {
        Self {
            kinds: StrategyKind::ALL.to_vec(),
            detectors: DetectorKind::ALL.to_vec(),
            n_random_runs: 10,
            oe_attack: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`; relative CSV paths are resolved against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let CohortSource::Csv { path: p, .. } = &mut cfg.cohort {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        match &self.cohort {
            CohortSource::Synth {
                n_patients,
                len,
                noise_profile,
                ..
            } => {
                if *n_patients < 2 {
                    return Err(Error::Config("cohort.n_patients must be >= 2".into()));
                }
                if noise_profile.len() != *n_patients {
                    return Err(Error::Config(format!(
                        "cohort.noise_profile has {} entries for {n_patients} patients",
                        noise_profile.len()
                    )));
                }
                if noise_profile.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(Error::Config("cohort.noise_profile entries must be >= 0".into()));
                }
                if *len < 4 * (self.victim.window + 1) {
                    return Err(Error::Config(format!(
                        "cohort.len {len} is too short for window {}",
                        self.victim.window
                    )));
                }
            }
            CohortSource::Csv { features, label, safe, .. } => {
                if !features.contains(label) {
                    return Err(Error::Config(format!("cohort.label `{label}` is not among the features")));
                }
                if let Some(s) = safe {
                    s.validate().map_err(cfg_err)?;
                }
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config("split.train_fraction must be in (0, 1)".into()));
        }
        if self.victim.window == 0 {
            return Err(Error::Config("victim.window must be >= 1".into()));
        }
        if let ModelKind::Mlp { hidden: 0 } = self.victim.model {
            return Err(Error::Config("victim.model.hidden must be >= 1".into()));
        }
        self.victim.train.validate().map_err(cfg_err)?;
        self.attack.validate().map_err(cfg_err)?;
        if self.attack.span > self.victim.window {
            return Err(Error::Config("attack.span exceeds victim.window".into()));
        }
        let features = self.features();
        if !features.contains(&self.attack.attacked_feature) {
            return Err(Error::Config(format!(
                "attack.attacked_feature `{}` is not a cohort feature",
                self.attack.attacked_feature
            )));
        }
        for f in self.risk_factors() {
            if !features.contains(&f) {
                return Err(Error::Config(format!("risk factor `{f}` is not a cohort feature")));
            }
        }
        self.detectors.validate().map_err(cfg_err)?;
        let component_seeds = [
            ("victim.train.seed", self.victim.train.seed),
            ("attack.seed", self.attack.seed),
            ("detectors.autoencoder.seed", self.detectors.autoencoder.seed),
        ];
        if let Some((name, _)) = component_seeds.iter().find(|(_, s)| *s != 0) {
            return Err(Error::Config(format!(
                "{name} is derived from the master seed; set `seed` instead"
            )));
        }
        let s = &self.strategies;
        if !s.kinds.contains(&StrategyKind::AllBenign) {
            return Err(Error::Config("strategies.kinds must include all_benign".into()));
        }
        if s.detectors.is_empty() {
            return Err(Error::Config("strategies.detectors is empty".into()));
        }
        if s.kinds.contains(&StrategyKind::RandomOe) && s.n_random_runs == 0 {
            return Err(Error::Config("strategies.n_random_runs must be >= 1".into()));
        }
        if !(self.outliers.zscore_cutoff > 0.0 && self.outliers.iqr_factor >= 0.0) {
            return Err(Error::Config("outliers cutoffs must be positive".into()));
        }
        Ok(())
    }

    /// Feature names in schema order.
    pub fn features(&self) -> Vec<String> {
        match &self.cohort {
            CohortSource::Synth { generator, .. } => {
                vec![generator.glucose_feature.clone(), generator.heart_rate_feature.clone()]
            }
            CohortSource::Csv { features, .. } => features.clone(),
        }
    }

    pub fn risk_factors(&self) -> Vec<String> {
        self.risk
            .factors
            .clone()
            .unwrap_or_else(|| vec![self.attack.attacked_feature.clone()])
    }

    /// Reference synthetic setup: 12 patients, 3 low-noise and 9
    /// high-noise, with autocorrelated glucose noise and a white-box
    /// attack at half a standard deviation.
    pub fn reference(seed: u64) -> Self {
        let mut noise_profile = vec![2.0; 3];
        noise_profile.extend([20.0; 9]);
        Self {
            version: CONFIG_VERSION,
            seed,
            out_dir: default_out(),
            cohort: CohortSource::Synth {
                n_patients: 12,
                len: 240,
                noise_profile,
                generator: SynthSpec {
                    noise_ar: 0.9,
                    ..SynthSpec::default()
                },
            },
            split: SplitSpec::default(),
            victim: VictimConfig::default(),
            attack: AttackConfig {
                mode: AttackMode::Fgsm,
                epsilon: 0.5,
                ..AttackConfig::default()
            },
            risk: RiskConfig::default(),
            detectors: DetectorConfig::default(),
            strategies: StrategiesConfig::default(),
            outliers: OutlierParams::default(),
        }
    }
}
