//! Stage computations over in-memory inputs. The cached runner in the
//! parent module persists their outputs; tests can call them directly.

use serde::{Deserialize, Serialize};

use super::config::{CohortSource, RunConfig};
use crate::attack::{self, AttackConfig, CohortAttack};
use crate::cluster::{self, Clustering, SweepInputs, SweepRow};
use crate::cohort::{self, Cohort, FeatureScaler, OutlierTable, StateConfig, WindowLayout};
use crate::detectors::AeConfig;
use crate::error::{Error, Result};
use crate::eval::{self, CompareOptions, FittedCell, StrategyReport, TestSet};
use crate::risk::{self, RiskProfile, SeverityModel};
use crate::seed::derive_seed;
use crate::strategy::{StrategySpec, WindowPool};
use crate::victim::{self, FitReport, ForecastModel};

/// Builds or loads the cohort described by `cfg.cohort`.
pub fn load_cohort(cfg: &RunConfig) -> Result<Cohort> {
    match &cfg.cohort {
        CohortSource::Synth {
            n_patients,
            len,
            noise_profile,
            generator,
        } => generator.generate(derive_seed(cfg.seed, "cohort", ""), *n_patients, *len, noise_profile),
        CohortSource::Csv {
            path,
            features,
            label,
            safe,
        } => {
            let names: Vec<&str> = features.iter().map(String::as_str).collect();
            let c = cohort::load_csv(path, &names)?.with_label_channel(label)?;
            let states = safe.clone().unwrap_or_else(|| StateConfig::glucose_fasting(label));
            c.with_state_config(states)
        }
    }
}

/// Chronological train/test parts of every patient.
pub fn split(cfg: &RunConfig, cohort: &Cohort) -> Result<(Cohort, Cohort)> {
    cohort::chrono_split(cohort, cfg.split)
}

fn label_of(cohort: &Cohort) -> Result<String> {
    cohort
        .label_channel()
        .map(str::to_string)
        .ok_or_else(|| Error::InvalidArgument("cohort has no label channel".into()))
}

/// One-step-ahead forecaster of the label channel, fitted on the training
/// part of every patient.
pub fn train_victim(cfg: &RunConfig, train: &Cohort) -> Result<FitReport> {
    let label = label_of(train)?;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for p in train.patients() {
        for s in cohort::forecast_samples(p, cfg.victim.window, 1, &label)? {
            inputs.push(s.window);
            targets.push(s.target);
        }
    }
    let dim = train.schema().len() * cfg.victim.window;
    let init = ForecastModel::new(cfg.victim.model, dim, 1, derive_seed(cfg.seed, "victim", "init"))?;
    let mut tc = cfg.victim.train.clone();
    tc.seed = derive_seed(cfg.seed, "victim", "fit");
    victim::fit(&init, &inputs, &targets, &tc)
}

/// Attack outcomes on both parts of the cohort, plus the outlier-exposure
/// attack when it differs from the test-time one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackArtifacts {
    pub train: CohortAttack,
    pub test: CohortAttack,
    /// `None` when OE windows come from `train`.
    pub oe: Option<CohortAttack>,
}

impl AttackArtifacts {
    pub fn oe_source(&self) -> &CohortAttack {
        self.oe.as_ref().unwrap_or(&self.train)
    }
}

fn attack_config(cfg: &RunConfig, part: &str) -> AttackConfig {
    AttackConfig {
        seed: derive_seed(cfg.seed, "attack", part),
        ..cfg.attack.clone()
    }
}

pub fn run_attacks(cfg: &RunConfig, train: &Cohort, test: &Cohort, model: &ForecastModel) -> Result<AttackArtifacts> {
    let w = cfg.victim.window;
    let train_attack = attack::simulate_cohort(train, model, &attack_config(cfg, "train"), w)?;
    let test_attack = attack::simulate_cohort(test, model, &attack_config(cfg, "test"), w)?;
    let oe = match cfg.strategies.oe_attack {
        Some(mode) if mode != cfg.attack.mode => {
            let oc = AttackConfig {
                mode,
                ..attack_config(cfg, "oe")
            };
            Some(attack::simulate_cohort(train, model, &oc, w)?)
        }
        _ => None,
    };
    Ok(AttackArtifacts {
        train: train_attack,
        test: test_attack,
        oe,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskArtifacts {
    pub severity: SeverityModel,
    pub factors: Vec<String>,
    pub profiles: Vec<RiskProfile>,
}

/// Severity fitted on the training part; profiles from the training-part
/// attack.
pub fn quantify_risk(cfg: &RunConfig, train: &Cohort, attack: &CohortAttack) -> Result<RiskArtifacts> {
    let severity = risk::fit_severity(train, cfg.risk.fit)?;
    let factors = cfg.risk_factors();
    let profiles = risk::build_profiles(attack, &severity, &factors, train.schema())?;
    Ok(RiskArtifacts {
        severity,
        factors,
        profiles,
    })
}

pub fn cluster(attack: &CohortAttack, risk: &RiskArtifacts) -> Result<Clustering> {
    cluster::cluster_profiles(&risk.profiles, &attack.success_rates().into_iter().collect())
}

pub fn sensitivity(
    attack: &CohortAttack,
    risk: &RiskArtifacts,
    clustering: &Clustering,
    schema: &[String],
) -> Result<Vec<SweepRow>> {
    let rates = attack.success_rates().into_iter().collect();
    cluster::sensitivity_sweep(&SweepInputs {
        attack,
        severity: &risk.severity,
        factors: &risk.factors,
        schema,
        rates: &rates,
        baseline: clustering,
    })
}

pub fn outlier_stats(cfg: &RunConfig, cohort: &Cohort) -> Result<OutlierTable> {
    cohort::outlier_table(cohort, cfg.outliers)
}

/// Standardized detector inputs: the per-patient training pool and the
/// common test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorData {
    pub scaler: FeatureScaler,
    pub pool: WindowPool,
    pub test: TestSet,
}

/// Benign windows are every forecasting window; adversarial windows are
/// the attacked windows whose values actually changed.
pub fn detector_data(train: &Cohort, test: &Cohort, attacks: &AttackArtifacts, window: usize) -> Result<DetectorData> {
    let label = label_of(train)?;
    let scaler = FeatureScaler::fit(train)?;
    let layout = WindowLayout {
        n_features: train.schema().len(),
        len: window,
    };
    let scale = |w: &[f64]| scaler.transform(w, layout);
    let adversarial = |a: &CohortAttack, id: &str| -> Vec<Vec<f64>> {
        a.patients
            .iter()
            .filter(|p| p.patient_id == id)
            .flat_map(|p| p.outcomes.iter().filter(|o| o.perturbed))
            .map(|o| scale(&o.adversarial_window))
            .collect()
    };

    let mut pool = WindowPool::default();
    for p in train.patients() {
        let benign = cohort::forecast_samples(p, window, 1, &label)?
            .iter()
            .map(|s| scale(&s.window))
            .collect();
        pool.benign.insert(p.patient_id().to_string(), benign);
        pool.adversarial
            .insert(p.patient_id().to_string(), adversarial(attacks.oe_source(), p.patient_id()));
    }

    let mut set = TestSet::default();
    for (i, p) in test.patients().iter().enumerate() {
        set.patient_ids.push(p.patient_id().to_string());
        for s in cohort::forecast_samples(p, window, 1, &label)? {
            set.push(i, scale(&s.window), false);
        }
        for w in adversarial(&attacks.test, p.patient_id()) {
            set.push(i, w, true);
        }
    }
    Ok(DetectorData { scaler, pool, test: set })
}

fn compare_options(cfg: &RunConfig, timing_strict: bool) -> CompareOptions {
    CompareOptions {
        detectors: cfg.strategies.detectors.clone(),
        strategies: cfg.strategies.kinds.clone(),
        timing_strict,
    }
}

pub fn train_detectors(
    cfg: &RunConfig,
    data: &DetectorData,
    clustering: &Clustering,
    timing_strict: bool,
) -> Result<Vec<FittedCell>> {
    let mut dc = cfg.detectors.clone();
    dc.autoencoder = AeConfig {
        seed: derive_seed(cfg.seed, "detector", "autoencoder"),
        ..dc.autoencoder
    };
    let spec = StrategySpec {
        n_random_runs: cfg.strategies.n_random_runs,
        seed: derive_seed(cfg.seed, "strategy", ""),
    };
    eval::fit_cells(
        &data.pool,
        &clustering.assignment,
        &dc,
        &spec,
        &compare_options(cfg, timing_strict),
    )
}

pub fn evaluate(data: &DetectorData, cells: &[FittedCell], timing_strict: bool) -> Result<StrategyReport> {
    let full = data.pool.benign_count(&data.pool.patient_ids());
    eval::evaluate_cells(cells, &data.test, full, timing_strict)
}

/// Every artifact of one end-to-end run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub cohort: Cohort,
    pub victim: FitReport,
    pub attacks: AttackArtifacts,
    pub risk: RiskArtifacts,
    pub clustering: Clustering,
    pub report: StrategyReport,
}

/// The full pipeline without touching the filesystem.
pub fn run_in_memory(cfg: &RunConfig, timing_strict: bool) -> Result<RunArtifacts> {
    cfg.validate()?;
    let cohort = load_cohort(cfg)?;
    let (train, test) = split(cfg, &cohort)?;
    let victim = train_victim(cfg, &train)?;
    let attacks = run_attacks(cfg, &train, &test, &victim.model)?;
    let risk = quantify_risk(cfg, &train, &attacks.train)?;
    let clustering = cluster(&attacks.train, &risk)?;
    let data = detector_data(&train, &test, &attacks, cfg.victim.window)?;
    let cells = train_detectors(cfg, &data, &clustering, timing_strict)?;
    let report = evaluate(&data, &cells, timing_strict)?;
    Ok(RunArtifacts {
        cohort,
        victim,
        attacks,
        risk,
        clustering,
        report,
    })
}
