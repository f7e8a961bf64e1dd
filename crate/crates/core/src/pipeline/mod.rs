//! Config-driven orchestration of the full pipeline with cached stages.
//!
//! Every stage reads its inputs from and writes its outputs to one
//! artifact directory, so each can run on its own once its upstream
//! artifacts exist:
//!
//! | stage           | inputs                                   | outputs |
//! |-----------------|------------------------------------------|---------|
//! | `cohort`        | config                                   | `cohort.jsonl` |
//! | `outlier-stats` | `cohort.jsonl`                           | `outliers.csv` |
//! | `victim`        | `cohort.jsonl`                           | `victim.json`, `victim_fit.json` |
//! | `attack`        | `cohort.jsonl`, `victim.json`            | `attacks.json`, `attack_outcomes.csv`, `success_rates.csv` |
//! | `risk`          | `cohort.jsonl`, `attacks.json`           | `risk.json`, `risk_profiles.csv` |
//! | `cluster`       | `attacks.json`, `risk.json`              | `clustering.json`, `clusters.csv` |
//! | `sensitivity`   | `cohort.jsonl`, `attacks.json`, `risk.json`, `clustering.json` | `sensitivity.csv` |
//! | `train`         | `cohort.jsonl`, `attacks.json`, `clustering.json` | `detectors.json`, `training_sets.json` |
//! | `evaluate`      | `cohort.jsonl`, `attacks.json`, `detectors.json` | report files (see [`crate::eval::emit_report`]) |

pub mod cache;
pub mod config;
pub mod stages;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cluster::{self, Clustering};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::eval::{self, FittedCell};
use crate::victim::{FitReport, ForecastModel};
use cache::ArtifactStore;
use stages::{AttackArtifacts, RiskArtifacts};

pub use config::{CohortSource, RunConfig, CONFIG_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Cohort,
    OutlierStats,
    Victim,
    Attack,
    Risk,
    Cluster,
    Sensitivity,
    Train,
    Evaluate,
}

impl Stage {
    /// Execution order of an end-to-end run.
    pub const ALL: [Stage; 9] = [
        Stage::Cohort,
        Stage::OutlierStats,
        Stage::Victim,
        Stage::Attack,
        Stage::Risk,
        Stage::Cluster,
        Stage::Sensitivity,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Cohort => "cohort",
            Stage::OutlierStats => "outlier-stats",
            Stage::Victim => "victim",
            Stage::Attack => "attack",
            Stage::Risk => "risk",
            Stage::Cluster => "cluster",
            Stage::Sensitivity => "sensitivity",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn inputs(&self) -> &'static [&'static str] {
        match self {
            Stage::Cohort => &[],
            Stage::OutlierStats | Stage::Victim => &[COHORT],
            Stage::Attack => &[COHORT, VICTIM],
            Stage::Risk => &[COHORT, ATTACKS],
            Stage::Cluster => &[ATTACKS, RISK],
            Stage::Sensitivity => &[COHORT, ATTACKS, RISK, CLUSTERING],
            Stage::Train => &[COHORT, ATTACKS, CLUSTERING],
            Stage::Evaluate => &[COHORT, ATTACKS, DETECTORS],
        }
    }

    pub fn outputs(&self) -> &'static [&'static str] {
        match self {
            Stage::Cohort => &[COHORT],
            Stage::OutlierStats => &["outliers.csv"],
            Stage::Victim => &[VICTIM, "victim_fit.json"],
            Stage::Attack => &[ATTACKS, "attack_outcomes.csv", "success_rates.csv"],
            Stage::Risk => &[RISK, "risk_profiles.csv"],
            Stage::Cluster => &[CLUSTERING, "clusters.csv"],
            Stage::Sensitivity => &["sensitivity.csv"],
            Stage::Train => &[DETECTORS, "training_sets.json"],
            Stage::Evaluate => &[
                "metrics.csv",
                "summary.json",
                "recall_precision.csv",
                "reductions.csv",
                "traces.csv",
                "timings.csv",
                "recall.svg",
            ],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

const COHORT: &str = "cohort.jsonl";
const VICTIM: &str = "victim.json";
const ATTACKS: &str = "attacks.json";
const RISK: &str = "risk.json";
const CLUSTERING: &str = "clustering.json";
const DETECTORS: &str = "detectors.json";

/// A failure attributed to the stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Computed,
    Cached,
}

pub struct Runner {
    cfg: RunConfig,
    out_dir: PathBuf,
    force: bool,
    timing_strict: bool,
}

impl Runner {
    /// `out_dir` overrides the config's output directory.
    pub fn new(cfg: RunConfig, out_dir: Option<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out_dir = out_dir.unwrap_or_else(|| cfg.out_dir.clone());
        Ok(Self {
            cfg,
            out_dir,
            force: false,
            timing_strict: false,
        })
    }

    /// Recompute stages even when their cache key matches.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    /// Fit detectors one at a time and report their wall-clock times.
    pub fn timing_strict(mut self, strict: bool) -> Self {
        self.timing_strict = strict;
        self
    }

    pub fn out_dir(&self) -> &std::path::Path {
        &self.out_dir
    }

    /// Every stage in order; stops at the first failure, leaving earlier
    /// artifacts in place.
    pub fn run_all(&self) -> std::result::Result<Vec<(Stage, StageStatus)>, StageError> {
        Stage::ALL
            .into_iter()
            .map(|s| self.run_stage(s).map(|st| (s, st)))
            .collect()
    }

    pub fn run_stage(&self, stage: Stage) -> std::result::Result<StageStatus, StageError> {
        self.try_stage(stage).map_err(|error| StageError { stage, error })
    }

    fn try_stage(&self, stage: Stage) -> Result<StageStatus> {
        let store = ArtifactStore::open(&self.out_dir)?;
        let key = store.stage_key(stage.name(), &self.section(stage)?, stage.inputs())?;
        if !self.force && store.is_fresh(stage.name(), &key, stage.outputs()) {
            log::info!("{stage}: cached");
            return Ok(StageStatus::Cached);
        }
        log::info!("{stage}: computing");
        self.compute(stage, &store)?;
        store.record(stage.name(), &key)?;
        Ok(StageStatus::Computed)
    }

    /// Config subsection that determines a stage's outputs given its
    /// inputs.
    fn section(&self, stage: Stage) -> Result<serde_json::Value> {
        let c = &self.cfg;
        let v = match stage {
            Stage::Cohort => {
                let source_hash = match &c.cohort {
                    CohortSource::Csv { path, .. } => {
                        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                        Some(format!("{:x}", Sha256::digest(bytes)))
                    }
                    CohortSource::Synth { .. } => None,
                };
                json(&(c.seed, &c.cohort, source_hash))?
            }
            Stage::OutlierStats => json(&c.outliers)?,
            Stage::Victim => json(&(c.seed, &c.split, &c.victim))?,
            Stage::Attack => json(&(c.seed, &c.split, c.victim.window, &c.attack, c.strategies.oe_attack))?,
            Stage::Risk => json(&(&c.split, &c.risk, c.risk_factors()))?,
            Stage::Cluster | Stage::Sensitivity => serde_json::Value::Null,
            Stage::Train => json(&(
                c.seed,
                &c.split,
                c.victim.window,
                &c.detectors,
                &c.strategies,
                self.timing_strict,
            ))?,
            Stage::Evaluate => json(&(&c.split, c.victim.window, self.timing_strict))?,
        };
        Ok(v)
    }

    fn split(&self, store: &ArtifactStore) -> Result<(Cohort, Cohort, Cohort)> {
        let cohort = Cohort::from_jsonl(&store.read_text(COHORT)?)?;
        let (train, test) = stages::split(&self.cfg, &cohort)?;
        Ok((cohort, train, test))
    }

    fn compute(&self, stage: Stage, store: &ArtifactStore) -> Result<()> {
        let cfg = &self.cfg;
        match stage {
            Stage::Cohort => {
                let cohort = stages::load_cohort(cfg)?;
                store.write_text(COHORT, &cohort.to_jsonl()?)
            }
            Stage::OutlierStats => {
                let cohort = Cohort::from_jsonl(&store.read_text(COHORT)?)?;
                let table = stages::outlier_stats(cfg, &cohort)?;
                store.write_text("outliers.csv", &outliers_csv(&table)?)
            }
            Stage::Victim => {
                let (_, train, _) = self.split(store)?;
                let fit = stages::train_victim(cfg, &train)?;
                store.write_text(VICTIM, &fit.model.to_json()?)?;
                store.write_json("victim_fit.json", &FitSummary::from(&fit))
            }
            Stage::Attack => {
                let (_, train, test) = self.split(store)?;
                let model = ForecastModel::from_json(&store.read_text(VICTIM)?)?;
                let attacks = stages::run_attacks(cfg, &train, &test, &model)?;
                store.write_json(ATTACKS, &attacks)?;
                store.write_text("attack_outcomes.csv", &attacks.train.to_csv()?)?;
                store.write_text("success_rates.csv", &success_rates_csv(&attacks)?)
            }
            Stage::Risk => {
                let (_, train, _) = self.split(store)?;
                let attacks: AttackArtifacts = store.read_json(ATTACKS)?;
                let risk = stages::quantify_risk(cfg, &train, &attacks.train)?;
                store.write_json(RISK, &risk)?;
                store.write_text("risk_profiles.csv", &crate::risk::profiles_to_csv(&risk.profiles)?)
            }
            Stage::Cluster => {
                let attacks: AttackArtifacts = store.read_json(ATTACKS)?;
                let risk: RiskArtifacts = store.read_json(RISK)?;
                let clustering = stages::cluster(&attacks.train, &risk)?;
                store.write_json(CLUSTERING, &clustering)?;
                store.write_text("clusters.csv", &clusters_csv(&clustering, &attacks)?)
            }
            Stage::Sensitivity => {
                let cohort = Cohort::from_jsonl(&store.read_text(COHORT)?)?;
                let attacks: AttackArtifacts = store.read_json(ATTACKS)?;
                let risk: RiskArtifacts = store.read_json(RISK)?;
                let clustering: Clustering = store.read_json(CLUSTERING)?;
                let rows = stages::sensitivity(&attacks.train, &risk, &clustering, cohort.schema())?;
                store.write_text("sensitivity.csv", &cluster::sweep_to_csv(&rows)?)
            }
            Stage::Train => {
                let (_, train, test) = self.split(store)?;
                let attacks: AttackArtifacts = store.read_json(ATTACKS)?;
                let clustering: Clustering = store.read_json(CLUSTERING)?;
                let data = stages::detector_data(&train, &test, &attacks, cfg.victim.window)?;
                let cells = stages::train_detectors(cfg, &data, &clustering, self.timing_strict)?;
                let manifests: Vec<_> = cells.iter().map(|c| &c.manifest).collect();
                store.write_json("training_sets.json", &manifests)?;
                store.write_json(DETECTORS, &cells)
            }
            Stage::Evaluate => {
                let (_, train, test) = self.split(store)?;
                let attacks: AttackArtifacts = store.read_json(ATTACKS)?;
                let cells: Vec<FittedCell> = store.read_json(DETECTORS)?;
                let data = stages::detector_data(&train, &test, &attacks, cfg.victim.window)?;
                let report = stages::evaluate(&data, &cells, self.timing_strict)?;
                eval::emit_report(&report, store.dir())
            }
        }
    }
}

fn json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    final_loss: f64,
    loss_history: &'a [f64],
}

impl<'a> From<&'a FitReport> for FitSummary<'a> {
    fn from(r: &'a FitReport) -> Self {
        Self {
            final_loss: r.final_loss,
            loss_history: &r.loss_history,
        }
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

/// `patient_id,zscore_fraction,iqr_fraction`, then `mean` and `std` rows.
fn outliers_csv(t: &crate::cohort::OutlierTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["patient_id", "zscore_fraction", "iqr_fraction"])?;
    for r in &t.rows {
        w.write_record([r.patient_id.clone(), r.zscore_fraction.to_string(), r.iqr_fraction.to_string()])?;
    }
    w.write_record(["mean".to_string(), t.zscore_mean.to_string(), t.iqr_mean.to_string()])?;
    w.write_record(["std".to_string(), t.zscore_std.to_string(), t.iqr_std.to_string()])?;
    finish(w)
}

/// `part,patient_id,n_windows,n_attacked,n_success,success_rate`
fn success_rates_csv(a: &AttackArtifacts) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["part", "patient_id", "n_windows", "n_attacked", "n_success", "success_rate"])?;
    for (part, attack) in [("train", &a.train), ("test", &a.test)] {
        for p in &attack.patients {
            w.write_record([
                part.to_string(),
                p.patient_id.clone(),
                p.n_windows.to_string(),
                p.outcomes.len().to_string(),
                p.n_success().to_string(),
                eval::fmt_opt(p.success_rate()),
            ])?;
        }
    }
    finish(w)
}

/// `patient_id,cluster,success_rate`
fn clusters_csv(c: &Clustering, a: &AttackArtifacts) -> Result<String> {
    let rates: std::collections::BTreeMap<String, Option<f64>> = a.train.success_rates().into_iter().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["patient_id", "cluster", "success_rate"])?;
    let groups = [
        ("less_vulnerable", &c.assignment.less_vulnerable),
        ("more_vulnerable", &c.assignment.more_vulnerable),
    ];
    for (label, ids) in groups {
        for id in ids {
            let r = rates.get(id).copied().flatten();
            w.write_record([id.clone(), label.to_string(), eval::fmt_opt(r)])?;
        }
    }
    finish(w)
}
