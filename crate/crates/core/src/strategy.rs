//! Training-set construction for the five detector training strategies,
//! with 1:1 outlier exposure drawn from the same patient group.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    AllBenign,
    AllOe,
    LessVulnerableOe,
    MoreVulnerableOe,
    RandomOe,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::AllBenign,
        StrategyKind::AllOe,
        StrategyKind::LessVulnerableOe,
        StrategyKind::MoreVulnerableOe,
        StrategyKind::RandomOe,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            StrategyKind::AllBenign => "all_benign",
            StrategyKind::AllOe => "all_oe",
            StrategyKind::LessVulnerableOe => "less_vulnerable_oe",
            StrategyKind::MoreVulnerableOe => "more_vulnerable_oe",
            StrategyKind::RandomOe => "random_oe",
        }
    }

    pub fn uses_oe(&self) -> bool {
        !matches!(self, StrategyKind::AllBenign)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySpec {
    pub n_random_runs: usize,
    pub seed: u64,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self {
            n_random_runs: 10,
            seed: 0,
        }
    }
}

/// Per-patient benign and adversarial training windows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowPool {
    pub benign: BTreeMap<String, Vec<Vec<f64>>>,
    pub adversarial: BTreeMap<String, Vec<Vec<f64>>>,
}

impl WindowPool {
    pub fn patient_ids(&self) -> Vec<String> {
        self.benign.keys().cloned().collect()
    }

    pub fn benign_count(&self, ids: &[String]) -> usize {
        ids.iter().map(|id| self.benign.get(id).map_or(0, Vec::len)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    Benign,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub kind: StrategyKind,
    /// Run index for `random_oe`.
    pub run: Option<usize>,
    pub seed: u64,
    pub patient_ids: Vec<String>,
    pub windows: Vec<Vec<f64>>,
    pub labels: Vec<SampleLabel>,
    /// Index into `patient_ids` of each window's source patient.
    pub provenance: Vec<usize>,
    /// Adversarial windows were drawn with replacement.
    pub resampled: bool,
}

impl TrainingSet {
    pub fn n_benign(&self) -> usize {
        self.labels.iter().filter(|l| **l == SampleLabel::Benign).count()
    }

    pub fn n_adversarial(&self) -> usize {
        self.labels.len() - self.n_benign()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn manifest(&self) -> TrainingManifest {
        TrainingManifest {
            strategy: self.kind,
            run: self.run,
            seed: self.seed,
            patient_ids: self.patient_ids.clone(),
            n_benign: self.n_benign(),
            n_adversarial: self.n_adversarial(),
            resampled: self.resampled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub strategy: StrategyKind,
    pub run: Option<usize>,
    pub seed: u64,
    pub patient_ids: Vec<String>,
    pub n_benign: usize,
    pub n_adversarial: usize,
    pub resampled: bool,
}

/// Benign windows of `ids` plus, when `oe`, exactly as many adversarial
/// windows drawn from the same patients: without replacement when enough
/// exist, otherwise with replacement (and a warning).
fn assemble(
    kind: StrategyKind,
    run: Option<usize>,
    pool: &WindowPool,
    ids: Vec<String>,
    seed: u64,
) -> Result<TrainingSet> {
    if ids.is_empty() {
        return Err(Error::Empty(format!("{} has no patients", kind.id())));
    }
    let mut set = TrainingSet {
        kind,
        run,
        seed,
        patient_ids: ids,
        windows: Vec::new(),
        labels: Vec::new(),
        provenance: Vec::new(),
        resampled: false,
    };
    let mut adv_pool: Vec<(usize, &Vec<f64>)> = Vec::new();
    for (p, id) in set.patient_ids.iter().enumerate() {
        let benign = pool
            .benign
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no benign windows for `{id}`")))?;
        for w in benign {
            set.windows.push(w.clone());
            set.labels.push(SampleLabel::Benign);
            set.provenance.push(p);
        }
        if let Some(adv) = pool.adversarial.get(id) {
            adv_pool.extend(adv.iter().map(|w| (p, w)));
        }
    }
    if !kind.uses_oe() {
        return Ok(set);
    }
    let need = set.windows.len();
    if adv_pool.is_empty() {
        return Err(Error::Empty(format!(
            "{} has no adversarial windows for outlier exposure",
            kind.id()
        )));
    }
    let mut rng = seed::rng_from_seed(seed);
    let chosen: Vec<usize> = if adv_pool.len() >= need {
        let mut idx: Vec<usize> = (0..adv_pool.len()).collect();
        idx.shuffle(&mut rng);
        let mut pick = idx[..need].to_vec();
        pick.sort_unstable();
        pick
    } else {
        log::warn!(
            "{}: {} adversarial windows for {need} benign; sampling with replacement",
            kind.id(),
            adv_pool.len()
        );
        set.resampled = true;
        (0..need).map(|_| rng.random_range(0..adv_pool.len())).collect()
    };
    for i in chosen {
        let (p, w) = adv_pool[i];
        set.windows.push(w.clone());
        set.labels.push(SampleLabel::Adversarial);
        set.provenance.push(p);
    }
    Ok(set)
}

/// Training sets for `kind`: one set, or `n_random_runs` sets for
/// `random_oe`, each drawing as many patients as the less-vulnerable
/// cluster holds.
pub fn build(
    kind: StrategyKind,
    pool: &WindowPool,
    assignment: &ClusterAssignment,
    spec: &StrategySpec,
) -> Result<Vec<TrainingSet>> {
    let all = pool.patient_ids();
    let set_seed = |run: &str| seed::derive_seed(spec.seed, kind.id(), run);
    match kind {
        StrategyKind::AllBenign | StrategyKind::AllOe => Ok(vec![assemble(kind, None, pool, all, set_seed(""))?]),
        StrategyKind::LessVulnerableOe => Ok(vec![assemble(
            kind,
            None,
            pool,
            assignment.less_vulnerable.clone(),
            set_seed(""),
        )?]),
        StrategyKind::MoreVulnerableOe => Ok(vec![assemble(
            kind,
            None,
            pool,
            assignment.more_vulnerable.clone(),
            set_seed(""),
        )?]),
        StrategyKind::RandomOe => {
            let size = assignment.less_vulnerable.len();
            if size == 0 {
                return Err(Error::Empty("less-vulnerable cluster is empty".into()));
            }
            (0..spec.n_random_runs)
                .map(|r| {
                    let s = set_seed(&r.to_string());
                    let mut rng = seed::substream(s, "patients", "");
                    let mut ids: Vec<String> = all.choose_multiple(&mut rng, size).cloned().collect();
                    ids.sort();
                    assemble(kind, Some(r), pool, ids, s)
                })
                .collect()
        }
    }
}

/// `100 * (1 - selective / full)`.
pub fn reduction_stats(full: usize, selective: usize) -> Result<f64> {
    if full == 0 {
        return Err(Error::Empty("full training set is empty".into()));
    }
    Ok(100.0 * (1.0 - selective as f64 / full as f64))
}
