//! Confusion counts, recall/precision and reduction percentages.

use serde::{Deserialize, Serialize};

use crate::detectors::{FittedDetector, Verdict};
use crate::error::{Error, Result};

/// Counts with "anomalous" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `TP / (TP + FN)`; `None` without adversarial windows.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `TP / (TP + FP)`; `None` when nothing was flagged.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn record(&mut self, adversarial: bool, verdict: Verdict) {
        match (adversarial, verdict) {
            (true, Verdict::Anomalous) => self.tp += 1,
            (true, Verdict::Benign) => self.fn_ += 1,
            (false, Verdict::Anomalous) => self.fp += 1,
            (false, Verdict::Benign) => self.tn += 1,
        }
    }
}

/// Windows from every test patient, benign and adversarial.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub patient_ids: Vec<String>,
    pub windows: Vec<Vec<f64>>,
    pub adversarial: Vec<bool>,
    /// Index into `patient_ids` per window.
    pub patient: Vec<usize>,
}

impl TestSet {
    pub fn push(&mut self, patient: usize, window: Vec<f64>, adversarial: bool) {
        self.windows.push(window);
        self.adversarial.push(adversarial);
        self.patient.push(patient);
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub counts: ConfusionCounts,
    pub per_patient: Vec<ConfusionCounts>,
    pub scores: Vec<f64>,
    pub verdicts: Vec<Verdict>,
}

impl Evaluation {
    pub fn per_patient_recall(&self) -> Vec<Option<f64>> {
        self.per_patient.iter().map(ConfusionCounts::recall).collect()
    }
}

/// Classifies every test window. Adversarial windows flagged anomalous are
/// true positives; benign windows flagged anomalous are false positives.
pub fn evaluate(detector: &FittedDetector, test: &TestSet) -> Result<Evaluation> {
    let has_adv = test.adversarial.iter().any(|a| *a);
    let has_benign = test.adversarial.iter().any(|a| !*a);
    if !(has_adv && has_benign) {
        return Err(Error::InvalidArgument(
            "test set needs both benign and adversarial windows".into(),
        ));
    }
    let scores = detector.score_batch(&test.windows)?;
    let threshold = detector.threshold();
    let mut counts = ConfusionCounts::default();
    let mut per_patient = vec![ConfusionCounts::default(); test.patient_ids.len()];
    let mut verdicts = Vec::with_capacity(scores.len());
    for ((s, &adv), &p) in scores.iter().zip(&test.adversarial).zip(&test.patient) {
        let v = if *s > threshold {
            Verdict::Anomalous
        } else {
            Verdict::Benign
        };
        counts.record(adv, v);
        per_patient[p].record(adv, v);
        verdicts.push(v);
    }
    Ok(Evaluation {
        counts,
        per_patient,
        scores,
        verdicts,
    })
}

/// `100 * (1 - selective / full)` for wall-clock times.
pub fn time_reduction(full_seconds: f64, selective_seconds: f64) -> Result<f64> {
    if !(full_seconds > 0.0) {
        return Err(Error::InvalidArgument("full training time must be > 0".into()));
    }
    Ok(100.0 * (1.0 - selective_seconds / full_seconds))
}

/// `NA` for undefined values, shortest round-trip form otherwise.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}
