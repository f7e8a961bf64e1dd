//! Anomaly detectors with a shared fit / score / classify interface.
//!
//! Every detector orients its score so that higher means more anomalous and
//! classifies a window as anomalous iff `score > threshold`.

pub mod autoencoder;
pub mod knn;
pub mod ocsvm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub use autoencoder::{AeConfig, AeDetector};
pub use knn::{KnnConfig, KnnDetector};
pub use ocsvm::{OcsvmConfig, OcsvmDetector};

pub const DETECTOR_FORMAT: &str = "roast-detector";
pub const DETECTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Knn,
    Ocsvm,
    Autoencoder,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Knn, DetectorKind::Ocsvm, DetectorKind::Autoencoder];

    /// Identifier used in file names and CSV rows.
    pub fn id(&self) -> &'static str {
        match self {
            DetectorKind::Knn => "knn",
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::Autoencoder => "autoencoder",
        }
    }

    /// Human-readable name for reports.
    pub fn display_name(&self) -> &'static str {
        match self {
            DetectorKind::Knn => "kNN",
            DetectorKind::Ocsvm => "One-Class SVM",
            DetectorKind::Autoencoder => "AE (MAD-GAN stand-in)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub knn: KnnConfig,
    pub ocsvm: OcsvmConfig,
    pub autoencoder: AeConfig,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.knn.validate()?;
        self.ocsvm.validate()?;
        self.autoencoder.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Benign,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedDetector {
    Knn(KnnDetector),
    Ocsvm(OcsvmDetector),
    Autoencoder(AeDetector),
}

impl FittedDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            FittedDetector::Knn(_) => DetectorKind::Knn,
            FittedDetector::Ocsvm(_) => DetectorKind::Ocsvm,
            FittedDetector::Autoencoder(_) => DetectorKind::Autoencoder,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FittedDetector::Knn(d) => d.input_dim(),
            FittedDetector::Ocsvm(d) => d.input_dim(),
            FittedDetector::Autoencoder(d) => d.input_dim(),
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            FittedDetector::Knn(d) => d.threshold(),
            FittedDetector::Ocsvm(d) => d.threshold(),
            FittedDetector::Autoencoder(d) => d.threshold(),
        }
    }

    pub fn score(&self, window: &[f64]) -> Result<f64> {
        if window.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: window.len(),
            });
        }
        Ok(match self {
            FittedDetector::Knn(d) => d.score(window),
            FittedDetector::Ocsvm(d) => d.score(window),
            FittedDetector::Autoencoder(d) => d.score(window),
        })
    }

    /// Verdict and raw score; anomalous iff the score is strictly above the
    /// threshold.
    pub fn classify(&self, window: &[f64]) -> Result<(Verdict, f64)> {
        let s = self.score(window)?;
        let v = if s > self.threshold() {
            Verdict::Anomalous
        } else {
            Verdict::Benign
        };
        Ok((v, s))
    }

    /// Scores in input order.
    pub fn score_batch(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        windows.par_iter().map(|w| self.score(w)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let rec = DetectorRecord {
            format: DETECTOR_FORMAT.into(),
            version: DETECTOR_VERSION,
            detector: self.clone(),
        };
        Ok(serde_json::to_string(&rec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: DetectorRecord = serde_json::from_str(text)?;
        if rec.format != DETECTOR_FORMAT || rec.version != DETECTOR_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "unsupported detector format {} v{}",
                rec.format, rec.version
            )));
        }
        Ok(rec.detector)
    }
}

#[derive(Serialize, Deserialize)]
struct DetectorRecord {
    format: String,
    version: u32,
    detector: FittedDetector,
}

pub fn fit(kind: DetectorKind, windows: &[Vec<f64>], cfg: &DetectorConfig) -> Result<FittedDetector> {
    Ok(match kind {
        DetectorKind::Knn => FittedDetector::Knn(knn::fit_knn(windows, &cfg.knn)?),
        DetectorKind::Ocsvm => FittedDetector::Ocsvm(ocsvm::fit_ocsvm(windows, &cfg.ocsvm)?),
        DetectorKind::Autoencoder => FittedDetector::Autoencoder(autoencoder::fit_autoencoder(windows, &cfg.autoencoder)?),
    })
}

/// The `(1 - contamination)` quantile of training scores (linear
/// interpolation), so that about a `contamination` fraction lies above it.
pub fn contamination_threshold(scores: &[f64], contamination: f64) -> f64 {
    stats::quantile(scores, 1.0 - contamination)
}

pub(crate) fn check_windows(windows: &[Vec<f64>], min: usize, what: &str) -> Result<usize> {
    if windows.len() < min {
        return Err(Error::InvalidSize(format!(
            "{what} needs at least {min} training windows, got {}",
            windows.len()
        )));
    }
    let dim = windows[0].len();
    if dim == 0 {
        return Err(Error::InvalidSize("windows must be nonempty".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: w.len(),
        });
    }
    Ok(dim)
}

pub(crate) fn check_contamination(c: f64) -> Result<()> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!("contamination {c} must lie in (0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<Vec<f64>> {
        (0..30).map(|i| vec![(i % 6) as f64, (i / 6) as f64]).collect()
    }

    #[test]
    fn shared_interface_semantics() {
        let w = grid();
        let cfg = DetectorConfig {
            autoencoder: AeConfig {
                epochs: 20,
                batch_size: 8,
                ..AeConfig::default()
            },
            ..DetectorConfig::default()
        };
        for kind in DetectorKind::ALL {
            let d = fit(kind, &w, &cfg).unwrap();
            assert_eq!(d.kind(), kind);
            let far = vec![100.0, -100.0];
            let (v, s) = d.classify(&far).unwrap();
            assert_eq!(v, Verdict::Anomalous, "{kind:?} score {s}");
            assert_eq!(d.classify(&far).unwrap(), (v, s));
            assert!(d.score(&[1.0]).is_err());
            let back = FittedDetector::from_json(&d.to_json().unwrap()).unwrap();
            assert_eq!(back.score(&far).unwrap(), s);
        }
    }

    #[test]
    fn threshold_quantile_contract() {
        let scores: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let t = contamination_threshold(&scores, 0.5);
        assert_eq!(t, 50.0);
        assert_eq!(scores.iter().filter(|s| **s > t).count(), 50);
    }
}
