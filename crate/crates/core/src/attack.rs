//! Plausibility-bounded evasion attacks against the forecaster and
//! safe-to-unsafe success judging.
//!
//! Two attacks are available: a black-box random search over bounded value
//! substitutions and white-box FGSM. Both write only to the attacked
//! coordinates, i.e. the last `span` samples of the attacked feature.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{self, ClinicalState, Cohort, StateInterval, WindowLayout};
use crate::error::{Error, Result};
use crate::seed;
use crate::victim::ForecastModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Blackbox,
    Fgsm,
}

/// Direction in which the black-box search moves the attacked values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Raise,
    Lower,
    Either,
}

/// Closed interval manipulated values must land in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlausibilityBounds {
    pub lo: f64,
    pub hi: f64,
}

impl PlausibilityBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi && self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "plausibility bounds need lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub attacked_feature: String,
    /// FGSM step in units of the attacked feature's standard deviation
    /// (the victim's input scaling).
    pub epsilon: f64,
    /// Black-box candidates drawn per window.
    pub n_candidates: usize,
    pub seed: u64,
    pub bounds: PlausibilityBounds,
    pub direction: Direction,
    /// Number of trailing samples of the attacked feature that are written.
    pub span: usize,
    /// FGSM over every coordinate instead of only the attacked ones.
    pub full_input: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mode: AttackMode::Blackbox,
            attacked_feature: "cgm".into(),
            epsilon: 0.1,
            n_candidates: 32,
            seed: 0,
            bounds: PlausibilityBounds { lo: 125.0, hi: 499.0 },
            direction: Direction::Raise,
            span: 1,
            full_input: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidArgument("n_candidates must be >= 1".into()));
        }
        if self.span == 0 {
            return Err(Error::InvalidArgument("span must be >= 1".into()));
        }
        Ok(())
    }

    fn attacked_coords(&self, layout: WindowLayout, feature: usize) -> Vec<usize> {
        if self.full_input {
            (0..layout.dim()).collect()
        } else {
            layout.trailing(feature, self.span).collect()
        }
    }
}

/// One attacked window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    /// Index of the window's most recent sample within the series.
    pub t_index: usize,
    pub timestamp: i64,
    /// Most recent attacked-feature value before and after manipulation.
    pub benign: f64,
    pub adversarial: f64,
    pub pred_benign: f64,
    pub pred_adv: f64,
    pub success: bool,
    pub state_before: ClinicalState,
    pub state_after: ClinicalState,
    /// False when the attack left the window unchanged (e.g. zero gradient).
    pub perturbed: bool,
    pub benign_window: Vec<f64>,
    pub adversarial_window: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientAttack {
    pub patient_id: String,
    /// Windows considered (benign-safe or not).
    pub n_windows: usize,
    pub outcomes: Vec<AttackOutcome>,
}

impl PatientAttack {
    pub fn n_success(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }

    /// Successes over benign-safe windows; `None` when no window was safe.
    pub fn success_rate(&self) -> Option<f64> {
        if self.outcomes.is_empty() {
            None
        } else {
            Some(self.n_success() as f64 / self.outcomes.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortAttack {
    pub layout: WindowLayout,
    pub attacked_feature: String,
    pub patients: Vec<PatientAttack>,
}

impl CohortAttack {
    pub fn success_rates(&self) -> Vec<(String, Option<f64>)> {
        self.patients
            .iter()
            .map(|p| (p.patient_id.clone(), p.success_rate()))
            .collect()
    }

    /// `patient_id,t,benign,adversarial,pred_benign,pred_adv,success`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "patient_id",
            "t",
            "benign",
            "adversarial",
            "pred_benign",
            "pred_adv",
            "success",
        ])?;
        for p in &self.patients {
            for o in &p.outcomes {
                w.write_record([
                    p.patient_id.clone(),
                    o.timestamp.to_string(),
                    o.benign.to_string(),
                    o.adversarial.to_string(),
                    o.pred_benign.to_string(),
                    o.pred_adv.to_string(),
                    o.success.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }
}

fn state(interval: &StateInterval, v: f64) -> ClinicalState {
    if interval.contains(v) {
        ClinicalState::Safe
    } else {
        ClinicalState::Unsafe
    }
}

/// Success iff the benign prediction is safe and the adversarial one is not.
pub fn judge(pred_benign: f64, pred_adv: f64, safe: &StateInterval) -> bool {
    safe.contains(pred_benign) && !safe.contains(pred_adv)
}

/// One FGSM step of size `epsilon * scale` along the sign of the loss
/// gradient on the attacked coordinates. Only coordinates that move are
/// clamped into the plausibility bounds, so `epsilon = 0` is the identity.
pub fn fgsm_perturb(
    model: &ForecastModel,
    window: &[f64],
    target: f64,
    coords: &[usize],
    epsilon: f64,
    bounds: &PlausibilityBounds,
) -> Result<Vec<f64>> {
    let grad = model.input_gradient(window, &[target])?;
    let scale = &model.input_scaling().scale;
    let mut adv = window.to_vec();
    for &c in coords {
        let step = epsilon * scale[c] * sign(grad[c]);
        if step != 0.0 {
            adv[c] = (window[c] + step).clamp(bounds.lo, bounds.hi);
        }
    }
    Ok(adv)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Best of `n_candidates` bounded random substitutions of the attacked
/// coordinates, ranked by how far they push the prediction in `direction`.
/// Ties go to the lowest candidate index. Returns the chosen window and its
/// prediction.
pub fn blackbox_search(
    model: &ForecastModel,
    window: &[f64],
    coords: &[usize],
    cfg: &AttackConfig,
    rng: &mut seed::Rng,
) -> Result<(Vec<f64>, f64)> {
    let pred_benign = model.predict_one(window)?;
    let b = cfg.bounds;
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for _ in 0..cfg.n_candidates {
        let mut cand = window.to_vec();
        for &c in coords {
            let orig = window[c];
            let (lo, hi) = match cfg.direction {
                Direction::Raise => (orig.max(b.lo), b.hi),
                Direction::Lower => (b.lo, orig.min(b.hi)),
                Direction::Either => (b.lo, b.hi),
            };
            cand[c] = if lo < hi {
                rng.random_range(lo..=hi)
            } else if matches!(cfg.direction, Direction::Raise) {
                b.hi
            } else {
                b.lo
            };
        }
        let pred = model.predict_one(&cand)?;
        let score = match cfg.direction {
            Direction::Raise => pred,
            Direction::Lower => -pred,
            Direction::Either => (pred - pred_benign).abs(),
        };
        if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
            best = Some((cand, pred, score));
        }
    }
    let (w, p, _) = best.expect("n_candidates >= 1");
    Ok((w, p))
}

/// Attacks every benign-safe window of every patient once. Windows have
/// length `window_len` with stride 1, and each has a following sample (the
/// FGSM target). Each patient draws from its own substream.
pub fn simulate_cohort(
    cohort: &Cohort,
    model: &ForecastModel,
    cfg: &AttackConfig,
    window_len: usize,
) -> Result<CohortAttack> {
    cfg.validate()?;
    if cohort.is_empty() {
        return Err(Error::Empty("cannot attack an empty cohort".into()));
    }
    let label = cohort
        .label_channel()
        .ok_or_else(|| Error::InvalidArgument("cohort has no label channel".into()))?
        .to_string();
    let safe = cohort.state_config().interval(&label)?;
    let feature = cohort.feature_index(&cfg.attacked_feature)?;
    let layout = WindowLayout {
        n_features: cohort.schema().len(),
        len: window_len,
    };
    if layout.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: layout.dim(),
        });
    }
    let coords = cfg.attacked_coords(layout, feature);
    let current = layout.current(feature);

    let patients = cohort
        .patients()
        .par_iter()
        .map(|p| -> Result<PatientAttack> {
            let mut rng = seed::substream(cfg.seed, "attack", p.patient_id());
            let samples = cohort::forecast_samples(p, window_len, 1, &label)?;
            let mut outcomes = Vec::new();
            for s in &samples {
                let pred_benign = model.predict_one(&s.window)?;
                if !safe.contains(pred_benign) {
                    continue;
                }
                let (adv, pred_adv) = match cfg.mode {
                    AttackMode::Fgsm => {
                        let adv = fgsm_perturb(model, &s.window, s.target, &coords, cfg.epsilon, &cfg.bounds)?;
                        let pred = model.predict_one(&adv)?;
                        (adv, pred)
                    }
                    AttackMode::Blackbox => blackbox_search(model, &s.window, &coords, cfg, &mut rng)?,
                };
                outcomes.push(AttackOutcome {
                    t_index: s.end,
                    timestamp: s.timestamp,
                    benign: s.window[current],
                    adversarial: adv[current],
                    pred_benign,
                    pred_adv,
                    success: judge(pred_benign, pred_adv, &safe),
                    state_before: state(&safe, pred_benign),
                    state_after: state(&safe, pred_adv),
                    perturbed: adv != s.window,
                    benign_window: s.window.clone(),
                    adversarial_window: adv,
                });
            }
            Ok(PatientAttack {
                patient_id: p.patient_id().to_string(),
                n_windows: samples.len(),
                outcomes,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for p in &patients {
        if p.success_rate().is_none() {
            log::warn!("patient `{}` has no benign-safe windows; success rate undefined", p.patient_id);
        }
    }
    Ok(CohortAttack {
        layout,
        attacked_feature: cfg.attacked_feature.clone(),
        patients,
    })
}
