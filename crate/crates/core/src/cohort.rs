//! Patient time series, ingestion, synthetic cohorts, chronological splits,
//! windowing and per-patient outlier statistics.
//!
//! # Cohort cache format
//!
//! [`Cohort::to_jsonl`] writes one JSON object per line:
//!
//! * line 1 is a header `{"format":"roast-cohort","version":1,"schema":[..],
//!   "label_channel":..,"state_config":{..}}`;
//! * every following line is one patient
//!   `{"patient_id":..,"timestamps":[..],"values":[[..],..]}` with `values`
//!   holding one array per schema feature, in schema order.
//!
//! Patients appear in cohort order. Floats are written in shortest
//! round-trip form, so equal cohorts serialize to identical bytes.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::stats;

pub const COHORT_FORMAT: &str = "roast-cohort";
pub const COHORT_VERSION: u32 = 1;

/// Closed interval of values considered clinically safe/normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateInterval {
    pub lo: f64,
    pub hi: f64,
}

impl StateInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "state interval needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Per-feature safe intervals. A value outside its feature's interval is
/// an unsafe (abnormal) state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateConfig {
    pub safe: BTreeMap<String, StateInterval>,
}

/// Clinical state of a single value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClinicalState {
    Safe,
    Unsafe,
}

impl StateConfig {
    pub const HYPOGLYCEMIA_LOWER: f64 = 70.0;
    pub const FASTING_UPPER: f64 = 125.0;
    pub const POSTPRANDIAL_UPPER: f64 = 180.0;

    pub fn with_interval(mut self, feature: &str, lo: f64, hi: f64) -> Result<Self> {
        self.safe.insert(feature.to_string(), StateInterval::new(lo, hi)?);
        Ok(self)
    }

    /// Glucose safe range `[70, 125]` mg/dL.
    pub fn glucose_fasting(feature: &str) -> Self {
        Self::default()
            .with_interval(feature, Self::HYPOGLYCEMIA_LOWER, Self::FASTING_UPPER)
            .expect("constant interval is valid")
    }

    /// Glucose safe range `[70, 180]` mg/dL.
    pub fn glucose_postprandial(feature: &str) -> Self {
        Self::default()
            .with_interval(feature, Self::HYPOGLYCEMIA_LOWER, Self::POSTPRANDIAL_UPPER)
            .expect("constant interval is valid")
    }

    pub fn interval(&self, feature: &str) -> Result<StateInterval> {
        self.safe
            .get(feature)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no state interval for `{feature}`")))
    }

    pub fn state(&self, feature: &str, value: f64) -> Result<ClinicalState> {
        Ok(if self.interval(feature)?.contains(value) {
            ClinicalState::Safe
        } else {
            ClinicalState::Unsafe
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, iv) in &self.safe {
            if !(iv.lo < iv.hi) {
                return Err(Error::InvalidArgument(format!(
                    "state interval for `{name}` needs lo < hi"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
}

/// One patient's multivariate series. All channels share the timestamp axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientSeries {
    patient_id: String,
    timestamps: Vec<i64>,
    channels: Vec<Channel>,
    label_channel: Option<String>,
}

impl PatientSeries {
    pub fn new(
        patient_id: impl Into<String>,
        timestamps: Vec<i64>,
        channels: Vec<Channel>,
        label_channel: Option<String>,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        let len = timestamps.len();
        if len == 0 {
            return Err(Error::InvalidSize(format!("patient `{patient_id}` has no samples")));
        }
        if channels.is_empty() {
            return Err(Error::InvalidSize(format!("patient `{patient_id}` has no channels")));
        }
        for ch in &channels {
            if ch.values.len() != len {
                return Err(Error::InvalidSize(format!(
                    "patient `{patient_id}` channel `{}` has {} values, expected {len}",
                    ch.name,
                    ch.values.len()
                )));
            }
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "patient `{patient_id}` timestamps are not strictly increasing"
            )));
        }
        if let Some(label) = &label_channel {
            if !channels.iter().any(|c| &c.name == label) {
                return Err(Error::SchemaMismatch(format!("label channel `{label}` not present")));
            }
        }
        Ok(Self {
            patient_id,
            timestamps,
            channels,
            label_channel,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn label_channel(&self) -> Option<&str> {
        self.label_channel.as_deref()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    /// Sub-series over the sample range `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(
            self.patient_id.clone(),
            self.timestamps[range.clone()].to_vec(),
            self.channels
                .iter()
                .map(|c| Channel {
                    name: c.name.clone(),
                    values: c.values[range.clone()].to_vec(),
                })
                .collect(),
            self.label_channel.clone(),
        )
    }

    fn with_label(mut self, label: Option<String>) -> Self {
        self.label_channel = label;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    patients: Vec<PatientSeries>,
    schema: Vec<String>,
    state_config: StateConfig,
}

impl Cohort {
    pub fn new(
        patients: Vec<PatientSeries>,
        schema: Vec<String>,
        state_config: StateConfig,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &patients {
            if !seen.insert(p.patient_id()) {
                return Err(Error::Duplicate(format!("patient id `{}`", p.patient_id())));
            }
            let names = p.feature_names();
            if names.len() != schema.len() || names.iter().zip(&schema).any(|(a, b)| a != b) {
                return Err(Error::SchemaMismatch(format!(
                    "patient `{}` has features {names:?}, schema is {schema:?}",
                    p.patient_id()
                )));
            }
        }
        state_config.validate()?;
        Ok(Self {
            patients,
            schema,
            state_config,
        })
    }

    pub fn patients(&self) -> &[PatientSeries] {
        &self.patients
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn state_config(&self) -> &StateConfig {
        &self.state_config
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }

    pub fn label_channel(&self) -> Option<&str> {
        self.patients.first().and_then(|p| p.label_channel())
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("feature `{name}` not in schema")))
    }

    pub fn with_label_channel(self, label: &str) -> Result<Self> {
        self.feature_index(label)?;
        let patients = self
            .patients
            .into_iter()
            .map(|p| p.with_label(Some(label.to_string())))
            .collect();
        Ok(Self { patients, ..self })
    }

    pub fn with_state_config(self, state_config: StateConfig) -> Result<Self> {
        state_config.validate()?;
        Ok(Self {
            state_config,
            ..self
        })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = JsonlHeader {
            format: COHORT_FORMAT.to_string(),
            version: COHORT_VERSION,
            schema: self.schema.clone(),
            label_channel: self.label_channel().map(str::to_string),
            state_config: self.state_config.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for p in &self.patients {
            let rec = JsonlPatient {
                patient_id: p.patient_id.clone(),
                timestamps: p.timestamps.clone(),
                values: p.channels.iter().map(|c| c.values.clone()).collect(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Empty("cohort file has no header".into()))?;
        let header: JsonlHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?;
        if header.format != COHORT_FORMAT || header.version != COHORT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "unsupported cohort format {} v{}",
                header.format, header.version
            )));
        }
        let mut patients = Vec::new();
        for (idx, line) in lines {
            let rec: JsonlPatient = serde_json::from_str(line).map_err(|e| Error::Parse {
                row: idx + 1,
                message: e.to_string(),
            })?;
            if rec.values.len() != header.schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "patient `{}` has {} channels, schema has {}",
                    rec.patient_id,
                    rec.values.len(),
                    header.schema.len()
                )));
            }
            let channels = header
                .schema
                .iter()
                .zip(rec.values)
                .map(|(name, values)| Channel {
                    name: name.clone(),
                    values,
                })
                .collect();
            patients.push(PatientSeries::new(
                rec.patient_id,
                rec.timestamps,
                channels,
                header.label_channel.clone(),
            )?);
        }
        Cohort::new(patients, header.schema, header.state_config)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    format: String,
    version: u32,
    schema: Vec<String>,
    label_channel: Option<String>,
    state_config: StateConfig,
}

#[derive(Serialize, Deserialize)]
struct JsonlPatient {
    patient_id: String,
    timestamps: Vec<i64>,
    values: Vec<Vec<f64>>,
}

/// Reads `patient_id,timestamp,<feature>...` rows and groups them by
/// patient. Rows are sorted by timestamp within each patient; patients keep
/// first-appearance order. Row numbers in errors count the header as row 1.
pub fn load_csv(path: &Path, schema: &[&str]) -> Result<Cohort> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &[&str]) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse {
        row: 1,
        message: e.to_string(),
    })?;
    let mut expected = vec!["patient_id", "timestamp"];
    expected.extend_from_slice(schema);
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::SchemaMismatch(format!(
            "header {got:?} does not match expected {expected:?}"
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(i64, Vec<f64>)>> = BTreeMap::new();
    let mut seen: HashSet<(String, i64)> = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != expected.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let pid = rec[0].to_string();
        if pid.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty patient_id".into(),
            });
        }
        let ts: i64 = rec[1].parse().map_err(|_| Error::Parse {
            row,
            message: format!("invalid timestamp `{}`", &rec[1]),
        })?;
        let mut values = Vec::with_capacity(schema.len());
        for (j, name) in schema.iter().enumerate() {
            let raw = &rec[j + 2];
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                message: format!("missing or invalid value `{raw}` for `{name}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite value for `{name}`"),
                });
            }
            values.push(v);
        }
        if !seen.insert((pid.clone(), ts)) {
            return Err(Error::Duplicate(format!(
                "row {row}: patient `{pid}` timestamp {ts} appears twice"
            )));
        }
        if !rows.contains_key(&pid) {
            order.push(pid.clone());
        }
        rows.entry(pid).or_default().push((ts, values));
    }
    if order.is_empty() {
        return Err(Error::Empty("csv has no data rows".into()));
    }

    let names: Vec<String> = schema.iter().map(|s| s.to_string()).collect();
    let mut patients = Vec::with_capacity(order.len());
    for pid in order {
        let mut recs = rows.remove(&pid).unwrap_or_default();
        recs.sort_by_key(|(t, _)| *t);
        let timestamps = recs.iter().map(|(t, _)| *t).collect();
        let channels = names
            .iter()
            .enumerate()
            .map(|(j, name)| Channel {
                name: name.clone(),
                values: recs.iter().map(|(_, v)| v[j]).collect(),
            })
            .collect();
        patients.push(PatientSeries::new(pid, timestamps, channels, None)?);
    }
    Cohort::new(patients, names, StateConfig::default())
}

/// Synthetic cohort generator: each patient is a sum of two low-frequency
/// sinusoids around a patient-specific level, plus additive noise scaled by
/// that patient's entry in `noise_profile`.
///
/// Noise is Student-t by default. Outlier fractions are invariant to the
/// scale of Gaussian noise, so a heavy tail is what makes noisy patients
/// stand out in the outlier statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Label (attacked) feature, in mg/dL.
    pub glucose_feature: String,
    /// Secondary feature, in bpm.
    pub heart_rate_feature: String,
    /// Range of per-patient glucose baselines.
    pub glucose_level: (f64, f64),
    /// Range of the dominant sinusoid amplitude.
    pub glucose_amplitude: (f64, f64),
    pub heart_rate_level: (f64, f64),
    pub heart_rate_amplitude: f64,
    /// Heart-rate noise as a fraction of the glucose noise scale.
    pub heart_rate_noise_ratio: f64,
    /// Period range (ticks) of the dominant sinusoid.
    pub period: (f64, f64),
    /// Physiological clamp applied to glucose values.
    pub glucose_clamp: (f64, f64),
    /// Degrees of freedom of the Student-t noise; `None` for Gaussian.
    pub noise_dof: Option<f64>,
    /// AR(1) coefficient of the glucose noise in `[0, 1)`. Innovations are
    /// scaled by `sqrt(1 - ar^2)` so the marginal scale stays the patient's
    /// noise scale.
    pub noise_ar: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            glucose_feature: "cgm".into(),
            heart_rate_feature: "hr".into(),
            glucose_level: (92.0, 102.0),
            glucose_amplitude: (4.0, 8.0),
            heart_rate_level: (65.0, 80.0),
            heart_rate_amplitude: 4.0,
            heart_rate_noise_ratio: 0.25,
            period: (40.0, 90.0),
            glucose_clamp: (40.0, 499.0),
            noise_dof: Some(3.0),
            noise_ar: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn generate(
        &self,
        seed: u64,
        n_patients: usize,
        len: usize,
        noise_profile: &[f64],
    ) -> Result<Cohort> {
        if n_patients < 2 {
            return Err(Error::InvalidSize(format!(
                "synthetic cohort needs at least 2 patients, got {n_patients}"
            )));
        }
        if len < 2 {
            return Err(Error::InvalidSize(format!(
                "synthetic series need at least 2 samples, got {len}"
            )));
        }
        if noise_profile.len() != n_patients {
            return Err(Error::InvalidSize(format!(
                "noise profile has {} entries for {n_patients} patients",
                noise_profile.len()
            )));
        }
        if let Some(bad) = noise_profile.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("noise scale {bad} must be >= 0")));
        }
        if !(0.0..1.0).contains(&self.noise_ar) {
            return Err(Error::InvalidArgument(format!("noise_ar {} must be in [0, 1)", self.noise_ar)));
        }
        let innovation = (1.0 - self.noise_ar * self.noise_ar).sqrt();
        let width = (n_patients - 1).to_string().len().max(2);
        let noise = Noise::new(self.noise_dof)?;
        let mut patients = Vec::with_capacity(n_patients);
        for (p, &sigma) in noise_profile.iter().enumerate() {
            let id = format!("p{p:0width$}");
            let mut rng = seed::substream(seed, "synth", &id);
            let level = rng.random_range(self.glucose_level.0..=self.glucose_level.1);
            let amp1 = rng.random_range(self.glucose_amplitude.0..=self.glucose_amplitude.1);
            let period1 = rng.random_range(self.period.0..=self.period.1);
            let phase1 = rng.random_range(0.0..2.0 * PI);
            let amp2 = 0.5 * amp1;
            let period2 = 3.7 * period1;
            let phase2 = rng.random_range(0.0..2.0 * PI);
            let hr_level = rng.random_range(self.heart_rate_level.0..=self.heart_rate_level.1);
            let hr_phase = rng.random_range(0.0..2.0 * PI);

            let mut dev = sigma * noise.sample(&mut rng);
            let mut cgm = Vec::with_capacity(len);
            let mut hr = Vec::with_capacity(len);
            for t in 0..len {
                let tf = t as f64;
                let base = level
                    + amp1 * (2.0 * PI * tf / period1 + phase1).sin()
                    + amp2 * (2.0 * PI * tf / period2 + phase2).sin();
                if t > 0 {
                    dev = self.noise_ar * dev + innovation * sigma * noise.sample(&mut rng);
                }
                let g = base + dev;
                cgm.push(g.clamp(self.glucose_clamp.0, self.glucose_clamp.1));
                let h = hr_level
                    + self.heart_rate_amplitude * (2.0 * PI * tf / period1 + hr_phase).sin()
                    + self.heart_rate_noise_ratio * sigma * noise.sample(&mut rng);
                hr.push(h);
            }
            patients.push(PatientSeries::new(
                id,
                (0..len as i64).collect(),
                vec![
                    Channel {
                        name: self.glucose_feature.clone(),
                        values: cgm,
                    },
                    Channel {
                        name: self.heart_rate_feature.clone(),
                        values: hr,
                    },
                ],
                Some(self.glucose_feature.clone()),
            )?);
        }
        Cohort::new(
            patients,
            vec![self.glucose_feature.clone(), self.heart_rate_feature.clone()],
            StateConfig::glucose_fasting(&self.glucose_feature),
        )
    }
}

enum Noise {
    Gaussian(Normal<f64>),
    StudentT(StudentT<f64>),
}

impl Noise {
    fn new(dof: Option<f64>) -> Result<Self> {
        match dof {
            None => Ok(Noise::Gaussian(Normal::new(0.0, 1.0).expect("unit normal"))),
            Some(v) => StudentT::new(v)
                .map(Noise::StudentT)
                .map_err(|e| Error::InvalidArgument(format!("noise dof {v}: {e}"))),
        }
    }

    fn sample(&self, rng: &mut seed::Rng) -> f64 {
        match self {
            Noise::Gaussian(d) => d.sample(rng),
            Noise::StudentT(d) => d.sample(rng),
        }
    }
}

/// Seeded synthetic cohort with the default generator shape.
pub fn synth_cohort(seed: u64, n_patients: usize, len: usize, noise_profile: &[f64]) -> Result<Cohort> {
    SynthSpec::default().generate(seed, n_patients, len, noise_profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8 }
    }
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} must lie in (0, 1)"
            )));
        }
        Ok(Self { train_fraction })
    }

    /// Training length for a series of `len` samples: `floor(f * len)`,
    /// kept within `[1, len - 1]` so both sides are non-empty.
    pub fn train_len(&self, len: usize) -> usize {
        ((self.train_fraction * len as f64).floor() as usize).clamp(1, len - 1)
    }
}

/// Per patient, the first `floor(f * T)` samples go to train and the rest
/// to test.
pub fn chrono_split(cohort: &Cohort, spec: SplitSpec) -> Result<(Cohort, Cohort)> {
    SplitSpec::new(spec.train_fraction)?;
    let mut train = Vec::with_capacity(cohort.len());
    let mut test = Vec::with_capacity(cohort.len());
    for p in cohort.patients() {
        if p.len() < 2 {
            return Err(Error::InvalidSize(format!(
                "patient `{}` has {} sample(s); a split needs at least 2",
                p.patient_id(),
                p.len()
            )));
        }
        let cut = spec.train_len(p.len());
        train.push(p.slice(0..cut)?);
        test.push(p.slice(cut..p.len())?);
    }
    Ok((
        Cohort::new(train, cohort.schema.clone(), cohort.state_config.clone())?,
        Cohort::new(test, cohort.schema.clone(), cohort.state_config.clone())?,
    ))
}

/// Coordinate layout of a flattened window: feature-major, so coordinate
/// `f * len + s` holds feature `f` at step `s` (oldest step first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowLayout {
    pub n_features: usize,
    pub len: usize,
}

impl WindowLayout {
    pub fn dim(&self) -> usize {
        self.n_features * self.len
    }

    pub fn coord(&self, feature: usize, step: usize) -> usize {
        feature * self.len + step
    }

    /// Coordinate of the most recent step of `feature`.
    pub fn current(&self, feature: usize) -> usize {
        self.coord(feature, self.len - 1)
    }

    /// Coordinates of the last `span` steps of `feature`.
    pub fn trailing(&self, feature: usize, span: usize) -> std::ops::Range<usize> {
        let span = span.clamp(1, self.len);
        self.coord(feature, self.len - span)..self.coord(feature, self.len - 1) + 1
    }
}

/// Flattened windows of `n` consecutive samples, started every `stride`
/// samples, in start order. Returns no windows when `n > T`.
pub fn windowize(series: &PatientSeries, n: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    Ok(window_starts(series.len(), n, stride)?
        .map(|start| flatten(series, start, n))
        .collect())
}

fn window_starts(len: usize, n: usize, stride: usize) -> Result<impl Iterator<Item = usize>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("window stride must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("window length must be >= 1".into()));
    }
    let count = if n > len { 0 } else { (len - n) / stride + 1 };
    Ok((0..count).map(move |k| k * stride))
}

fn flatten(series: &PatientSeries, start: usize, n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(series.channels.len() * n);
    for ch in &series.channels {
        w.extend_from_slice(&ch.values[start..start + n]);
    }
    w
}

/// A window paired with the next value of the target feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    /// Index of the window's most recent sample.
    pub end: usize,
    /// Timestamp of the window's most recent sample.
    pub timestamp: i64,
    pub window: Vec<f64>,
    pub target: f64,
}

/// Windows that have a following sample, each paired with that sample's
/// `target_feature` value (one-step-ahead forecasting pairs).
pub fn forecast_samples(
    series: &PatientSeries,
    n: usize,
    stride: usize,
    target_feature: &str,
) -> Result<Vec<WindowSample>> {
    let target = series.channel(target_feature).ok_or_else(|| {
        Error::SchemaMismatch(format!("feature `{target_feature}` missing from series"))
    })?;
    if series.len() < 1 {
        return Ok(Vec::new());
    }
    Ok(window_starts(series.len() - 1, n, stride)?
        .map(|start| {
            let end = start + n - 1;
            WindowSample {
                end,
                timestamp: series.timestamps[end],
                window: flatten(series, start, n),
                target: target[end + 1],
            }
        })
        .collect())
}

/// Per-feature standardization fitted on a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(cohort: &Cohort) -> Result<Self> {
        if cohort.is_empty() {
            return Err(Error::Empty("cannot fit a scaler on an empty cohort".into()));
        }
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for f in 0..cohort.schema.len() {
            let pooled: Vec<f64> = cohort
                .patients
                .iter()
                .flat_map(|p| p.channels[f].values.iter().copied())
                .collect();
            let m = stats::mean(&pooled);
            let var = pooled.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / pooled.len() as f64;
            means.push(m);
            stds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Self { means, stds })
    }

    pub fn transform(&self, window: &[f64], layout: WindowLayout) -> Vec<f64> {
        window
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = i / layout.len;
                (v - self.means[f]) / self.stds[f]
            })
            .collect()
    }
}

/// Fraction of points whose modified Z-score `0.6745 (x - median) / MAD`
/// exceeds `cutoff` in absolute value. When MAD is zero, points equal to
/// the median score 0 and all other points count as outliers.
pub fn zscore_outlier_fraction(values: &[f64], cutoff: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("outlier fraction of an empty sequence".into()));
    }
    Ok(zscore_outlier_count(values, cutoff) as f64 / values.len() as f64)
}

fn zscore_outlier_count(values: &[f64], cutoff: f64) -> usize {
    let med = stats::median(values);
    let deviations: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    let mad = stats::median(&deviations);
    if mad == 0.0 {
        return values.iter().filter(|&&x| x != med).count();
    }
    values
        .iter()
        .filter(|&&x| (0.6745 * (x - med) / mad).abs() > cutoff)
        .count()
}

/// Fraction of points outside `[Q1 - factor * IQR, Q3 + factor * IQR]`,
/// quartiles by linear interpolation.
pub fn iqr_outlier_fraction(values: &[f64], factor: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("outlier fraction of an empty sequence".into()));
    }
    Ok(iqr_outlier_count(values, factor) as f64 / values.len() as f64)
}

fn iqr_outlier_count(values: &[f64], factor: f64) -> usize {
    let s = stats::sorted(values);
    let q1 = stats::quantile_sorted(&s, 0.25);
    let q3 = stats::quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - factor * iqr, q3 + factor * iqr);
    values.iter().filter(|&&x| x < lo || x > hi).count()
}

/// `(#samples inside the safe interval) / (#samples outside)` for the
/// series' label channel; `f64::INFINITY` when nothing is abnormal.
pub fn normal_abnormal_ratio(series: &PatientSeries, config: &StateConfig) -> Result<f64> {
    let label = series
        .label_channel()
        .ok_or_else(|| Error::InvalidArgument("series has no label channel".into()))?;
    let interval = config.interval(label)?;
    let values = series.channel(label).expect("label channel validated at construction");
    let normal = values.iter().filter(|v| interval.contains(**v)).count();
    let abnormal = values.len() - normal;
    if abnormal == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(normal as f64 / abnormal as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutlierParams {
    pub zscore_cutoff: f64,
    pub iqr_factor: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self {
            zscore_cutoff: 3.5,
            iqr_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierStats {
    pub patient_id: String,
    pub zscore_fraction: f64,
    pub iqr_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierTable {
    pub params: OutlierParams,
    pub rows: Vec<OutlierStats>,
    pub zscore_mean: f64,
    pub zscore_std: f64,
    pub iqr_mean: f64,
    pub iqr_std: f64,
}

impl OutlierTable {
    /// Rows sorted by descending fraction for the given method.
    pub fn ranked_by_zscore(&self) -> Vec<&OutlierStats> {
        let mut v: Vec<_> = self.rows.iter().collect();
        v.sort_by(|a, b| b.zscore_fraction.total_cmp(&a.zscore_fraction));
        v
    }

    pub fn ranked_by_iqr(&self) -> Vec<&OutlierStats> {
        let mut v: Vec<_> = self.rows.iter().collect();
        v.sort_by(|a, b| b.iqr_fraction.total_cmp(&a.iqr_fraction));
        v
    }
}

/// Per-patient outlier fractions pooled over all features, plus the
/// cohort mean and sample standard deviation. Each channel is scored
/// against its own median/quartiles; the per-patient fraction is the total
/// outlier count over the total number of (feature, sample) points.
pub fn outlier_table(cohort: &Cohort, params: OutlierParams) -> Result<OutlierTable> {
    use rayon::prelude::*;
    if cohort.is_empty() {
        return Err(Error::Empty("outlier table of an empty cohort".into()));
    }
    let rows: Vec<OutlierStats> = cohort
        .patients
        .par_iter()
        .map(|p| {
            let total: usize = p.channels.iter().map(|c| c.values.len()).sum();
            let z: usize = p
                .channels
                .iter()
                .map(|c| zscore_outlier_count(&c.values, params.zscore_cutoff))
                .sum();
            let q: usize = p
                .channels
                .iter()
                .map(|c| iqr_outlier_count(&c.values, params.iqr_factor))
                .sum();
            OutlierStats {
                patient_id: p.patient_id.clone(),
                zscore_fraction: z as f64 / total as f64,
                iqr_fraction: q as f64 / total as f64,
            }
        })
        .collect();
    let z: Vec<f64> = rows.iter().map(|r| r.zscore_fraction).collect();
    let q: Vec<f64> = rows.iter().map(|r| r.iqr_fraction).collect();
    Ok(OutlierTable {
        params,
        zscore_mean: stats::mean(&z),
        zscore_std: stats::sample_std(&z),
        iqr_mean: stats::mean(&q),
        iqr_std: stats::sample_std(&q),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(id: &str, values: Vec<f64>) -> PatientSeries {
        let ts = (0..values.len() as i64).collect();
        PatientSeries::new(
            id,
            ts,
            vec![Channel {
                name: "cgm".into(),
                values,
            }],
            Some("cgm".into()),
        )
        .unwrap()
    }

    #[test]
    fn csv_groups_rows_by_patient() {
        let text = "patient_id,timestamp,cgm,hr\na,0,100,70\nb,0,110,72\na,1,101,71\n";
        let c = read_csv(text.as_bytes(), &["cgm", "hr"]).unwrap();
        assert_eq!(c.len(), 2);
        let lens: Vec<usize> = c.patients().iter().map(|p| p.len()).collect();
        assert_eq!(lens, vec![2, 1]);
    }

    #[test]
    fn csv_sorts_non_monotone_timestamps() {
        let text = "patient_id,timestamp,cgm\na,5,1\na,1,2\na,3,3\n";
        let c = read_csv(text.as_bytes(), &["cgm"]).unwrap();
        let p = &c.patients()[0];
        assert_eq!(p.timestamps(), &[1, 3, 5]);
        assert_eq!(p.channel("cgm").unwrap(), &[2.0, 3.0, 1.0]);
    }

    #[test]
    fn csv_rejects_bad_input() {
        let missing_col = "patient_id,timestamp,cgm\na,0,1\n";
        assert!(matches!(
            read_csv(missing_col.as_bytes(), &["cgm", "hr"]),
            Err(Error::SchemaMismatch(_))
        ));
        let malformed = "patient_id,timestamp,cgm\na,0,1\na,1,oops\n";
        assert!(matches!(
            read_csv(malformed.as_bytes(), &["cgm"]),
            Err(Error::Parse { row: 3, .. })
        ));
        let missing_value = "patient_id,timestamp,cgm\na,0,\n";
        assert!(matches!(
            read_csv(missing_value.as_bytes(), &["cgm"]),
            Err(Error::Parse { row: 2, .. })
        ));
        let dup = "patient_id,timestamp,cgm\na,0,1\na,0,2\n";
        assert!(matches!(read_csv(dup.as_bytes(), &["cgm"]), Err(Error::Duplicate(_))));
    }

    #[test]
    fn synth_is_deterministic_and_validates() {
        let a = synth_cohort(11, 3, 50, &[0.0, 1.0, 5.0]).unwrap();
        let b = synth_cohort(11, 3, 50, &[0.0, 1.0, 5.0]).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        assert!(matches!(synth_cohort(1, 1, 50, &[1.0]), Err(Error::InvalidSize(_))));
        assert!(matches!(synth_cohort(1, 2, 1, &[1.0, 1.0]), Err(Error::InvalidSize(_))));
        assert!(matches!(synth_cohort(1, 2, 10, &[1.0]), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn noisier_patient_has_more_iqr_outliers() {
        let c = synth_cohort(3, 2, 2000, &[0.0, 5.0]).unwrap();
        let frac = |i: usize| iqr_outlier_fraction(c.patients()[i].channel("cgm").unwrap(), 1.5).unwrap();
        assert!(frac(0) < frac(1), "{} vs {}", frac(0), frac(1));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = synth_cohort(5, 2, 20, &[1.0, 2.0]).unwrap();
        let text = c.to_jsonl().unwrap();
        let back = Cohort::from_jsonl(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_jsonl().unwrap(), text);
    }

    #[test]
    fn split_floor_arithmetic() {
        let mk = |t: usize| {
            Cohort::new(vec![series("a", vec![1.0; t])], vec!["cgm".into()], StateConfig::default())
                .unwrap()
        };
        let (tr, te) = chrono_split(&mk(10), SplitSpec::default()).unwrap();
        assert_eq!((tr.patients()[0].len(), te.patients()[0].len()), (8, 2));
        let (tr, te) = chrono_split(&mk(5), SplitSpec::default()).unwrap();
        assert_eq!((tr.patients()[0].len(), te.patients()[0].len()), (4, 1));
        assert!(matches!(chrono_split(&mk(1), SplitSpec::default()), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn window_counts_and_layout() {
        let s = series("a", vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(windowize(&s, 3, 1).unwrap().len(), 3);
        assert_eq!(windowize(&s, 3, 2).unwrap().len(), 2);
        assert!(windowize(&s, 6, 1).unwrap().is_empty());
        assert!(windowize(&s, 3, 0).is_err());
        let whole = series("b", vec![7.0, 8.0, 9.0]);
        assert_eq!(windowize(&whole, 3, 1).unwrap(), vec![vec![7.0, 8.0, 9.0]]);

        let two = PatientSeries::new(
            "c",
            vec![0, 1, 2],
            vec![
                Channel { name: "x".into(), values: vec![1.0, 2.0, 3.0] },
                Channel { name: "y".into(), values: vec![10.0, 20.0, 30.0] },
            ],
            None,
        )
        .unwrap();
        assert_eq!(windowize(&two, 2, 1).unwrap()[1], vec![2.0, 3.0, 20.0, 30.0]);
        let layout = WindowLayout { n_features: 2, len: 2 };
        assert_eq!(layout.current(1), 3);
        assert_eq!(layout.trailing(0, 2), 0..2);
    }

    #[test]
    fn forecast_pairs_use_next_value() {
        let s = series("a", vec![1.0, 2.0, 3.0, 4.0]);
        let samples = forecast_samples(&s, 2, 1, "cgm").unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].window, vec![1.0, 2.0]);
        assert_eq!(samples[0].target, 3.0);
        assert_eq!(samples[1].end, 2);
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore_outlier_fraction(&[1.0, 1.0, 1.0, 1.0], 3.5).unwrap(), 0.0);
        assert_eq!(zscore_outlier_fraction(&[1.0, 2.0, 3.0, 4.0, 100.0], 3.5).unwrap(), 0.2);
        assert_eq!(zscore_outlier_fraction(&[1.0, 2.0, 3.0], 3.5).unwrap(), 0.0);
        // MAD = 0 but one point off the median
        assert_eq!(zscore_outlier_fraction(&[5.0, 5.0, 5.0, 9.0], 3.5).unwrap(), 0.25);
        assert!(zscore_outlier_fraction(&[], 3.5).is_err());
    }

    #[test]
    fn iqr_examples() {
        assert_eq!(iqr_outlier_fraction(&[5.0, 5.0, 5.0], 1.5).unwrap(), 0.0);
        assert_eq!(iqr_outlier_fraction(&[1.0, 2.0, 3.0, 4.0, 100.0], 1.5).unwrap(), 0.2);
        assert_eq!(iqr_outlier_fraction(&[42.0], 1.5).unwrap(), 0.0);
    }

    #[test]
    fn ratio_examples() {
        let cfg = StateConfig::glucose_fasting("cgm");
        assert_eq!(normal_abnormal_ratio(&series("a", vec![100.0; 5]), &cfg).unwrap(), f64::INFINITY);
        let mut v = vec![100.0; 8];
        v.extend([200.0, 50.0]);
        assert_eq!(normal_abnormal_ratio(&series("b", v), &cfg).unwrap(), 4.0);
        assert_eq!(normal_abnormal_ratio(&series("c", vec![300.0; 5]), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn outlier_table_ranks_noisy_patient_first() {
        let mut noise = vec![1.0; 6];
        noise[4] = 20.0;
        let c = synth_cohort(9, 6, 600, &noise).unwrap();
        let t = outlier_table(&c, OutlierParams::default()).unwrap();
        assert_eq!(t.ranked_by_zscore()[0].patient_id, "p04");
        assert_eq!(t.ranked_by_iqr()[0].patient_id, "p04");

        let empty = Cohort::new(vec![], vec!["cgm".into()], StateConfig::default()).unwrap();
        assert!(outlier_table(&empty, OutlierParams::default()).is_err());
    }

    #[test]
    fn homogeneous_cohort_has_small_spread() {
        let c = synth_cohort(21, 8, 3000, &[20.0; 8]).unwrap();
        let t = outlier_table(&c, OutlierParams::default()).unwrap();
        assert!(t.iqr_mean > 0.0 && t.iqr_std < t.iqr_mean / 10.0, "{t:?}");
        assert!(t.zscore_mean > 0.0 && t.zscore_std < t.zscore_mean / 10.0, "{t:?}");
    }
}
