//! Small differentiable forecaster used as the attack victim.
//!
//! A model maps a flattened window to `output_dim` next-step values. It is
//! either linear or a single tanh hidden layer. Inputs and outputs may be
//! standardized internally; with identity scaling a linear model computes
//! exactly `dot(w, x) + b`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MODEL_FORMAT: &str = "roast-victim";
pub const MODEL_VERSION: u32 = 1;

const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Standardize inputs and targets per coordinate before training.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Affine map `x -> (x - shift) / scale` applied per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Per-coordinate mean and population standard deviation; zero spread
    /// maps to scale 1.
    fn fit(rows: impl Iterator<Item = impl AsRef<[f64]>> + Clone, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        for r in rows.clone() {
            n += 1;
            for (s, v) in sum.iter_mut().zip(r.as_ref()) {
                *s += v;
            }
        }
        let shift: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in sq.iter_mut().zip(r.as_ref()).zip(&shift) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = sq
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    kind: ModelKind,
    input_dim: usize,
    output_dim: usize,
    /// Linear: `W (out x in)` row-major, then `b (out)`.
    /// Mlp: `W1 (h x in)`, `b1 (h)`, `W2 (out x h)`, `b2 (out)`.
    params: Vec<f64>,
    input_scaling: Scaling,
    output_scaling: Scaling,
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: ForecastModel,
    /// Mean squared error over the training set, in target units.
    pub final_loss: f64,
    /// Training loss after each epoch.
    pub loss_history: Vec<f64>,
}

fn param_count(kind: ModelKind, input_dim: usize, output_dim: usize) -> usize {
    match kind {
        ModelKind::Linear => output_dim * input_dim + output_dim,
        ModelKind::Mlp { hidden } => hidden * input_dim + hidden + output_dim * hidden + output_dim,
    }
}

impl ForecastModel {
    /// Weights drawn uniformly from `[-0.1, 0.1]`.
    pub fn new(kind: ModelKind, input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = seed::rng_from_seed(seed);
        let mut m = Self::zeros(kind, input_dim, output_dim)?;
        for p in &mut m.params {
            *p = rng.random_range(-INIT_RANGE..=INIT_RANGE);
        }
        Ok(m)
    }

    pub fn zeros(kind: ModelKind, input_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidSize("model dimensions must be >= 1".into()));
        }
        if let ModelKind::Mlp { hidden: 0 } = kind {
            return Err(Error::InvalidSize("hidden layer width must be >= 1".into()));
        }
        Ok(Self {
            kind,
            input_dim,
            output_dim,
            params: vec![0.0; param_count(kind, input_dim, output_dim)],
            input_scaling: Scaling::identity(input_dim),
            output_scaling: Scaling::identity(output_dim),
        })
    }

    /// Single-output linear model `dot(w, x) + b`.
    pub fn linear(weights: Vec<f64>, bias: f64) -> Result<Self> {
        let mut m = Self::zeros(ModelKind::Linear, weights.len(), 1)?;
        m.params[..weights.len()].copy_from_slice(&weights);
        m.params[weights.len()] = bias;
        m.check_finite()?;
        Ok(m)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn input_scaling(&self) -> &Scaling {
        &self.input_scaling
    }

    pub fn with_scaling(mut self, input: Scaling, output: Scaling) -> Result<Self> {
        if input.shift.len() != self.input_dim || input.scale.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: input.shift.len(),
            });
        }
        if output.shift.len() != self.output_dim || output.scale.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                actual: output.shift.len(),
            });
        }
        if input.scale.iter().chain(&output.scale).any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("scaling factors must be > 0".into()));
        }
        self.input_scaling = input;
        self.output_scaling = output;
        Ok(self)
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("model weights must be finite".into()))
        }
    }

    fn check_dim(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: window.len(),
            });
        }
        Ok(())
    }

    fn normalize_input(&self, window: &[f64]) -> Vec<f64> {
        window
            .iter()
            .zip(&self.input_scaling.shift)
            .zip(&self.input_scaling.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Forward pass in normalized space: (hidden activations, outputs).
    fn forward(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, o) = (self.input_dim, self.output_dim);
        match self.kind {
            ModelKind::Linear => {
                let (w, b) = self.params.split_at(o * d);
                let out = (0..o)
                    .map(|k| dot(&w[k * d..(k + 1) * d], z) + b[k])
                    .collect();
                (Vec::new(), out)
            }
            ModelKind::Mlp { hidden: h } => {
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(o * h);
                let a: Vec<f64> = (0..h)
                    .map(|j| (dot(&w1[j * d..(j + 1) * d], z) + b1[j]).tanh())
                    .collect();
                let out = (0..o)
                    .map(|k| dot(&w2[k * h..(k + 1) * h], &a) + b2[k])
                    .collect();
                (a, out)
            }
        }
    }

    fn denormalize_output(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.output_scaling.shift)
            .zip(&self.output_scaling.scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(window)?;
        let z = self.normalize_input(window);
        let (_, u) = self.forward(&z);
        Ok(self.denormalize_output(&u))
    }

    /// First forecast value.
    pub fn predict_one(&self, window: &[f64]) -> Result<f64> {
        Ok(self.predict(window)?[0])
    }

    /// Gradient of `sum_k (yhat_k - y_k)^2` with respect to the raw window.
    pub fn input_gradient(&self, window: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(window)?;
        if target.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                actual: target.len(),
            });
        }
        let z = self.normalize_input(window);
        let (a, u) = self.forward(&z);
        let yhat = self.denormalize_output(&u);
        let g_out: Vec<f64> = (0..self.output_dim)
            .map(|k| 2.0 * (yhat[k] - target[k]) * self.output_scaling.scale[k])
            .collect();
        let mut dz = vec![0.0; self.input_dim];
        self.backward(&z, &a, &g_out, None, Some(&mut dz));
        Ok(dz
            .iter()
            .zip(&self.input_scaling.scale)
            .map(|(g, s)| g / s)
            .collect())
    }

    /// Accumulates parameter gradients into `dparams` and/or input
    /// gradients (normalized space) into `dz`, given `dL/du`.
    fn backward(
        &self,
        z: &[f64],
        a: &[f64],
        g_out: &[f64],
        dparams: Option<&mut [f64]>,
        dz: Option<&mut [f64]>,
    ) {
        let (d, o) = (self.input_dim, self.output_dim);
        match self.kind {
            ModelKind::Linear => {
                if let Some(dp) = dparams {
                    for k in 0..o {
                        for i in 0..d {
                            dp[k * d + i] += g_out[k] * z[i];
                        }
                        dp[o * d + k] += g_out[k];
                    }
                }
                if let Some(dz) = dz {
                    for k in 0..o {
                        for i in 0..d {
                            dz[i] += g_out[k] * self.params[k * d + i];
                        }
                    }
                }
            }
            ModelKind::Mlp { hidden: h } => {
                let w1 = &self.params[..h * d];
                let w2 = &self.params[h * d + h..h * d + h + o * h];
                let mut dpre = vec![0.0; h];
                for j in 0..h {
                    let da: f64 = (0..o).map(|k| g_out[k] * w2[k * h + j]).sum();
                    dpre[j] = da * (1.0 - a[j] * a[j]);
                }
                if let Some(dp) = dparams {
                    for j in 0..h {
                        for i in 0..d {
                            dp[j * d + i] += dpre[j] * z[i];
                        }
                        dp[h * d + j] += dpre[j];
                    }
                    let off = h * d + h;
                    for k in 0..o {
                        for j in 0..h {
                            dp[off + k * h + j] += g_out[k] * a[j];
                        }
                        dp[off + o * h + k] += g_out[k];
                    }
                }
                if let Some(dz) = dz {
                    for j in 0..h {
                        for i in 0..d {
                            dz[i] += dpre[j] * w1[j * d + i];
                        }
                    }
                }
            }
        }
    }

    /// Mean over samples of the per-sample mean squared error, in target
    /// units.
    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
        let o = self.output_dim;
        let mut total = 0.0;
        for (x, y) in inputs.iter().zip(targets.chunks(o)) {
            let yhat = self.predict(x)?;
            total += yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / o as f64;
        }
        Ok(total / inputs.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        let rec = ModelRecord {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string(&rec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ModelRecord = serde_json::from_str(text)?;
        if rec.format != MODEL_FORMAT || rec.version != MODEL_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "unsupported model format {} v{}",
                rec.format, rec.version
            )));
        }
        let m = rec.model;
        if m.params.len() != param_count(m.kind, m.input_dim, m.output_dim) {
            return Err(Error::DimensionMismatch {
                expected: param_count(m.kind, m.input_dim, m.output_dim),
                actual: m.params.len(),
            });
        }
        m.check_finite()?;
        let (i, o) = (m.input_scaling.clone(), m.output_scaling.clone());
        m.with_scaling(i, o)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    model: ForecastModel,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minibatch SGD on squared error. `targets` holds `output_dim` values per
/// input, concatenated. Shuffling is driven by `cfg.seed`, so equal seeds
/// give identical weights.
pub fn fit(
    model: &ForecastModel,
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("no training windows".into()));
    }
    let o = model.output_dim;
    if targets.len() != inputs.len() * o {
        return Err(Error::DimensionMismatch {
            expected: inputs.len() * o,
            actual: targets.len(),
        });
    }
    for x in inputs {
        model.check_dim(x)?;
    }
    let mut m = model.clone();
    if cfg.standardize {
        m.input_scaling = Scaling::fit(inputs.iter(), m.input_dim);
        m.output_scaling = Scaling::fit(targets.chunks(o), o);
    }
    let z: Vec<Vec<f64>> = inputs.iter().map(|x| m.normalize_input(x)).collect();
    let y: Vec<f64> = targets
        .chunks(o)
        .flat_map(|t| {
            t.iter()
                .zip(&m.output_scaling.shift)
                .zip(&m.output_scaling.scale)
                .map(|((v, s), c)| (v - s) / c)
                .collect::<Vec<_>>()
        })
        .collect();

    let mut rng = seed::substream(cfg.seed, "victim-fit", "");
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grad = vec![0.0; m.params.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &n in batch {
                let (a, u) = m.forward(&z[n]);
                let g_out: Vec<f64> = (0..o)
                    .map(|k| 2.0 * (u[k] - y[n * o + k]) / o as f64)
                    .collect();
                m.backward(&z[n], &a, &g_out, Some(&mut grad), None);
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (p, g) in m.params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        let loss = m.mse(inputs, targets)?;
        if !loss.is_finite() || m.check_finite().is_err() {
            return Err(Error::Divergence { epoch });
        }
        history.push(loss);
    }
    Ok(FitReport {
        final_loss: *history.last().expect("epochs >= 1"),
        loss_history: history,
        model: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite_diff(m: &ForecastModel, x: &[f64], y: &[f64], h: f64) -> Vec<f64> {
        let loss = |x: &[f64]| {
            m.predict(x)
                .unwrap()
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut q = x.to_vec();
                p[i] += h;
                q[i] -= h;
                (loss(&p) - loss(&q)) / (2.0 * h)
            })
            .collect()
    }

    fn linear_data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = seed::rng_from_seed(4);
        let w = [0.5, -1.5, 2.0];
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys = xs.iter().map(|x| dot(&w, x) + 0.25).collect();
        (xs, ys)
    }

    #[test]
    fn recovers_linear_map() {
        let (xs, ys) = linear_data(200);
        let m = ForecastModel::new(ModelKind::Linear, 3, 1, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 8,
            seed: 2,
            standardize: true,
        };
        let r = fit(&m, &xs, &ys, &cfg).unwrap();
        assert!(r.final_loss < 1e-6, "{}", r.final_loss);
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let (xs, ys) = linear_data(50);
        let m = ForecastModel::new(ModelKind::Linear, 3, 1, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 50,
            seed: 0,
            standardize: false,
        };
        let r = fit(&m, &xs, &ys, &cfg).unwrap();
        assert!(r.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fit_rejects_bad_config_and_is_deterministic() {
        let (xs, ys) = linear_data(20);
        let m = ForecastModel::new(ModelKind::Mlp { hidden: 4 }, 3, 1, 1).unwrap();
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(fit(&m, &xs, &ys, &bad), Err(Error::InvalidArgument(_))));
        let cfg = TrainConfig::default();
        let a = fit(&m, &xs, &ys, &cfg).unwrap();
        let b = fit(&m, &xs, &ys, &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn divergence_names_epoch() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 100.0]).collect();
        let ys: Vec<f64> = (0..10).map(|i| i as f64 * 1e4).collect();
        let m = ForecastModel::new(ModelKind::Linear, 1, 1, 0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 10.0,
            epochs: 500,
            batch_size: 1,
            seed: 0,
            standardize: false,
        };
        assert!(matches!(fit(&m, &xs, &ys, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn predict_definitions() {
        let zero = ForecastModel::zeros(ModelKind::Linear, 3, 1).unwrap();
        assert_eq!(zero.predict_one(&[5.0, -2.0, 9.0]).unwrap(), 0.0);
        let m = ForecastModel::linear(vec![1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(m.predict_one(&[1.0, 1.0, 1.0]).unwrap(), 6.5);
        assert!(matches!(
            m.predict(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn linear_gradient_closed_form() {
        let m = ForecastModel::linear(vec![1.0, -2.0], 0.0).unwrap();
        let x = [3.0, 1.0];
        let g = m.input_gradient(&x, &[0.0]).unwrap();
        // yhat = 1, residual 1
        assert_eq!(g, vec![2.0, -4.0]);
        assert_eq!(m.input_gradient(&x, &[1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn save_load_round_trip() {
        let m = ForecastModel::new(ModelKind::Mlp { hidden: 3 }, 4, 2, 9).unwrap();
        let back = ForecastModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(ForecastModel::from_json(r#"{"format":"x","version":1}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn gradient_matches_central_differences(
            seed in 0u64..10_000,
            mlp in any::<bool>(),
            x in prop::collection::vec(-2.0f64..2.0, 6),
            y in -1.0f64..1.0,
        ) {
            let kind = if mlp { ModelKind::Mlp { hidden: 5 } } else { ModelKind::Linear };
            let m = ForecastModel::new(kind, 6, 1, seed).unwrap()
                .with_scaling(
                    Scaling { shift: vec![0.3; 6], scale: vec![1.7; 6] },
                    Scaling { shift: vec![0.1], scale: vec![2.0] },
                ).unwrap();
            let g = m.input_gradient(&x, &[y]).unwrap();
            let fd = finite_diff(&m, &x, &[y], 1e-5);
            let norm = g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() / norm <= 1e-4, "{a} vs {b}");
            }
        }
    }
}
