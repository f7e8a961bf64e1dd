//! Reconstruction autoencoder: `d -> bottleneck -> d`, trained by seeded
//! minibatch SGD on squared reconstruction error. The score is the mean
//! squared reconstruction error of a window.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_contamination, check_windows, contamination_threshold};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

impl Activation {
    fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Bottleneck width; `None` means `max(1, input_dim / 3)`.
    pub bottleneck_dim: Option<usize>,
    pub activation: Activation,
    pub contamination: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 32,
            bottleneck_dim: None,
            activation: Activation::Tanh,
            contamination: 0.5,
            seed: 0,
        }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.bottleneck_dim == Some(0) {
            return Err(Error::InvalidArgument("bottleneck must be >= 1".into()));
        }
        check_contamination(self.contamination)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeDetector {
    input_dim: usize,
    bottleneck: usize,
    activation: Activation,
    /// Encoder `(b x d)` row-major.
    w_enc: Vec<f64>,
    b_enc: Vec<f64>,
    /// Decoder `(d x b)` row-major.
    w_dec: Vec<f64>,
    b_dec: Vec<f64>,
    threshold: f64,
    final_loss: f64,
}

impl AeDetector {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    fn encode(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        (0..self.bottleneck)
            .map(|j| {
                let pre: f64 = self.w_enc[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                    + self.b_enc[j];
                self.activation.apply(pre)
            })
            .collect()
    }

    fn decode(&self, h: &[f64]) -> Vec<f64> {
        let b = self.bottleneck;
        (0..self.input_dim)
            .map(|i| self.w_dec[i * b..(i + 1) * b].iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.b_dec[i])
            .collect()
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.decode(&self.encode(x))
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let r = self.reconstruct(x);
        r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.input_dim as f64
    }
}

fn xavier(rng: &mut seed::Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

pub fn fit_autoencoder(windows: &[Vec<f64>], cfg: &AeConfig) -> Result<AeDetector> {
    cfg.validate()?;
    let d = check_windows(windows, cfg.batch_size, "autoencoder")?;
    let b = cfg.bottleneck_dim.unwrap_or((d / 3).max(1));
    if b >= d {
        log::warn!("autoencoder bottleneck {b} >= input dim {d}: no compression");
    }
    let mut rng = seed::substream(cfg.seed, "autoencoder", "");
    let mut ae = AeDetector {
        input_dim: d,
        bottleneck: b,
        activation: cfg.activation,
        w_enc: xavier(&mut rng, d, b, b * d),
        b_enc: vec![0.0; b],
        w_dec: xavier(&mut rng, b, d, d * b),
        b_dec: vec![0.0; d],
        threshold: 0.0,
        final_loss: f64::NAN,
    };

    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut g_we = vec![0.0; b * d];
    let mut g_be = vec![0.0; b];
    let mut g_wd = vec![0.0; d * b];
    let mut g_bd = vec![0.0; d];
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            g_we.iter_mut().for_each(|v| *v = 0.0);
            g_be.iter_mut().for_each(|v| *v = 0.0);
            g_wd.iter_mut().for_each(|v| *v = 0.0);
            g_bd.iter_mut().for_each(|v| *v = 0.0);
            for &n in batch {
                let x = &windows[n];
                let h = ae.encode(x);
                let r = ae.decode(&h);
                // d(mean sq err)/dr
                let dr: Vec<f64> = r.iter().zip(x).map(|(a, v)| 2.0 * (a - v) / d as f64).collect();
                epoch_loss += r.iter().zip(x).map(|(a, v)| (a - v) * (a - v)).sum::<f64>() / d as f64;
                let mut dh = vec![0.0; b];
                for i in 0..d {
                    g_bd[i] += dr[i];
                    for j in 0..b {
                        g_wd[i * b + j] += dr[i] * h[j];
                        dh[j] += dr[i] * ae.w_dec[i * b + j];
                    }
                }
                for j in 0..b {
                    let dpre = dh[j] * ae.activation.grad_from_output(h[j]);
                    g_be[j] += dpre;
                    for i in 0..d {
                        g_we[j * d + i] += dpre * x[i];
                    }
                }
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (p, g) in ae.w_enc.iter_mut().zip(&g_we) {
                *p -= step * g;
            }
            for (p, g) in ae.b_enc.iter_mut().zip(&g_be) {
                *p -= step * g;
            }
            for (p, g) in ae.w_dec.iter_mut().zip(&g_wd) {
                *p -= step * g;
            }
            for (p, g) in ae.b_dec.iter_mut().zip(&g_bd) {
                *p -= step * g;
            }
        }
        let loss = epoch_loss / windows.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        ae.final_loss = loss;
    }
    let scores: Vec<f64> = windows.iter().map(|w| ae.score(w)).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Divergence { epoch: cfg.epochs });
    }
    ae.threshold = contamination_threshold(&scores, cfg.contamination);
    Ok(ae)
}
