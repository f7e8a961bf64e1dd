//! One-class SVM with an RBF kernel in the nu formulation, solved by SMO
//! with second-order working-set selection.
//!
//! The solver works on the scaled dual
//! `min 1/2 a'Qa  s.t. 0 <= a_i <= 1, sum a_i = nu * l`
//! and stores `alpha = a / (nu l)` and `rho / (nu l)`, so that the stored
//! coefficients satisfy `sum alpha = 1`, `0 <= alpha_i <= 1 / (nu l)`. The
//! anomaly score is `rho - sum_i alpha_i K(x_i, x)`; positive scores are
//! outside the learned support and the decision threshold is 0.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check_windows;
use crate::error::{Error, Result};
use crate::stats::squared_euclidean;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcsvmConfig {
    pub nu: f64,
    /// RBF width; `None` means `1 / input_dim`.
    pub gamma: Option<f64>,
    pub tol: f64,
    /// Kernel cache budget in MiB.
    pub cache_mb: usize,
    /// Iteration cap; `None` means `max(10_000_000, 100 l)`.
    pub max_iter: Option<usize>,
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            gamma: None,
            tol: 1e-3,
            cache_mb: 512,
            max_iter: None,
        }
    }
}

impl OcsvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidArgument(format!("nu {} must lie in (0, 1]", self.nu)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidArgument(format!("gamma {g} must be > 0")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmDetector {
    gamma: f64,
    support: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    rho: f64,
    converged: bool,
    iterations: usize,
}

impl OcsvmDetector {
    pub fn input_dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn threshold(&self) -> f64 {
        0.0
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }

    /// Training windows with nonzero coefficients, aligned with `alpha()`.
    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let f: f64 = self
            .support
            .iter()
            .zip(&self.alpha)
            .map(|(s, a)| a * rbf(self.gamma, s, x))
            .sum();
        self.rho - f
    }
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * squared_euclidean(a, b)).exp()
}

/// Kernel rows on demand, with FIFO eviction once the budget is spent.
struct KernelCache<'a> {
    x: &'a [Vec<f64>],
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64, cache_mb: usize) -> Self {
        let row_bytes = x.len() * std::mem::size_of::<f64>();
        let capacity = ((cache_mb << 20) / row_bytes.max(1)).max(2);
        let mut cache = Self {
            x,
            gamma,
            rows: vec![None; x.len()],
            order: VecDeque::new(),
            capacity,
        };
        if capacity >= x.len() {
            let all: Vec<Vec<f64>> = (0..x.len()).into_par_iter().map(|i| cache.compute(i)).collect();
            for (i, r) in all.into_iter().enumerate() {
                cache.rows[i] = Some(r);
                cache.order.push_back(i);
            }
        }
        cache
    }

    fn compute(&self, i: usize) -> Vec<f64> {
        self.x.iter().map(|xj| rbf(self.gamma, &self.x[i], xj)).collect()
    }

    fn ensure(&mut self, i: usize) {
        if self.rows[i].is_some() {
            return;
        }
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows[old] = None;
            }
        }
        self.rows[i] = Some(self.compute(i));
        self.order.push_back(i);
    }

    /// Rows `i` and `j`, both resident.
    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        if self.rows[j].is_none() {
            if self.order.len() >= self.capacity {
                // never evict row i while j is loaded
                if let Some(pos) = self.order.iter().position(|&r| r != i) {
                    let old = self.order.remove(pos).expect("position is valid");
                    self.rows[old] = None;
                }
            }
            self.rows[j] = Some(self.compute(j));
            self.order.push_back(j);
        }
        (
            self.rows[i].as_deref().expect("row i resident"),
            self.rows[j].as_deref().expect("row j resident"),
        )
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.ensure(i);
        self.rows[i].as_deref().expect("row resident")
    }
}

/// Solver state after optimization, in the scaled (`sum a = nu l`) form.
struct Solution {
    a: Vec<f64>,
    rho: f64,
    converged: bool,
    iterations: usize,
}

fn solve(x: &[Vec<f64>], nu: f64, gamma: f64, tol: f64, cache_mb: usize, max_iter: usize) -> Solution {
    let l = x.len();
    let total = nu * l as f64;
    let mut a = vec![0.0; l];
    let full = total.floor() as usize;
    for ai in a.iter_mut().take(full.min(l)) {
        *ai = 1.0;
    }
    if full < l {
        a[full] = total - full as f64;
    }
    let mut cache = KernelCache::new(x, gamma, cache_mb);
    // RBF diagonal is 1
    let qd = 1.0;
    let mut g = vec![0.0; l];
    for i in 0..l {
        if a[i] > 0.0 {
            let ai = a[i];
            let row = cache.row(i);
            for (gk, q) in g.iter_mut().zip(row) {
                *gk += ai * q;
            }
        }
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        // i: argmax over a_t < 1 of -G_t
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            if a[t] < 1.0 && -g[t] >= gmax {
                gmax = -g[t];
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i != usize::MAX {
            let qi = cache.row(i).to_vec();
            for t in 0..l {
                if a[t] > 0.0 {
                    let diff = gmax + g[t];
                    if g[t] >= gmax2 {
                        gmax2 = g[t];
                    }
                    if diff > 0.0 {
                        let mut quad = qd + qd - 2.0 * qi[t];
                        if quad <= 0.0 {
                            quad = TAU;
                        }
                        let obj = -(diff * diff) / quad;
                        if obj <= obj_min {
                            obj_min = obj;
                            j = t;
                        }
                    }
                }
            }
        }
        if gmax + gmax2 < tol || i == usize::MAX || j == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (a[i], a[j]);
        let (qi, qj) = cache.pair(i, j);
        let mut quad = qd + qd - 2.0 * qi[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        let delta = (g[i] - g[j]) / quad;
        let sum = a[i] + a[j];
        a[i] -= delta;
        a[j] += delta;
        if sum > 1.0 {
            if a[i] > 1.0 {
                a[i] = 1.0;
                a[j] = sum - 1.0;
            }
        } else if a[j] < 0.0 {
            a[j] = 0.0;
            a[i] = sum;
        }
        if sum > 1.0 {
            if a[j] > 1.0 {
                a[j] = 1.0;
                a[i] = sum - 1.0;
            }
        } else if a[i] < 0.0 {
            a[i] = 0.0;
            a[j] = sum;
        }
        let (di, dj) = (a[i] - old_i, a[j] - old_j);
        for k in 0..l {
            g[k] += qi[k] * di + qj[k] * dj;
        }
    }

    // offset: mean gradient over free variables, else midpoint of bounds
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..l {
        if a[t] >= 1.0 {
            lb = lb.max(g[t]);
        } else if a[t] <= 0.0 {
            ub = ub.min(g[t]);
        } else {
            n_free += 1;
            sum_free += g[t];
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    Solution {
        a,
        rho,
        converged,
        iterations,
    }
}

/// Fits the one-class SVM. Only windows with nonzero coefficients are
/// retained. Hitting the iteration cap logs a warning and keeps the last
/// iterate.
pub fn fit_ocsvm(windows: &[Vec<f64>], cfg: &OcsvmConfig) -> Result<OcsvmDetector> {
    cfg.validate()?;
    let dim = check_windows(windows, 2, "OCSVM")?;
    let gamma = cfg.gamma.unwrap_or(1.0 / dim as f64);
    let l = windows.len();
    let max_iter = cfg.max_iter.unwrap_or_else(|| 10_000_000usize.max(100 * l));
    let sol = solve(windows, cfg.nu, gamma, cfg.tol, cfg.cache_mb, max_iter);
    if !sol.converged {
        log::warn!("OCSVM did not converge within {max_iter} iterations; using the last iterate");
    }
    let scale = cfg.nu * l as f64;
    let mut support = Vec::new();
    let mut alpha = Vec::new();
    for (w, a) in windows.iter().zip(&sol.a) {
        if *a > 0.0 {
            support.push(w.clone());
            alpha.push(a / scale);
        }
    }
    Ok(OcsvmDetector {
        gamma,
        support,
        alpha,
        rho: sol.rho / scale,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}
