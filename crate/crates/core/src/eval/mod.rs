//! Detector x strategy comparison: training, evaluation on a common test
//! set, timing, reductions and significance tests against the
//! `all_benign` baseline.

pub mod metrics;
pub mod report;
pub mod stats;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::detectors::{self, DetectorConfig, DetectorKind, FittedDetector};
use crate::error::{Error, Result};
use crate::strategy::{self, StrategyKind, StrategySpec, TrainingManifest, TrainingSet, WindowPool};

pub use metrics::{evaluate, fmt_opt, time_reduction, ConfusionCounts, Evaluation, TestSet};
pub use report::{emit_report, AggregateRow, CellResult, Reduction, ReportMetadata, StrategyReport, TraceRow};
pub use stats::{welch_t_test, WelchResult};

/// Strategies whose per-window scores are kept for trace plots.
pub const TRACE_STRATEGIES: [StrategyKind; 2] = [StrategyKind::AllBenign, StrategyKind::LessVulnerableOe];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub detectors: Vec<DetectorKind>,
    pub strategies: Vec<StrategyKind>,
    /// Fit cells one at a time so wall-clock timings are not shared.
    pub timing_strict: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            detectors: DetectorKind::ALL.to_vec(),
            strategies: StrategyKind::ALL.to_vec(),
            timing_strict: false,
        }
    }
}

/// One trained detector with the provenance of its training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCell {
    pub manifest: TrainingManifest,
    pub fit_seconds: f64,
    pub detector: FittedDetector,
}

/// Builds every strategy's training set(s) and fits every detector on each.
/// `all_benign` must be among the strategies; it is the baseline for
/// t-tests and reductions.
pub fn fit_cells(
    pool: &WindowPool,
    assignment: &ClusterAssignment,
    detector_cfg: &DetectorConfig,
    spec: &StrategySpec,
    opts: &CompareOptions,
) -> Result<Vec<FittedCell>> {
    detector_cfg.validate()?;
    if !opts.strategies.contains(&StrategyKind::AllBenign) {
        return Err(Error::InvalidArgument("strategies must include all_benign".into()));
    }
    let mut sets: Vec<TrainingSet> = Vec::new();
    for &kind in &opts.strategies {
        sets.extend(strategy::build(kind, pool, assignment, spec)?);
    }
    let jobs: Vec<(DetectorKind, usize)> = opts
        .detectors
        .iter()
        .flat_map(|&d| (0..sets.len()).map(move |s| (d, s)))
        .collect();
    let run = |&(d, s): &(DetectorKind, usize)| -> Result<FittedCell> {
        let start = Instant::now();
        let detector = detectors::fit(d, &sets[s].windows, detector_cfg)?;
        Ok(FittedCell {
            manifest: sets[s].manifest(),
            fit_seconds: start.elapsed().as_secs_f64(),
            detector,
        })
    };
    if opts.timing_strict {
        jobs.iter().map(run).collect()
    } else {
        jobs.par_iter().map(run).collect()
    }
}

/// Evaluates fitted cells on `test` and assembles the report.
/// `full_benign_windows` is the benign pool size of the whole cohort.
pub fn evaluate_cells(
    cells: &[FittedCell],
    test: &TestSet,
    full_benign_windows: usize,
    timing_strict: bool,
) -> Result<StrategyReport> {
    let evals: Vec<Evaluation> = cells
        .par_iter()
        .map(|c| evaluate(&c.detector, test))
        .collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(cells.len());
    let mut traces = Vec::new();
    for (c, e) in cells.iter().zip(evals) {
        let d = c.detector.kind();
        let m = &c.manifest;
        if TRACE_STRATEGIES.contains(&m.strategy) {
            traces.extend(report::trace_rows(d, m.strategy, test, &e));
        }
        results.push(CellResult {
            detector: d,
            strategy: m.strategy,
            run: m.run,
            counts: e.counts,
            recall: e.counts.recall(),
            precision: e.counts.precision(),
            fit_seconds: c.fit_seconds,
            train_size: m.n_benign + m.n_adversarial,
            n_benign_train: m.n_benign,
            n_adversarial_train: m.n_adversarial,
            patient_ids: m.patient_ids.clone(),
            per_patient_recall: e.per_patient_recall(),
            t_stat: None,
            p_value: None,
        });
    }
    StrategyReport::assemble(results, traces, test.patient_ids.clone(), full_benign_windows, timing_strict)
}

/// Fits every detector on every strategy's training set(s), evaluates on
/// `test`, and assembles the report.
pub fn compare_strategies(
    pool: &WindowPool,
    assignment: &ClusterAssignment,
    test: &TestSet,
    detector_cfg: &DetectorConfig,
    spec: &StrategySpec,
    opts: &CompareOptions,
) -> Result<StrategyReport> {
    let cells = fit_cells(pool, assignment, detector_cfg, spec, opts)?;
    let full = pool.benign_count(&pool.patient_ids());
    evaluate_cells(&cells, test, full, opts.timing_strict)
}

/// Welch test of `a` against `b` on their defined entries; `None` (with a
/// warning) when the test is undefined.
pub(crate) fn welch_defined(a: &[Option<f64>], b: &[Option<f64>], what: &str) -> Option<WelchResult> {
    let a: Vec<f64> = a.iter().flatten().copied().collect();
    let b: Vec<f64> = b.iter().flatten().copied().collect();
    match welch_t_test(&a, &b) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("t-test for {what} undefined: {e}");
            None
        }
    }
}
