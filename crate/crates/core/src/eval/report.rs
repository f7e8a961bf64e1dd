//! Strategy report assembly and file emission.
//!
//! # Files written by [`emit_report`]
//!
//! * `metrics.csv`: `detector,strategy,run,recall,precision,tp,fp,tn,fn,
//!   fit_seconds,train_size,t_stat,p_value`. Per detector, one row per
//!   single-run strategy (`run = single`), one row per `random_oe` run
//!   (`run = 0..n-1`) and one aggregate `random_oe` row (`run = mean`) whose
//!   counts and `train_size` are `NA`. With the default 3 detectors, 5
//!   strategies and 10 random runs that is `3 * (4 + 10 + 1) = 45` data
//!   rows. `fit_seconds` is `NA` unless timing is strict, which keeps the
//!   file byte-identical across runs.
//! * `timings.csv`: `detector,strategy,run,fit_seconds` (wall clock).
//! * `recall_precision.csv`: one row per detector x strategy with mean and
//!   standard deviation over runs.
//! * `reductions.csv`: size and time reductions with their raw inputs.
//! * `traces.csv`: per-window scores for the trace strategies.
//! * `summary.json`: the full [`StrategyReport`].
//! * `recall.svg`: grouped recall bars.
//!
//! Undefined values are `NA` in CSV and `null` in JSON.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{fmt_opt, ConfusionCounts, Evaluation, TestSet};
use super::welch_defined;
use crate::detectors::{DetectorKind, Verdict};
use crate::error::{Error, Result};
use crate::stats::{mean, sample_std};
use crate::strategy::StrategyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub detector: DetectorKind,
    pub strategy: StrategyKind,
    pub run: Option<usize>,
    pub counts: ConfusionCounts,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub fit_seconds: f64,
    pub train_size: usize,
    pub n_benign_train: usize,
    pub n_adversarial_train: usize,
    pub patient_ids: Vec<String>,
    /// Recall on each test patient's adversarial windows, in test-set
    /// patient order.
    pub per_patient_recall: Vec<Option<f64>>,
    /// Welch test of per-patient recall against the `all_benign` cell.
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub detector: DetectorKind,
    pub strategy: StrategyKind,
    pub n_runs: usize,
    pub recall_mean: Option<f64>,
    pub recall_std: Option<f64>,
    pub recall_min: Option<f64>,
    pub recall_max: Option<f64>,
    pub precision_mean: Option<f64>,
    pub precision_std: Option<f64>,
    pub fit_seconds_mean: f64,
    pub train_size_mean: f64,
    /// Welch test of per-patient recall pooled over runs against
    /// `all_benign`.
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
}

/// Reduction of one strategy relative to the full-population baseline,
/// with the raw inputs needed to recompute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub detector: DetectorKind,
    pub strategy: StrategyKind,
    pub baseline: StrategyKind,
    /// Benign training windows.
    pub full_size: f64,
    pub selective_size: f64,
    pub size_reduction_pct: f64,
    pub full_seconds: f64,
    pub selective_seconds: f64,
    pub time_reduction_pct: Option<f64>,
}

impl Reduction {
    /// Both percentages agree with their raw fields.
    pub fn is_consistent(&self) -> bool {
        let size = 100.0 * (1.0 - self.selective_size / self.full_size);
        let time_ok = match self.time_reduction_pct {
            Some(t) => (t - 100.0 * (1.0 - self.selective_seconds / self.full_seconds)).abs() < 1e-9,
            None => !(self.full_seconds > 0.0),
        };
        (size - self.size_reduction_pct).abs() < 1e-9 && time_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub detector: DetectorKind,
    pub strategy: StrategyKind,
    pub patient_id: String,
    /// Position of the window within the patient's test windows.
    pub index: usize,
    pub adversarial: bool,
    pub score: f64,
    /// TP, FN, FP or TN.
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub t_test: String,
    pub replication_unit: String,
    pub timing_strict: bool,
    pub reduction_baseline: StrategyKind,
    pub full_benign_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub metadata: ReportMetadata,
    pub test_patient_ids: Vec<String>,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<AggregateRow>,
    pub reductions: Vec<Reduction>,
    pub traces: Vec<TraceRow>,
}

pub(crate) fn trace_rows(
    detector: DetectorKind,
    strategy: StrategyKind,
    test: &TestSet,
    eval: &Evaluation,
) -> Vec<TraceRow> {
    let mut seen = vec![0usize; test.patient_ids.len()];
    (0..test.len())
        .map(|i| {
            let p = test.patient[i];
            let index = seen[p];
            seen[p] += 1;
            let outcome = match (test.adversarial[i], eval.verdicts[i]) {
                (true, Verdict::Anomalous) => "TP",
                (true, Verdict::Benign) => "FN",
                (false, Verdict::Anomalous) => "FP",
                (false, Verdict::Benign) => "TN",
            };
            TraceRow {
                detector,
                strategy,
                patient_id: test.patient_ids[p].clone(),
                index,
                adversarial: test.adversarial[i],
                score: eval.scores[i],
                outcome: outcome.into(),
            }
        })
        .collect()
}

fn opt_mean(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| mean(&d))
}

fn opt_std(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (d.len() >= 2).then(|| sample_std(&d))
}

impl StrategyReport {
    pub(crate) fn assemble(
        mut cells: Vec<CellResult>,
        traces: Vec<TraceRow>,
        test_patient_ids: Vec<String>,
        full_benign_windows: usize,
        timing_strict: bool,
    ) -> Result<Self> {
        let mut detectors: Vec<DetectorKind> = cells.iter().map(|c| c.detector).collect();
        detectors.dedup();
        let mut strategies: Vec<StrategyKind> = cells.iter().map(|c| c.strategy).collect();
        strategies.sort();
        strategies.dedup();
        let reduction_baseline = if strategies.contains(&StrategyKind::AllOe) {
            StrategyKind::AllOe
        } else {
            StrategyKind::AllBenign
        };

        for d in &detectors {
            let base = cells
                .iter()
                .find(|c| c.detector == *d && c.strategy == StrategyKind::AllBenign)
                .map(|c| c.per_patient_recall.clone())
                .ok_or_else(|| Error::InvalidArgument("missing all_benign cell".into()))?;
            for c in cells.iter_mut().filter(|c| c.detector == *d && c.strategy != StrategyKind::AllBenign) {
                let what = format!("{}/{}", d.id(), c.strategy.id());
                if let Some(w) = welch_defined(&c.per_patient_recall, &base, &what) {
                    c.t_stat = Some(w.t);
                    c.p_value = Some(w.p);
                }
            }
        }

        let mut aggregates = Vec::new();
        let mut reductions = Vec::new();
        for d in &detectors {
            let base = cells
                .iter()
                .find(|c| c.detector == *d && c.strategy == StrategyKind::AllBenign)
                .expect("checked above")
                .per_patient_recall
                .clone();
            for s in &strategies {
                let group: Vec<&CellResult> = cells.iter().filter(|c| c.detector == *d && c.strategy == *s).collect();
                let recalls: Vec<Option<f64>> = group.iter().map(|c| c.recall).collect();
                let precisions: Vec<Option<f64>> = group.iter().map(|c| c.precision).collect();
                let defined: Vec<f64> = recalls.iter().flatten().copied().collect();
                let (t_stat, p_value) = if group.len() == 1 {
                    (group[0].t_stat, group[0].p_value)
                } else {
                    let pooled: Vec<Option<f64>> =
                        group.iter().flat_map(|c| c.per_patient_recall.iter().copied()).collect();
                    let what = format!("{}/{} pooled", d.id(), s.id());
                    welch_defined(&pooled, &base, &what).map_or((None, None), |w| (Some(w.t), Some(w.p)))
                };
                let secs: Vec<f64> = group.iter().map(|c| c.fit_seconds).collect();
                let sizes: Vec<f64> = group.iter().map(|c| c.train_size as f64).collect();
                aggregates.push(AggregateRow {
                    detector: *d,
                    strategy: *s,
                    n_runs: group.len(),
                    recall_mean: opt_mean(&recalls),
                    recall_std: opt_std(&recalls),
                    recall_min: defined.iter().copied().reduce(f64::min),
                    recall_max: defined.iter().copied().reduce(f64::max),
                    precision_mean: opt_mean(&precisions),
                    precision_std: opt_std(&precisions),
                    fit_seconds_mean: mean(&secs),
                    train_size_mean: mean(&sizes),
                    t_stat,
                    p_value,
                });
            }
            let baseline_cell = cells
                .iter()
                .find(|c| c.detector == *d && c.strategy == reduction_baseline)
                .expect("baseline strategy present");
            let full_size = baseline_cell.n_benign_train as f64;
            let full_seconds = baseline_cell.fit_seconds;
            for s in strategies.iter().filter(|s| **s != reduction_baseline && **s != StrategyKind::AllBenign) {
                let group: Vec<&CellResult> = cells.iter().filter(|c| c.detector == *d && c.strategy == *s).collect();
                let selective_size = mean(&group.iter().map(|c| c.n_benign_train as f64).collect::<Vec<_>>());
                let selective_seconds = mean(&group.iter().map(|c| c.fit_seconds).collect::<Vec<_>>());
                let size_reduction_pct = if full_size > 0.0 {
                    100.0 * (1.0 - selective_size / full_size)
                } else {
                    return Err(Error::Empty("baseline training set is empty".into()));
                };
                reductions.push(Reduction {
                    detector: *d,
                    strategy: *s,
                    baseline: reduction_baseline,
                    full_size,
                    selective_size,
                    size_reduction_pct,
                    full_seconds,
                    selective_seconds,
                    time_reduction_pct: super::time_reduction(full_seconds, selective_seconds).ok(),
                });
            }
        }
        Ok(Self {
            metadata: ReportMetadata {
                t_test: "welch_two_sided".into(),
                replication_unit: "per_patient_recall".into(),
                timing_strict,
                reduction_baseline,
                full_benign_windows,
            },
            test_patient_ids,
            cells,
            aggregates,
            reductions,
            traces,
        })
    }

    pub fn aggregate(&self, detector: DetectorKind, strategy: StrategyKind) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.detector == detector && a.strategy == strategy)
    }

    pub fn cell(&self, detector: DetectorKind, strategy: StrategyKind) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.detector == detector && c.strategy == strategy)
    }

    pub fn metrics_csv(&self) -> Result<String> {
        let timed = self.metadata.timing_strict;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "detector", "strategy", "run", "recall", "precision", "tp", "fp", "tn", "fn", "fit_seconds",
            "train_size", "t_stat", "p_value",
        ])?;
        let mut detectors: Vec<DetectorKind> = self.cells.iter().map(|c| c.detector).collect();
        detectors.dedup();
        for d in detectors {
            for a in self.aggregates.iter().filter(|a| a.detector == d) {
                for c in self.cells.iter().filter(|c| c.detector == d && c.strategy == a.strategy) {
                    w.write_record([
                        d.id().to_string(),
                        c.strategy.id().to_string(),
                        c.run.map_or_else(|| "single".to_string(), |r| r.to_string()),
                        fmt_opt(c.recall),
                        fmt_opt(c.precision),
                        c.counts.tp.to_string(),
                        c.counts.fp.to_string(),
                        c.counts.tn.to_string(),
                        c.counts.fn_.to_string(),
                        fmt_opt(timed.then_some(c.fit_seconds)),
                        c.train_size.to_string(),
                        fmt_opt(c.t_stat),
                        fmt_opt(c.p_value),
                    ])?;
                }
                if a.n_runs > 1 {
                    w.write_record([
                        d.id().to_string(),
                        a.strategy.id().to_string(),
                        "mean".to_string(),
                        fmt_opt(a.recall_mean),
                        fmt_opt(a.precision_mean),
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                        "NA".into(),
                        fmt_opt(timed.then_some(a.fit_seconds_mean)),
                        "NA".into(),
                        fmt_opt(a.t_stat),
                        fmt_opt(a.p_value),
                    ])?;
                }
            }
        }
        finish(w)
    }

    pub fn timings_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["detector", "strategy", "run", "fit_seconds"])?;
        for c in &self.cells {
            w.write_record([
                c.detector.id().to_string(),
                c.strategy.id().to_string(),
                c.run.map_or_else(|| "single".to_string(), |r| r.to_string()),
                c.fit_seconds.to_string(),
            ])?;
        }
        finish(w)
    }

    pub fn recall_precision_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "detector", "detector_name", "strategy", "n_runs", "recall_mean", "recall_std", "precision_mean",
            "precision_std",
        ])?;
        for a in &self.aggregates {
            w.write_record([
                a.detector.id().to_string(),
                a.detector.display_name().to_string(),
                a.strategy.id().to_string(),
                a.n_runs.to_string(),
                fmt_opt(a.recall_mean),
                fmt_opt(a.recall_std),
                fmt_opt(a.precision_mean),
                fmt_opt(a.precision_std),
            ])?;
        }
        finish(w)
    }

    pub fn reductions_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "detector", "strategy", "baseline", "full_size", "selective_size", "size_reduction_pct",
            "full_seconds", "selective_seconds", "time_reduction_pct",
        ])?;
        for r in &self.reductions {
            w.write_record([
                r.detector.id().to_string(),
                r.strategy.id().to_string(),
                r.baseline.id().to_string(),
                r.full_size.to_string(),
                r.selective_size.to_string(),
                r.size_reduction_pct.to_string(),
                r.full_seconds.to_string(),
                r.selective_seconds.to_string(),
                fmt_opt(r.time_reduction_pct),
            ])?;
        }
        finish(w)
    }

    pub fn traces_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["detector", "strategy", "patient_id", "index", "adversarial", "score", "outcome"])?;
        for t in &self.traces {
            w.write_record([
                t.detector.id().to_string(),
                t.strategy.id().to_string(),
                t.patient_id.clone(),
                t.index.to_string(),
                t.adversarial.to_string(),
                t.score.to_string(),
                t.outcome.clone(),
            ])?;
        }
        finish(w)
    }

    /// Grouped bar chart of mean recall per detector and strategy.
    pub fn recall_svg(&self) -> String {
        let mut detectors: Vec<DetectorKind> = self.aggregates.iter().map(|a| a.detector).collect();
        detectors.dedup();
        let strategies: Vec<StrategyKind> = StrategyKind::ALL
            .into_iter()
            .filter(|s| self.aggregates.iter().any(|a| a.strategy == *s))
            .collect();
        let colors = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"];
        let (bar, gap, h) = (18.0, 30.0, 200.0);
        let group_w = bar * strategies.len() as f64 + gap;
        let width = 60.0 + group_w * detectors.len() as f64 + 180.0;
        let mut s = String::new();
        let _ = write!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
            h + 60.0
        );
        let _ = write!(s, r#"<line x1="50" y1="20" x2="50" y2="{}" stroke="black"/>"#, 20.0 + h);
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let y = 20.0 + h * (1.0 - v);
            let _ = write!(s, r#"<text x="45" y="{}" text-anchor="end">{v:.2}</text>"#, y + 4.0);
        }
        for (di, d) in detectors.iter().enumerate() {
            let x0 = 60.0 + di as f64 * group_w;
            for (si, st) in strategies.iter().enumerate() {
                let r = self.aggregate(*d, *st).and_then(|a| a.recall_mean).unwrap_or(0.0);
                let x = x0 + si as f64 * bar;
                let y = 20.0 + h * (1.0 - r);
                let _ = write!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{}" height="{}" fill="{}"/>"#,
                    bar - 2.0,
                    h * r,
                    colors[si % colors.len()]
                );
            }
            let _ = write!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                x0 + bar * strategies.len() as f64 / 2.0,
                h + 38.0,
                d.display_name()
            );
        }
        let lx = 70.0 + group_w * detectors.len() as f64;
        for (si, st) in strategies.iter().enumerate() {
            let y = 30.0 + si as f64 * 16.0;
            let _ = write!(
                s,
                r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                y - 9.0,
                colors[si % colors.len()],
                lx + 14.0,
                y,
                st.id()
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the report files listed in the module docs into `out_dir`.
pub fn emit_report(report: &StrategyReport, out_dir: &Path) -> Result<()> {
    if out_dir.as_os_str().is_empty() {
        return Err(Error::InvalidArgument("output directory path is empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(out_dir, "metrics.csv", &report.metrics_csv()?)?;
    write_file(out_dir, "timings.csv", &report.timings_csv()?)?;
    write_file(out_dir, "recall_precision.csv", &report.recall_precision_csv()?)?;
    write_file(out_dir, "reductions.csv", &report.reductions_csv()?)?;
    write_file(out_dir, "traces.csv", &report.traces_csv()?)?;
    write_file(out_dir, "summary.json", &serde_json::to_string_pretty(report)?)?;
    write_file(out_dir, "recall.svg", &report.recall_svg())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterAssignment;
    use crate::detectors::{AeConfig, DetectorConfig};
    use crate::eval::{compare_strategies, CompareOptions};
    use crate::strategy::{StrategySpec, WindowPool};

    fn fixture() -> StrategyReport {
        let mut pool = WindowPool::default();
        let mut test = TestSet::default();
        for i in 0..4 {
            let id = format!("p{i}");
            let spread = if i < 2 { 0.1 } else { 1.0 };
            let benign: Vec<Vec<f64>> = (0..20)
                .map(|k| vec![spread * ((k % 5) as f64 - 2.0), spread * ((k / 5) as f64 - 2.0)])
                .collect();
            let adv: Vec<Vec<f64>> = (0..20).map(|k| vec![2.0 + 0.1 * k as f64, 2.0]).collect();
            for w in benign.iter().take(5) {
                test.push(i, w.clone(), false);
            }
            for w in adv.iter().take(5) {
                test.push(i, w.clone(), true);
            }
            pool.benign.insert(id.clone(), benign);
            pool.adversarial.insert(id, adv);
            test.patient_ids.push(format!("p{i}"));
        }
        let assignment = ClusterAssignment {
            less_vulnerable: vec!["p0".into()],
            more_vulnerable: vec!["p1".into(), "p2".into(), "p3".into()],
            cut_height: 1.0,
            inter_cluster_distance: 2.0,
            forced: false,
            tied: false,
        };
        let cfg = DetectorConfig {
            autoencoder: AeConfig {
                epochs: 5,
                batch_size: 8,
                ..AeConfig::default()
            },
            ..DetectorConfig::default()
        };
        compare_strategies(&pool, &assignment, &test, &cfg, &StrategySpec::default(), &CompareOptions::default())
            .unwrap()
    }

    #[test]
    fn structure_and_round_trip() {
        let r = fixture();
        assert_eq!(r.aggregates.len(), 15);
        let csv = r.metrics_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 45);
        let back: StrategyReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        for a in r.aggregates.iter().filter(|a| a.n_runs > 1) {
            let (m, lo, hi) = (a.recall_mean.unwrap(), a.recall_min.unwrap(), a.recall_max.unwrap());
            assert!(lo <= m && m <= hi);
        }
        assert!(r.reductions.iter().all(Reduction::is_consistent));
        let lv = r
            .reductions
            .iter()
            .find(|x| x.strategy == StrategyKind::LessVulnerableOe)
            .unwrap();
        assert_eq!(lv.size_reduction_pct, 75.0);
    }

    #[test]
    fn emit_rejects_empty_path() {
        let r = fixture();
        assert!(emit_report(&r, Path::new("")).is_err());
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        assert!(dir.path().join("metrics.csv").exists());
        assert!(dir.path().join("recall.svg").exists());
    }
}
