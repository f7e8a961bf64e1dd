//! Severity coefficients and per-timestamp adversarial risk profiles.
//!
//! The severity of manipulating a feature is the regression coefficient of
//! that feature when predicting the clinical target (ordinary least squares
//! for a real-valued target, logistic regression for an unsafe-state flag).
//! Instantaneous risk at an attacked timestamp is
//! `R(t) = sum_i S_i * (manipulated_i - original_i)^2` over the configured
//! risk factors.

use serde::{Deserialize, Serialize};

use crate::attack::CohortAttack;
use crate::cohort::Cohort;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";
const LOGISTIC_TOL: f64 = 1e-6;
const LOGISTIC_MAX_ITER: usize = 10_000;
const LOGISTIC_NORM_CAP: f64 = 1e3;
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityModel {
    pub fit_kind: FitKind,
    pub target: String,
    pub features: Vec<String>,
    /// One coefficient per entry of `features`, in original units.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Logistic fit stopped at the norm cap (perfectly separable data).
    pub capped: bool,
}

impl SeverityModel {
    pub fn coefficient(&self, feature: &str) -> Result<f64> {
        self.features
            .iter()
            .position(|f| f == feature)
            .map(|i| self.coefficients[i])
            .ok_or_else(|| Error::InvalidArgument(format!("no coefficient for `{feature}`")))
    }

    /// Copy with `feature`'s coefficient multiplied by `factor`.
    pub fn scaled(&self, feature: &str, factor: f64) -> Result<Self> {
        let i = self
            .features
            .iter()
            .position(|f| f == feature)
            .ok_or_else(|| Error::InvalidArgument(format!("no coefficient for `{feature}`")))?;
        let mut m = self.clone();
        m.coefficients[i] *= factor;
        Ok(m)
    }
}

fn check_design(x: &[Vec<f64>], names: &[String], n_targets: usize) -> Result<()> {
    if x.len() != n_targets {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: n_targets,
        });
    }
    for row in x {
        if row.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                actual: row.len(),
            });
        }
    }
    Ok(())
}

/// Ordinary least squares with an intercept, solved by modified
/// Gram-Schmidt QR. A column whose component orthogonal to the preceding
/// columns vanishes is reported together with the columns it depends on.
pub fn fit_severity_linear(
    x: &[Vec<f64>],
    names: &[String],
    y: &[f64],
    target: &str,
) -> Result<SeverityModel> {
    check_design(x, names, y.len())?;
    let distinct = x.iter().skip(1).any(|r| r != &x[0]);
    if x.len() < 2 || !distinct {
        return Err(Error::InvalidSize("linear fit needs at least 2 distinct samples".into()));
    }
    let n = x.len();
    let p = names.len() + 1;
    let mut col_names = vec![INTERCEPT.to_string()];
    col_names.extend(names.iter().cloned());
    let mut q: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            if j == 0 {
                vec![1.0; n]
            } else {
                x.iter().map(|r| r[j - 1]).collect()
            }
        })
        .collect();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        let orig_norm = norm(&q[j]);
        for i in 0..j {
            let rij = dotp(&q[i], &q[j]);
            r[i][j] = rij;
            let qi = q[i].clone();
            for (a, b) in q[j].iter_mut().zip(&qi) {
                *a -= rij * b;
            }
        }
        let nrm = norm(&q[j]);
        if orig_norm == 0.0 || nrm <= COLLINEAR_TOL * orig_norm.max(1.0) {
            let with = (0..j)
                .filter(|&i| r[i][j].abs() > COLLINEAR_TOL * orig_norm.max(1.0))
                .map(|i| col_names[i].clone())
                .collect();
            return Err(Error::RankDeficient {
                column: col_names[j].clone(),
                with,
            });
        }
        r[j][j] = nrm;
        for v in &mut q[j] {
            *v /= nrm;
        }
    }
    let qty: Vec<f64> = q.iter().map(|c| dotp(c, y)).collect();
    let mut beta = vec![0.0; p];
    for j in (0..p).rev() {
        let s: f64 = (j + 1..p).map(|k| r[j][k] * beta[k]).sum();
        beta[j] = (qty[j] - s) / r[j][j];
    }
    Ok(SeverityModel {
        fit_kind: FitKind::Linear,
        target: target.to_string(),
        features: names.to_vec(),
        coefficients: beta[1..].to_vec(),
        intercept: beta[0],
        capped: false,
    })
}

/// Unregularized logistic regression by full-batch gradient descent on the
/// mean log-loss over internally standardized columns. Stops when the
/// gradient norm drops below 1e-6, after 10 000 iterations, or when the
/// coefficient norm reaches 1e3 (separable data; logged as a warning).
pub fn fit_severity_logistic(
    x: &[Vec<f64>],
    names: &[String],
    y: &[bool],
    target: &str,
) -> Result<SeverityModel> {
    check_design(x, names, y.len())?;
    let positives = y.iter().filter(|v| **v).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass(format!(
            "{positives} positive of {} samples",
            y.len()
        )));
    }
    let n = x.len() as f64;
    let k = names.len();
    let mut means = vec![0.0; k];
    let mut sds = vec![0.0; k];
    for j in 0..k {
        let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
        means[j] = crate::stats::mean(&col);
        let var = col.iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / n;
        if var == 0.0 {
            return Err(Error::RankDeficient {
                column: names[j].clone(),
                with: vec![INTERCEPT.to_string()],
            });
        }
        sds[j] = var.sqrt();
    }
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..k).map(|j| (r[j] - means[j]) / sds[j]).collect())
        .collect();
    let t: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();

    // the log-loss Hessian is bounded by (k + 1) / 4 on standardized columns
    let lr = 4.0 / (k as f64 + 1.0);
    let mut beta = vec![0.0; k + 1];
    let mut capped = false;
    for _ in 0..LOGISTIC_MAX_ITER {
        let mut grad = vec![0.0; k + 1];
        for (row, ti) in z.iter().zip(&t) {
            let eta = beta[0] + dotp(&beta[1..], row);
            let err = sigmoid(eta) - ti;
            grad[0] += err;
            for j in 0..k {
                grad[j + 1] += err * row[j];
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        if norm(&grad) < LOGISTIC_TOL {
            break;
        }
        for (b, g) in beta.iter_mut().zip(&grad) {
            *b -= lr * g;
        }
        let bn = norm(&beta);
        if bn >= LOGISTIC_NORM_CAP {
            beta.iter_mut().for_each(|b| *b *= LOGISTIC_NORM_CAP / bn);
            capped = true;
            log::warn!("logistic severity fit reached the coefficient norm cap; data look separable");
            break;
        }
    }
    let coefficients: Vec<f64> = (0..k).map(|j| beta[j + 1] / sds[j]).collect();
    let intercept = beta[0] - (0..k).map(|j| coefficients[j] * means[j]).sum::<f64>();
    Ok(SeverityModel {
        fit_kind: FitKind::Logistic,
        target: target.to_string(),
        features: names.to_vec(),
        coefficients,
        intercept,
        capped,
    })
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dotp(a, a).sqrt()
}

/// Regression data from a cohort: every feature at time `t` paired with the
/// label channel at `t + 1`.
pub fn severity_design(cohort: &Cohort) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let label = cohort
        .label_channel()
        .ok_or_else(|| Error::InvalidArgument("cohort has no label channel".into()))?;
    let li = cohort.feature_index(label)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for p in cohort.patients() {
        let ch = p.channels();
        for t in 0..p.len().saturating_sub(1) {
            x.push(ch.iter().map(|c| c.values[t]).collect());
            y.push(ch[li].values[t + 1]);
        }
    }
    Ok((x, y))
}

/// Fits the severity model selected by `kind` on `cohort`. The logistic
/// target is whether the next label value is unsafe.
pub fn fit_severity(cohort: &Cohort, kind: FitKind) -> Result<SeverityModel> {
    let (x, y) = severity_design(cohort)?;
    let label = cohort.label_channel().expect("checked by severity_design");
    let names = cohort.schema().to_vec();
    match kind {
        FitKind::Linear => fit_severity_linear(&x, &names, &y, label),
        FitKind::Logistic => {
            let safe = cohort.state_config().interval(label)?;
            let flags: Vec<bool> = y.iter().map(|v| !safe.contains(*v)).collect();
            fit_severity_logistic(&x, &names, &flags, &format!("{label}_unsafe_next"))
        }
    }
}

/// `S * (manipulated - original)^2`
pub fn instantaneous_risk(original: f64, manipulated: f64, s: f64) -> f64 {
    let d = manipulated - original;
    s * d * d
}

/// Sum of `S_i * (manipulated_i - original_i)^2` over `(S_i, original_i,
/// manipulated_i)` terms.
pub fn multi_factor_risk(terms: &[(f64, f64, f64)]) -> f64 {
    terms
        .iter()
        .map(|&(s, o, m)| instantaneous_risk(o, m, s))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub patient_id: String,
    /// Series index of each attacked timestamp, in temporal order.
    pub t_index: Vec<usize>,
    pub values: Vec<f64>,
}

/// One profile per patient with at least one attacked window. `factors`
/// names the risk-factor features; each contributes the change in its most
/// recent window sample.
pub fn build_profiles(
    attack: &CohortAttack,
    model: &SeverityModel,
    factors: &[String],
    schema: &[String],
) -> Result<Vec<RiskProfile>> {
    if factors.is_empty() {
        return Err(Error::InvalidArgument("at least one risk factor is required".into()));
    }
    let mut coords = Vec::with_capacity(factors.len());
    for f in factors {
        let idx = schema
            .iter()
            .position(|s| s == f)
            .ok_or_else(|| Error::SchemaMismatch(format!("risk factor `{f}` not in schema")))?;
        coords.push((model.coefficient(f)?, attack.layout.current(idx)));
    }
    let mut out = Vec::new();
    for p in &attack.patients {
        if p.outcomes.is_empty() {
            log::warn!("patient `{}` has no attacked windows; excluded from profiling", p.patient_id);
            continue;
        }
        let values = p
            .outcomes
            .iter()
            .map(|o| {
                coords
                    .iter()
                    .map(|&(s, c)| instantaneous_risk(o.benign_window[c], o.adversarial_window[c], s))
                    .sum()
            })
            .collect();
        out.push(RiskProfile {
            patient_id: p.patient_id.clone(),
            t_index: p.outcomes.iter().map(|o| o.t_index).collect(),
            values,
        });
    }
    Ok(out)
}

/// `patient_id,t_index,risk`
pub fn profiles_to_csv(profiles: &[RiskProfile]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["patient_id", "t_index", "risk"])?;
    for p in profiles {
        for (t, r) in p.t_index.iter().zip(&p.values) {
            w.write_record([p.patient_id.clone(), t.to_string(), r.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AttackOutcome, PatientAttack};
    use crate::cohort::{ClinicalState, WindowLayout};
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn exact_ols() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64).collect();
        let m = fit_severity_linear(&x, &names(&["x"]), &y, "y").unwrap();
        assert!((m.coefficient("x").unwrap() - 3.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-10);
    }

    #[test]
    fn recovers_planted_glucose_coefficient() {
        let mut rng = seed::rng_from_seed(1);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random_range(60.0..300.0), rng.random_range(50.0..120.0)])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| -10.78 * r[0] + 0.4 * r[1] + 7.0).collect();
        let m = fit_severity_linear(&x, &names(&["cgm", "hr"]), &y, "y").unwrap();
        assert!((m.coefficient("cgm").unwrap() + 10.78).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 4.0]).collect();
        let y = vec![1.0; 5];
        match fit_severity_linear(&x, &names(&["a", "b"]), &y, "y") {
            Err(Error::RankDeficient { column, with }) => {
                assert_eq!(column, "b");
                assert_eq!(with, vec![INTERCEPT.to_string()]);
            }
            other => panic!("{other:?}"),
        }
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        match fit_severity_linear(&x, &names(&["a", "b"]), &y, "y") {
            Err(Error::RankDeficient { column, with }) => {
                assert_eq!(column, "b");
                assert!(with.contains(&"a".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn logistic_recovers_planted_coefficient() {
        let mut rng = seed::rng_from_seed(7);
        let normal = Normal::new(0.0, 1.5).unwrap();
        let x: Vec<Vec<f64>> = (0..5000).map(|_| vec![normal.sample(&mut rng)]).collect();
        let y: Vec<bool> = x
            .iter()
            .map(|r| rng.random::<f64>() < sigmoid(0.3 - 0.76 * r[0]))
            .collect();
        let m = fit_severity_logistic(&x, &names(&["pmr"]), &y, "y").unwrap();
        let s = m.coefficient("pmr").unwrap();
        assert!((s + 0.76).abs() <= 0.076, "{s}");
    }

    #[test]
    fn logistic_symmetric_data_gives_zero() {
        let x: Vec<Vec<f64>> = vec![vec![-1.0], vec![-1.0], vec![1.0], vec![1.0]];
        let y = vec![true, false, true, false];
        let m = fit_severity_logistic(&x, &names(&["a"]), &y, "y").unwrap();
        assert!(m.coefficient("a").unwrap().abs() < 0.05);
        assert!(matches!(
            fit_severity_logistic(&x, &names(&["a"]), &[true; 4], "y"),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn logistic_separable_is_capped() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let m = fit_severity_logistic(&x, &names(&["a"]), &y, "y").unwrap();
        assert!(m.coefficients.iter().all(|c| c.is_finite()));
        assert!(m.capped || m.coefficient("a").unwrap() > 0.0);
    }

    #[test]
    fn risk_examples() {
        assert_eq!(instantaneous_risk(90.0, 90.0, -10.78), 0.0);
        assert!((instantaneous_risk(90.0, 210.0, -10.78) + 155_232.0).abs() < 1e-6);
        assert_eq!(instantaneous_risk(90.0, 210.0, 2.0), instantaneous_risk(210.0, 90.0, 2.0));
    }

    fn outcome(t: usize, benign: Vec<f64>, adv: Vec<f64>) -> AttackOutcome {
        AttackOutcome {
            t_index: t,
            timestamp: t as i64,
            benign: benign[1],
            adversarial: adv[1],
            pred_benign: 0.0,
            pred_adv: 0.0,
            success: false,
            state_before: ClinicalState::Safe,
            state_after: ClinicalState::Safe,
            perturbed: benign != adv,
            benign_window: benign,
            adversarial_window: adv,
        }
    }

    fn model(coefs: &[f64]) -> SeverityModel {
        SeverityModel {
            fit_kind: FitKind::Linear,
            target: "y".into(),
            features: names(&["cgm", "hr"]),
            coefficients: coefs.to_vec(),
            intercept: 0.0,
            capped: false,
        }
    }

    #[test]
    fn profiles_follow_outcomes() {
        // layout: 2 features x 2 steps; current cgm is coord 1, current hr coord 3
        let layout = WindowLayout { n_features: 2, len: 2 };
        let attack = CohortAttack {
            layout,
            attacked_feature: "cgm".into(),
            patients: vec![
                PatientAttack {
                    patient_id: "a".into(),
                    n_windows: 3,
                    outcomes: vec![
                        outcome(1, vec![0.0, 100.0, 0.0, 70.0], vec![0.0, 110.0, 0.0, 72.0]),
                        outcome(3, vec![0.0, 90.0, 0.0, 70.0], vec![0.0, 90.0, 0.0, 70.0]),
                    ],
                },
                PatientAttack {
                    patient_id: "b".into(),
                    n_windows: 3,
                    outcomes: vec![],
                },
            ],
        };
        let schema = names(&["cgm", "hr"]);
        let m = model(&[-2.0, 3.0]);
        let one = build_profiles(&attack, &m, &names(&["cgm"]), &schema).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].t_index, vec![1, 3]);
        assert_eq!(one[0].values, vec![-200.0, 0.0]);
        let two = build_profiles(&attack, &m, &names(&["cgm", "hr"]), &schema).unwrap();
        assert_eq!(two[0].values, vec![-200.0 + 12.0, 0.0]);
        assert!(profiles_to_csv(&two).unwrap().starts_with("patient_id,t_index,risk\na,1,-188\n"));
    }

    proptest! {
        #[test]
        fn risk_scaling(o in -300.0f64..300.0, d in -100.0f64..100.0, s in -20.0f64..20.0) {
            let r1 = instantaneous_risk(o, o + d, s);
            let r2 = instantaneous_risk(o, o + 2.0 * d, s);
            prop_assert!((r2 - 4.0 * r1).abs() <= 1e-9 * r2.abs().max(1.0));
            let rs = instantaneous_risk(o, o + d, 2.0 * s);
            prop_assert!((rs - 2.0 * r1).abs() <= 1e-9 * rs.abs().max(1.0));
        }

        #[test]
        fn single_factor_reduces_and_additivity(
            terms in prop::collection::vec((-20.0f64..20.0, 0.0f64..300.0, 0.0f64..300.0), 1..4)
        ) {
            let (s, o, m) = terms[0];
            prop_assert_eq!(multi_factor_risk(&terms[..1]), instantaneous_risk(o, m, s));
            let sum: f64 = terms.iter().map(|t| multi_factor_risk(std::slice::from_ref(t))).sum();
            prop_assert!((multi_factor_risk(&terms) - sum).abs() <= 1e-9 * sum.abs().max(1.0));
        }
    }
}
