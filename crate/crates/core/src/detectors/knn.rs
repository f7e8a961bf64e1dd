//! Distance-based detector: the score of a window is its Euclidean
//! distance to the k-th nearest training window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_contamination, check_windows, contamination_threshold};
use crate::error::{Error, Result};
use crate::stats::squared_euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnScore {
    #[default]
    Kth,
    MeanOfK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub neighbors: usize,
    pub contamination: f64,
    pub score: KnnScore,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            neighbors: 7,
            contamination: 0.5,
            score: KnnScore::Kth,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::InvalidArgument("neighbors must be >= 1".into()));
        }
        check_contamination(self.contamination)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnDetector {
    neighbors: usize,
    score_kind: KnnScore,
    windows: Vec<Vec<f64>>,
    threshold: f64,
}

fn reduce(dists: &mut [f64], k: usize, kind: KnnScore) -> f64 {
    dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    match kind {
        KnnScore::Kth => dists[k - 1],
        KnnScore::MeanOfK => dists[..k].iter().sum::<f64>() / k as f64,
    }
}

impl KnnDetector {
    pub fn input_dim(&self) -> usize {
        self.windows[0].len()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let mut d: Vec<f64> = self.windows.iter().map(|w| squared_euclidean(w, x).sqrt()).collect();
        reduce(&mut d, self.neighbors, self.score_kind)
    }

    /// Score of training window `i` against all other training windows.
    pub fn leave_self_out_score(&self, i: usize) -> f64 {
        let x = &self.windows[i];
        let mut d: Vec<f64> = self
            .windows
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, w)| squared_euclidean(w, x).sqrt())
            .collect();
        reduce(&mut d, self.neighbors, self.score_kind)
    }
}

/// Stores the training windows and calibrates the threshold on
/// leave-self-out training scores.
pub fn fit_knn(windows: &[Vec<f64>], cfg: &KnnConfig) -> Result<KnnDetector> {
    cfg.validate()?;
    check_windows(windows, cfg.neighbors + 1, "kNN")?;
    let mut det = KnnDetector {
        neighbors: cfg.neighbors,
        score_kind: cfg.score,
        windows: windows.to_vec(),
        threshold: 0.0,
    };
    let scores: Vec<f64> = (0..windows.len())
        .into_par_iter()
        .map(|i| det.leave_self_out_score(i))
        .collect();
    det.threshold = contamination_threshold(&scores, cfg.contamination);
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn brute(train: &[Vec<f64>], x: &[f64], k: usize, skip: Option<usize>) -> f64 {
        let mut d: Vec<f64> = train
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(_, w)| w.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        d.sort_by(f64::total_cmp);
        d[k - 1]
    }

    fn random_windows(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = seed::rng_from_seed(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
    }

    #[test]
    fn leave_self_out_uses_others() {
        let w = vec![vec![0.0], vec![1.0], vec![3.0]];
        let det = fit_knn(&w, &KnnConfig { neighbors: 1, ..KnnConfig::default() }).unwrap();
        assert_eq!(det.leave_self_out_score(0), 1.0);
        assert_eq!(det.leave_self_out_score(2), 2.0);
        assert_eq!(det.score(&[0.0]), 0.0);
    }

    #[test]
    fn half_of_training_exceeds_threshold() {
        let w = random_windows(1, 101, 3);
        let det = fit_knn(&w, &KnnConfig::default()).unwrap();
        let above = (0..w.len()).filter(|&i| det.leave_self_out_score(i) > det.threshold()).count();
        assert!((49..=51).contains(&above), "{above}");
    }

    #[test]
    fn duplicates_score_zero() {
        let mut w = vec![vec![1.0, 1.0]; 4];
        w.extend(random_windows(2, 10, 2));
        let det = fit_knn(&w, &KnnConfig { neighbors: 3, ..KnnConfig::default() }).unwrap();
        assert_eq!(det.leave_self_out_score(0), 0.0);
    }

    #[test]
    fn too_few_windows() {
        let w = random_windows(3, 7, 2);
        assert!(matches!(fit_knn(&w, &KnnConfig::default()), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn mean_of_k_option() {
        let w = vec![vec![0.0], vec![1.0], vec![2.0], vec![4.0]];
        let det = fit_knn(&w, &KnnConfig { neighbors: 2, score: KnnScore::MeanOfK, ..KnnConfig::default() }).unwrap();
        assert_eq!(det.score(&[0.0]), 0.5);
    }

    #[test]
    fn matches_brute_force_at_200() {
        let w = random_windows(5, 200, 4);
        let det = fit_knn(&w, &KnnConfig::default()).unwrap();
        for (i, x) in random_windows(6, 50, 4).iter().enumerate() {
            assert_eq!(det.score(x), brute(&w, x, 7, None));
            assert_eq!(det.leave_self_out_score(i), brute(&w, &w[i], 7, Some(i)));
        }
    }

    proptest! {
        #[test]
        fn score_grows_when_moving_away(seed in 0u64..500, t in 1.0f64..5.0) {
            let w = random_windows(seed, 20, 2);
            let det = fit_knn(&w, &KnnConfig { neighbors: 3, ..KnnConfig::default() }).unwrap();
            // push a point outward along a ray from the data's bounding box
            let base = [10.0, 10.0];
            let farther = [10.0 * (1.0 + t), 10.0 * (1.0 + t)];
            prop_assert!(det.score(&farther) >= det.score(&base));
        }
    }
}
