//! DTW distances between risk profiles, complete-linkage clustering, the
//! two-way dendrogram cut, vulnerability labeling and the cut-stability
//! sweep.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::CohortAttack;
use crate::error::{Error, Result};
use crate::risk::{self, RiskProfile, SeverityModel};

/// Dynamic time warping with local cost `|a_i - b_j|` and no band.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw needs nonempty sequences".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &ai in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (ai - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub ids: Vec<String>,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidSize(format!("distance matrix must be {n} x {n}")));
        }
        Ok(Self {
            ids,
            values: rows.concat(),
        })
    }
}

/// Symmetric DTW matrix; each unordered pair is computed once.
pub fn pairwise_matrix(profiles: &[RiskProfile]) -> Result<DistanceMatrix> {
    let n = profiles.len();
    if n < 2 {
        return Err(Error::InvalidSize(format!("need at least 2 profiles, got {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| dtw_distance(&profiles[i].values, &profiles[j].values))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    Ok(DistanceMatrix {
        ids: profiles.iter().map(|p| p.patient_id.clone()).collect(),
        values,
    })
}

/// One agglomeration step. Leaves are `0..n`; the cluster created by merge
/// `k` has id `n + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

/// Complete linkage: repeatedly merge the pair of clusters with the
/// smallest maximum pairwise distance. Equal distances are resolved by the
/// lexicographically smallest pair of (smallest member index) per cluster.
pub fn complete_linkage(matrix: &DistanceMatrix) -> Result<Dendrogram> {
    let n = matrix.n();
    if n < 2 {
        return Err(Error::InvalidSize(format!("need at least 2 items, got {n}")));
    }
    // active clusters: (cluster id, smallest member, size)
    let mut active: Vec<(usize, usize, usize)> = (0..n).map(|i| (i, i, 1)).collect();
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| matrix.get(i, j)).collect()).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for x in 0..active.len() {
            for y in x + 1..active.len() {
                let d = dist[x][y];
                let (mx, my) = (active[x].1, active[y].1);
                let key = (mx.min(my), mx.max(my));
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _, _)) => d < *bd || (d == *bd && key < *bkey),
                };
                if better {
                    best = Some((d, key, x, y));
                }
            }
        }
        let (height, _, x, y) = best.expect("at least two active clusters");
        let (ca, ma, sa) = active[x];
        let (cb, mb, sb) = active[y];
        merges.push(Merge {
            a: ca.min(cb),
            b: ca.max(cb),
            height,
            size: sa + sb,
        });
        // x < y: keep slot x for the merged cluster, drop slot y
        for z in 0..active.len() {
            let d = dist[x][z].max(dist[y][z]);
            dist[x][z] = d;
            dist[z][x] = d;
        }
        dist[x][x] = 0.0;
        active[x] = (n + k, ma.min(mb), sa + sb);
        active.remove(y);
        dist.remove(y);
        for row in &mut dist {
            row.remove(y);
        }
    }
    Ok(Dendrogram { n, merges })
}

impl Dendrogram {
    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Leaf clusters after applying the first `m` merges, each sorted, in
    /// order of smallest member.
    pub fn clusters_after(&self, m: usize) -> Vec<Vec<usize>> {
        let total = self.n + self.merges.len();
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (k, mg) in self.merges.iter().take(m).enumerate() {
            let id = self.n + k;
            let ra = find(&mut parent, mg.a);
            let rb = find(&mut parent, mg.b);
            parent[ra] = id;
            parent[rb] = id;
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for leaf in 0..self.n {
            let r = find(&mut parent, leaf);
            groups.entry(r).or_default().push(leaf);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }

    /// Clusters formed by every merge with height `<= h`.
    pub fn cut_at_height(&self, h: f64) -> Vec<Vec<usize>> {
        let m = self.merges.iter().take_while(|mg| mg.height <= h).count();
        self.clusters_after(m)
    }
}

/// Unlabeled two-way partition of the dendrogram leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub clusters: Vec<Vec<usize>>,
    pub cut_height: f64,
    pub inter_cluster_distance: f64,
    /// The largest gap would have produced more than two clusters.
    pub forced: bool,
}

/// Cuts in the largest gap between consecutive merge heights (ties go to
/// the higher gap), at the gap midpoint. A cut yielding more than two
/// clusters is replaced by the cut below the final merge and marked
/// `forced`. With two leaves the cut sits below the only merge.
pub fn cut_largest_gap(d: &Dendrogram) -> Result<Cut> {
    let h = d.heights();
    if h.is_empty() {
        return Err(Error::InvalidSize("dendrogram has no merges".into()));
    }
    let top = *h.last().expect("nonempty");
    if h.len() == 1 {
        return Ok(Cut {
            clusters: d.clusters_after(0),
            cut_height: top / 2.0,
            inter_cluster_distance: top,
            forced: false,
        });
    }
    let mut best = 0;
    for i in 0..h.len() - 1 {
        if h[i + 1] - h[i] >= h[best + 1] - h[best] {
            best = i;
        }
    }
    let last = h.len() - 2;
    let forced = best != last;
    if forced {
        log::warn!(
            "largest dendrogram gap yields {} clusters; forcing a two-way cut",
            d.n - best - 1
        );
    }
    Ok(Cut {
        clusters: d.clusters_after(last + 1),
        cut_height: (h[last] + h[last + 1]) / 2.0,
        inter_cluster_distance: top,
        forced,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub less_vulnerable: Vec<String>,
    pub more_vulnerable: Vec<String>,
    pub cut_height: f64,
    pub inter_cluster_distance: f64,
    pub forced: bool,
    /// Mean success rates were equal; the smaller cluster was chosen.
    pub tied: bool,
}

fn mean_rate(members: &[String], rates: &BTreeMap<String, Option<f64>>) -> Result<Option<f64>> {
    let mut vals = Vec::new();
    for id in members {
        match rates.get(id) {
            None => return Err(Error::InvalidArgument(format!("no success rate for `{id}`"))),
            Some(Some(r)) => vals.push(*r),
            Some(None) => {}
        }
    }
    Ok(if vals.is_empty() {
        None
    } else {
        Some(crate::stats::mean(&vals))
    })
}

/// Index of the least vulnerable group: lowest mean success rate, ignoring
/// undefined rates. Equal means go to the smaller group, then to the group
/// holding the smallest id. The flag reports a tie.
pub fn least_vulnerable(
    groups: &[Vec<String>],
    rates: &BTreeMap<String, Option<f64>>,
) -> Result<(usize, bool)> {
    let mut keyed = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let m = mean_rate(g, rates)?;
        let first = g.iter().min().cloned().unwrap_or_default();
        keyed.push((m.unwrap_or(f64::INFINITY), g.len(), first, i));
    }
    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let tied = keyed.len() > 1 && keyed[0].0 == keyed[1].0;
    if keyed[0].0.is_infinite() {
        return Err(Error::InvalidArgument("no cluster has a defined success rate".into()));
    }
    Ok((keyed[0].3, tied))
}

/// Labels the two clusters of `cut` by mean attack success rate.
pub fn label_vulnerability(
    cut: &Cut,
    ids: &[String],
    rates: &BTreeMap<String, Option<f64>>,
) -> Result<ClusterAssignment> {
    if cut.clusters.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "labeling needs 2 clusters, got {}",
            cut.clusters.len()
        )));
    }
    let groups: Vec<Vec<String>> = cut
        .clusters
        .iter()
        .map(|c| {
            let mut g: Vec<String> = c.iter().map(|&i| ids[i].clone()).collect();
            g.sort();
            g
        })
        .collect();
    let (lv, tied) = least_vulnerable(&groups, rates)?;
    if tied {
        log::warn!("clusters have equal mean success rates; smaller cluster labeled less vulnerable");
    }
    Ok(ClusterAssignment {
        less_vulnerable: groups[lv].clone(),
        more_vulnerable: groups[1 - lv].clone(),
        cut_height: cut.cut_height,
        inter_cluster_distance: cut.inter_cluster_distance,
        forced: cut.forced,
        tied,
    })
}

/// `|a ∩ b| / |a ∪ b|`, and 1 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Matrix, tree and labeled assignment for one set of profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub matrix: DistanceMatrix,
    pub dendrogram: Dendrogram,
    pub assignment: ClusterAssignment,
}

pub fn cluster_profiles(
    profiles: &[RiskProfile],
    rates: &BTreeMap<String, Option<f64>>,
) -> Result<Clustering> {
    let matrix = pairwise_matrix(profiles)?;
    let dendrogram = complete_linkage(&matrix)?;
    let cut = cut_largest_gap(&dendrogram)?;
    let assignment = label_vulnerability(&cut, &matrix.ids, rates)?;
    Ok(Clustering {
        matrix,
        dendrogram,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `coef:<feature>` or `threshold`.
    pub parameter: String,
    pub perturbation_pct: i32,
    pub jaccard: f64,
}

/// Perturbations from -50% to +50% in 5% steps.
pub fn sweep_grid() -> Vec<i32> {
    (-10..=10).map(|k| k * 5).collect()
}

pub struct SweepInputs<'a> {
    pub attack: &'a CohortAttack,
    pub severity: &'a SeverityModel,
    pub factors: &'a [String],
    pub schema: &'a [String],
    pub rates: &'a BTreeMap<String, Option<f64>>,
    pub baseline: &'a Clustering,
}

/// Varies each risk-factor coefficient and the cut height in isolation and
/// reports the Jaccard similarity of the resulting less-vulnerable set to
/// the baseline one. Coefficient perturbations rebuild profiles and re-cut
/// by largest gap; threshold perturbations re-cut the baseline tree at
/// `cut_height * (1 + p)` and take the lowest-mean cluster.
pub fn sensitivity_sweep(inp: &SweepInputs<'_>) -> Result<Vec<SweepRow>> {
    let base: BTreeSet<String> = inp.baseline.assignment.less_vulnerable.iter().cloned().collect();
    let mut jobs: Vec<(Option<&String>, i32)> = Vec::new();
    for f in inp.factors {
        jobs.extend(sweep_grid().into_iter().map(|p| (Some(f), p)));
    }
    jobs.extend(sweep_grid().into_iter().map(|p| (None, p)));

    jobs.par_iter()
        .map(|&(factor, pct)| {
            let scale = 1.0 + pct as f64 / 100.0;
            let lv: BTreeSet<String> = match factor {
                Some(f) => {
                    let sev = inp.severity.scaled(f, scale)?;
                    let profiles = risk::build_profiles(inp.attack, &sev, inp.factors, inp.schema)?;
                    cluster_profiles(&profiles, inp.rates)?
                        .assignment
                        .less_vulnerable
                        .into_iter()
                        .collect()
                }
                None => {
                    let h = inp.baseline.assignment.cut_height * scale;
                    let ids = &inp.baseline.matrix.ids;
                    let groups: Vec<Vec<String>> = inp
                        .baseline
                        .dendrogram
                        .cut_at_height(h)
                        .iter()
                        .map(|c| c.iter().map(|&i| ids[i].clone()).collect())
                        .collect();
                    let (i, _) = least_vulnerable(&groups, inp.rates)?;
                    groups[i].iter().cloned().collect()
                }
            };
            Ok(SweepRow {
                parameter: factor.map_or_else(|| "threshold".to_string(), |f| format!("coef:{f}")),
                perturbation_pct: pct,
                jaccard: jaccard(&base, &lv),
            })
        })
        .collect()
}

/// `parameter,perturbation_pct,jaccard`
pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["parameter", "perturbation_pct", "jaccard"])?;
    for r in rows {
        w.write_record([r.parameter.clone(), r.perturbation_pct.to_string(), r.jaccard.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_dtw(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
        let c = (a[i] - b[j]).abs();
        if i == a.len() - 1 && j == b.len() - 1 {
            return c;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.len() {
            best = best.min(brute_dtw(a, b, i + 1, j));
        }
        if j + 1 < b.len() {
            best = best.min(brute_dtw(a, b, i, j + 1));
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            best = best.min(brute_dtw(a, b, i + 1, j + 1));
        }
        c + best
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn points_matrix(xs: &[f64]) -> DistanceMatrix {
        let rows: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| (a - b).abs()).collect()).collect();
        DistanceMatrix::from_rows(ids(xs.len()), &rows).unwrap()
    }

    fn profile(id: &str, v: Vec<f64>) -> RiskProfile {
        RiskProfile {
            patient_id: id.into(),
            t_index: (0..v.len()).collect(),
            values: v,
        }
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw_distance(&[0.0], &[3.0]).unwrap(), 3.0);
        assert!(dtw_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn matrix_examples() {
        let ps = vec![profile("a", vec![1.0, 2.0]), profile("b", vec![1.0, 2.0])];
        let m = pairwise_matrix(&ps).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        let ps3 = vec![
            profile("a", vec![0.0]),
            profile("b", vec![1.0, 5.0]),
            profile("c", vec![3.0, 3.0, 3.0]),
        ];
        let m = pairwise_matrix(&ps3).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert!(pairwise_matrix(&ps3[..1]).is_err());
    }

    #[test]
    fn linkage_examples() {
        let d = complete_linkage(&points_matrix(&[0.0, 5.0])).unwrap();
        assert_eq!(d.merges, vec![Merge { a: 0, b: 1, height: 5.0, size: 2 }]);
        let d = complete_linkage(&points_matrix(&[0.0, 1.0, 10.0])).unwrap();
        assert_eq!(d.heights(), vec![1.0, 10.0]);
        assert_eq!((d.merges[0].a, d.merges[0].b), (0, 1));
        assert_eq!((d.merges[1].a, d.merges[1].b), (2, 3));
    }

    #[test]
    fn linkage_ties_use_smallest_pair() {
        let d = complete_linkage(&points_matrix(&[0.0, 1.0, 2.0, 3.0])).unwrap();
        assert_eq!((d.merges[0].a, d.merges[0].b), (0, 1));
        assert_eq!((d.merges[1].a, d.merges[1].b), (2, 3));
    }

    fn dendro(heights: &[f64]) -> Dendrogram {
        // a chain: leaf k+1 joins the running cluster at heights[k]
        let n = heights.len() + 1;
        let merges = heights
            .iter()
            .enumerate()
            .map(|(k, &h)| Merge {
                a: if k == 0 { 0 } else { k + 1 },
                b: if k == 0 { 1 } else { n + k - 1 },
                height: h,
                size: k + 2,
            })
            .collect();
        Dendrogram { n, merges }
    }

    #[test]
    fn largest_gap_cuts() {
        let c = cut_largest_gap(&dendro(&[1.0, 2.0, 10.0])).unwrap();
        assert_eq!(c.clusters.len(), 2);
        assert!(!c.forced);
        assert_eq!(c.cut_height, 6.0);
        assert_eq!(c.inter_cluster_distance, 10.0);

        let flat = cut_largest_gap(&dendro(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(flat.clusters.len(), 2);
        assert!(!flat.forced);

        let forced = cut_largest_gap(&dendro(&[1.0, 20.0, 21.0])).unwrap();
        assert_eq!(forced.clusters.len(), 2);
        assert!(forced.forced);
        assert_eq!(forced.inter_cluster_distance, 21.0);

        let two = cut_largest_gap(&dendro(&[4.0])).unwrap();
        assert_eq!(two.clusters, vec![vec![0], vec![1]]);
    }

    #[test]
    fn cut_at_height_counts() {
        let d = dendro(&[1.0, 2.0, 10.0]);
        assert_eq!(d.cut_at_height(0.5).len(), 4);
        assert_eq!(d.cut_at_height(2.0).len(), 2);
        assert_eq!(d.cut_at_height(10.0).len(), 1);
    }

    fn rates(v: &[(&str, Option<f64>)]) -> BTreeMap<String, Option<f64>> {
        v.iter().map(|(k, r)| (k.to_string(), *r)).collect()
    }

    #[test]
    fn labeling_rules() {
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let cut = Cut {
            clusters: vec![vec![0, 1], vec![2]],
            cut_height: 1.0,
            inter_cluster_distance: 2.0,
            forced: false,
        };
        let r = rates(&[("a", Some(0.9)), ("b", Some(0.9)), ("c", Some(0.1))]);
        let a = label_vulnerability(&cut, &names, &r).unwrap();
        assert_eq!(a.less_vulnerable, vec!["c".to_string()]);

        // relabeled cluster order gives the same answer
        let swapped = Cut {
            clusters: vec![vec![2], vec![0, 1]],
            ..cut.clone()
        };
        assert_eq!(label_vulnerability(&swapped, &names, &r).unwrap(), a);

        let tie = rates(&[("a", Some(0.5)), ("b", Some(0.5)), ("c", Some(0.5))]);
        let t = label_vulnerability(&cut, &names, &tie).unwrap();
        assert!(t.tied);
        assert_eq!(t.less_vulnerable, vec!["c".to_string()]);

        // undefined rate dropped from the mean only
        let undef = rates(&[("a", None), ("b", Some(0.05)), ("c", Some(0.1))]);
        let u = label_vulnerability(&cut, &names, &undef).unwrap();
        assert_eq!(u.less_vulnerable, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&["1", "2"]), &set(&["1", "2"])), 1.0);
        assert_eq!(jaccard(&set(&["1"]), &set(&["2"])), 0.0);
        assert_eq!(jaccard(&set(&["1", "2", "3"]), &set(&["2", "3", "4"])), 0.5);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn threshold_past_gap_changes_partition() {
        let d = dendro(&[1.0, 2.0, 10.0]);
        let names = ids(4);
        let r = rates(&[("p0", Some(0.2)), ("p1", Some(0.3)), ("p2", Some(0.4)), ("p3", Some(0.9))]);
        let base: Vec<Vec<String>> = d
            .cut_at_height(6.0)
            .iter()
            .map(|c| c.iter().map(|&i| names[i].clone()).collect())
            .collect();
        let below: Vec<Vec<String>> = d
            .cut_at_height(6.0 * 0.15)
            .iter()
            .map(|c| c.iter().map(|&i| names[i].clone()).collect())
            .collect();
        let (bi, _) = least_vulnerable(&base, &r).unwrap();
        let (wi, _) = least_vulnerable(&below, &r).unwrap();
        let a: BTreeSet<String> = base[bi].iter().cloned().collect();
        let b: BTreeSet<String> = below[wi].iter().cloned().collect();
        assert!(jaccard(&a, &b) < 1.0);
    }

    proptest! {
        #[test]
        fn dtw_matches_path_enumeration(
            a in prop::collection::vec(-10.0f64..10.0, 1..=6),
            b in prop::collection::vec(-10.0f64..10.0, 1..=6),
        ) {
            let fast = dtw_distance(&a, &b).unwrap();
            let slow = brute_dtw(&a, &b, 0, 0);
            prop_assert!((fast - slow).abs() <= 1e-9 * slow.max(1.0));
        }

        #[test]
        fn dtw_metric_like(a in prop::collection::vec(-10.0f64..10.0, 1..8), b in prop::collection::vec(-10.0f64..10.0, 1..8)) {
            prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(dtw_distance(&a, &b).unwrap(), dtw_distance(&b, &a).unwrap());
            if a.len() == b.len() {
                let diag: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
                prop_assert!(dtw_distance(&a, &b).unwrap() <= diag + 1e-12);
            }
        }

        #[test]
        fn linkage_heights_monotone(xs in prop::collection::vec(-100.0f64..100.0, 2..15)) {
            let d = complete_linkage(&points_matrix(&xs)).unwrap();
            prop_assert!(d.heights().windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(d.merges.len(), xs.len() - 1);
        }

        #[test]
        fn uniform_scaling_preserves_partition(
            seqs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..6), 3..8),
            c in 0.5f64..1.5,
        ) {
            let ps: Vec<RiskProfile> = seqs.iter().enumerate().map(|(i, s)| profile(&format!("p{i}"), s.clone())).collect();
            let scaled: Vec<RiskProfile> = ps.iter().map(|p| profile(&p.patient_id, p.values.iter().map(|v| v * c).collect())).collect();
            let a = cut_largest_gap(&complete_linkage(&pairwise_matrix(&ps).unwrap()).unwrap()).unwrap();
            let b = cut_largest_gap(&complete_linkage(&pairwise_matrix(&scaled).unwrap()).unwrap()).unwrap();
            prop_assert_eq!(a.clusters, b.clusters);
        }
    }
}
