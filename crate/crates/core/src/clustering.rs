//! Learned groups on the uncertainty axis.
//!
//! Groups are fitted by exact one-dimensional k-means (optimal clusters of
//! sorted values are contiguous, so a dynamic program over the sorted
//! distinct values finds the global minimum). Deployment assigns an input to
//! its nearest centroid, which is an interval lookup on the midpoints.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_gpac, Assigner, Calibration, CalibrationTarget};
use crate::data::ResolvedRecord;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    centroids: Vec<f64>,
    boundaries: Vec<f64>,
}

impl Partition {
    pub fn from_centroids(centroids: Vec<f64>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::input("partition needs at least one centroid"));
        }
        if centroids.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::input("centroids must lie in [0, 1]"));
        }
        if centroids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("centroids must be strictly ascending"));
        }
        let boundaries = centroids.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        Ok(Partition {
            centroids,
            boundaries,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Nearest centroid; a point exactly on a midpoint goes to the lower index.
    pub fn assign(&self, uncertainty: f64) -> usize {
        self.boundaries.partition_point(|&b| b < uncertainty)
    }

    /// `[lo, hi]` covered by group `j` on the unit interval.
    pub fn interval(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 { 0.0 } else { self.boundaries[j - 1] };
        let hi = if j + 1 == self.k() {
            1.0
        } else {
            self.boundaries[j]
        };
        (lo, hi)
    }
}

pub fn assign_group(partition: &Partition, uncertainty: f64) -> usize {
    partition.assign(uncertainty)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub partition: Partition,
    /// Within-cluster sum of squares.
    pub sse: f64,
    pub sizes: Vec<usize>,
}

/// Prefix sums over weighted sorted distinct values, centered for stability.
struct Prefix {
    w: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Prefix {
    fn new(values: &[f64], weights: &[usize]) -> Self {
        let total: f64 = weights.iter().map(|&w| w as f64).sum();
        let shift = values
            .iter()
            .zip(weights)
            .map(|(v, &w)| v * w as f64)
            .sum::<f64>()
            / total;
        let d = values.len();
        let (mut w, mut s1, mut s2) = (vec![0.0; d + 1], vec![0.0; d + 1], vec![0.0; d + 1]);
        for i in 0..d {
            let wi = weights[i] as f64;
            let x = values[i] - shift;
            w[i + 1] = w[i] + wi;
            s1[i + 1] = s1[i] + wi * x;
            s2[i + 1] = s2[i] + wi * x * x;
        }
        Prefix { w, s1, s2 }
    }

    /// SSE of distinct values `i..=j`.
    fn cost(&self, i: usize, j: usize) -> f64 {
        let w = self.w[j + 1] - self.w[i];
        let s = self.s1[j + 1] - self.s1[i];
        ((self.s2[j + 1] - self.s2[i]) - s * s / w).max(0.0)
    }
}

/// Fills `row[j]` for `j in lo..=hi` with the best split, given the optimal
/// split index is monotone in `j` (divide and conquer over the DP layer).
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    prev: &[f64],
    prefix: &Prefix,
    row: &mut [f64],
    arg: &mut [usize],
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo > hi {
        return;
    }
    let mid = (lo + hi) / 2;
    let mut best = f64::INFINITY;
    let mut best_i = opt_lo;
    for i in opt_lo..=opt_hi.min(mid) {
        // last cluster is i..=mid, previous clusters cover 0..i
        let cand = prev[i - 1] + prefix.cost(i, mid);
        if cand < best {
            best = cand;
            best_i = i;
        }
    }
    row[mid] = best;
    arg[mid] = best_i;
    if mid > lo {
        fill_layer(prev, prefix, row, arg, lo, mid - 1, opt_lo, best_i);
    }
    fill_layer(prev, prefix, row, arg, mid + 1, hi, best_i, opt_hi);
}

/// Exact minimum-SSE partition of `values` into `k` clusters.
pub fn fit_kmeans_1d(values: &[f64], k: usize) -> Result<KMeansFit> {
    if values.is_empty() {
        return Err(Error::input("cannot cluster an empty set"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("cannot cluster non-finite values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::new();
    let mut weights: Vec<usize> = Vec::new();
    for v in sorted {
        if distinct.last() == Some(&v) {
            *weights.last_mut().unwrap() += 1;
        } else {
            distinct.push(v);
            weights.push(1);
        }
    }
    let d = distinct.len();
    if k == 0 || k > d {
        return Err(Error::input(format!(
            "k = {k} must be between 1 and the number of distinct values ({d})"
        )));
    }

    let prefix = Prefix::new(&distinct, &weights);
    // layer c holds the best cost of covering 0..=j with c + 1 clusters
    let mut layers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut args: Vec<Vec<usize>> = Vec::with_capacity(k);
    layers.push((0..d).map(|j| prefix.cost(0, j)).collect());
    args.push(vec![0; d]);
    for c in 1..k {
        let mut row = vec![f64::INFINITY; d];
        let mut arg = vec![0; d];
        fill_layer(
            &layers[c - 1],
            &prefix,
            &mut row,
            &mut arg,
            c,
            d - 1,
            c,
            d - 1,
        );
        layers.push(row);
        args.push(arg);
    }

    let mut starts = vec![0usize; k];
    let mut end = d - 1;
    for c in (0..k).rev() {
        starts[c] = args[c][end];
        if c > 0 {
            end = starts[c] - 1;
        }
    }
    let mut centroids = Vec::with_capacity(k);
    let mut sizes = Vec::with_capacity(k);
    for c in 0..k {
        let lo = starts[c];
        let hi = if c + 1 < k { starts[c + 1] } else { d };
        let n: usize = weights[lo..hi].iter().sum();
        // Offsetting by the cluster minimum keeps single-valued clusters exact.
        let base = distinct[lo];
        let shift: f64 = distinct[lo..hi]
            .iter()
            .zip(&weights[lo..hi])
            .map(|(v, &w)| (v - base) * w as f64)
            .sum();
        centroids.push(base + shift / n as f64);
        sizes.push(n);
    }
    let sse = (0..k)
        .map(|c| {
            let hi = if c + 1 < k { starts[c + 1] } else { d };
            prefix.cost(starts[c], hi - 1)
        })
        .sum();
    Ok(KMeansFit {
        partition: Partition::from_centroids(centroids)?,
        sse,
        sizes,
    })
}

pub fn kmeans_1d(values: &[f64], k: usize) -> Result<Partition> {
    fit_kmeans_1d(values, k).map(|f| f.partition)
}

/// Minimum-cost perfect assignment on a square matrix (Hungarian method with
/// potentials). Returns `col_of_row` and the total cost.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> (Vec<usize>, i64) {
    let n = cost.len();
    assert!(
        cost.iter().all(|r| r.len() == n),
        "cost matrix must be square"
    );
    if n == 0 {
        return (Vec::new(), 0);
    }
    const INF: i64 = i64::MAX / 4;
    // 1-based rows/cols; column 0 is a virtual start
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][col_of_row[i]]).sum();
    (col_of_row, total)
}

/// Disagreement-count matrix: `counts[b][a]` is the number of positions with
/// labels `(a, b)`.
fn disagreement_inputs(a: &[usize], b: &[usize], k: usize) -> Result<Vec<Vec<i64>>> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "assignment lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::input("assignments are empty"));
    }
    if let Some(bad) = a.iter().chain(b).find(|&&x| x >= k) {
        return Err(Error::input(format!("label {bad} outside 0..{k}")));
    }
    let mut counts = vec![vec![0i64; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        counts[y][x] += 1;
    }
    Ok(counts)
}

/// Smallest fraction of positions where `a` and a relabeling of `b` disagree.
pub fn partition_gap(a: &[usize], b: &[usize], k: usize) -> Result<f64> {
    let counts = disagreement_inputs(a, b, k)?;
    let cost: Vec<Vec<i64>> = counts
        .iter()
        .map(|row| row.iter().map(|c| -c).collect())
        .collect();
    let (_, total) = min_cost_assignment(&cost);
    let n = a.len() as i64;
    Ok((n + total) as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    /// Fit the partition and the thresholds on disjoint halves.
    Split,
    /// Fit both on the same data, with an additive bound inflation.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub mode: ClusterMode,
    pub split_fraction: f64,
    /// Added to every upper bound in joint mode. The guarantee there is only
    /// up to a partition-dependent gap, so 0 gives no finite-sample promise.
    pub joint_slack: f64,
    pub seed: u64,
}

impl ClusterConfig {
    pub fn new(k: usize, mode: ClusterMode, seed: u64) -> Self {
        ClusterConfig {
            k,
            mode,
            split_fraction: 0.5,
            joint_slack: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::config(format!(
                "split fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        if !(self.joint_slack.is_finite() && self.joint_slack >= 0.0) {
            return Err(Error::config(format!(
                "joint slack {} must be nonnegative",
                self.joint_slack
            )));
        }
        Ok(())
    }
}

/// Splits `records` for split-mode clustering: a seeded shuffle, then the
/// first `split_fraction` of them fit the partition.
pub fn split_for_clustering(
    records: &[ResolvedRecord],
    config: &ClusterConfig,
) -> (Vec<ResolvedRecord>, Vec<ResolvedRecord>) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut substream(config.seed, "cpac-split"));
    let n_cluster = (config.split_fraction * records.len() as f64).floor() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    (pick(&order[..n_cluster]), pick(&order[n_cluster..]))
}

/// Learns `k` groups on the uncertainty axis and calibrates a threshold per group.
pub fn calibrate_cpac(
    records: &[ResolvedRecord],
    cluster: &ClusterConfig,
    target: &CalibrationTarget,
    config: &EstimatorConfig,
) -> Result<Calibration> {
    cluster.validate()?;
    match cluster.mode {
        ClusterMode::Split => {
            let (fit_side, cal_side) = split_for_clustering(records, cluster);
            if cal_side.is_empty() {
                return Err(Error::input("split leaves no records for calibration"));
            }
            let values: Vec<f64> = fit_side.iter().map(|r| r.uncertainty).collect();
            let partition = kmeans_1d(&values, cluster.k)?;
            calibrate_gpac(&cal_side, &Assigner::Partition(partition), target, config)
        }
        ClusterMode::Joint => {
            let values: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
            let partition = kmeans_1d(&values, cluster.k)?;
            let target = CalibrationTarget {
                ucb_slack: target.ucb_slack + cluster.joint_slack,
                ..*target
            };
            calibrate_gpac(records, &Assigner::Partition(partition), &target, config)
        }
    }
}

/// How inputs are grouped before per-group calibration.
#[derive(Debug, Clone, PartialEq)]
pub enum Grouping {
    Marginal,
    /// Known labels. Listed groups without calibration records always think.
    Labels(Vec<String>),
    Learned(ClusterConfig),
}

impl Grouping {
    pub fn labels_from(records: &[ResolvedRecord]) -> Self {
        match Assigner::labels_from(records) {
            Assigner::Labels(labels) => Grouping::Labels(labels),
            _ => Grouping::Labels(Vec::new()),
        }
    }
}

pub fn calibrate(
    records: &[ResolvedRecord],
    grouping: &Grouping,
    target: &CalibrationTarget,
    config: &EstimatorConfig,
) -> Result<Calibration> {
    match grouping {
        Grouping::Marginal => calibrate_gpac(records, &Assigner::Trivial, target, config),
        Grouping::Labels(labels) => {
            if labels.is_empty() {
                return Err(Error::NoResolvableRecords);
            }
            calibrate_gpac(records, &Assigner::Labels(labels.clone()), target, config)
        }
        Grouping::Learned(cluster) => calibrate_cpac(records, cluster, target, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn two_cluster_example() {
        let p = kmeans_1d(&[0.9, 0.1, 0.8, 0.2], 2).unwrap();
        assert_abs_diff_eq!(p.centroids()[0], 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(p.centroids()[1], 0.85, epsilon = 1e-12);
    }

    #[test]
    fn single_and_saturated_clusters() {
        let p = kmeans_1d(&[0.5, 0.5, 0.5], 1).unwrap();
        assert_eq!(p.centroids(), &[0.5]);

        let values = [0.3, 0.1, 0.3, 0.7, 0.1, 0.7, 0.7];
        let fit = fit_kmeans_1d(&values, 3).unwrap();
        assert_eq!(fit.partition.centroids(), &[0.1, 0.3, 0.7]);
        assert_eq!(fit.sizes, vec![2, 2, 3]);
        assert_abs_diff_eq!(fit.sse, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        assert!(kmeans_1d(&[0.2, 0.2, 0.4], 3).is_err());
        assert!(kmeans_1d(&[], 1).is_err());
        assert!(kmeans_1d(&[0.2], 0).is_err());
    }

    #[test]
    fn assignment_examples() {
        let p = Partition::from_centroids(vec![0.15, 0.85]).unwrap();
        assert_eq!(p.boundaries(), &[0.5]);
        assert_eq!(assign_group(&p, 0.2), 0);
        assert_eq!(assign_group(&p, 0.5), 0);
        assert_eq!(assign_group(&p, 0.50001), 1);
        let single = Partition::from_centroids(vec![0.3]).unwrap();
        for u in [0.0, 0.3, 1.0] {
            assert_eq!(assign_group(&single, u), 0);
        }
        assert_eq!(p.interval(0), (0.0, 0.5));
        assert_eq!(p.interval(1), (0.5, 1.0));
    }

    #[test]
    fn partition_rejects_bad_centroids() {
        assert!(Partition::from_centroids(vec![]).is_err());
        assert!(Partition::from_centroids(vec![0.5, 0.5]).is_err());
        assert!(Partition::from_centroids(vec![0.6, 0.2]).is_err());
        assert!(Partition::from_centroids(vec![1.5]).is_err());
    }

    #[test]
    fn gap_examples() {
        assert_eq!(partition_gap(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 0.0);
        assert_eq!(partition_gap(&[0, 0, 1, 1], &[1, 1, 0, 0], 2).unwrap(), 0.0);
        assert_eq!(
            partition_gap(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap(),
            0.25
        );
        assert!(partition_gap(&[0, 1], &[0], 2).is_err());
        assert!(partition_gap(&[0, 2], &[0, 1], 2).is_err());
    }

    #[test]
    fn hungarian_small_matrix() {
        let cost = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let (assign, total) = min_cost_assignment(&cost);
        assert_eq!(total, 5);
        assert_eq!(assign, vec![1, 0, 2]);
    }

    fn naive_dp_sse(values: &[f64], k: usize) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let sse = |i: usize, j: usize| {
            let s = &v[i..j];
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let mut dp = vec![vec![f64::INFINITY; n + 1]; k + 1];
        dp[0][0] = 0.0;
        for c in 1..=k {
            for j in 1..=n {
                for i in (c - 1)..j {
                    let cand = dp[c - 1][i] + sse(i, j);
                    if cand < dp[c][j] {
                        dp[c][j] = cand;
                    }
                }
            }
        }
        dp[k][n]
    }

    proptest! {
        #[test]
        fn dc_layer_matches_quadratic_dp(
            values in prop::collection::vec((0u16..=400).prop_map(|x| x as f64 / 400.0), 1..60),
            k in 1usize..6,
        ) {
            let mut d = values.clone();
            d.sort_by(f64::total_cmp);
            d.dedup();
            prop_assume!(k <= d.len());
            let fit = fit_kmeans_1d(&values, k).unwrap();
            let oracle = naive_dp_sse(&values, k);
            prop_assert!((fit.sse - oracle).abs() <= 1e-9);
            prop_assert_eq!(fit.sizes.iter().sum::<usize>(), values.len());
        }

        #[test]
        fn boundary_lookup_is_nearest_centroid(
            raw in prop::collection::btree_set(0u16..=1000, 1..8),
            u in 0.0f64..=1.0,
        ) {
            let centroids: Vec<f64> = raw.into_iter().map(|x| x as f64 / 1000.0).collect();
            let p = Partition::from_centroids(centroids.clone()).unwrap();
            let dists: Vec<f64> = centroids.iter().map(|c| (u - c).abs()).collect();
            let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let nearest = dists.iter().position(|&d| d == best).unwrap();
            let runner_up = dists.iter().enumerate().filter(|(i, _)| *i != nearest)
                .map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
            prop_assume!(runner_up - best > 1e-12);
            prop_assert_eq!(p.assign(u), nearest);
        }
    }
}
