//! Embedding quality: kNN recall, Spearman correlation of distances,
//! normalized stress, class preservation, and the Rand index.
//!
//! Cluster-wise scopes group points by ground-truth class labels, not by
//! the clusters found in step 1.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::align::mean_cross_distances;
use crate::cluster::ClusterAssignment;
use crate::dissim::{k_smallest, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::{dist2, par, Point2};

/// Which point pairs a metric looks at.
#[derive(Debug, Clone, Copy)]
pub enum Scope<'a> {
    /// Every unordered pair.
    Global,
    /// Pairs within each class, evaluated per class and averaged.
    Clusterwise(&'a [i64]),
}

fn check(delta: &DissimilarityMatrix, coords: &[Point2]) -> Result<()> {
    if delta.n() != coords.len() {
        return Err(Error::InvalidInput(format!(
            "{} dissimilarity rows but {} embedded points",
            delta.n(),
            coords.len()
        )));
    }
    Ok(())
}

/// Mean kNN recall for each `k` in `ks`. Neighbors are ranked by `delta` in
/// the original space and by Euclidean distance in the embedding, ties by
/// lower index.
pub fn knn_recall_multi(delta: &DissimilarityMatrix, coords: &[Point2], ks: &[usize]) -> Result<Vec<f64>> {
    check(delta, coords)?;
    let n = coords.len();
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k + 1 > n) {
        return Err(Error::Parameter(format!("k must lie in [1, {}], got {bad}", n.saturating_sub(1))));
    }
    let kmax = ks.iter().copied().max().unwrap_or(0);
    if kmax == 0 {
        return Ok(Vec::new());
    }
    // Lists are sorted by (distance, index), so every smaller k is a prefix.
    let per_point = par::map_indices(n, |i| {
        let row = delta.row(i);
        let orig = k_smallest(|j| row[j], n, i, kmax);
        let emb = k_smallest(|j| dist2(&coords[i], &coords[j]), n, i, kmax);
        let mut in_orig = vec![usize::MAX; n];
        for (rank, (j, _)) in orig.iter().enumerate() {
            in_orig[*j] = rank;
        }
        ks.iter()
            .map(|&k| emb[..k].iter().filter(|(j, _)| in_orig[*j] < k).count())
            .collect::<Vec<_>>()
    });
    Ok(ks
        .iter()
        .enumerate()
        .map(|(q, &k)| per_point.iter().map(|hits| hits[q] as f64).sum::<f64>() / (n * k) as f64)
        .collect())
}

pub fn knn_recall(delta: &DissimilarityMatrix, coords: &[Point2], k: usize) -> Result<f64> {
    Ok(knn_recall_multi(delta, coords, &[k])?[0])
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("spearman inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::Undefined("spearman needs at least two pairs".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::Undefined("spearman of a constant sequence".into()))
}

fn groups(labels: &[i64]) -> Vec<Vec<usize>> {
    let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    by_label.into_values().collect()
}

fn pair_values(delta: &DissimilarityMatrix, coords: &[Point2], idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let m = idx.len();
    let mut orig = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    let mut emb = Vec::with_capacity(orig.capacity());
    for a in 0..m {
        for b in (a + 1)..m {
            orig.push(delta.get(idx[a], idx[b]));
            emb.push(dist2(&coords[idx[a]], &coords[idx[b]]));
        }
    }
    (orig, emb)
}

// Evaluate `metric` on every class for which it is defined and average.
fn per_class<F>(labels: &[i64], n: usize, what: &str, metric: F) -> Result<f64>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if labels.len() != n {
        return Err(Error::InvalidInput(format!("{} labels for {n} points", labels.len())));
    }
    let vals: Vec<f64> = groups(labels).iter().filter_map(|g| metric(g).ok()).collect();
    if vals.is_empty() {
        return Err(Error::Undefined(format!("{what} is undefined in every class")));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Spearman correlation between original dissimilarities and embedded
/// distances over the pairs in `scope`.
pub fn spearman(delta: &DissimilarityMatrix, coords: &[Point2], scope: Scope) -> Result<f64> {
    check(delta, coords)?;
    let all: Vec<usize> = (0..coords.len()).collect();
    let one = |idx: &[usize]| {
        let (o, e) = pair_values(delta, coords, idx);
        spearman_correlation(&o, &e)
    };
    match scope {
        Scope::Global => one(&all),
        Scope::Clusterwise(labels) => per_class(labels, coords.len(), "spearman", one),
    }
}

/// `sum (delta_ij - d_ij)^2 / sum delta_ij^2` over the pairs in `scope`.
pub fn normalized_stress(delta: &DissimilarityMatrix, coords: &[Point2], scope: Scope) -> Result<f64> {
    check(delta, coords)?;
    let one = |idx: &[usize]| {
        let (o, e) = pair_values(delta, coords, idx);
        if o.is_empty() {
            return Err(Error::Undefined("normalized stress needs at least one pair".into()));
        }
        let den: f64 = o.iter().map(|d| d * d).sum();
        if den == 0.0 {
            return Err(Error::Undefined("all dissimilarities in scope are zero".into()));
        }
        let num: f64 = o.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(num / den)
    };
    match scope {
        Scope::Global => one(&(0..coords.len()).collect::<Vec<_>>()),
        Scope::Clusterwise(labels) => per_class(labels, coords.len(), "normalized stress", one),
    }
}

/// Spearman correlation between mean cross-class dissimilarities in the
/// original space and the same means over embedded distances, across
/// unordered class pairs. Needs at least three classes.
pub fn class_preservation(delta: &DissimilarityMatrix, coords: &[Point2], labels: &[i64]) -> Result<f64> {
    check(delta, coords)?;
    if labels.len() != coords.len() {
        return Err(Error::InvalidInput(format!("{} labels for {} points", labels.len(), coords.len())));
    }
    let members = groups(labels);
    if members.len() < 3 {
        return Err(Error::Undefined(format!(
            "class preservation needs >= 3 classes, got {}",
            members.len()
        )));
    }
    let orig = mean_cross_distances(&members, |l, m| delta.get(l, m));
    let emb = mean_cross_distances(&members, |l, m| dist2(&coords[l], &coords[m]));
    let k = members.len();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..k {
        for j in (i + 1)..k {
            a.push(orig[i][j]);
            b.push(emb[i][j]);
        }
    }
    spearman_correlation(&a, &b)
}

fn choose2(x: u64) -> u64 {
    x * x.saturating_sub(1) / 2
}

/// Fraction of point pairs on which the clustering and the labels agree
/// (both together or both apart). Noise points are left out.
pub fn rand_index(assignment: &ClusterAssignment, labels: &[i64]) -> Result<f64> {
    if assignment.n() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "assignment covers {} points, labels {}",
            assignment.n(),
            labels.len()
        )));
    }
    let mut table: HashMap<(usize, i64), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<i64, u64> = HashMap::new();
    let mut n = 0u64;
    for (c, &l) in assignment.labels().iter().zip(labels) {
        if let Some(c) = c {
            *table.entry((*c, l)).or_default() += 1;
            *rows.entry(*c).or_default() += 1;
            *cols.entry(l).or_default() += 1;
            n += 1;
        }
    }
    if n < 2 {
        return Err(Error::Undefined("rand index needs at least two points".into()));
    }
    let both: u64 = table.values().map(|&x| choose2(x)).sum();
    let same_a: u64 = rows.values().map(|&x| choose2(x)).sum();
    let same_b: u64 = cols.values().map(|&x| choose2(x)).sum();
    let total = choose2(n);
    let agree = total + 2 * both - same_a - same_b;
    Ok(agree as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub knn_recall: BTreeMap<usize, f64>,
    pub spearman_global: f64,
    pub spearman_clusterwise_mean: Option<f64>,
    pub stress_global: f64,
    pub stress_clusterwise_mean: Option<f64>,
    pub class_preservation: Option<f64>,
    pub rand_index: Option<f64>,
}

/// Every metric at once. Label-dependent entries are `None` without labels
/// (or when undefined for the given labels); `rand_index` needs both the
/// clustering and the labels.
pub fn evaluate(
    delta: &DissimilarityMatrix,
    coords: &[Point2],
    labels: Option<&[i64]>,
    ks: &[usize],
    assignment: Option<&ClusterAssignment>,
) -> Result<MetricsReport> {
    let recalls = knn_recall_multi(delta, coords, ks)?;
    Ok(MetricsReport {
        knn_recall: ks.iter().copied().zip(recalls).collect(),
        spearman_global: spearman(delta, coords, Scope::Global)?,
        spearman_clusterwise_mean: labels.and_then(|l| spearman(delta, coords, Scope::Clusterwise(l)).ok()),
        stress_global: normalized_stress(delta, coords, Scope::Global)?,
        stress_clusterwise_mean: labels
            .and_then(|l| normalized_stress(delta, coords, Scope::Clusterwise(l)).ok()),
        class_preservation: labels.and_then(|l| class_preservation(delta, coords, l).ok()),
        rand_index: match (assignment, labels) {
            (Some(a), Some(l)) => rand_index(a, l).ok(),
            _ => None,
        },
    })
}
