//! Step 1: partition the data. k-means (k-means++ seeding) and DBSCAN ship;
//! anything producing a [`ClusterAssignment`] plugs into the rest of the
//! pipeline.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::DataMatrix;
use crate::dissim::DissimilarityMatrix;
use crate::error::{Error, Result};
use crate::par;

/// Partition of point indices into `kappa` clusters; `None` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<Option<usize>>,
    kappa: usize,
}

impl ClusterAssignment {
    /// Every id in `0..kappa` must occur, where `kappa` is one past the
    /// largest id. An all-noise assignment has `kappa == 0`.
    pub fn from_labels(labels: Vec<Option<usize>>) -> Result<Self> {
        let kappa = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; kappa];
        for &c in labels.iter().flatten() {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("cluster id {missing} is empty")));
        }
        Ok(Self { labels, kappa })
    }

    /// Convenience for noise-free assignments.
    pub fn from_ids(ids: &[usize]) -> Result<Self> {
        Self::from_labels(ids.iter().map(|&c| Some(c)).collect())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn has_noise(&self) -> bool {
        self.labels.iter().any(Option::is_none)
    }

    /// Indices not marked as noise, ascending.
    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// Members of each cluster, ascending within each cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.kappa];
        for (i, c) in self.labels.iter().enumerate() {
            if let Some(c) = c {
                out[*c].push(i);
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.kappa];
        for c in self.labels.iter().flatten() {
            out[*c] += 1;
        }
        out
    }

    /// Two-column CSV `index,cluster`, noise written as -1.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("index,cluster\n");
        for (i, c) in self.labels.iter().enumerate() {
            let c = c.map_or(-1, |c| c as i64);
            writeln!(out, "{i},{c}").unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let err = |row: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        };
        let mut pairs = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',').map(str::trim);
            let (Some(i), Some(c), None) = (cells.next(), cells.next(), cells.next()) else {
                return Err(err(line_no + 1, "expected two fields".into()));
            };
            let i: usize = i.parse().map_err(|_| err(line_no + 1, format!("bad index '{i}'")))?;
            let c: i64 = c.parse().map_err(|_| err(line_no + 1, format!("bad cluster '{c}'")))?;
            pairs.push((i, c));
        }
        pairs.sort_unstable();
        if pairs.iter().enumerate().any(|(k, &(i, _))| k != i) {
            return Err(err(1, "indices must cover 0..n exactly once".into()));
        }
        let labels = pairs
            .into_iter()
            .map(|(_, c)| if c < 0 { None } else { Some(c as usize) })
            .collect();
        Self::from_labels(labels)
    }
}

// Renumber so clusters are ordered by their smallest member.
fn canonicalize(raw: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|c| {
            c.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d: f64 = point
            .iter()
            .zip(center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(data: &DataMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.n();
    let mut centers = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| nearest_center(data.row(i), &centers).1)
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining points coincide with a center.
            rng.random_range(0..n)
        };
        centers.push(data.row(pick).to_vec());
        for (i, slot) in d2.iter_mut().enumerate() {
            let d: f64 = data.sq_dist_to(i, &centers[centers.len() - 1]);
            if d < *slot {
                *slot = d;
            }
        }
    }
    centers
}

impl DataMatrix {
    pub(crate) fn sq_dist_to(&self, i: usize, point: &[f64]) -> f64 {
        self.row(i)
            .iter()
            .zip(point)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Outcome of a k-means run, with the within-cluster sum of squares
/// recorded after every Lloyd iteration.
#[derive(Debug, Clone)]
pub struct KmeansRun {
    pub assignment: ClusterAssignment,
    pub centers: Vec<Vec<f64>>,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

pub const KMEANS_MAX_ITER: usize = 300;

/// Lloyd's algorithm from k-means++ seeds.
pub fn kmeans(data: &DataMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    Ok(kmeans_run(data, k, seed)?.assignment)
}

pub fn kmeans_run(data: &DataMatrix, k: usize, seed: u64) -> Result<KmeansRun> {
    let n = data.n();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k must lie in [1, {n}], got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(data, k, &mut rng);
    let d = data.dim();

    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        let nearest = par::map_indices(n, |i| nearest_center(data.row(i), &centers));
        let changed = nearest.iter().zip(&assign).any(|(a, &b)| a.0 != b);
        let mut new_assign: Vec<usize> = nearest.iter().map(|a| a.0).collect();
        let mut cost: Vec<f64> = nearest.iter().map(|a| a.1).collect();

        // Empty clusters take the point farthest from its own center, drawn
        // from clusters that can spare one.
        let mut sizes = vec![0usize; k];
        for &c in &new_assign {
            sizes[c] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[new_assign[i]] > 1)
                .max_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a donor cluster");
            sizes[new_assign[far]] -= 1;
            new_assign[far] = c;
            sizes[c] = 1;
            cost[far] = 0.0;
        }

        for center in centers.iter_mut() {
            center.fill(0.0);
        }
        for (i, &c) in new_assign.iter().enumerate() {
            for (x, v) in centers[c].iter_mut().zip(data.row(i)) {
                *x += v;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let inv = 1.0 / sizes[c] as f64;
            center.iter_mut().for_each(|x| *x *= inv);
        }
        debug_assert!(centers.iter().all(|c| c.len() == d));

        assign = new_assign;
        history.push(wcss(data, &assign, &centers));
        if !changed {
            break;
        }
    }
    let labels = canonicalize(&assign.iter().map(|&c| Some(c)).collect::<Vec<_>>());
    // Carry the center order along with the relabelling.
    let mut ordered = vec![Vec::new(); k];
    for (raw, canon) in assign.iter().zip(&labels) {
        let c = canon.unwrap();
        if ordered[c].is_empty() {
            ordered[c] = centers[*raw].clone();
        }
    }
    Ok(KmeansRun {
        assignment: ClusterAssignment::from_labels(labels)?,
        centers: ordered,
        objective_history: history,
        iterations,
    })
}

fn wcss(data: &DataMatrix, assign: &[usize], centers: &[Vec<f64>]) -> f64 {
    par::sum_indices(data.n(), |i| data.sq_dist_to(i, &centers[assign[i]]))
}

/// Density-based clustering on Euclidean distances.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Clusters are the connected components of core points; a
/// non-core point within `eps` of some core point joins the cluster of its
/// nearest such core point, which makes the result independent of input
/// order. Everything else is noise.
pub fn dbscan(data: &DataMatrix, eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::Parameter("min_pts must be >= 1".into()));
    }
    let n = data.n();
    let eps2 = eps * eps;
    let neighborhoods: Vec<Vec<usize>> = par::map_indices(n, |i| {
        (0..n).filter(|&j| data.sq_dist(i, j) <= eps2).collect()
    });
    let core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut raw: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if !core[s] || raw[s].is_some() {
            continue;
        }
        raw[s] = Some(next);
        stack.push(s);
        while let Some(u) = stack.pop() {
            for &v in &neighborhoods[u] {
                if core[v] && raw[v].is_none() {
                    raw[v] = Some(next);
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest_core = neighborhoods[i]
            .iter()
            .copied()
            .filter(|&j| core[j])
            .min_by(|&a, &b| data.sq_dist(i, a).total_cmp(&data.sq_dist(i, b)).then(a.cmp(&b)));
        raw[i] = nearest_core.and_then(|j| raw[j]);
    }
    ClusterAssignment::from_labels(canonicalize(&raw))
}

/// Drop noise points: returns the surviving rows, the matching principal
/// submatrix of `delta`, and the assignment restricted to survivors.
pub fn restrict(
    data: &DataMatrix,
    delta: &DissimilarityMatrix,
    assignment: &ClusterAssignment,
) -> Result<(DataMatrix, DissimilarityMatrix, ClusterAssignment)> {
    if data.n() != delta.n() || data.n() != assignment.n() {
        return Err(Error::InvalidInput(format!(
            "size mismatch: data {}, dissimilarities {}, assignment {}",
            data.n(),
            delta.n(),
            assignment.n()
        )));
    }
    let kept = assignment.kept_indices();
    if kept.is_empty() {
        return Err(Error::EmptyResult("every point is marked as noise".into()));
    }
    let labels = kept.iter().map(|&i| assignment.get(i)).collect();
    Ok((
        data.select(&kept),
        delta.submatrix(&kept),
        ClusterAssignment::from_labels(labels)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissim::euclidean_pairwise;

    fn pts(rows: &[[f64; 2]]) -> DataMatrix {
        DataMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn kmeans_two_far_points() {
        let a = kmeans(&pts(&[[0.0, 0.0], [100.0, 0.0]]), 2, 3).unwrap();
        assert_ne!(a.get(0), a.get(1));
    }

    #[test]
    fn kmeans_single_cluster() {
        let data = crate::data::gen_gmm(3, 10, 0).unwrap();
        let a = kmeans(&data, 1, 0).unwrap();
        assert_eq!(a.kappa(), 1);
        assert!(a.labels().iter().all(|c| *c == Some(0)));
    }

    #[test]
    fn kmeans_rejects_k_above_n() {
        assert!(matches!(
            kmeans(&pts(&[[0.0, 0.0]]), 2, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn kmeans_fills_every_cluster_with_duplicates() {
        // Three distinct locations but k = 4 forces a reseed.
        let data = pts(&[[0.0, 0.0], [0.0, 0.0], [5.0, 0.0], [5.0, 0.0], [9.0, 9.0]]);
        let a = kmeans(&data, 4, 1).unwrap();
        assert_eq!(a.kappa(), 4);
        assert!(a.sizes().iter().all(|&s| s >= 1));
    }

    #[test]
    fn kmeans_objective_is_non_increasing() {
        for seed in 0..5 {
            let data = crate::data::gen_gmm(5, 40, seed).unwrap();
            let run = kmeans_run(&data, 5, seed).unwrap();
            for w in run.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", run.objective_history);
            }
        }
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let data = crate::data::gen_gmm(4, 30, 9).unwrap();
        assert_eq!(kmeans(&data, 4, 5).unwrap(), kmeans(&data, 4, 5).unwrap());
    }

    #[test]
    fn dbscan_separated_blobs() {
        let mut rows = Vec::new();
        for k in 0..10 {
            rows.push([0.05 * k as f64, 0.0]);
            rows.push([10.0 + 0.05 * k as f64, 0.0]);
        }
        let a = dbscan(&pts(&rows), 1.0, 3).unwrap();
        assert_eq!(a.kappa(), 2);
        assert!(!a.has_noise());
        assert_eq!(a.get(0), Some(0));
        assert_eq!(a.get(1), Some(1));
    }

    #[test]
    fn dbscan_isolated_point_is_noise() {
        let data = pts(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [20.0, 20.0]]);
        let a = dbscan(&data, 0.5, 3).unwrap();
        assert_eq!(a.get(3), None);
        assert_eq!(a.kept_indices(), vec![0, 1, 2]);
    }

    #[test]
    fn restrict_identity_without_noise() {
        let data = pts(&[[0.0, 0.0], [1.0, 0.0], [4.0, 0.0]]);
        let delta = euclidean_pairwise(&data);
        let a = ClusterAssignment::from_ids(&[0, 0, 1]).unwrap();
        let (d2, del2, a2) = restrict(&data, &delta, &a).unwrap();
        assert_eq!(d2, data);
        assert_eq!(del2, delta);
        assert_eq!(a2, a);
    }

    #[test]
    fn restrict_drops_noise_rows() {
        let data = pts(&[[0.0, 0.0], [1.0, 0.0], [2.0, 5.0], [4.0, 0.0], [7.0, 1.0]]);
        let delta = euclidean_pairwise(&data);
        let a = ClusterAssignment::from_labels(vec![Some(0), Some(0), None, Some(1), Some(1)]).unwrap();
        let (d2, del2, a2) = restrict(&data, &delta, &a).unwrap();
        assert_eq!(d2.n(), 4);
        assert_eq!(del2.n(), 4);
        let kept = [0, 1, 3, 4];
        for (p, &i) in kept.iter().enumerate() {
            for (q, &j) in kept.iter().enumerate() {
                assert_eq!(del2.get(p, q), delta.get(i, j));
            }
        }
        assert_eq!(a2.labels(), &[Some(0), Some(0), Some(1), Some(1)]);
    }

    #[test]
    fn restrict_all_noise_fails() {
        let data = pts(&[[0.0, 0.0], [1.0, 0.0]]);
        let delta = euclidean_pairwise(&data);
        let a = ClusterAssignment::from_labels(vec![None, None]).unwrap();
        assert!(matches!(restrict(&data, &delta, &a), Err(Error::EmptyResult(_))));
    }

    #[test]
    fn assignment_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let a = ClusterAssignment::from_labels(vec![Some(1), None, Some(0), Some(1)]).unwrap();
        a.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("1,-1\n"));
        assert_eq!(ClusterAssignment::read_csv(&p).unwrap(), a);
    }
}
