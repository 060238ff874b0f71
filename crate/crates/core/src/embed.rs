//! Step 2: embed every cluster into the plane on its own.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::DataMatrix;
use crate::dissim::{k_smallest, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::linalg::{classical_scaling, top_two_eigen};
use crate::{dist2, par, Point2};

/// Project centered rows onto the top two principal directions.
///
/// Directions come from the covariance eigenvectors in descending
/// eigenvalue order, each signed so its largest-magnitude loading is
/// positive. A single point, or a cloud of identical points, maps to the
/// origin.
pub fn pca_embed(points: &DataMatrix) -> Vec<Point2> {
    let (m, d) = (points.n(), points.dim());
    let mut mean = vec![0.0; d];
    for row in points.rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|x| *x /= m as f64);
    let centered = DMatrix::from_fn(m, d, |i, j| points.row(i)[j] - mean[j]);
    let cov = centered.transpose() * &centered;
    let [(_, v1), (_, v2)] = top_two_eigen(cov);
    (0..m)
        .map(|i| {
            let row = centered.row(i);
            let p1: f64 = row.iter().zip(&v1).map(|(a, b)| a * b).sum();
            let p2: f64 = row.iter().zip(&v2).map(|(a, b)| a * b).sum();
            [p1, p2]
        })
        .collect()
}

/// Classical scaling of a cluster's dissimilarities (Isomap when they are
/// geodesic). Negative eigenvalues are clamped to zero.
pub fn classical_scaling_embed(cluster_delta: &DissimilarityMatrix) -> Vec<Point2> {
    classical_scaling(cluster_delta.n(), |i, j| cluster_delta.get(i, j))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoeConfig {
    pub k: usize,
    pub nu: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LoeConfig {
    fn default() -> Self {
        Self {
            k: 10,
            nu: 1e-6,
            learning_rate: 1e-2,
            epochs: 500,
            seed: 0,
        }
    }
}

impl LoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Parameter("loe k must be >= 1".into()));
        }
        if !(self.nu > 0.0) {
            return Err(Error::Parameter(format!("loe nu must be > 0, got {}", self.nu)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("loe learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("loe epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where local ordinal embedding starts from.
#[derive(Debug, Clone, PartialEq)]
pub enum LoeInit {
    /// PCA of the points plus seeded jitter of `1e-4` times the data scale.
    Pca,
    /// Start exactly here.
    Given(Vec<Point2>),
}

#[derive(Debug, Clone)]
pub struct LoeRun {
    pub coords: Vec<Point2>,
    /// Loss at the start and after every epoch.
    pub loss_history: Vec<f64>,
}

/// The `k` nearest neighbors of each point under `delta`, ties by index.
pub fn neighbor_sets(delta: &DissimilarityMatrix, k: usize) -> Vec<Vec<usize>> {
    let m = delta.n();
    (0..m)
        .map(|i| {
            let row = delta.row(i);
            k_smallest(|j| row[j], m, i, k).into_iter().map(|e| e.0).collect()
        })
        .collect()
}

/// Hinge loss of local ordinal embedding,
/// `sum_i sum_{j in N_i} sum_{l not in N_i, l != i} max(0, |y_i - y_j| + nu - |y_i - y_l|)^2`,
/// and its gradient.
pub fn loe_loss_and_gradient(coords: &[Point2], neighbors: &[Vec<usize>], nu: f64) -> (f64, Vec<Point2>) {
    let m = coords.len();
    // Per point i: loss share and a coefficient per partner a, such that the
    // gradient is sum_i sum_a coef[i][a] * d/dy |y_i - y_a|.
    let rows = par::map_indices(m, |i| {
        let yi = coords[i];
        let dist: Vec<f64> = coords.iter().map(|y| dist2(&yi, y)).collect();
        let mut in_set = vec![false; m];
        in_set[i] = true;
        for &j in &neighbors[i] {
            in_set[j] = true;
        }
        let mut coef = vec![0.0; m];
        let mut loss = 0.0;
        for &j in &neighbors[i] {
            let base = dist[j] + nu;
            for l in 0..m {
                if in_set[l] {
                    continue;
                }
                let h = base - dist[l];
                if h > 0.0 {
                    loss += h * h;
                    coef[j] += 2.0 * h;
                    coef[l] -= 2.0 * h;
                }
            }
        }
        (loss, coef, dist)
    });
    let mut grad = vec![[0.0; 2]; m];
    let mut loss = 0.0;
    for (i, (li, coef, dist)) in rows.iter().enumerate() {
        loss += li;
        for (a, &c) in coef.iter().enumerate() {
            if c == 0.0 || dist[a] == 0.0 {
                continue;
            }
            let ux = (coords[i][0] - coords[a][0]) / dist[a];
            let uy = (coords[i][1] - coords[a][1]) / dist[a];
            grad[i][0] += c * ux;
            grad[i][1] += c * uy;
            grad[a][0] -= c * ux;
            grad[a][1] -= c * uy;
        }
    }
    (loss, grad)
}

pub fn loe_loss(coords: &[Point2], neighbors: &[Vec<usize>], nu: f64) -> f64 {
    loe_loss_and_gradient(coords, neighbors, nu).0
}

/// Local ordinal embedding of a cluster's points with Euclidean
/// neighborhoods and PCA initialization.
pub fn loe_embed(cluster_points: &DataMatrix, config: &LoeConfig) -> Result<Vec<Point2>> {
    let delta = crate::dissim::euclidean_pairwise(cluster_points);
    Ok(loe_run(&delta, Some(cluster_points), LoeInit::Pca, config)?.coords)
}

/// Full-batch gradient descent on the LOE hinge loss.
///
/// Neighborhoods come from `delta`. Coordinates are rescaled to unit RMS
/// radius for the descent (with `nu` rescaled alongside, so the objective is
/// unchanged up to a constant factor) and mapped back at the end. A step
/// that increases the loss is rejected and the learning rate halved.
pub fn loe_run(
    delta: &DissimilarityMatrix,
    points: Option<&DataMatrix>,
    init: LoeInit,
    config: &LoeConfig,
) -> Result<LoeRun> {
    config.validate()?;
    let m = delta.n();
    if m < config.k + 2 {
        return Err(Error::Parameter(format!(
            "loe needs at least k + 2 = {} points, cluster has {m}",
            config.k + 2
        )));
    }
    let neighbors = neighbor_sets(delta, config.k);
    let (start, jitter) = match init {
        LoeInit::Given(c) => {
            if c.len() != m {
                return Err(Error::InvalidInput(format!(
                    "initial coordinates have {} rows, expected {m}",
                    c.len()
                )));
            }
            (c, false)
        }
        LoeInit::Pca => match points {
            Some(p) => (pca_embed(p), true),
            None => (classical_scaling_embed(delta), true),
        },
    };

    let centroid = centroid(&start);
    let rms = (start.iter().map(|y| dist2(y, &centroid).powi(2)).sum::<f64>() / m as f64).sqrt();
    let scale = if rms > 0.0 { rms } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut u: Vec<Point2> = start
        .iter()
        .map(|y| {
            let mut p = [(y[0] - centroid[0]) / scale, (y[1] - centroid[1]) / scale];
            if jitter {
                p[0] += 1e-4 * rng.sample::<f64, _>(StandardNormal);
                p[1] += 1e-4 * rng.sample::<f64, _>(StandardNormal);
            }
            p
        })
        .collect();
    let nu = config.nu / scale;
    let to_output = |u: &[Point2]| -> Vec<Point2> {
        u.iter()
            .map(|p| [p[0] * scale + centroid[0], p[1] * scale + centroid[1]])
            .collect()
    };
    let s2 = scale * scale;

    let (mut loss, mut grad) = loe_loss_and_gradient(&u, &neighbors, nu);
    let mut history = vec![loss * s2];
    if loss == 0.0 && !jitter {
        return Ok(LoeRun { coords: start, loss_history: history });
    }
    let mut lr = config.learning_rate;
    for epoch in 1..=config.epochs {
        if loss == 0.0 {
            history.push(0.0);
            continue;
        }
        loop {
            let trial: Vec<Point2> = u
                .iter()
                .zip(&grad)
                .map(|(p, g)| [p[0] - lr * g[0], p[1] - lr * g[1]])
                .collect();
            let (trial_loss, trial_grad) = loe_loss_and_gradient(&trial, &neighbors, nu);
            if !trial_loss.is_finite() {
                return Err(Error::Divergence { epoch, loss: trial_loss * s2 });
            }
            if trial_loss <= loss {
                u = trial;
                loss = trial_loss;
                grad = trial_grad;
                lr *= 1.1;
                break;
            }
            lr *= 0.5;
            if lr < 1e-300 {
                break;
            }
        }
        history.push(loss * s2);
    }
    Ok(LoeRun {
        coords: to_output(&u),
        loss_history: history,
    })
}

fn centroid(coords: &[Point2]) -> Point2 {
    let m = coords.len() as f64;
    let s = coords.iter().fold([0.0, 0.0], |a, y| [a[0] + y[0], a[1] + y[1]]);
    [s[0] / m, s[1] / m]
}

/// Scale minimizing `sum_{i<j} (gamma |y_i - y_j| - delta_ij)^2`:
/// `gamma = sum delta_ij |y_i - y_j| / sum |y_i - y_j|^2`.
pub fn scale_sync(cluster_delta: &DissimilarityMatrix, coords: &[Point2]) -> Result<f64> {
    let m = coords.len();
    if m != cluster_delta.n() {
        return Err(Error::InvalidInput(format!(
            "{m} coordinates for a {}-point cluster",
            cluster_delta.n()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..m {
        for j in (i + 1)..m {
            let d = dist2(&coords[i], &coords[j]);
            num += cluster_delta.get(i, j) * d;
            den += d * d;
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateScale);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmbedMethod {
    Pca,
    ClassicalScaling,
    Loe(LoeConfig),
}

impl EmbedMethod {
    pub fn name(&self) -> &'static str {
        match self {
            EmbedMethod::Pca => "pca",
            EmbedMethod::ClassicalScaling => "classical_scaling",
            EmbedMethod::Loe(_) => "loe",
        }
    }
}

/// Per-cluster planar embeddings. `members[c]` lists the point indices of
/// cluster `c` ascending; `coords[c][r]` embeds point `members[c][r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEmbedding {
    pub coords: Vec<Vec<Point2>>,
    pub members: Vec<Vec<usize>>,
    pub method: EmbedMethod,
    /// Scale factors applied to LOE outputs; `None` for metric methods.
    pub gammas: Option<Vec<f64>>,
}

impl ClusterEmbedding {
    pub fn kappa(&self) -> usize {
        self.coords.len()
    }

    pub fn n(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }

    /// Build from coordinates in cluster-member order; checks shapes.
    pub fn from_parts(
        assignment: &ClusterAssignment,
        coords: Vec<Vec<Point2>>,
        method: EmbedMethod,
    ) -> Result<Self> {
        let members = assignment.members();
        if coords.len() != members.len()
            || coords.iter().zip(&members).any(|(c, m)| c.len() != m.len())
        {
            return Err(Error::InvalidInput("cluster coordinate shapes do not match the assignment".into()));
        }
        Ok(Self { coords, members, method, gammas: None })
    }
}

/// Embed every cluster with `method`. Inputs must be noise-free (see
/// [`crate::cluster::restrict`]). LOE outputs are rescaled by their
/// [`scale_sync`] factor; PCA and classical scaling are left as they are.
pub fn embed_all_clusters(
    data: &DataMatrix,
    delta: &DissimilarityMatrix,
    assignment: &ClusterAssignment,
    method: &EmbedMethod,
) -> Result<ClusterEmbedding> {
    if data.n() != delta.n() || data.n() != assignment.n() {
        return Err(Error::InvalidInput("data, dissimilarities and assignment differ in size".into()));
    }
    if assignment.has_noise() {
        return Err(Error::InvalidInput("assignment contains noise; restrict it first".into()));
    }
    if let EmbedMethod::Loe(cfg) = method {
        cfg.validate()?;
    }
    let members = assignment.members();
    let results: Vec<Result<(Vec<Point2>, Option<f64>)>> = par::map_indices(members.len(), |c| {
        let idx = &members[c];
        let run = || -> Result<(Vec<Point2>, Option<f64>)> {
            match method {
                EmbedMethod::Pca => Ok((pca_embed(&data.select(idx)), None)),
                EmbedMethod::ClassicalScaling => {
                    Ok((classical_scaling_embed(&delta.submatrix(idx)), None))
                }
                EmbedMethod::Loe(cfg) => {
                    let sub = delta.submatrix(idx);
                    let cfg = LoeConfig { seed: cfg.seed.wrapping_add(c as u64), ..*cfg };
                    let coords = loe_run(&sub, Some(&data.select(idx)), LoeInit::Pca, &cfg)?.coords;
                    let gamma = scale_sync(&sub, &coords)?;
                    let scaled = coords.iter().map(|y| [y[0] * gamma, y[1] * gamma]).collect();
                    Ok((scaled, Some(gamma)))
                }
            }
        };
        run().map_err(|e| Error::in_cluster(c, e))
    });
    let mut coords = Vec::with_capacity(members.len());
    let mut gammas = Vec::new();
    for r in results {
        let (c, g) = r?;
        coords.push(c);
        gammas.extend(g);
    }
    Ok(ClusterEmbedding {
        coords,
        members,
        method: *method,
        gammas: matches!(method, EmbedMethod::Loe(_)).then_some(gammas),
    })
}
