//! Step 3: place the cluster embeddings with rigid motions.
//!
//! Each cluster `c` gets a transform `T_c(x) = F(pi_c) R(theta_c) x + v_c`
//! with `R(theta) = [[cos, sin], [-sin, cos]]` and `F(1)` negating the second
//! coordinate. The transforms minimize the cross-cluster stress
//!
//! ```text
//! sum_{c < c'} sum_{l in c} sum_{m in c'} (alpha * delta_lm - |T_c(y_l) - T_c'(y_m)|)^2
//! ```
//!
//! by alternating over (theta, pi, v) one cluster at a time. The largest
//! cluster stays fixed at the identity.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::dissim::DissimilarityMatrix;
use crate::embed::ClusterEmbedding;
use crate::error::{Error, Result};
use crate::linalg::classical_scaling;
use crate::optim::{bfgs, golden_section, BfgsOptions};
use crate::table::EmbeddingTable;
use crate::{dist2, par, Point2};

/// Rotation, optional reflection of the second axis, then translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub theta: f64,
    #[serde(rename = "pi", with = "bit")]
    pub reflect: bool,
    pub v: Point2,
}

mod bit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("pi must be 0 or 1, got {other}"))),
        }
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        theta: 0.0,
        reflect: false,
        v: [0.0, 0.0],
    };

    /// `theta` is wrapped into `[0, 2 pi)`.
    pub fn new(theta: f64, reflect: bool, v: Point2) -> Self {
        Self {
            theta: wrap_angle(theta),
            reflect,
            v,
        }
    }

    /// The linear part only.
    #[inline]
    pub fn rotate_reflect(&self, x: &Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        let a = c * x[0] + s * x[1];
        let b = -s * x[0] + c * x[1];
        [a, if self.reflect { -b } else { b }]
    }

    #[inline]
    pub fn apply(&self, x: &Point2) -> Point2 {
        let p = self.rotate_reflect(x);
        [p[0] + self.v[0], p[1] + self.v[1]]
    }
}

pub fn apply_transform(t: &RigidTransform, coords: &[Point2]) -> Vec<Point2> {
    coords.iter().map(|x| t.apply(x)).collect()
}

/// Quantile of within-cluster pairwise distances used as a cluster's
/// diameter. The maximum is dominated by a few outlying points; this keeps
/// the diameter a property of the bulk of the cluster.
pub const DIAMETER_QUANTILE: f64 = 0.95;

/// Linear-interpolated quantile of the pairwise distances of `coords`; zero
/// for fewer than two points.
pub fn cluster_diameter(coords: &[Point2]) -> f64 {
    let m = coords.len();
    if m < 2 {
        return 0.0;
    }
    let mut d = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            d.push(dist2(&coords[i], &coords[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let pos = DIAMETER_QUANTILE * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    d[lo] + (pos - lo as f64) * (d[hi] - d[lo])
}

/// `Delta_ij`: mean of `dist(l, m)` over `l` in group `i`, `m` in group `j`.
/// Diagonal is zero.
pub fn mean_cross_distances<F>(members: &[Vec<usize>], dist: F) -> Vec<Vec<f64>>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let k = members.len();
    let mut out = vec![vec![0.0; k]; k];
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect();
    let means = par::map_indices(pairs.len(), |p| {
        let (i, j) = pairs[p];
        let mut s = 0.0;
        for &l in &members[i] {
            for &m in &members[j] {
                s += dist(l, m);
            }
        }
        s / (members[i].len() * members[j].len()) as f64
    });
    for (&(i, j), m) in pairs.iter().zip(means) {
        out[i][j] = m;
        out[j][i] = m;
    }
    out
}

/// Sizes of the clusters relative to the spacing between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGeometry {
    pub kappa: usize,
    /// Mean embedded cluster diameter.
    pub tau: f64,
    /// `sum_{i<j} Delta_ij / (kappa (kappa - 1))`; absent when `kappa < 2`.
    pub delta: Option<f64>,
    pub delta_pairs: Vec<Vec<f64>>,
}

pub fn cluster_geometry(delta: &DissimilarityMatrix, embedding: &ClusterEmbedding) -> ClusterGeometry {
    let kappa = embedding.kappa();
    let delta_pairs = mean_cross_distances(&embedding.members, |l, m| delta.get(l, m));
    let tau = if kappa == 0 {
        0.0
    } else {
        embedding.coords.iter().map(|c| cluster_diameter(c)).sum::<f64>() / kappa as f64
    };
    let overall = (kappa >= 2).then(|| {
        let mut s = 0.0;
        for i in 0..kappa {
            for j in (i + 1)..kappa {
                s += delta_pairs[i][j];
            }
        }
        s / (kappa * (kappa - 1)) as f64
    });
    ClusterGeometry {
        kappa,
        tau,
        delta: overall,
        delta_pairs,
    }
}

/// Separation scale leaving room for `kappa` clusters of diameter `tau` on a
/// ring of radius `alpha * Delta`: `max(1, kappa tau / (2 pi Delta))`.
pub fn alpha_heuristic(geometry: &ClusterGeometry) -> f64 {
    match geometry.delta {
        Some(d) if d > 0.0 => (geometry.kappa as f64 * geometry.tau / (2.0 * PI * d)).max(1.0),
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub alpha: f64,
    pub theta_grid: usize,
    pub sweeps: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            theta_grid: 64,
            sweeps: 50,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if self.theta_grid < 4 {
            return Err(Error::Parameter(format!("theta_grid must be >= 4, got {}", self.theta_grid)));
        }
        if self.sweeps == 0 {
            return Err(Error::Parameter("sweeps must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// The aligned visualization.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEmbedding {
    /// One row per point, in point order.
    pub coords: Vec<Point2>,
    pub clusters: Vec<usize>,
    pub transforms: Vec<RigidTransform>,
    pub final_stress: f64,
    pub alpha_used: f64,
    /// Stress at initialization, then after every sweep.
    pub stress_history: Vec<f64>,
    pub seed: u64,
}

impl GlobalEmbedding {
    /// Tabulate; `original_index[i]` names the source row of point `i` when
    /// points were filtered upstream.
    pub fn table(&self, original_index: Option<&[usize]>) -> EmbeddingTable {
        let n = self.coords.len();
        EmbeddingTable {
            index: match original_index {
                Some(ix) => ix.to_vec(),
                None => (0..n).collect(),
            },
            cluster: self.clusters.iter().map(|&c| c as i64).collect(),
            coords: self.coords.clone(),
        }
    }

    pub fn transforms_json(&self) -> String {
        serde_json::to_string_pretty(&self.transforms).expect("transforms serialize")
    }
}

fn check_shapes(delta: &DissimilarityMatrix, embedding: &ClusterEmbedding, transforms: Option<&[RigidTransform]>) -> Result<()> {
    let n = embedding.n();
    if delta.n() != n {
        return Err(Error::InvalidInput(format!(
            "dissimilarities cover {} points, embedding {n}",
            delta.n()
        )));
    }
    if let Some(t) = transforms {
        if t.len() != embedding.kappa() {
            return Err(Error::InvalidInput(format!(
                "{} transforms for {} clusters",
                t.len(),
                embedding.kappa()
            )));
        }
    }
    Ok(())
}

fn place(embedding: &ClusterEmbedding, transforms: &[RigidTransform]) -> (Vec<Point2>, Vec<usize>) {
    let n = embedding.n();
    let mut placed = vec![[0.0; 2]; n];
    let mut cluster_of = vec![0; n];
    for (c, (idx, ys)) in embedding.members.iter().zip(&embedding.coords).enumerate() {
        for (&g, y) in idx.iter().zip(ys) {
            placed[g] = transforms[c].apply(y);
            cluster_of[g] = c;
        }
    }
    (placed, cluster_of)
}

fn placed_stress(delta: &DissimilarityMatrix, placed: &[Point2], cluster_of: &[usize], alpha: f64) -> f64 {
    let n = placed.len();
    par::sum_indices(n, |l| {
        let row = delta.row(l);
        let mut s = 0.0;
        for m in (l + 1)..n {
            if cluster_of[m] != cluster_of[l] {
                let r = alpha * row[m] - dist2(&placed[l], &placed[m]);
                s += r * r;
            }
        }
        s
    })
}

/// Cross-cluster stress of the embedding under `transforms`.
pub fn stress(
    delta: &DissimilarityMatrix,
    embedding: &ClusterEmbedding,
    transforms: &[RigidTransform],
    alpha: f64,
) -> Result<f64> {
    check_shapes(delta, embedding, Some(transforms))?;
    let (placed, cluster_of) = place(embedding, transforms);
    Ok(placed_stress(delta, &placed, &cluster_of, alpha))
}

fn reference_order(embedding: &ClusterEmbedding) -> Vec<usize> {
    let mut order: Vec<usize> = (0..embedding.kappa()).collect();
    order.sort_by(|&a, &b| embedding.members[b].len().cmp(&embedding.members[a].len()).then(a.cmp(&b)));
    order
}

fn centroid(coords: &[Point2]) -> Point2 {
    let m = coords.len().max(1) as f64;
    let s = coords.iter().fold([0.0, 0.0], |a, y| [a[0] + y[0], a[1] + y[1]]);
    [s[0] / m, s[1] / m]
}

/// Starting transforms: cluster centroids go to a classical-scaling layout of
/// `alpha * Delta_ij`, with no rotation or reflection. The layout is shifted
/// so the largest cluster keeps the identity.
pub fn initialize_transforms(
    delta: &DissimilarityMatrix,
    embedding: &ClusterEmbedding,
    alpha: f64,
) -> Result<Vec<RigidTransform>> {
    check_shapes(delta, embedding, None)?;
    let kappa = embedding.kappa();
    if kappa <= 1 {
        return Ok(vec![RigidTransform::IDENTITY; kappa]);
    }
    let pairs = mean_cross_distances(&embedding.members, |l, m| delta.get(l, m));
    let layout = classical_scaling(kappa, |i, j| alpha * pairs[i][j]);
    let mut v: Vec<Point2> = layout
        .iter()
        .zip(&embedding.coords)
        .map(|(p, ys)| {
            let c = centroid(ys);
            [p[0] - c[0], p[1] - c[1]]
        })
        .collect();
    let shift = v[reference_order(embedding)[0]];
    for x in &mut v {
        x[0] -= shift[0];
        x[1] -= shift[1];
    }
    Ok(v.into_iter().map(|v| RigidTransform::new(0.0, false, v)).collect())
}

/// Stress terms that involve one cluster, with everything else frozen.
/// Targets `alpha * delta` are laid out row by row against `others` so the
/// inner loops stream through memory.
struct ClusterObjective<'a> {
    local: &'a [Point2],
    others: Vec<Point2>,
    targets: Vec<f64>,
}

impl<'a> ClusterObjective<'a> {
    fn new(
        delta: &DissimilarityMatrix,
        members: &[usize],
        local: &'a [Point2],
        placed: &[Point2],
        cluster_of: &[usize],
        cluster: usize,
        alpha: f64,
    ) -> Self {
        let idx: Vec<usize> = (0..placed.len()).filter(|&g| cluster_of[g] != cluster).collect();
        let others = idx.iter().map(|&g| placed[g]).collect();
        let targets = members
            .iter()
            .flat_map(|&l| {
                let row = delta.row(l);
                idx.iter().map(move |&g| alpha * row[g])
            })
            .collect();
        Self { local, others, targets }
    }

    fn targets(&self, r: usize) -> &[f64] {
        let k = self.others.len();
        &self.targets[r * k..(r + 1) * k]
    }

    fn value(&self, t: &RigidTransform) -> f64 {
        par::sum_indices(self.local.len(), |r| {
            let p = t.apply(&self.local[r]);
            let mut s = 0.0;
            for (target, z) in self.targets(r).iter().zip(&self.others) {
                let e = target - dist2(&p, z);
                s += e * e;
            }
            s
        })
    }

    /// Value and gradient in `(theta, v)` at a fixed reflection.
    fn value_grad_pose(&self, reflect: bool, theta: f64, v: Point2) -> (f64, [f64; 3]) {
        let (sn, cs) = theta.sin_cos();
        let flip = if reflect { -1.0 } else { 1.0 };
        let parts = par::map_indices(self.local.len(), |r| {
            let y = self.local[r];
            let p = [cs * y[0] + sn * y[1] + v[0], flip * (-sn * y[0] + cs * y[1]) + v[1]];
            // derivative of p with respect to theta
            let dp = [-sn * y[0] + cs * y[1], flip * (-cs * y[0] - sn * y[1])];
            let (mut f, mut gx, mut gy) = (0.0, 0.0, 0.0);
            for (target, z) in self.targets(r).iter().zip(&self.others) {
                let dx = p[0] - z[0];
                let dy = p[1] - z[1];
                let d = (dx * dx + dy * dy).sqrt();
                let e = target - d;
                f += e * e;
                if d > 0.0 {
                    let w = -2.0 * e / d;
                    gx += w * dx;
                    gy += w * dy;
                }
            }
            (f, gx * dp[0] + gy * dp[1], gx, gy)
        });
        parts.into_iter().fold((0.0, [0.0; 3]), |(f, g), (a, b, c, d)| {
            (f + a, [g[0] + b, g[1] + c, g[2] + d])
        })
    }
}

// Golden-section iterations inside the winning grid cell.
const GOLDEN_ITERS: usize = 40;

/// Grid search over theta plus golden-section refinement in the best cell.
/// Returns the best of the refined angle, the grid winner and the start.
fn minimize_theta(obj: &ClusterObjective, t: RigidTransform, f0: f64, grid: usize) -> (RigidTransform, f64) {
    let with = |theta: f64| RigidTransform { theta: wrap_angle(theta), ..t };
    let step = TAU / grid as f64;
    let (g_best, f_grid) = (0..grid)
        .map(|g| (g, obj.value(&with(g as f64 * step))))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let center = g_best as f64 * step;
    let (theta_ref, f_ref) = golden_section(|th| obj.value(&with(th)), center - step, center + step, GOLDEN_ITERS);
    let mut best = (t, f0);
    if f_grid < best.1 {
        best = (with(center), f_grid);
    }
    if f_ref < best.1 {
        best = (with(theta_ref), f_ref);
    }
    best
}

// Relative stopping rules for the pose polish. The per-cluster pass only
// needs to get close; the joint pass at the end of a sweep finishes.
const POSE_BFGS: BfgsOptions = BfgsOptions {
    max_iter: 20,
    gtol: 1e-9,
    ftol: 1e-12,
};
const JOINT_BFGS: BfgsOptions = BfgsOptions {
    max_iter: 100,
    ..POSE_BFGS
};

/// Joint quasi-Newton refinement of angle and translation at the current
/// reflection. Angle and translation are strongly coupled (turning a cluster
/// about its own centroid also moves it relative to the origin), so updating
/// them together converges in far fewer sweeps than alternating them.
fn minimize_pose(obj: &ClusterObjective, t: RigidTransform, f0: f64) -> (RigidTransform, f64) {
    // Optimize arc length rather than angle so all three unknowns share the
    // units of the data.
    let rho = rms_radius(obj.local);
    let fg = |x: &[f64]| {
        let (f, g) = obj.value_grad_pose(t.reflect, x[0] / rho, [x[1], x[2]]);
        (f, vec![g[0] / rho, g[1], g[2]])
    };
    let r = bfgs(fg, &[t.theta * rho, t.v[0], t.v[1]], &POSE_BFGS);
    let cand = RigidTransform::new(r.x[0] / rho, t.reflect, [r.x[1], r.x[2]]);
    // Re-evaluate: wrapping theta changes rounding, and acceptance must be
    // judged on the same function the sweep reports.
    let f = obj.value(&cand);
    if f < f0 {
        (cand, f)
    } else {
        (t, f0)
    }
}

fn rms_radius(coords: &[Point2]) -> f64 {
    let m = coords.len().max(1) as f64;
    let r = (coords.iter().map(|y| y[0] * y[0] + y[1] * y[1]).sum::<f64>() / m).sqrt();
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Stress and its gradient with respect to every cluster's `(theta, v)`,
/// reflections held fixed. Parameters of cluster `c` sit at `3c..3c+3`.
fn joint_value_grad(
    delta: &DissimilarityMatrix,
    embedding: &ClusterEmbedding,
    reflect: &[bool],
    x: &[f64],
    alpha: f64,
) -> (f64, Vec<f64>) {
    let transforms: Vec<RigidTransform> = reflect
        .iter()
        .enumerate()
        .map(|(c, &r)| RigidTransform { theta: x[3 * c], reflect: r, v: [x[3 * c + 1], x[3 * c + 2]] })
        .collect();
    let (placed, cluster_of) = place(embedding, &transforms);
    let n = placed.len();
    // Each row sums over every partner, so pairs are counted twice.
    let rows = par::map_indices(n, |l| {
        let row = delta.row(l);
        let (mut f, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for m in 0..n {
            if cluster_of[m] == cluster_of[l] {
                continue;
            }
            let dx = placed[l][0] - placed[m][0];
            let dy = placed[l][1] - placed[m][1];
            let d = (dx * dx + dy * dy).sqrt();
            let e = alpha * row[m] - d;
            f += e * e;
            if d > 0.0 {
                let w = -2.0 * e / d;
                gx += w * dx;
                gy += w * dy;
            }
        }
        (f, gx, gy)
    });
    let mut grad = vec![0.0; x.len()];
    let mut f = 0.0;
    for (c, (members, local)) in embedding.members.iter().zip(&embedding.coords).enumerate() {
        let (sn, cs) = x[3 * c].sin_cos();
        let flip = if reflect[c] { -1.0 } else { 1.0 };
        for (&g, y) in members.iter().zip(local) {
            let (fl, gx, gy) = rows[g];
            f += fl;
            let dp = [-sn * y[0] + cs * y[1], flip * (-cs * y[0] - sn * y[1])];
            grad[3 * c] += gx * dp[0] + gy * dp[1];
            grad[3 * c + 1] += gx;
            grad[3 * c + 2] += gy;
        }
    }
    // Halve for the double count; the gradient of the per-pair sum picks up
    // each pair once from either end, which is already the exact gradient.
    (0.5 * f, grad)
}

/// Quasi-Newton polish of all poses at once, the reference cluster fixed.
/// Returns the new transforms only when they lower the stress below `f0`.
fn polish_all(
    delta: &DissimilarityMatrix,
    embedding: &ClusterEmbedding,
    transforms: &[RigidTransform],
    reference: usize,
    alpha: f64,
    f0: f64,
) -> Option<(Vec<RigidTransform>, f64)> {
    let kappa = transforms.len();
    let reflect: Vec<bool> = transforms.iter().map(|t| t.reflect).collect();
    let full: Vec<f64> = transforms.iter().flat_map(|t| [t.theta, t.v[0], t.v[1]]).collect();
    let free: Vec<usize> = (0..kappa).filter(|&c| c != reference).collect();
    // Angles enter as arc lengths, as in the per-cluster polish.
    let rho: Vec<f64> = embedding.coords.iter().map(|c| rms_radius(c)).collect();
    let expand = |y: &[f64]| {
        let mut x = full.clone();
        for (k, &c) in free.iter().enumerate() {
            x[3 * c] = y[3 * k] / rho[c];
            x[3 * c + 1] = y[3 * k + 1];
            x[3 * c + 2] = y[3 * k + 2];
        }
        x
    };
    let fg = |y: &[f64]| {
        let (f, g) = joint_value_grad(delta, embedding, &reflect, &expand(y), alpha);
        let g = free.iter().flat_map(|&c| [g[3 * c] / rho[c], g[3 * c + 1], g[3 * c + 2]]).collect();
        (f, g)
    };
    let y0: Vec<f64> = free
        .iter()
        .flat_map(|&c| [full[3 * c] * rho[c], full[3 * c + 1], full[3 * c + 2]])
        .collect();
    let r = bfgs(fg, &y0, &JOINT_BFGS);
    let x = expand(&r.x);
    let out: Vec<RigidTransform> = (0..kappa)
        .map(|c| RigidTransform::new(x[3 * c], reflect[c], [x[3 * c + 1], x[3 * c + 2]]))
        .collect();
    let (placed, cluster_of) = place(embedding, &out);
    let f = placed_stress(delta, &placed, &cluster_of, alpha);
    (f < f0).then_some((out, f))
}

/// Alternating minimization of the alpha-scaled cross-cluster stress.
///
/// Starting from [`initialize_transforms`], every sweep visits the clusters
/// other than the largest in decreasing size order and updates, in turn,
/// the angle (grid search plus golden-section refinement), the reflection
/// bit (the other reflection is tried with its own best angle) and the
/// translation, polished jointly with the angle by BFGS. Each sweep ends
/// with a BFGS pass over all poses together, which follows modes where
/// several clusters must move at once. Sweeps stop when the relative stress decrease drops
/// below `tol`. No step is accepted unless it lowers the stress.
pub fn align(
    delta: &DissimilarityMatrix,
    embedding: &ClusterEmbedding,
    config: &AlignmentConfig,
) -> Result<GlobalEmbedding> {
    config.validate()?;
    check_shapes(delta, embedding, None)?;
    let kappa = embedding.kappa();
    if kappa == 0 {
        return Err(Error::InvalidInput("no clusters to align".into()));
    }
    let alpha = config.alpha;
    let mut transforms = initialize_transforms(delta, embedding, alpha)?;
    let (mut placed, cluster_of) = place(embedding, &transforms);
    let mut current = placed_stress(delta, &placed, &cluster_of, alpha);
    let mut history = vec![current];

    let order = reference_order(embedding);
    if kappa > 1 {
        for sweep in 1..=config.sweeps {
            for &c in &order[1..] {
                let members = &embedding.members[c];
                let local = &embedding.coords[c];
                let obj = ClusterObjective::new(delta, members, local, &placed, &cluster_of, c, alpha);
                let t = transforms[c];
                let f0 = obj.value(&t);
                let (mut t, mut f) = minimize_theta(&obj, t, f0, config.theta_grid);

                let flipped = RigidTransform { reflect: !t.reflect, ..t };
                let f_flip = obj.value(&flipped);
                let (tf, ff) = minimize_theta(&obj, flipped, f_flip, config.theta_grid);
                if ff < f {
                    t = tf;
                    f = ff;
                }

                let (t, _) = minimize_pose(&obj, t, f);
                transforms[c] = t;
                for (&g, y) in members.iter().zip(local) {
                    placed[g] = t.apply(y);
                }
            }
            let mut next = placed_stress(delta, &placed, &cluster_of, alpha);
            if let Some((t, f)) = polish_all(delta, embedding, &transforms, order[0], alpha, next) {
                transforms = t;
                placed = place(embedding, &transforms).0;
                next = f;
            }
            history.push(next);
            let decrease = current - next;
            log::debug!("align sweep {sweep}: stress {next}");
            let done = current <= 0.0 || decrease <= config.tol * current;
            current = next;
            if done {
                break;
            }
        }
    }

    Ok(GlobalEmbedding {
        coords: placed,
        clusters: cluster_of,
        transforms,
        final_stress: current,
        alpha_used: alpha,
        stress_history: history,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterAssignment;
    use crate::data::DataMatrix;
    use crate::dissim::{euclidean_pairwise, DissimilarityKind};
    use crate::embed::EmbedMethod;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: Point2, b: Point2) -> bool {
        (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12
    }

    #[test]
    fn transform_examples() {
        assert!(close(RigidTransform::IDENTITY.apply(&[1.5, -2.0]), [1.5, -2.0]));
        let rot = RigidTransform::new(PI / 2.0, false, [0.0, 0.0]);
        assert!(close(rot.apply(&[1.0, 0.0]), [0.0, -1.0]));
        let refl = RigidTransform::new(0.0, true, [0.0, 0.0]);
        assert!(close(refl.apply(&[1.0, 2.0]), [1.0, -2.0]));
    }

    #[test]
    fn theta_is_wrapped() {
        let t = RigidTransform::new(-PI / 2.0, false, [0.0, 0.0]);
        assert!((t.theta - 1.5 * PI).abs() < 1e-15);
        assert!(RigidTransform::new(TAU, false, [0.0, 0.0]).theta < TAU);
    }

    #[test]
    fn transforms_json_uses_bit_for_pi() {
        let t = RigidTransform::new(0.5, true, [1.0, 2.0]);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"theta":0.5,"pi":1,"v":[1.0,2.0]}"#);
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<RigidTransform>(r#"{"theta":0,"pi":2,"v":[0,0]}"#).is_err());
    }

    fn two_singletons(d: f64) -> (DissimilarityMatrix, ClusterEmbedding) {
        let delta = DissimilarityMatrix::new(2, vec![0.0, d, d, 0.0], DissimilarityKind::Euclidean).unwrap();
        let a = ClusterAssignment::from_ids(&[0, 1]).unwrap();
        let e = ClusterEmbedding::from_parts(&a, vec![vec![[0.0, 0.0]], vec![[0.0, 0.0]]], EmbedMethod::Pca).unwrap();
        (delta, e)
    }

    #[test]
    fn geometry_of_two_singletons() {
        let (delta, e) = two_singletons(4.0);
        let g = cluster_geometry(&delta, &e);
        assert_eq!(g.delta_pairs[0][1], 4.0);
        assert_eq!(g.delta_pairs[1][0], 4.0);
        // sum over the single pair divided by kappa (kappa - 1) = 2
        assert_eq!(g.delta, Some(2.0));
        assert_eq!(g.tau, 0.0);
        assert_eq!(alpha_heuristic(&g), 1.0);
    }

    #[test]
    fn alpha_clamps_at_one() {
        let g = ClusterGeometry { kappa: 2, tau: PI, delta: Some(2.0), delta_pairs: vec![] };
        // kappa tau / (2 pi Delta) = 0.5
        assert_eq!(alpha_heuristic(&g), 1.0);
        let g = ClusterGeometry { kappa: 4, tau: PI, delta: Some(1.0), delta_pairs: vec![] };
        assert!((alpha_heuristic(&g) - 2.0).abs() < 1e-15);
        let g = ClusterGeometry { kappa: 1, tau: 3.0, delta: None, delta_pairs: vec![] };
        assert_eq!(alpha_heuristic(&g), 1.0);
    }

    #[test]
    fn single_cluster_alignment_is_identity() {
        let data = DataMatrix::from_rows(&[[0.0, 1.0], [2.0, 0.5], [1.0, 1.0]]).unwrap();
        let delta = euclidean_pairwise(&data);
        let a = ClusterAssignment::from_ids(&[0, 0, 0]).unwrap();
        let coords = vec![vec![[0.0, 1.0], [2.0, 0.5], [1.0, 1.0]]];
        let e = ClusterEmbedding::from_parts(&a, coords.clone(), EmbedMethod::Pca).unwrap();
        let g = align(&delta, &e, &AlignmentConfig::default()).unwrap();
        assert_eq!(g.coords, coords[0]);
        assert_eq!(g.final_stress, 0.0);
        assert_eq!(g.transforms, vec![RigidTransform::IDENTITY]);
    }

    #[test]
    fn stress_is_zero_for_perfect_fit() {
        let alpha = 1.5;
        // Two clusters whose cross distances equal alpha * delta exactly.
        let pts = [[0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [5.0, 2.0]];
        let n = pts.len();
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                vals[i * n + j] = dist2(&pts[i], &pts[j]) / alpha;
            }
        }
        let delta = DissimilarityMatrix::new(n, vals, DissimilarityKind::Euclidean).unwrap();
        let a = ClusterAssignment::from_ids(&[0, 0, 1, 1]).unwrap();
        let e = ClusterEmbedding::from_parts(&a, vec![pts[..2].to_vec(), pts[2..].to_vec()], EmbedMethod::Pca).unwrap();
        let s = stress(&delta, &e, &[RigidTransform::IDENTITY; 2], alpha).unwrap();
        assert!(s < 1e-24, "{s}");
    }

    #[test]
    fn initial_centroids_follow_cluster_distances() {
        let (delta, e) = two_singletons(10.0);
        let t = initialize_transforms(&delta, &e, 1.0).unwrap();
        let p0 = t[0].apply(&[0.0, 0.0]);
        let p1 = t[1].apply(&[0.0, 0.0]);
        assert!((dist2(&p0, &p1) - 10.0).abs() < 1e-9);
        assert_eq!(t[0], RigidTransform::IDENTITY);
    }

    #[test]
    fn pose_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 9;
        let pts: Vec<Point2> = (0..n).map(|_| [rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0]).collect();
        let data = DataMatrix::from_rows(&pts).unwrap();
        let delta = euclidean_pairwise(&data);
        let a = ClusterAssignment::from_ids(&[0, 0, 0, 1, 1, 1, 2, 2, 2]).unwrap();
        let coords: Vec<Vec<Point2>> = a.members().iter().map(|m| m.iter().map(|&i| pts[i]).collect()).collect();
        let e = ClusterEmbedding::from_parts(&a, coords, EmbedMethod::Pca).unwrap();
        let t = vec![RigidTransform::new(0.3, false, [0.1, -0.2]); 3];
        let (placed, cluster_of) = place(&e, &t);
        let obj = ClusterObjective::new(&delta, &e.members[1], &e.coords[1], &placed, &cluster_of, 1, 1.3);
        for reflect in [false, true] {
            let x = [0.8, 0.4, 0.7];
            let f = |x: [f64; 3]| obj.value_grad_pose(reflect, x[0], [x[1], x[2]]);
            let (f0, g) = f(x);
            let direct = obj.value(&RigidTransform::new(x[0], reflect, [x[1], x[2]]));
            assert!((f0 - direct).abs() <= 1e-12 * direct);
            let h = 1e-6;
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (f(xp).0 - f(xm).0) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "{k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Point2> = (0..9).map(|_| [rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0]).collect();
        let delta = euclidean_pairwise(&DataMatrix::from_rows(&pts).unwrap());
        let a = ClusterAssignment::from_ids(&[0, 1, 2, 0, 1, 2, 0, 1, 2]).unwrap();
        let coords: Vec<Vec<Point2>> = a.members().iter().map(|m| m.iter().map(|&i| pts[i]).collect()).collect();
        let e = ClusterEmbedding::from_parts(&a, coords, EmbedMethod::Pca).unwrap();
        let reflect = [false, true, false];
        let x: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let (f0, g) = joint_value_grad(&delta, &e, &reflect, &x, 1.2);
        let t: Vec<RigidTransform> =
            (0..3).map(|c| RigidTransform::new(x[3 * c], reflect[c], [x[3 * c + 1], x[3 * c + 2]])).collect();
        assert!((f0 - stress(&delta, &e, &t, 1.2).unwrap()).abs() <= 1e-12 * f0);
        let h = 1e-6;
        for k in 0..9 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (joint_value_grad(&delta, &e, &reflect, &xp, 1.2).0
                - joint_value_grad(&delta, &e, &reflect, &xm, 1.2).0)
                / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(AlignmentConfig { alpha: 0.5, ..Default::default() }.validate().is_err());
        assert!(AlignmentConfig { theta_grid: 3, ..Default::default() }.validate().is_err());
        assert!(AlignmentConfig { sweeps: 0, ..Default::default() }.validate().is_err());
        assert!(AlignmentConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(AlignmentConfig::default().validate().is_ok());
    }
}
