//! Exact (dense, O(n^2) per iteration) t-SNE, used as a baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::dissim::{euclidean_pairwise, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::{par, Point2};

/// Symmetric input affinities `p_ij = (p_{j|i} + p_{i|j}) / 2n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsneAffinities {
    n: usize,
    p: Vec<f64>,
    pub sigma: Vec<f64>,
    pub perplexity: f64,
}

impl TsneAffinities {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }
}

/// Relative tolerance on `2^H(p_{.|i})` against the target perplexity. Tighter
/// than the usual 1e-3 so independent entropy recomputations stay inside it.
pub const PERPLEXITY_RTOL: f64 = 1e-6;
const MAX_BISECTIONS: usize = 100;
const MAX_BRACKET_STEPS: usize = 200;

/// Conditional distribution `p_{.|i}` for precision `beta = 1 / (2 sigma^2)`
/// and its perplexity `2^H`.
pub fn conditional_row(sq_dists: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = sq_dists
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let mut row: Vec<f64> = sq_dists
        .iter()
        .enumerate()
        .map(|(j, d)| if j == i { 0.0 } else { (-beta * (d - min)).exp() })
        .collect();
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= z);
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    (row, h.exp2())
}

fn calibrate_point(sq: &[f64], i: usize, u: f64) -> Result<(Vec<f64>, f64)> {
    let fail = |reason: String| Error::Calibration { point: i, reason };
    let ok = |perp: f64| (perp - u).abs() <= PERPLEXITY_RTOL * u;
    let n = sq.len();
    let mean_sq = sq.iter().sum::<f64>() / (n - 1) as f64;
    let mut beta = if mean_sq > 0.0 { 1.0 / mean_sq } else { 1.0 };
    let (row, perp) = conditional_row(sq, i, beta);
    if ok(perp) {
        return Ok((row, beta));
    }
    // Perplexity decreases as beta grows; grow a bracket geometrically.
    let (mut lo, mut hi);
    if perp > u {
        lo = beta;
        hi = beta;
        let mut found = false;
        for _ in 0..MAX_BRACKET_STEPS {
            hi *= 2.0;
            let (row, p) = conditional_row(sq, i, hi);
            if ok(p) {
                return Ok((row, hi));
            }
            if p < u {
                found = true;
                break;
            }
            lo = hi;
        }
        if !found {
            return Err(fail(format!("perplexity stays above {u} for every bandwidth")));
        }
    } else {
        hi = beta;
        lo = beta;
        let mut found = false;
        for _ in 0..MAX_BRACKET_STEPS {
            lo /= 2.0;
            let (row, p) = conditional_row(sq, i, lo);
            if ok(p) {
                return Ok((row, lo));
            }
            if p > u {
                found = true;
                break;
            }
            hi = lo;
        }
        if !found {
            return Err(fail(format!("perplexity stays below {u} for every bandwidth")));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        beta = (lo * hi).sqrt();
        let (row, p) = conditional_row(sq, i, beta);
        if ok(p) {
            return Ok((row, beta));
        }
        if p > u {
            lo = beta;
        } else {
            hi = beta;
        }
    }
    Err(fail(format!("bisection did not reach perplexity {u}")))
}

/// Gaussian affinities whose per-point bandwidths hit perplexity `u`.
pub fn calibrate_affinities(delta: &DissimilarityMatrix, u: f64) -> Result<TsneAffinities> {
    let n = delta.n();
    if !(u >= 2.0) || u > (n as f64 - 1.0) {
        return Err(Error::Parameter(format!(
            "perplexity must lie in [2, {}], got {u}",
            n.saturating_sub(1)
        )));
    }
    let rows = par::map_indices(n, |i| {
        let sq: Vec<f64> = delta.row(i).iter().map(|d| d * d).collect();
        calibrate_point(&sq, i, u)
    });
    let mut cond = Vec::with_capacity(n * n);
    let mut sigma = Vec::with_capacity(n);
    for r in rows {
        let (row, beta) = r?;
        cond.extend(row);
        sigma.push((0.5 / beta).sqrt());
    }
    let mut p = vec![0.0; n * n];
    let two_n = 2.0 * n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (cond[i * n + j] + cond[j * n + i]) / two_n;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    Ok(TsneAffinities { n, p, sigma, perplexity: u })
}

pub fn calibrate_from_data(data: &DataMatrix, u: f64) -> Result<TsneAffinities> {
    calibrate_affinities(&euclidean_pairwise(data), u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which `momentum` switches to `final_momentum`.
    pub momentum_switch_iter: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            iters: 1000,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity >= 2.0) {
            return Err(Error::Parameter(format!("perplexity must be >= 2, got {}", self.perplexity)));
        }
        if !(self.exaggeration >= 1.0) {
            return Err(Error::Parameter(format!("exaggeration must be >= 1, got {}", self.exaggeration)));
        }
        if self.iters == 0 {
            return Err(Error::Parameter("iters must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning_rate must be > 0".into()));
        }
        for m in [self.momentum, self.final_momentum] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Parameter(format!("momentum must lie in [0, 1), got {m}")));
            }
        }
        Ok(())
    }
}

/// Cauchy-kernel similarities `q_ij = (1 + |y_i - y_j|^2)^-1 / Z`, dense.
pub fn q_matrix(coords: &[Point2]) -> Vec<f64> {
    let n = coords.len();
    let rows = par::map_indices(n, |i| {
        (0..n)
            .map(|j| if i == j { 0.0 } else { 1.0 / (1.0 + sq_dist(&coords[i], &coords[j])) })
            .collect::<Vec<_>>()
    });
    let mut w = rows.concat();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    w
}

#[inline]
fn sq_dist(a: &Point2, b: &Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// `sum_{i != j} p_ij log(p_ij / q_ij)`, skipping zero affinities.
pub fn kl_divergence(p: &TsneAffinities, coords: &[Point2]) -> f64 {
    let q = q_matrix(coords);
    p.values()
        .iter()
        .zip(&q)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(pv, qv)| pv * (pv / qv).ln())
        .sum()
}

/// Gradient `4 sum_j (rho p_ij - q_ij) (1 + |y_i - y_j|^2)^-1 (y_i - y_j)`.
/// With `rho = 1` this is the exact gradient of [`kl_divergence`].
pub fn kl_gradient(p: &TsneAffinities, coords: &[Point2], rho: f64) -> Vec<Point2> {
    let n = coords.len();
    let z = par::sum_indices(n, |i| {
        (0..n)
            .filter(|&j| j != i)
            .map(|j| 1.0 / (1.0 + sq_dist(&coords[i], &coords[j])))
            .sum()
    });
    par::map_indices(n, |i| {
        let mut g = [0.0; 2];
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = 1.0 / (1.0 + sq_dist(&coords[i], &coords[j]));
            let c = 4.0 * (rho * p.get(i, j) - w / z) * w;
            g[0] += c * (coords[i][0] - coords[j][0]);
            g[1] += c * (coords[i][1] - coords[j][1]);
        }
        g
    })
}

#[derive(Debug, Clone)]
pub struct TsneRun {
    pub coords: Vec<Point2>,
    /// Unexaggerated KL divergence of the final configuration.
    pub final_kl: f64,
}

/// Seeded isotropic Gaussian start with standard deviation `1e-4`.
pub fn gaussian_init(n: usize, seed: u64) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                1e-4 * rng.sample::<f64, _>(StandardNormal),
                1e-4 * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect()
}

/// Momentum gradient descent on the KL divergence. During the first
/// `exaggeration_iters` iterations the affinities in the gradient are
/// multiplied by `exaggeration`.
pub fn tsne_run(affinities: &TsneAffinities, config: &TsneConfig, initial: Option<Vec<Point2>>) -> Result<TsneRun> {
    config.validate()?;
    let n = affinities.n();
    let mut y = match initial {
        Some(c) if c.len() == n => c,
        Some(c) => {
            return Err(Error::InvalidInput(format!("{} initial rows for {n} points", c.len())));
        }
        None => gaussian_init(n, config.seed),
    };
    let mut velocity = vec![[0.0; 2]; n];
    for iter in 0..config.iters {
        let rho = if iter < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let mom = if iter < config.momentum_switch_iter { config.momentum } else { config.final_momentum };
        let grad = kl_gradient(affinities, &y, rho);
        if grad.iter().any(|g| !g[0].is_finite() || !g[1].is_finite()) {
            return Err(Error::Divergence { epoch: iter, loss: f64::NAN });
        }
        for ((p, v), g) in y.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            for k in 0..2 {
                v[k] = mom * v[k] - config.learning_rate * g[k];
                p[k] += v[k];
            }
        }
    }
    let final_kl = kl_divergence(affinities, &y);
    if !final_kl.is_finite() {
        return Err(Error::Divergence { epoch: config.iters, loss: final_kl });
    }
    Ok(TsneRun { coords: y, final_kl })
}

/// Largest relative deviation between the analytic KL gradient and central
/// finite differences of step `h`, normalized by the largest gradient entry.
pub fn gradient_check(p: &TsneAffinities, coords: &[Point2], h: f64) -> f64 {
    let g = kl_gradient(p, coords, 1.0);
    let scale = g.iter().flat_map(|x| x.iter()).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut worst: f64 = 0.0;
    for i in 0..coords.len() {
        for k in 0..2 {
            let mut plus = coords.to_vec();
            let mut minus = coords.to_vec();
            plus[i][k] += h;
            minus[i][k] -= h;
            let fd = (kl_divergence(p, &plus) - kl_divergence(p, &minus)) / (2.0 * h);
            worst = worst.max((fd - g[i][k]).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_data(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::new(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn tetrahedron_is_uniform() {
        let s = 1.0 / 2f64.sqrt();
        let data = DataMatrix::from_rows(&[
            [1.0, 0.0, -s],
            [-1.0, 0.0, -s],
            [0.0, 1.0, s],
            [0.0, -1.0, s],
        ])
        .unwrap();
        let p = calibrate_from_data(&data, 3.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    // p_{j|i} = 1/3 on both sides, so p_ij = (2/3) / 8.
                    assert!((p.get(i, j) - 1.0 / 12.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn entropy_condition_on_a_line() {
        let rows: Vec<[f64; 1]> = [0.0, 1.0, 2.5, 4.0, 7.0].iter().map(|&x| [x]).collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let delta = euclidean_pairwise(&data);
        let p = calibrate_affinities(&delta, 2.0).unwrap();
        for i in 0..5 {
            let sq: Vec<f64> = delta.row(i).iter().map(|d| d * d).collect();
            let beta = 0.5 / (p.sigma[i] * p.sigma[i]);
            let (_, perp) = conditional_row(&sq, i, beta);
            assert!((perp - 2.0).abs() <= PERPLEXITY_RTOL * 2.0, "point {i}: {perp}");
        }
    }

    #[test]
    fn affinities_sum_to_one() {
        let p = calibrate_from_data(&random_data(30, 4, 1), 8.0).unwrap();
        let s: f64 = p.values().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        for i in 0..30 {
            assert_eq!(p.get(i, i), 0.0);
        }
    }

    #[test]
    fn perplexity_out_of_range() {
        let data = random_data(5, 2, 0);
        assert!(matches!(calibrate_from_data(&data, 5.0), Err(Error::Parameter(_))));
        assert!(matches!(calibrate_from_data(&data, 1.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn impossible_perplexity_names_the_point() {
        // Every point sees three others at the same distance: perplexity is 3
        // for any bandwidth.
        let data = DataMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]]).unwrap();
        match calibrate_from_data(&data, 2.0) {
            Err(Error::Calibration { point, .. }) => assert_eq!(point, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = calibrate_from_data(&random_data(10, 3, 2), 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<Point2> = (0..10).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        assert!(gradient_check(&p, &y, 1e-5) <= 1e-4);
    }

    #[test]
    fn q_is_a_distribution() {
        let y = vec![[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5], [0.2, 0.2]];
        let q = q_matrix(&y);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn kl_is_rigid_invariant() {
        let p = calibrate_from_data(&random_data(12, 3, 5), 4.0).unwrap();
        let y: Vec<Point2> = random_data(12, 2, 6).rows().map(|r| [r[0], r[1]]).collect();
        let (s, c) = 0.7f64.sin_cos();
        let moved: Vec<Point2> = y.iter().map(|p| [c * p[0] + s * p[1] + 3.0, s * p[0] - c * p[1] - 1.0]).collect();
        assert!((kl_divergence(&p, &y) - kl_divergence(&p, &moved)).abs() < 1e-12);
    }

    #[test]
    fn kl_lower_when_layout_matches() {
        let data = random_data(20, 2, 8);
        let p = calibrate_from_data(&data, 5.0).unwrap();
        let same: Vec<Point2> = data.rows().map(|r| [r[0], r[1]]).collect();
        let random: Vec<Point2> = random_data(20, 2, 99).rows().map(|r| [r[0], r[1]]).collect();
        assert!(kl_divergence(&p, &same) < kl_divergence(&p, &random));
    }

    #[test]
    fn no_exaggeration_means_plain_gradient() {
        let p = calibrate_from_data(&random_data(8, 3, 4), 3.0).unwrap();
        let y: Vec<Point2> = random_data(8, 2, 7).rows().map(|r| [r[0], r[1]]).collect();
        let cfg = TsneConfig { exaggeration: 1.0, exaggeration_iters: 0, iters: 1, momentum: 0.0, ..Default::default() };
        let run = tsne_run(&p, &cfg, Some(y.clone())).unwrap();
        let g = kl_gradient(&p, &y, 1.0);
        for i in 0..8 {
            for k in 0..2 {
                let expect = y[i][k] - cfg.learning_rate * g[i][k];
                assert!((run.coords[i][k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn run_is_seed_deterministic() {
        let p = calibrate_from_data(&random_data(15, 3, 4), 4.0).unwrap();
        let cfg = TsneConfig { iters: 50, perplexity: 4.0, ..Default::default() };
        let a = tsne_run(&p, &cfg, None).unwrap();
        let b = tsne_run(&p, &cfg, None).unwrap();
        assert_eq!(a.coords, b.coords);
    }
}
