//! Small derivative-based and derivative-free minimizers used by the
//! alignment step.

/// Stopping rules for [`bfgs`].
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the gradient norm falls below `gtol * max(1, |f|)`.
    pub gtol: f64,
    /// Stop once a step improves `f` by less than `ftol * max(1, |f|)`.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-10,
            ftol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton minimization with inverse-Hessian BFGS updates and an
/// Armijo backtracking line search. `fg` returns the value and gradient.
/// The returned value never exceeds `fg(x0).0`.
pub fn bfgs<F>(fg: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut h = identity(n);
    let mut iterations = 0;
    // First step is scaled to a modest length; later steps come from H.
    let mut first = true;

    while iterations < opts.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if !gnorm.is_finite() || gnorm <= opts.gtol * f.abs().max(1.0) {
            break;
        }
        iterations += 1;
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&p, &g);
        if slope >= 0.0 {
            // Lost positive definiteness; fall back to steepest descent.
            h = identity(n);
            p = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = if first { 1.0 / gnorm.max(1.0) } else { 1.0 };
        first = false;

        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, d)| a + step * d).collect();
            let (fn_, gn) = fg(&xn);
            if fn_.is_finite() && fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let improvement = f - fn_;
        x = xn;
        let f_prev = f;
        f = fn_;
        g = gn;
        if sy > 1e-300 {
            if iterations == 1 {
                // Rescale the identity guess to the observed curvature
                // before the first update.
                let gamma = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v *= gamma));
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        if improvement <= opts.ftol * f_prev.abs().max(1.0) {
            break;
        }
    }
    BfgsResult { x, f, iterations }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`. Returns the
/// best point evaluated and its value.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_rosenbrock() {
        let fg = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (f, g)
        };
        let r = bfgs(fg, &[-1.2, 1.0], &BfgsOptions { max_iter: 500, ..Default::default() });
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn bfgs_never_worse_than_start() {
        let fg = |x: &[f64]| (x[0].abs(), vec![x[0].signum()]);
        let r = bfgs(fg, &[0.0], &BfgsOptions::default());
        assert!(r.f <= 0.0);
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_section(|t| (t - 0.3).powi(2) + 2.0, -1.0, 1.0, 80);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((fx - 2.0).abs() < 1e-15);
    }
}
