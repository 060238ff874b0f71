//! Brute-force reference implementations, written independently of the
//! library code they check. Slow on purpose.

#![allow(dead_code)]

use cluster_embed::data::DataMatrix;

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn full_distances(data: &DataMatrix) -> Vec<Vec<f64>> {
    let n = data.n();
    (0..n)
        .map(|i| (0..n).map(|j| euclid(data.row(i), data.row(j))).collect())
        .collect()
}

/// Indices of the `k` closest other points, ties to the lower index.
pub fn knn_by(dist: &[f64], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..dist.len()).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(a.cmp(&b)));
    others.truncate(k);
    others
}

/// Floyd-Warshall over the symmetrized kNN graph. Disconnected components
/// are joined by the shortest Euclidean edge between every pair of them.
pub fn geodesic_oracle(data: &DataMatrix, k: usize) -> Vec<Vec<f64>> {
    let n = data.n();
    let e = full_distances(data);
    let mut g = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        g[i][i] = 0.0;
        for j in knn_by(&e[i], i, k) {
            g[i][j] = e[i][j];
            g[j][i] = e[i][j];
        }
    }
    // Components by repeated label propagation.
    let mut comp: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if g[i][j].is_finite() && comp[j] < comp[i] {
                    comp[i] = comp[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut ids: Vec<usize> = comp.clone();
    ids.sort_unstable();
    ids.dedup();
    for a in 0..ids.len() {
        for b in (a + 1)..ids.len() {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..n {
                for j in 0..n {
                    if comp[i] == ids[a] && comp[j] == ids[b] && e[i][j] < best.0 {
                        best = (e[i][j], i, j);
                    }
                }
            }
            let (w, i, j) = best;
            g[i][j] = g[i][j].min(w);
            g[j][i] = g[i][j];
        }
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = g[i][m] + g[m][j];
                if via < g[i][j] {
                    g[i][j] = via;
                }
            }
        }
    }
    g
}

/// Point `y` moved by angle `theta`, optional reflection of the second
/// axis, then translation `v`.
pub fn move_point(y: [f64; 2], theta: f64, reflect: bool, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    let x0 = c * y[0] + s * y[1];
    let mut x1 = -s * y[0] + c * y[1];
    if reflect {
        x1 = -x1;
    }
    [x0 + v[0], x1 + v[1]]
}

/// Cross-cluster stress by looping over cluster pairs and then point pairs.
pub fn stress_oracle(
    delta: &[Vec<f64>],
    members: &[Vec<usize>],
    local: &[Vec<[f64; 2]>],
    moves: &[(f64, bool, [f64; 2])],
    alpha: f64,
) -> f64 {
    let mut s = 0.0;
    for c1 in 0..members.len() {
        for c2 in (c1 + 1)..members.len() {
            for (a, ya) in members[c1].iter().zip(&local[c1]) {
                for (b, yb) in members[c2].iter().zip(&local[c2]) {
                    let (t1, r1, v1) = moves[c1];
                    let (t2, r2, v2) = moves[c2];
                    let pa = move_point(*ya, t1, r1, v1);
                    let pb = move_point(*yb, t2, r2, v2);
                    let d = euclid(&pa, &pb);
                    let r = alpha * delta[*a][*b] - d;
                    s += r * r;
                }
            }
        }
    }
    s
}

/// Mean dissimilarity between members of two groups.
pub fn cross_mean(delta: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in a {
        for &j in b {
            s += delta[i][j];
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Average ranks by counting, O(n^2).
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn upper_pairs(delta: &[Vec<f64>], y: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let mut o = Vec::new();
    let mut e = Vec::new();
    for i in 0..y.len() {
        for j in (i + 1)..y.len() {
            o.push(delta[i][j]);
            e.push(euclid(&y[i], &y[j]));
        }
    }
    (o, e)
}

pub fn spearman_oracle(delta: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let (o, e) = upper_pairs(delta, y);
    pearson(&ranks(&o), &ranks(&e))
}

pub fn stress_ratio_oracle(delta: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let (o, e) = upper_pairs(delta, y);
    let num: f64 = o.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = o.iter().map(|a| a * a).sum();
    num / den
}

/// Matches counted in integers so the result is exactly comparable.
pub fn recall_oracle(delta: &[Vec<f64>], y: &[[f64; 2]], k: usize) -> f64 {
    let n = y.len();
    let mut hits = 0usize;
    for i in 0..n {
        let emb: Vec<f64> = y.iter().map(|p| euclid(&y[i], p)).collect();
        let a = knn_by(&delta[i], i, k);
        let b = knn_by(&emb, i, k);
        hits += a.iter().filter(|x| b.contains(x)).count();
    }
    hits as f64 / (n * k) as f64
}

/// Agreement over every unordered pair of non-noise points.
pub fn rand_oracle(clusters: &[Option<usize>], labels: &[i64]) -> f64 {
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| clusters[i].is_some()).collect();
    let mut agree = 0u64;
    let mut total = 0u64;
    for a in 0..idx.len() {
        for b in (a + 1)..idx.len() {
            let (i, j) = (idx[a], idx[b]);
            let same_c = clusters[i] == clusters[j];
            let same_l = labels[i] == labels[j];
            total += 1;
            if same_c == same_l {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}
