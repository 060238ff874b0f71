use nalgebra::{DMatrix, SymmetricEigen};

/// The two largest eigenpairs of a symmetric matrix, in descending order of
/// eigenvalue. Each eigenvector's largest-magnitude entry is made positive
/// (first such entry on ties). Missing pairs (n < 2) are zero.
pub(crate) fn top_two_eigen(sym: DMatrix<f64>) -> [(f64, Vec<f64>); 2] {
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    std::array::from_fn(|k| match order.get(k) {
        Some(&idx) => {
            let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            let pivot = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
                .0;
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[idx], v)
        }
        None => (0.0, vec![0.0; n]),
    })
}

/// Classical scaling of an `n x n` dissimilarity table into the plane:
/// double-center `-D^2 / 2`, keep the top two eigenpairs and scale each
/// eigenvector by the square root of its (clamped) eigenvalue.
pub(crate) fn classical_scaling(n: usize, dissim: impl Fn(usize, usize) -> f64) -> Vec<[f64; 2]> {
    if n == 1 {
        return vec![[0.0, 0.0]];
    }
    let mut b = DMatrix::from_fn(n, n, |i, j| {
        let d = dissim(i, j);
        -0.5 * d * d
    });
    let row_means: Vec<f64> = (0..n).map(|i| b.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    // Exact symmetry keeps the eigensolver on its symmetric path.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = avg;
            b[(j, i)] = avg;
        }
    }
    let [(l1, v1), (l2, v2)] = top_two_eigen(b);
    let (s1, s2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
    (0..n).map(|i| [v1[i] * s1, v2[i] * s2]).collect()
}
