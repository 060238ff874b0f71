//! Pairwise dissimilarities: Euclidean, and Isomap-style geodesics on a
//! symmetrized kNN graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissimilarityKind {
    Euclidean,
    Geodesic,
}

/// Symmetric `n x n` dissimilarities with zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    kind: DissimilarityKind,
}

impl DissimilarityMatrix {
    /// Validating constructor: square, symmetric, zero diagonal, finite and
    /// nonnegative.
    pub fn new(n: usize, values: Vec<f64>, kind: DissimilarityKind) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "expected a non-empty {n}x{n} matrix, got {} values",
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidInput(format!("nonzero diagonal at {i}")));
            }
            for j in (i + 1)..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i}, {j}) = {v} is not a finite nonnegative value"
                    )));
                }
                if v != values[j * n + i] {
                    return Err(Error::InvalidInput(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, values, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> DissimilarityKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Principal submatrix on `indices`, in that order.
    pub fn submatrix(&self, indices: &[usize]) -> DissimilarityMatrix {
        let m = indices.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in indices {
            let row = self.row(i);
            values.extend(indices.iter().map(|&j| row[j]));
        }
        DissimilarityMatrix {
            n: m,
            values,
            kind: self.kind,
        }
    }

    /// Dense CSV: `n` rows of `n` comma-separated values, no header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::with_capacity(self.n * self.n * 8);
        for i in 0..self.n {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v:?}").unwrap();
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, kind: DissimilarityKind) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut values = Vec::new();
        let mut rows = 0;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            for cell in line.split(',') {
                let v = cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    row: line_no + 1,
                    message: format!("non-numeric cell '{cell}'"),
                })?;
                values.push(v);
            }
        }
        Self::new(rows, values, kind)
    }
}

/// Euclidean distances between all rows of `data`.
pub fn euclidean_pairwise(data: &DataMatrix) -> DissimilarityMatrix {
    let n = data.n();
    let rows = par::map_indices(n, |i| (0..n).map(|j| data.dist(i, j)).collect::<Vec<_>>());
    DissimilarityMatrix {
        n,
        values: rows.concat(),
        kind: DissimilarityKind::Euclidean,
    }
}

/// Directed kNN lists with Euclidean edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    k: usize,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// `(neighbor, distance)` pairs of point `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Undirected adjacency: union of the directed edges, deduplicated.
    pub fn symmetrized(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n()];
        for (i, list) in self.neighbors.iter().enumerate() {
            for &(j, w) in list {
                adj[i].push((j, w));
                adj[j].push((i, w));
            }
        }
        for list in &mut adj {
            list.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            list.dedup_by_key(|e| e.0);
        }
        adj
    }
}

/// Indices of the `k` smallest entries of `dist` other than `skip`, ordered
/// by (distance, index).
pub(crate) fn k_smallest(dist: impl Fn(usize) -> f64, n: usize, skip: usize, k: usize) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> = (0..n).filter(|&j| j != skip).map(|j| (j, dist(j))).collect();
    let by_dist = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, by_dist);
        cand.truncate(k);
    }
    cand.sort_by(by_dist);
    cand
}

/// k nearest neighbors of every point, ties broken by lower index.
pub fn build_knn_graph(data: &DataMatrix, k: usize) -> Result<KnnGraph> {
    let n = data.n();
    if k == 0 || k + 1 > n {
        return Err(Error::Parameter(format!(
            "k must lie in [1, {}], got {k}",
            n.saturating_sub(1)
        )));
    }
    let neighbors = par::map_indices(n, |i| k_smallest(|j| data.dist(i, j), n, i, k));
    Ok(KnnGraph { k, neighbors })
}

/// Connected components of an adjacency list; labels ordered by smallest
/// member.
pub(crate) fn components(adj: &[Vec<(usize, f64)>]) -> (Vec<usize>, usize) {
    let n = adj.len();
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = count;
        stack.push(s);
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = count;
                    stack.push(v);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

/// Edges joining every pair of connected components of the symmetrized
/// graph: for each pair, the single cross edge of minimum Euclidean length
/// (ties by lower index pair). Empty when the graph is connected.
pub fn bridge_edges(data: &DataMatrix, graph: &KnnGraph) -> Vec<(usize, usize, f64)> {
    let adj = graph.symmetrized();
    let (label, count) = components(&adj);
    if count <= 1 {
        return Vec::new();
    }
    let mut best: Vec<Option<(usize, usize, f64)>> = vec![None; count * count];
    for i in 0..data.n() {
        for j in (i + 1)..data.n() {
            let (a, b) = (label[i], label[j]);
            if a == b {
                continue;
            }
            let (a, b) = (a.min(b), a.max(b));
            let d = data.dist(i, j);
            let slot = &mut best[a * count + b];
            if slot.is_none_or(|(_, _, w)| d < w) {
                *slot = Some((i, j, d));
            }
        }
    }
    best.into_iter().flatten().collect()
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { dist: 0.0, node: source });
    while let Some(Frontier { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Frontier { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Shortest-path distances on the symmetrized kNN graph. Disconnected
/// components are first joined by [`bridge_edges`].
pub fn geodesic_pairwise(data: &DataMatrix, graph: &KnnGraph) -> Result<DissimilarityMatrix> {
    let n = graph.n();
    if n == 0 || n != data.n() {
        return Err(Error::InvalidInput(format!(
            "graph has {n} nodes but data has {} points",
            data.n()
        )));
    }
    let mut adj = graph.symmetrized();
    let bridges = bridge_edges(data, graph);
    if !bridges.is_empty() {
        log::warn!(
            "kNN graph (k = {}) is disconnected; added {} bridging edge(s)",
            graph.k(),
            bridges.len()
        );
        for &(i, j, w) in &bridges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    }
    let rows = par::map_indices(n, |s| dijkstra(&adj, s));
    // Path sums depend on traversal direction at the last ulp; take each
    // unordered pair from its lower-index source so the result is exactly
    // symmetric.
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = rows[i][j];
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DissimilarityMatrix {
        n,
        values,
        kind: DissimilarityKind::Geodesic,
    })
}

/// Convenience: kNN graph plus geodesics in one call.
pub fn geodesic_from_data(data: &DataMatrix, k: usize) -> Result<DissimilarityMatrix> {
    let graph = build_knn_graph(data, k)?;
    geodesic_pairwise(data, &graph)
}
