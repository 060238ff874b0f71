//! Point sets, synthetic generators and CSV ingestion.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `n` points in `d` dimensions, row-major, with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
    labels: Option<Vec<i64>>,
}

impl DataMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "data matrix must be non-empty, got {n}x{d}"
            )));
        }
        if values.len() != n * d {
            return Err(Error::InvalidInput(format!(
                "expected {} values for a {n}x{d} matrix, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            n,
            d,
            values,
            labels: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != d) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        let values = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), d, values)
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} points",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    /// Rows at `indices`, in that order, carrying their labels along.
    pub fn select(&self, indices: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DataMatrix {
            n: indices.len(),
            d: self.d,
            values,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.sq_dist(i, j).sqrt()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isotropic unit-variance Gaussian mixture with `d` components in `d`
/// dimensions; component `i` is centered at `1.5 * sqrt(d) * e_i`.
pub fn gen_gmm(d: usize, points_per_component: usize, seed: u64) -> Result<DataMatrix> {
    if d < 2 {
        return Err(Error::Parameter(format!("gmm dimension must be >= 2, got {d}")));
    }
    if points_per_component == 0 {
        return Err(Error::Parameter("points_per_component must be >= 1".into()));
    }
    let mut rng = rng(seed);
    let shift = 1.5 * (d as f64).sqrt();
    let n = d * points_per_component;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for c in 0..d {
        for _ in 0..points_per_component {
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                values.push(if j == c { z + shift } else { z });
            }
            labels.push(c as i64);
        }
    }
    DataMatrix::new(n, d, values)?.with_labels(labels)
}

/// One isotropic Gaussian blob in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub count: usize,
    pub center: [f64; 2],
    pub spread: f64,
}

/// Gaussian blobs in the plane, labelled by blob position in `specs`.
pub fn gen_planar_clusters(specs: &[BlobSpec], seed: u64) -> Result<DataMatrix> {
    if specs.is_empty() || specs.iter().any(|s| s.count == 0) {
        return Err(Error::Parameter("every blob needs count >= 1".into()));
    }
    if specs.iter().any(|s| !(s.spread >= 0.0)) {
        return Err(Error::Parameter("blob spread must be >= 0".into()));
    }
    let mut rng = rng(seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (label, spec) in specs.iter().enumerate() {
        for _ in 0..spec.count {
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            values.push(spec.center[0] + spec.spread * zx);
            values.push(spec.center[1] + spec.spread * zy);
            labels.push(label as i64);
        }
    }
    DataMatrix::new(labels.len(), 2, values)?.with_labels(labels)
}

/// Smallest radius whose half-circumference covers the x-extent of `planar`.
pub fn fitting_radius(planar: &DataMatrix) -> f64 {
    let max_abs_x = planar.rows().map(|r| r[0].abs()).fold(0.0, f64::max);
    2.0 * max_abs_x / PI
}

/// Wrap planar points onto a half cylinder of radius `radius`:
/// `(x, y) -> (R sin(x/R), y, R cos(x/R))`.
///
/// The map is an isometry from the strip `|x| <= pi R / 2` onto the surface,
/// so surface geodesics equal planar distances.
pub fn gen_half_cylinder(planar: &DataMatrix, radius: f64) -> Result<DataMatrix> {
    if planar.dim() != 2 {
        return Err(Error::Parameter(format!(
            "half cylinder needs 2D input, got {}D",
            planar.dim()
        )));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
    }
    let limit = PI * radius / 2.0;
    let mut values = Vec::with_capacity(planar.n() * 3);
    for (i, r) in planar.rows().enumerate() {
        let (x, y) = (r[0], r[1]);
        if x.abs() > limit {
            return Err(Error::Parameter(format!(
                "point {i}: x = {x} lies outside [-{limit}, {limit}]"
            )));
        }
        let phi = x / radius;
        values.extend_from_slice(&[radius * phi.sin(), y, radius * phi.cos()]);
    }
    let out = DataMatrix::new(planar.n(), 3, values)?;
    match planar.labels() {
        Some(l) => out.with_labels(l.to_vec()),
        None => Ok(out),
    }
}

/// A flat Gaussian blob in 3D: isotropic in a randomly oriented plane
/// through `center`, zero thickness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatBlobSpec {
    pub count: usize,
    pub center: [f64; 3],
    pub spread: f64,
}

/// Flat clusters placed in 3D with random orientations. Every cluster is
/// exactly planar, so per-cluster PCA recovers it without distortion.
pub fn gen_flat_clusters_3d(specs: &[FlatBlobSpec], seed: u64) -> Result<DataMatrix> {
    if specs.is_empty() || specs.iter().any(|s| s.count == 0) {
        return Err(Error::Parameter("every blob needs count >= 1".into()));
    }
    let mut rng = rng(seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (label, spec) in specs.iter().enumerate() {
        let (e1, e2) = random_frame(&mut rng);
        for _ in 0..spec.count {
            let a: f64 = rng.sample::<f64, _>(StandardNormal) * spec.spread;
            let b: f64 = rng.sample::<f64, _>(StandardNormal) * spec.spread;
            for k in 0..3 {
                values.push(spec.center[k] + a * e1[k] + b * e2[k]);
            }
            labels.push(label as i64);
        }
    }
    DataMatrix::new(labels.len(), 3, values)?.with_labels(labels)
}

// Orthonormal pair by Gram-Schmidt on two Gaussian vectors.
fn random_frame(rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
    let mut draw = || -> [f64; 3] { std::array::from_fn(|_| rng.sample(StandardNormal)) };
    let normalize = |v: [f64; 3]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.map(|x| x / n)
    };
    let e1 = normalize(draw());
    let mut v = draw();
    let dot: f64 = v.iter().zip(&e1).map(|(a, b)| a * b).sum();
    for k in 0..3 {
        v[k] -= dot * e1[k];
    }
    (e1, normalize(v))
}

/// Which column of a CSV holds integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

/// Load a rectangular numeric CSV with an optional single header row.
///
/// The first row is treated as a header when any of its cells fails to parse
/// as a number. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&LabelColumn>) -> Result<DataMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;

    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };

    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        records.push(rec.map_err(|e| csv_error(path, i + 1, e))?);
    }
    let Some(first) = records.first() else {
        return Err(parse_err(1, "file is empty".into()));
    };
    let header: Option<Vec<String>> = if first.iter().any(|c| c.parse::<f64>().is_err()) {
        Some(first.iter().map(str::to_owned).collect())
    } else {
        None
    };
    let body_offset = usize::from(header.is_some());
    let width = first.len();

    let label_idx = match label_column {
        None => None,
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => {
            return Err(parse_err(1, format!("label column {i} out of range (width {width})")))
        }
        Some(LabelColumn::Name(name)) => {
            let pos = header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name));
            match pos {
                Some(p) => Some(p),
                None => {
                    return Err(parse_err(1, format!("label column '{name}' not found in header")))
                }
            }
        }
    };

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.iter().enumerate().skip(body_offset) {
        let line = i + 1;
        if rec.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                let label = cell
                    .parse::<i64>()
                    .or_else(|_| {
                        cell.parse::<f64>()
                            .ok()
                            .filter(|v| v.fract() == 0.0)
                            .map(|v| v as i64)
                            .ok_or(())
                    })
                    .map_err(|_| parse_err(line, format!("label '{cell}' is not an integer")))?;
                labels.push(label);
            } else {
                let v = cell
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("non-numeric cell '{cell}' in column {j}")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite cell '{cell}' in column {j}")));
                }
                values.push(v);
            }
        }
    }
    let n = records.len() - body_offset;
    let d = width - usize::from(label_idx.is_some());
    if n == 0 || d == 0 {
        return Err(parse_err(1, "no numeric data".into()));
    }
    let data = DataMatrix::new(n, d, values)?;
    if label_idx.is_some() {
        data.with_labels(labels)
    } else {
        Ok(data)
    }
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    let row = e.position().map_or(row, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    }
}

/// Write `data` as CSV with a header `x1,...,xd[,label]`.
///
/// Values use the shortest representation that parses back to the same
/// `f64`, so `load_csv` reproduces the matrix bit for bit.
pub fn save_csv(path: impl AsRef<Path>, data: &DataMatrix) -> Result<()> {
    std::fs::write(path, to_csv_string(data))?;
    Ok(())
}

pub fn to_csv_string(data: &DataMatrix) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    if data.labels().is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in data.rows().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").unwrap();
        }
        if let Some(l) = data.labels() {
            write!(out, ",{}", l[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmm_means_are_separated_by_formula() {
        let d = 10;
        let shift = 1.5 * (d as f64).sqrt();
        let sep = shift * 2f64.sqrt();
        assert!((sep - 6.708).abs() < 1e-3);
        let data = gen_gmm(d, 3, 1).unwrap();
        assert_eq!(data.n(), 30);
        assert_eq!(data.labels().unwrap()[29], 9);
    }

    #[test]
    fn gmm_sample_means_within_standard_error() {
        let d = 4;
        let m = 400;
        for seed in 0..3 {
            let data = gen_gmm(d, m, seed).unwrap();
            let shift = 1.5 * (d as f64).sqrt();
            for c in 0..d {
                for j in 0..d {
                    let mean: f64 =
                        (0..m).map(|r| data.row(c * m + r)[j]).sum::<f64>() / m as f64;
                    let truth = if j == c { shift } else { 0.0 };
                    assert!((mean - truth).abs() < 4.0 / (m as f64).sqrt());
                }
            }
        }
    }

    #[test]
    fn gmm_rejects_small_dimension() {
        assert!(matches!(gen_gmm(1, 10, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn planar_clusters_counts_labels_and_seed() {
        let specs = [
            BlobSpec { count: 3, center: [0.0, 0.0], spread: 1.0 },
            BlobSpec { count: 5, center: [9.0, 1.0], spread: 0.5 },
        ];
        let a = gen_planar_clusters(&specs, 7).unwrap();
        assert_eq!(a.n(), 8);
        assert_eq!(a.labels().unwrap(), &[0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(a, gen_planar_clusters(&specs, 7).unwrap());
        assert_ne!(a, gen_planar_clusters(&specs, 8).unwrap());
    }

    #[test]
    fn half_cylinder_crest_and_rulings() {
        let planar = DataMatrix::from_rows(&[[0.0, 2.5], [1.0, -1.0], [1.0, 3.0]]).unwrap();
        let cyl = gen_half_cylinder(&planar, 2.0).unwrap();
        assert_eq!(cyl.row(0), &[0.0, 2.5, 2.0]);
        assert!((cyl.dist(1, 2) - 4.0).abs() < 1e-15);
        assert_eq!(cyl.row(1)[1], -1.0);
    }

    #[test]
    fn half_cylinder_rejects_wide_strip() {
        let planar = DataMatrix::from_rows(&[[4.0, 0.0]]).unwrap();
        assert!(matches!(
            gen_half_cylinder(&planar, 2.0),
            Err(Error::Parameter(_))
        ));
        assert!(gen_half_cylinder(&planar, fitting_radius(&planar)).is_ok());
    }

    #[test]
    fn half_cylinder_has_unit_speed_along_x() {
        let r = 3.0;
        let h = 1e-6;
        for &x in &[-4.0, -1.0, 0.0, 2.5] {
            let p = DataMatrix::from_rows(&[[x - h, 0.0], [x + h, 0.0]]).unwrap();
            let c = gen_half_cylinder(&p, r).unwrap();
            assert!((c.dist(0, 1) / (2.0 * h) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn flat_clusters_are_planar() {
        let specs = [FlatBlobSpec { count: 20, center: [1.0, 2.0, 3.0], spread: 1.0 }];
        let data = gen_flat_clusters_3d(&specs, 3).unwrap();
        // Any four points of a planar set span zero volume.
        let p: Vec<&[f64]> = (0..4).map(|i| data.row(i)).collect();
        let u: Vec<[f64; 3]> = (1..4)
            .map(|k| std::array::from_fn(|j| p[k][j] - p[0][j]))
            .collect();
        let det = u[0][0] * (u[1][1] * u[2][2] - u[1][2] * u[2][1])
            - u[0][1] * (u[1][0] * u[2][2] - u[1][2] * u[2][0])
            + u[0][2] * (u[1][0] * u[2][1] - u[1][1] * u[2][0]);
        assert!(det.abs() < 1e-10);
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let data = DataMatrix::from_rows(&[
            [0.1, 1.0 / 3.0],
            [-2.5e-300, 12345.678901234567],
            [std::f64::consts::PI, -0.0],
        ])
        .unwrap();
        save_csv(&path, &data).unwrap();
        let back = load_csv(&path, None).unwrap();
        for (a, b) in data.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_reload_of_generated_gmm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let data = gen_gmm(3, 5, 2).unwrap();
        save_csv(&path, &data).unwrap();
        let back = load_csv(&path, Some(&LabelColumn::Name("label".into()))).unwrap();
        assert_eq!(back.labels(), data.labels());
        for (a, b) in data.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn csv_missing_label_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        let err = load_csv(&path, Some(&LabelColumn::Name("cls".into()))).unwrap_err();
        assert!(err.to_string().contains("'cls'"), "{err}");
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3,4\n5,x\n").unwrap();
        match load_csv(&path, None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "1,2\n3,4,5\n").unwrap();
        match load_csv(&path, None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }
}
