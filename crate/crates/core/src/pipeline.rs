//! End-to-end runs driven by a JSON config: dissimilarities, clustering,
//! per-cluster embedding and alignment, repeated over seeds, with every
//! artifact written under one output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::align::{align, alpha_heuristic, cluster_geometry, AlignmentConfig, ClusterGeometry, GlobalEmbedding};
use crate::cluster::{dbscan, kmeans, restrict, ClusterAssignment};
use crate::data::{load_csv, DataMatrix, LabelColumn};
use crate::dissim::{euclidean_pairwise, geodesic_from_data, DissimilarityMatrix};
use crate::embed::{embed_all_clusters, ClusterEmbedding, EmbedMethod, LoeConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::par;
use crate::table::EmbeddingTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumnSetting {
    Index(usize),
    Name(String),
}

impl From<&LabelColumnSetting> for LabelColumn {
    fn from(s: &LabelColumnSetting) -> Self {
        match s {
            LabelColumnSetting::Index(i) => LabelColumn::Index(*i),
            LabelColumnSetting::Name(n) => LabelColumn::Name(n.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DissimilaritySetting {
    Euclidean,
    Geodesic { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusteringSetting {
    /// Without a `seed` each run reuses its own run seed.
    Kmeans {
        k: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Dbscan { eps: f64, min_pts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSetting {
    Pca,
    /// Classical scaling of the (typically geodesic) dissimilarities.
    Isomap,
    Loe {
        k: usize,
        nu: f64,
        learning_rate: f64,
        epochs: usize,
    },
}

impl EmbeddingSetting {
    fn method(&self, seed: u64) -> EmbedMethod {
        match *self {
            EmbeddingSetting::Pca => EmbedMethod::Pca,
            EmbeddingSetting::Isomap => EmbedMethod::ClassicalScaling,
            EmbeddingSetting::Loe { k, nu, learning_rate, epochs } => EmbedMethod::Loe(LoeConfig {
                k,
                nu,
                learning_rate,
                epochs,
                seed,
            }),
        }
    }
}

/// A fixed separation scale, or `"auto"` for the cluster-geometry heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSetting {
    Auto,
    Value(f64),
}

impl Serialize for AlphaSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaSetting::Auto => s.serialize_str("auto"),
            AlphaSetting::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(AlphaSetting::Value(v)),
            Raw::Text(t) if t == "auto" => Ok(AlphaSetting::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentSetting {
    pub alpha: AlphaSetting,
    pub theta_grid: usize,
    pub sweeps: usize,
    pub tol: f64,
}

impl Default for AlignmentSetting {
    fn default() -> Self {
        let d = AlignmentConfig::default();
        Self {
            alpha: AlphaSetting::Value(d.alpha),
            theta_grid: d.theta_grid,
            sweeps: d.sweeps,
            tol: d.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Points CSV; relative paths resolve against the config file's folder.
    pub input: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<LabelColumnSetting>,
    pub dissimilarity: DissimilaritySetting,
    pub clustering: ClusteringSetting,
    pub embedding: EmbeddingSetting,
    pub alignment: AlignmentSetting,
    pub seeds: Vec<u64>,
    pub metrics_k: Vec<usize>,
    /// Where artifacts go; relative paths resolve like `input`.
    pub output_dir: PathBuf,
}

// The tagged sections are kept as raw JSON in a first pass, then parsed per
// variant so that errors inside them still carry a full field path.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    input: PathBuf,
    #[serde(default)]
    label_column: Option<LabelColumnSetting>,
    dissimilarity: Value,
    clustering: Value,
    embedding: Value,
    #[serde(default)]
    alignment: AlignmentSetting,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_metrics_k")]
    metrics_k: Vec<usize>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeodesicFields {
    k: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KmeansFields {
    k: usize,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DbscanFields {
    eps: f64,
    min_pts: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LoeFields {
    k: usize,
    nu: f64,
    learning_rate: f64,
    epochs: usize,
}

impl Default for LoeFields {
    fn default() -> Self {
        let d = LoeConfig::default();
        Self {
            k: d.k,
            nu: d.nu,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
        }
    }
}

fn join_path(prefix: &str, inner: &str) -> String {
    if inner == "." || inner.is_empty() {
        prefix.to_string()
    } else if inner.starts_with('[') {
        format!("{prefix}{inner}")
    } else {
        format!("{prefix}.{inner}")
    }
}

fn parse_at<T: DeserializeOwned>(prefix: &str, value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = join_path(prefix, &e.path().to_string());
        Error::config(path, e.into_inner().to_string())
    })
}

/// Split `{"kind": ..., rest}` into the kind and the remaining fields.
fn split_kind(section: &str, value: Value) -> Result<(String, Value)> {
    let Value::Object(mut map) = value else {
        return Err(Error::config(section, "expected an object with a \"kind\" field"));
    };
    match map.remove("kind") {
        Some(Value::String(k)) => Ok((k, Value::Object(map))),
        Some(_) => Err(Error::config(join_path(section, "kind"), "expected a string")),
        None => Err(Error::config(section, "missing field `kind`")),
    }
}

fn unknown_kind(section: &str, kind: &str, allowed: &str) -> Error {
    Error::config(join_path(section, "kind"), format!("unknown kind \"{kind}\", expected one of {allowed}"))
}

fn parse_dissimilarity(v: Value) -> Result<DissimilaritySetting> {
    const S: &str = "dissimilarity";
    let (kind, rest) = split_kind(S, v)?;
    match kind.as_str() {
        "euclidean" => parse_at::<Empty>(S, rest).map(|_| DissimilaritySetting::Euclidean),
        "geodesic" => parse_at::<GeodesicFields>(S, rest).map(|f| DissimilaritySetting::Geodesic { k: f.k }),
        other => Err(unknown_kind(S, other, "euclidean, geodesic")),
    }
}

fn parse_clustering(v: Value) -> Result<ClusteringSetting> {
    const S: &str = "clustering";
    let (kind, rest) = split_kind(S, v)?;
    match kind.as_str() {
        "kmeans" => parse_at::<KmeansFields>(S, rest).map(|f| ClusteringSetting::Kmeans { k: f.k, seed: f.seed }),
        "dbscan" => parse_at::<DbscanFields>(S, rest).map(|f| ClusteringSetting::Dbscan {
            eps: f.eps,
            min_pts: f.min_pts,
        }),
        other => Err(unknown_kind(S, other, "kmeans, dbscan")),
    }
}

fn parse_embedding(v: Value) -> Result<EmbeddingSetting> {
    const S: &str = "embedding";
    let (kind, rest) = split_kind(S, v)?;
    match kind.as_str() {
        "pca" => parse_at::<Empty>(S, rest).map(|_| EmbeddingSetting::Pca),
        "isomap" | "classical_scaling" => parse_at::<Empty>(S, rest).map(|_| EmbeddingSetting::Isomap),
        "loe" => parse_at::<LoeFields>(S, rest).map(|f| EmbeddingSetting::Loe {
            k: f.k,
            nu: f.nu,
            learning_rate: f.learning_rate,
            epochs: f.epochs,
        }),
        other => Err(unknown_kind(S, other, "pca, isomap, loe")),
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_metrics_k() -> Vec<usize> {
    vec![10]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// Parse and validate. Errors carry the dotted path of the bad field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        let cfg = PipelineConfig {
            input: raw.input,
            label_column: raw.label_column,
            dissimilarity: parse_dissimilarity(raw.dissimilarity)?,
            clustering: parse_clustering(raw.clustering)?,
            embedding: parse_embedding(raw.embedding)?,
            alignment: raw.alignment,
            seeds: raw.seeds,
            metrics_k: raw.metrics_k,
            output_dir: raw.output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and resolve relative paths against its folder.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let DissimilaritySetting::Geodesic { k } = self.dissimilarity {
            if k == 0 {
                return Err(Error::config("dissimilarity.k", "must be >= 1"));
            }
        }
        match self.clustering {
            ClusteringSetting::Kmeans { k: 0, .. } => {
                return Err(Error::config("clustering.k", "must be >= 1"));
            }
            ClusteringSetting::Dbscan { eps, min_pts } => {
                if !(eps > 0.0) || !eps.is_finite() {
                    return Err(Error::config("clustering.eps", format!("must be a positive number, got {eps}")));
                }
                if min_pts == 0 {
                    return Err(Error::config("clustering.min_pts", "must be >= 1"));
                }
            }
            _ => {}
        }
        if let EmbeddingSetting::Loe { .. } = self.embedding {
            if let EmbedMethod::Loe(c) = self.embedding.method(0) {
                c.validate().map_err(|e| Error::config("embedding", e.to_string()))?;
            }
        }
        let a = &self.alignment;
        if let AlphaSetting::Value(v) = a.alpha {
            if !(v >= 1.0) || !v.is_finite() {
                return Err(Error::config("alignment.alpha", format!("must be >= 1 or \"auto\", got {v}")));
            }
        }
        self.alignment_config(1.0, 0)
            .validate()
            .map_err(|e| Error::config("alignment", e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.metrics_k.is_empty() {
            return Err(Error::config("metrics_k", "must list at least one k"));
        }
        if let Some(pos) = self.metrics_k.iter().position(|&k| k == 0) {
            return Err(Error::config(format!("metrics_k[{pos}]"), "must be >= 1"));
        }
        Ok(())
    }

    fn alignment_config(&self, alpha: f64, seed: u64) -> AlignmentConfig {
        AlignmentConfig {
            alpha,
            theta_grid: self.alignment.theta_grid,
            sweeps: self.alignment.sweeps,
            tol: self.alignment.tol,
            seed,
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// The metrics file written for one seed: run facts followed by the
/// [`MetricsReport`] fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub kappa: usize,
    pub n_points: usize,
    pub n_noise: usize,
    pub alpha_used: f64,
    pub tau: f64,
    pub delta_mean: Option<f64>,
    pub final_stress: f64,
    pub sweeps: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// Over all input points, noise included.
    pub assignment: ClusterAssignment,
    /// Input rows that survived noise removal, ascending.
    pub kept: Vec<usize>,
    pub cluster_embedding: ClusterEmbedding,
    pub geometry: ClusterGeometry,
    pub global: GlobalEmbedding,
    pub report: SeedReport,
}

impl SeedRun {
    /// The aligned coordinates keyed by input row.
    pub fn embedding_table(&self) -> EmbeddingTable {
        self.global.table(Some(&self.kept))
    }

    /// Per-cluster coordinates before alignment, keyed by input row.
    pub fn local_table(&self) -> EmbeddingTable {
        let mut t = EmbeddingTable {
            index: Vec::new(),
            cluster: Vec::new(),
            coords: Vec::new(),
        };
        for (c, (m, ys)) in self
            .cluster_embedding
            .members
            .iter()
            .zip(&self.cluster_embedding.coords)
            .enumerate()
        {
            for (&i, y) in m.iter().zip(ys) {
                t.index.push(self.kept[i]);
                t.cluster.push(c as i64);
                t.coords.push(*y);
            }
        }
        t
    }
}

/// Dissimilarities for the configured kind.
pub fn compute_dissimilarity(data: &DataMatrix, setting: &DissimilaritySetting) -> Result<DissimilarityMatrix> {
    match *setting {
        DissimilaritySetting::Euclidean => Ok(euclidean_pairwise(data)),
        DissimilaritySetting::Geodesic { k } => geodesic_from_data(data, k),
    }
}

/// Steps one to three plus metrics for a single seed. `delta` must be the
/// dissimilarities of `data` under `config.dissimilarity`.
pub fn run_seed(data: &DataMatrix, delta: &DissimilarityMatrix, config: &PipelineConfig, seed: u64) -> Result<SeedRun> {
    let assignment = stage(
        "clustering",
        match config.clustering {
            ClusteringSetting::Kmeans { k, seed: fixed } => kmeans(data, k, fixed.unwrap_or(seed)),
            ClusteringSetting::Dbscan { eps, min_pts } => dbscan(data, eps, min_pts),
        },
    )?;
    let kept = assignment.kept_indices();
    let (sub_data, sub_delta, sub_assignment) = stage("clustering", restrict(data, delta, &assignment))?;

    let method = config.embedding.method(seed);
    let cluster_embedding = stage(
        "embedding",
        embed_all_clusters(&sub_data, &sub_delta, &sub_assignment, &method),
    )?;

    let geometry = cluster_geometry(&sub_delta, &cluster_embedding);
    let alpha = match config.alignment.alpha {
        AlphaSetting::Auto => alpha_heuristic(&geometry),
        AlphaSetting::Value(v) => v,
    };
    let global = stage(
        "alignment",
        align(&sub_delta, &cluster_embedding, &config.alignment_config(alpha, seed)),
    )?;

    let sub_labels: Option<Vec<i64>> = data.labels().map(|l| kept.iter().map(|&i| l[i]).collect());
    let metrics = stage(
        "metrics",
        evaluate(
            &sub_delta,
            &global.coords,
            sub_labels.as_deref(),
            &config.metrics_k,
            Some(&sub_assignment),
        ),
    )?;
    let report = SeedReport {
        seed,
        kappa: sub_assignment.kappa(),
        n_points: data.n(),
        n_noise: data.n() - kept.len(),
        alpha_used: global.alpha_used,
        tau: geometry.tau,
        delta_mean: geometry.delta,
        final_stress: global.final_stress,
        sweeps: global.stress_history.len() - 1,
        metrics,
    };
    Ok(SeedRun {
        seed,
        assignment,
        kept,
        cluster_embedding,
        geometry,
        global,
        report,
    })
}

/// Mean and sample standard deviation of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample (n - 1) standard deviation; 0 for a single run.
    pub std: f64,
    pub runs: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self {
            mean,
            std,
            runs: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    /// Keyed by metric name; recall appears as `knn_recall@k`. Metrics that
    /// are undefined in some run are summarized over the runs defining them.
    pub metrics: BTreeMap<String, Summary>,
}

pub fn aggregate(reports: &[SeedReport]) -> Aggregate {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut push = |name: String, v: Option<f64>| {
        if let Some(v) = v {
            columns.entry(name).or_default().push(v);
        }
    };
    for r in reports {
        let m = &r.metrics;
        for (k, v) in &m.knn_recall {
            push(format!("knn_recall@{k}"), Some(*v));
        }
        push("spearman_global".into(), Some(m.spearman_global));
        push("spearman_clusterwise_mean".into(), m.spearman_clusterwise_mean);
        push("stress_global".into(), Some(m.stress_global));
        push("stress_clusterwise_mean".into(), m.stress_clusterwise_mean);
        push("class_preservation".into(), m.class_preservation);
        push("rand_index".into(), m.rand_index);
        push("alpha_used".into(), Some(r.alpha_used));
        push("final_stress".into(), Some(r.final_stress));
        push("kappa".into(), Some(r.kappa as f64));
    }
    Aggregate {
        seeds: reports.iter().map(|r| r.seed).collect(),
        metrics: columns
            .into_iter()
            .filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s)))
            .collect(),
    }
}

/// File names used for seed `s`.
pub fn embedding_file(seed: u64) -> String {
    format!("embedding_seed{seed}.csv")
}
pub fn transforms_file(seed: u64) -> String {
    format!("transforms_seed{seed}.json")
}
pub fn metrics_file(seed: u64) -> String {
    format!("metrics_seed{seed}.json")
}
pub fn clusters_file(seed: u64) -> String {
    format!("clusters_seed{seed}.csv")
}
pub fn local_file(seed: u64) -> String {
    format!("local_seed{seed}.csv")
}
pub const AGGREGATE_FILE: &str = "aggregate.json";

fn write_seed(dir: &Path, run: &SeedRun) -> Result<()> {
    run.embedding_table().write_csv(dir.join(embedding_file(run.seed)))?;
    run.local_table().write_csv(dir.join(local_file(run.seed)))?;
    run.assignment.write_csv(dir.join(clusters_file(run.seed)))?;
    fs::write(dir.join(transforms_file(run.seed)), run.global.transforms_json() + "\n")?;
    fs::write(
        dir.join(metrics_file(run.seed)),
        serde_json::to_string_pretty(&run.report)? + "\n",
    )?;
    Ok(())
}

/// Load the input, run every seed (in parallel when enabled) and write all
/// artifacts into `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<(Vec<SeedRun>, Aggregate)> {
    config.validate()?;
    let label = config.label_column.as_ref().map(LabelColumn::from);
    let data = stage("load", load_csv(&config.input, label.as_ref()))?;
    let delta = stage("dissimilarity", compute_dissimilarity(&data, &config.dissimilarity))?;
    fs::create_dir_all(&config.output_dir)?;

    let runs = par::map_indices(config.seeds.len(), |s| {
        let seed = config.seeds[s];
        let run = run_seed(&data, &delta, config, seed)?;
        stage("write", write_seed(&config.output_dir, &run))?;
        log::info!(
            "seed {seed}: kappa {}, alpha {:.4}, stress {:.6e}",
            run.report.kappa,
            run.report.alpha_used,
            run.report.final_stress
        );
        Ok(run)
    });
    let runs: Vec<SeedRun> = runs.into_iter().collect::<Result<_>>()?;
    let reports: Vec<SeedReport> = runs.iter().map(|r| r.report.clone()).collect();
    let agg = aggregate(&reports);
    fs::write(
        config.output_dir.join(AGGREGATE_FILE),
        serde_json::to_string_pretty(&agg)? + "\n",
    )?;
    Ok((runs, agg))
}
