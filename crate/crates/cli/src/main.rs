//! `cluster-embed` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 when a
//! computation fails.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cluster_embed::data::{
    fitting_radius, gen_flat_clusters_3d, gen_gmm, gen_half_cylinder, gen_planar_clusters, load_csv, save_csv,
    BlobSpec, DataMatrix, FlatBlobSpec, LabelColumn,
};
use cluster_embed::dissim::{euclidean_pairwise, geodesic_from_data};
use cluster_embed::metrics::evaluate;
use cluster_embed::pipeline::{run_pipeline, PipelineConfig};
use cluster_embed::table::EmbeddingTable;
use cluster_embed::tsne::{calibrate_affinities, gaussian_init, gradient_check, tsne_run, TsneConfig};
use cluster_embed::Error;

#[derive(Parser)]
#[command(name = "cluster-embed", version, about = "Cluster, embed each cluster in 2D, then rigidly align")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV (coordinates plus a label column).
    Generate(GenerateArgs),
    /// Run the full pipeline described by a JSON config.
    Pipeline {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score an embedding CSV against the original points.
    Metrics(MetricsArgs),
    /// Exact t-SNE baseline.
    Tsne(TsneArgs),
    /// Render an embedding CSV as an SVG scatter plot.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// Gaussian mixture with one unit-variance component per dimension.
    Gmm,
    /// Gaussian blobs in the plane.
    Planar,
    /// Planar blobs wrapped onto a half cylinder.
    HalfCylinder,
    /// Flat blobs in randomly oriented planes in 3D.
    Flat,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(value_enum)]
    kind: Kind,
    /// Dimension and component count (gmm).
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Points per cluster or component.
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Number of blobs (planar, half-cylinder, flat).
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    /// Blob standard deviation.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    /// Distance of blob centers from the origin.
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    /// Half-cylinder radius; defaults to the smallest radius that fits.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DissimilarityArg {
    Euclidean,
    Geodesic,
}

#[derive(Args)]
struct MetricsArgs {
    /// Original points CSV.
    #[arg(long)]
    original: PathBuf,
    /// Embedding CSV (`index,cluster,y1,y2`).
    #[arg(long)]
    embedding: PathBuf,
    /// Label column in the original CSV (name or 0-based index).
    #[arg(long)]
    label_column: Option<String>,
    /// Neighborhood sizes for kNN recall.
    #[arg(short, long = "k", value_delimiter = ',', default_value = "10")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = DissimilarityArg::Euclidean)]
    dissimilarity: DissimilarityArg,
    /// Neighbor count for geodesic dissimilarities.
    #[arg(long, default_value_t = 10)]
    geodesic_k: usize,
    /// Accept embeddings that cover only some input rows (e.g. after noise
    /// removal); rows are matched through the index column.
    #[arg(long)]
    subset: bool,
    /// Write JSON here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TsneArgs {
    input: PathBuf,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(short = 'u', long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12.0)]
    exaggeration: f64,
    #[arg(long, default_value_t = 250)]
    exaggeration_iters: usize,
    #[arg(long, default_value_t = 200.0)]
    learning_rate: f64,
    /// Start from these coordinates (an embedding CSV) instead of a seeded
    /// Gaussian.
    #[arg(long)]
    init_coords: Option<PathBuf>,
    /// Compare the analytic gradient with finite differences and report the
    /// largest relative error before optimizing.
    #[arg(long)]
    gradient_check: bool,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    embedding: PathBuf,
    /// Points CSV to take colors from, matched by the index column; without
    /// it the embedding's cluster column is used.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long)]
    title: Option<String>,
    #[arg(short, long)]
    out: PathBuf,
}

/// A failure tagged with the exit code it maps to.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Pipeline { config, output_dir } => cmd_pipeline(&config, output_dir),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Tsne(a) => cmd_tsne(&a),
        Command::Plot(a) => cmd_plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn label_column(s: &str) -> LabelColumn {
    match s.parse::<usize>() {
        Ok(i) => LabelColumn::Index(i),
        Err(_) => LabelColumn::Name(s.to_string()),
    }
}

fn ring(k: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..k)
        .map(|c| {
            let t = std::f64::consts::TAU * c as f64 / k as f64;
            [radius * t.cos(), radius * t.sin()]
        })
        .collect()
}

fn cmd_generate(a: &GenerateArgs) -> CliResult {
    if a.clusters == 0 {
        return Err(Failure::Usage("--clusters must be >= 1".into()));
    }
    let blobs = || -> Vec<BlobSpec> {
        ring(a.clusters, a.separation)
            .into_iter()
            .map(|center| BlobSpec { count: a.points, center, spread: a.spread })
            .collect()
    };
    let data = match a.kind {
        Kind::Gmm => gen_gmm(a.dim, a.points, a.seed)?,
        Kind::Planar => gen_planar_clusters(&blobs(), a.seed)?,
        Kind::HalfCylinder => {
            let planar = gen_planar_clusters(&blobs(), a.seed)?;
            let radius = a.radius.unwrap_or_else(|| fitting_radius(&planar));
            gen_half_cylinder(&planar, radius)?
        }
        Kind::Flat => {
            let specs: Vec<FlatBlobSpec> = ring(a.clusters, a.separation)
                .into_iter()
                .enumerate()
                .map(|(c, [x, y])| FlatBlobSpec {
                    count: a.points,
                    center: [x, y, if c % 2 == 0 { 0.0 } else { a.separation / 2.0 }],
                    spread: a.spread,
                })
                .collect();
            gen_flat_clusters_3d(&specs, a.seed)?
        }
    };
    save_csv(&a.out, &data)?;
    log::info!("wrote {} points in {} dimensions to {}", data.n(), data.dim(), a.out.display());
    Ok(())
}

fn cmd_pipeline(config: &Path, output_dir: Option<PathBuf>) -> CliResult {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let (runs, _) = run_pipeline(&cfg)?;
    for r in &runs {
        println!(
            "seed {}: {} clusters, alpha {:.4}, stress {:.6e}",
            r.seed, r.report.kappa, r.report.alpha_used, r.report.final_stress
        );
    }
    println!("results in {}", cfg.output_dir.display());
    Ok(())
}

/// Rows of `data` named by `table.index`, in table order.
fn match_rows(data: &DataMatrix, table: &EmbeddingTable, subset: bool) -> Result<Vec<usize>, Failure> {
    let n = data.n();
    if !subset && table.len() != n {
        return Err(Failure::Usage(format!(
            "embedding has {} rows but the original data has {n}; pass --subset for partial embeddings",
            table.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in &table.index {
        if i >= n {
            return Err(Failure::Usage(format!("embedding index {i} is out of range for {n} points")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Failure::Usage(format!("embedding index {i} appears twice")));
        }
    }
    Ok(table.index.clone())
}

fn cmd_metrics(a: &MetricsArgs) -> CliResult {
    let label = a.label_column.as_deref().map(label_column);
    let data = load_csv(&a.original, label.as_ref())?;
    let table = EmbeddingTable::read_csv(&a.embedding)?;
    if table.is_empty() {
        return Err(Failure::Usage("embedding is empty".into()));
    }
    let rows = match_rows(&data, &table, a.subset)?;
    let sub = data.select(&rows);
    let delta = match a.dissimilarity {
        DissimilarityArg::Euclidean => euclidean_pairwise(&sub),
        DissimilarityArg::Geodesic => geodesic_from_data(&sub, a.geodesic_k)?,
    };
    let report = evaluate(&delta, &table.coords, sub.labels(), &a.k, None)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))? + "\n";
    match &a.out {
        Some(p) => fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_tsne(a: &TsneArgs) -> CliResult {
    let label = a.label_column.as_deref().map(label_column);
    let data = load_csv(&a.input, label.as_ref())?;
    let n = data.n();
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        exaggeration: a.exaggeration,
        exaggeration_iters: a.exaggeration_iters,
        learning_rate: a.learning_rate,
        iters: a.iters,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate()?;
    let init = match &a.init_coords {
        Some(path) => {
            let t = EmbeddingTable::read_csv(path)?;
            let rows = match_rows(&data, &t, false)?;
            let mut coords = vec![[0.0; 2]; n];
            for (r, y) in rows.into_iter().zip(&t.coords) {
                coords[r] = *y;
            }
            Some(coords)
        }
        None => None,
    };
    let delta = euclidean_pairwise(&data);
    let aff = calibrate_affinities(&delta, a.perplexity)?;
    if a.gradient_check {
        // Unit-scale layout so finite differences are well conditioned.
        let probe: Vec<[f64; 2]> = gaussian_init(n, a.seed).iter().map(|y| [y[0] * 1e4, y[1] * 1e4]).collect();
        let err = gradient_check(&aff, &probe, 1e-5);
        println!("gradient check: max relative error {err:.3e}");
    }
    let run = tsne_run(&aff, &cfg, init)?;
    let table = EmbeddingTable {
        index: (0..n).collect(),
        cluster: data.labels().map_or_else(|| vec![-1; n], <[i64]>::to_vec),
        coords: run.coords,
    };
    table.write_csv(&a.out)?;
    log::info!("final KL divergence {:.6}", run.final_kl);
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> CliResult {
    let table = EmbeddingTable::read_csv(&a.embedding)?;
    if table.is_empty() {
        return Err(Failure::Runtime(format!("{}: no points to plot", a.embedding.display())));
    }
    let labels = match &a.labels {
        Some(path) => {
            let data = load_csv(path, Some(&label_column(&a.label_column)))?;
            let all = data.labels().expect("label column requested");
            let rows = match_rows(&data, &table, true)?;
            rows.iter().map(|&r| all[r]).collect()
        }
        None => table.cluster.clone(),
    };
    let doc = svg::scatter(&table.coords, &labels, a.title.as_deref()).map_err(Failure::Usage)?;
    fs::write(&a.out, doc)?;
    Ok(())
}
