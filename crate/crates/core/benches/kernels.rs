//! Parallel versus sequential timings for the heavy kernels. The sequential
//! numbers are taken with `par::set_parallel(false)`; building with
//! `--no-default-features` removes rayon entirely.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cluster_embed::align::{align, stress, AlignmentConfig};
use cluster_embed::cluster::kmeans;
use cluster_embed::data::gen_gmm;
use cluster_embed::dissim::{euclidean_pairwise, geodesic_from_data};
use cluster_embed::embed::{embed_all_clusters, EmbedMethod};
use cluster_embed::par;
use cluster_embed::tsne::{calibrate_affinities, gaussian_init, kl_gradient};

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn dissimilarities(c: &mut Criterion) {
    let data = gen_gmm(10, 60, 1).unwrap();
    let mut g = c.benchmark_group("dissimilarity");
    g.sample_size(10);
    for (name, on) in MODES {
        par::set_parallel(on);
        g.bench_function(BenchmarkId::new("euclidean", name), |b| b.iter(|| euclidean_pairwise(black_box(&data))));
        g.bench_function(BenchmarkId::new("geodesic_k10", name), |b| {
            b.iter(|| geodesic_from_data(black_box(&data), 10).unwrap())
        });
    }
    g.finish();
    par::set_parallel(true);
}

fn alignment(c: &mut Criterion) {
    let data = gen_gmm(6, 50, 2).unwrap();
    let delta = euclidean_pairwise(&data);
    let a = kmeans(&data, 6, 0).unwrap();
    let e = embed_all_clusters(&data, &delta, &a, &EmbedMethod::Pca).unwrap();
    let cfg = AlignmentConfig { alpha: 1.5, sweeps: 3, ..Default::default() };
    let start = align(&delta, &e, &AlignmentConfig { sweeps: 1, ..cfg }).unwrap().transforms;
    let mut g = c.benchmark_group("alignment");
    g.sample_size(10);
    for (name, on) in MODES {
        par::set_parallel(on);
        g.bench_function(BenchmarkId::new("stress", name), |b| {
            b.iter(|| stress(black_box(&delta), &e, &start, 1.5).unwrap())
        });
        g.bench_function(BenchmarkId::new("align_3_sweeps", name), |b| b.iter(|| align(&delta, &e, &cfg).unwrap()));
    }
    g.finish();
    par::set_parallel(true);
}

fn tsne(c: &mut Criterion) {
    let data = gen_gmm(5, 100, 3).unwrap();
    let delta = euclidean_pairwise(&data);
    let p = calibrate_affinities(&delta, 30.0).unwrap();
    let y: Vec<_> = gaussian_init(data.n(), 0).iter().map(|q| [q[0] * 1e4, q[1] * 1e4]).collect();
    let mut g = c.benchmark_group("tsne");
    g.sample_size(10);
    for (name, on) in MODES {
        par::set_parallel(on);
        g.bench_function(BenchmarkId::new("calibrate_u30", name), |b| {
            b.iter(|| calibrate_affinities(black_box(&delta), 30.0).unwrap())
        });
        g.bench_function(BenchmarkId::new("kl_gradient", name), |b| b.iter(|| kl_gradient(&p, black_box(&y), 1.0)));
    }
    g.finish();
    par::set_parallel(true);
}

criterion_group!(benches, dissimilarities, alignment, tsne);
criterion_main!(benches);
