//! Cluster+Embed: cluster high-dimensional data, embed every cluster into
//! the plane on its own, then place the cluster embeddings with rigid
//! motions that minimize a separation-scaled stress.
//!
//! The pipeline is three calls:
//!
//! 1. [`cluster::kmeans`] / [`cluster::dbscan`] (then [`cluster::restrict`]
//!    to drop noise),
//! 2. [`embed::embed_all_clusters`],
//! 3. [`align::align`].
//!
//! [`metrics`] scores any planar embedding against the original
//! dissimilarities, and [`tsne`] provides an exact t-SNE baseline.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod cluster;
pub mod data;
pub mod dissim;
pub mod embed;
pub mod error;
mod linalg;
pub mod optim;
pub mod metrics;
pub mod par;
pub mod table;
pub mod pipeline;
pub mod tsne;

pub use error::{Error, Result};

/// A point in the embedding plane.
pub type Point2 = [f64; 2];

#[inline]
pub fn dist2(a: &Point2, b: &Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}
