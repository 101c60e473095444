//! Locality-sensitive hashing toolkit for Euclidean approximate near
//! neighbor search, built around a two-level data-aware scheme: an outer
//! LSH partition that bounds bucket diameters, followed by per-bucket
//! spherical Gaussian hashing centered on each bucket's enclosing ball.
//!
//! Modules:
//! - [`geometry`]: vectors, distances, enclosing balls, dimension reduction
//! - [`families`]: the LSH-family contract, tensoring, collision estimation
//! - [`ball_carving`]: grid-of-balls outer family and its analytic envelope
//! - [`pstable`]: one-dimensional quantization outer family
//! - [`gaussian_lsh`]: spherical Gaussian inner family and its predictors
//! - [`two_level`]: the index (build, query, parameter selection, baseline)
//! - [`harness`]: planted instances, brute-force oracle, benchmarks, I/O

pub mod ball_carving;
pub mod error;
pub mod families;
pub mod gaussian_lsh;
pub mod geometry;
pub mod harness;
mod index_io;
pub mod pstable;
pub(crate) mod rng;
pub mod two_level;

pub use error::{Error, Result};
pub use geometry::{Dataset, Point};
pub use two_level::{build, QueryResult, TwoLevelIndex, TwoLevelParams};
