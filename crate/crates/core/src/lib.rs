//! Benchmarking harness for in-memory approximate nearest-neighbor search.
//!
//! The crate covers the whole pipeline: dataset generation and import with
//! exact ground truth ([`dataio`]), experiment configuration expansion
//! ([`config`]), isolated timed execution of algorithm instances
//! ([`runner`]), an external text protocol for out-of-process
//! implementations ([`wireproto`]), quality and performance metrics
//! ([`metrics`]) and Pareto-frontier reports ([`report`]).
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` and `f64`). Dataset
//! files store 32-bit points, so most of the harness works with the `f32`
//! aliases below.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod knn;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod scalar;
pub mod space;
pub mod wireproto;

pub use error::{Error, Result};
pub use knn::{brute_force_knn, CandidateStats, GroundTruthRow, ResultTuple};
pub use scalar::Scalar;
pub use space::{distance, BitMatrix, DenseMatrix, Metric, PointKind, PointRef, PointSet};

/// Dense point matrix as stored in dataset files.
pub type DenseMatrix32 = DenseMatrix<f32>;
/// Double-precision dense matrix, used by oracles and analysis code.
pub type DenseMatrix64 = DenseMatrix<f64>;
/// Point set as stored in dataset files.
pub type Points = PointSet<f32>;
/// Borrowed point from a [`Points`] set.
pub type Point<'a> = PointRef<'a, f32>;
