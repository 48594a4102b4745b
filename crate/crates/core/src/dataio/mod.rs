//! Dataset files: container I/O, synthetic generators, splitting and ground truth.

pub(crate) mod container;
mod generate;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::brute_force_knn;
use crate::scalar::Scalar;
use crate::space::{distance_unchecked, Metric, PointKind, PointSet};
use crate::Points;

pub use container::{read_dataset, write_dataset};
pub use generate::{gen_rand_euclidean, gen_random_uniform, generate, GeneratorKind, GeneratorSpec};

/// Name of the pseudorandom generator used by every seeded routine in this crate.
pub const PRNG_NAME: &str = "chacha8";

/// Default ground-truth depth.
pub const DEFAULT_DEPTH: usize = 100;

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exact neighbors of every test point, stored row-major at a fixed depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    depth: usize,
    ids: Vec<usize>,
    distances: Vec<f32>,
}

impl GroundTruth {
    pub fn new(depth: usize, ids: Vec<usize>, distances: Vec<f32>) -> Result<Self> {
        if ids.len() != distances.len() || depth == 0 || ids.len() % depth != 0 {
            return Err(Error::format(format!(
                "ground truth shape mismatch: {} ids, {} distances, depth {depth}",
                ids.len(),
                distances.len()
            )));
        }
        Ok(Self {
            depth,
            ids,
            distances,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn rows(&self) -> usize {
        self.ids.len() / self.depth
    }

    pub fn ids(&self, row: usize) -> &[usize] {
        &self.ids[row * self.depth..(row + 1) * self.depth]
    }

    pub fn distances(&self, row: usize) -> &[f32] {
        &self.distances[row * self.depth..(row + 1) * self.depth]
    }
}

/// A complete benchmark dataset as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub name: String,
    pub metric: Metric,
    pub train: Points,
    pub test: Points,
    pub ground_truth: GroundTruth,
    pub attributes: BTreeMap<String, String>,
}

impl DatasetFile {
    pub fn point_kind(&self) -> PointKind {
        self.train.kind()
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Structural and numeric validation.
    ///
    /// Checks shapes, id bounds, distinct ids, non-decreasing rows and that
    /// every stored distance matches a recomputation within `rtol` relative.
    /// With `exact`, additionally recomputes each row by brute force and
    /// compares the distance profile.
    pub fn validate(&self, rtol: f64, exact: bool) -> Result<()> {
        self.train.check_compatible(self.metric)?;
        self.test.check_compatible(self.metric)?;
        if self.train.dim() != self.test.dim() {
            return Err(Error::validation(format!(
                "train dimension {} differs from test dimension {}",
                self.train.dim(),
                self.test.dim()
            )));
        }
        let gt = &self.ground_truth;
        if gt.rows() != self.test.len() {
            return Err(Error::validation(format!(
                "{} ground-truth rows for {} test points",
                gt.rows(),
                self.test.len()
            )));
        }
        if gt.depth() > self.train.len() {
            return Err(Error::validation("ground-truth depth exceeds train size"));
        }
        let n = self.train.len();
        let check_row = |i: usize| -> Result<()> {
            let ids = gt.ids(i);
            let dists = gt.distances(i);
            let mut seen = std::collections::HashSet::with_capacity(ids.len());
            for (j, (&id, &d)) in ids.iter().zip(dists).enumerate() {
                if id >= n {
                    return Err(Error::validation(format!("row {i}: id {id} out of range")));
                }
                if !seen.insert(id) {
                    return Err(Error::validation(format!("row {i}: id {id} repeated")));
                }
                if j > 0 && dists[j - 1] > d {
                    return Err(Error::validation(format!("row {i}: distances not sorted")));
                }
                let exact_d = distance_unchecked(self.test.point(i), self.train.point(id), self.metric);
                if !within(d as f64, exact_d, rtol) {
                    return Err(Error::validation(format!(
                        "row {i}: stored distance {d} for id {id}, recomputed {exact_d}"
                    )));
                }
            }
            if exact {
                let bf = brute_force_knn(self.test.point(i), &self.train, gt.depth(), self.metric)?;
                for (j, (&stored, &truth)) in dists.iter().zip(&bf.distances).enumerate() {
                    if !within(stored as f64, truth, rtol) {
                        return Err(Error::validation(format!(
                            "row {i}: neighbor {j} at {stored}, exact search finds {truth}"
                        )));
                    }
                }
            }
            Ok(())
        };
        (0..self.test.len()).into_par_iter().try_for_each(check_row)
    }
}

fn within(stored: f64, exact: f64, rtol: f64) -> bool {
    (stored - exact).abs() <= rtol * exact.abs() + f32::MIN_POSITIVE as f64
}

/// Draws `m` test points without replacement; the rest stay in original order.
pub fn split_train_test<T: Scalar>(
    points: &PointSet<T>,
    m: usize,
    seed: u64,
) -> Result<(PointSet<T>, PointSet<T>)> {
    let n = points.len();
    if m >= n {
        return Err(Error::usage(format!(
            "cannot split {m} test points from {n} points"
        )));
    }
    let mut rng = seeded_rng(seed);
    let test_ids = rand::seq::index::sample(&mut rng, n, m).into_vec();
    let mut is_test = vec![false; n];
    for &i in &test_ids {
        is_test[i] = true;
    }
    let train_ids: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    Ok((points.select(&train_ids), points.select(&test_ids)))
}

/// Exact `depth`-NN for every test point. Rows are computed in parallel;
/// the result does not depend on the worker count.
pub fn compute_ground_truth<T: Scalar>(
    train: &PointSet<T>,
    test: &PointSet<T>,
    depth: usize,
    metric: Metric,
) -> Result<GroundTruth> {
    if depth > train.len() {
        return Err(Error::usage(format!(
            "ground-truth depth {depth} exceeds train size {}",
            train.len()
        )));
    }
    let rows = (0..test.len())
        .into_par_iter()
        .map(|i| brute_force_knn(test.point(i), train, depth, metric))
        .collect::<Result<Vec<_>>>()?;
    let mut ids = Vec::with_capacity(test.len() * depth);
    let mut distances = Vec::with_capacity(test.len() * depth);
    for row in rows {
        ids.extend(row.ids);
        distances.extend(row.distances.iter().map(|&d| d as f32));
    }
    GroundTruth::new(depth.max(1), ids, distances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{BitMatrix, DenseMatrix, PointRef};

    fn dense(rows: &[&[f32]]) -> Points {
        PointSet::Dense(DenseMatrix::from_rows(rows).unwrap())
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let pts = dense(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let (train, test) = split_train_test(&pts, 2, 11).unwrap();
        let (train2, test2) = split_train_test(&pts, 2, 11).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        assert_eq!(train.len(), 3);
        assert_eq!(test.len(), 2);
        let mut all: Vec<f32> = Vec::new();
        for s in [&train, &test] {
            for i in 0..s.len() {
                if let PointRef::Dense(r) = s.point(i) {
                    all.push(r[0]);
                }
            }
        }
        all.sort_by(f32::total_cmp);
        assert_eq!(all, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let PointSet::Dense(t) = &train else { unreachable!() };
        assert!(t.as_slice().windows(2).all(|w| w[0] < w[1]), "train keeps original order");
    }

    #[test]
    fn split_seeds_differ() {
        let rows: Vec<Vec<f32>> = (0..1000).map(|i| vec![i as f32]).collect();
        let pts = PointSet::Dense(DenseMatrix::from_rows(&rows).unwrap());
        let (_, a) = split_train_test(&pts, 10, 1).unwrap();
        let (_, b) = split_train_test(&pts, 10, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn split_needs_fewer_test_points_than_points() {
        let pts = dense(&[&[0.0], &[1.0]]);
        assert!(matches!(split_train_test(&pts, 2, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn subset_queries_find_themselves() {
        let train = dense(&[&[0.0, 1.0], &[2.0, 2.0], &[5.0, -1.0], &[3.0, 3.0]]);
        let test = train.select(&[2, 0, 3]);
        let gt = compute_ground_truth(&train, &test, 1, Metric::Euclidean).unwrap();
        assert_eq!(gt.ids(0), &[2]);
        assert_eq!(gt.ids(1), &[0]);
        assert_eq!(gt.ids(2), &[3]);
        assert!((0..3).all(|r| gt.distances(r) == [0.0]));
    }

    #[test]
    fn hamming_four_bit_table() {
        // train codes 0000, 0011, 0111, 1111; query 0001.
        let code = |s: &str| s.bytes().map(|c| (c == b'1') as u8).collect::<Vec<_>>();
        let mut raw = Vec::new();
        for s in ["0000", "0011", "0111", "1111"] {
            raw.extend(code(s));
        }
        let train: Points = PointSet::Bits(BitMatrix::from_bytes_per_bit(&raw, 4, 4).unwrap());
        let test: Points = PointSet::Bits(BitMatrix::from_bytes_per_bit(&code("0001"), 1, 4).unwrap());
        // Enumerated by hand: d(0001,0000)=1, d(0001,0011)=1, d(0001,0111)=2, d(0001,1111)=3.
        let gt = compute_ground_truth(&train, &test, 4, Metric::Hamming).unwrap();
        assert_eq!(gt.ids(0), &[0, 1, 2, 3]);
        assert_eq!(gt.distances(0), &[1.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn validation_catches_bad_rows() {
        let train = dense(&[&[0.0], &[1.0], &[3.0]]);
        let test = dense(&[&[0.9]]);
        let gt = compute_ground_truth(&train, &test, 2, Metric::Euclidean).unwrap();
        let mut ds = DatasetFile {
            name: "tiny".into(),
            metric: Metric::Euclidean,
            train,
            test,
            ground_truth: gt,
            attributes: BTreeMap::new(),
        };
        ds.validate(1e-6, true).unwrap();
        ds.ground_truth.distances[0] = 0.2;
        assert!(matches!(ds.validate(1e-6, false), Err(Error::Validation(_))));
        ds.metric = Metric::Hamming;
        assert!(matches!(ds.validate(1e-6, false), Err(Error::Validation(_))));
    }
}
