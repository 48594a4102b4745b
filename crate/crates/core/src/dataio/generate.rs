use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{compute_ground_truth, seeded_rng, split_train_test, DatasetFile, DEFAULT_DEPTH, PRNG_NAME};
use crate::error::{Error, Result};
use crate::space::{BitMatrix, DenseMatrix, Metric, PointSet};
use crate::Points;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    RandomUniform,
    RandEuclidean,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::RandomUniform => "random-uniform",
            GeneratorKind::RandEuclidean => "rand-euclidean",
        })
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-uniform" => Ok(GeneratorKind::RandomUniform),
            "rand-euclidean" => Ok(GeneratorKind::RandEuclidean),
            other => Err(Error::usage(format!("unknown generator `{other}`"))),
        }
    }
}

/// Parameters of a synthetic dataset. Generators are pure functions of this value.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub name: String,
    /// Train points.
    pub n: usize,
    /// Test points.
    pub m: usize,
    pub d: usize,
    pub depth: usize,
    pub seed: u64,
    pub metric: Metric,
    /// Distance range of planted neighbors (rand-euclidean only).
    pub planted_range: (f64, f64),
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, name: impl Into<String>, n: usize, m: usize, d: usize, seed: u64) -> Self {
        Self {
            kind,
            name: name.into(),
            n,
            m,
            d,
            depth: DEFAULT_DEPTH,
            seed,
            metric: Metric::Euclidean,
            planted_range: (0.1, 0.5),
        }
    }

    fn check_common(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 || self.depth == 0 {
            return Err(Error::usage("n, m, d and depth must all be positive"));
        }
        if self.depth > self.n {
            return Err(Error::usage(format!(
                "ground-truth depth {} exceeds train size {}",
                self.depth, self.n
            )));
        }
        Ok(())
    }

    fn base_attributes(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("generator".to_owned(), self.kind.to_string()),
            ("seed".to_owned(), self.seed.to_string()),
            ("prng".to_owned(), PRNG_NAME.to_owned()),
            ("depth".to_owned(), self.depth.to_string()),
        ])
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<DatasetFile> {
    match spec.kind {
        GeneratorKind::RandomUniform => gen_random_uniform(spec),
        GeneratorKind::RandEuclidean => gen_rand_euclidean(spec),
    }
}

fn unit_gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `n + m` i.i.d. points split into `n` train and `m` test points.
///
/// Euclidean: uniform on the unit cube. Angular: uniform on the unit sphere.
/// Hamming: independent fair bits.
pub fn gen_random_uniform(spec: &GeneratorSpec) -> Result<DatasetFile> {
    if spec.kind != GeneratorKind::RandomUniform {
        return Err(Error::usage("spec is not a random-uniform spec"));
    }
    spec.check_common()?;
    let total = spec.n + spec.m;
    let mut rng = seeded_rng(spec.seed);
    let points: Points = match spec.metric {
        Metric::Euclidean => {
            let data: Vec<f32> = (0..total * spec.d).map(|_| rng.random::<f32>()).collect();
            PointSet::Dense(DenseMatrix::new(data, total, spec.d)?)
        }
        Metric::Angular => {
            let mut data = Vec::with_capacity(total * spec.d);
            for _ in 0..total {
                data.extend(unit_gaussian(&mut rng, spec.d).into_iter().map(|x| x as f32));
            }
            PointSet::Dense(DenseMatrix::new(data, total, spec.d)?)
        }
        Metric::Hamming => {
            let mut m = BitMatrix::zeros(total, spec.d);
            for i in 0..total {
                for j in 0..spec.d {
                    m.set(i, j, rng.random::<bool>());
                }
            }
            PointSet::Bits(m)
        }
    };
    let split_seed = rng.next_u64();
    let (train, test) = split_train_test(&points, spec.m, split_seed)?;
    let ground_truth = compute_ground_truth(&train, &test, spec.depth, spec.metric)?;
    Ok(DatasetFile {
        name: spec.name.clone(),
        metric: spec.metric,
        train,
        test,
        ground_truth,
        attributes: spec.base_attributes(),
    })
}

/// Locally easy, globally structureless euclidean dataset.
///
/// Base points are `(v, 0)` with `v` a random unit vector of dimension `d/2`.
/// Each query takes a distinct base point and replaces its zero half with a
/// random vector of norm `1/sqrt(2)`. For every query, `depth` planted points
/// are appended to the train set at distances spaced linearly over
/// `planted_range`, each along its own random direction. Planted points of
/// query `j` occupy ids `planted_offset + j*depth ..`.
pub fn gen_rand_euclidean(spec: &GeneratorSpec) -> Result<DatasetFile> {
    if spec.kind != GeneratorKind::RandEuclidean {
        return Err(Error::usage("spec is not a rand-euclidean spec"));
    }
    if spec.metric != Metric::Euclidean {
        return Err(Error::usage("rand-euclidean datasets use the euclidean metric"));
    }
    if spec.d % 2 != 0 {
        return Err(Error::usage(format!("rand-euclidean needs an even dimension, got {}", spec.d)));
    }
    spec.check_common()?;
    let planted_total = spec.depth * spec.m;
    if spec.n <= planted_total {
        return Err(Error::usage(format!(
            "rand-euclidean needs n > depth*m ({} <= {planted_total})",
            spec.n
        )));
    }
    let (lo, hi) = spec.planted_range;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::usage("planted range must satisfy 0 <= lo <= hi"));
    }
    let half = spec.d / 2;
    let base_n = spec.n - planted_total;
    if spec.m > base_n {
        return Err(Error::usage("more queries than base points"));
    }
    let mut rng = seeded_rng(spec.seed);

    let mut train = DenseMatrix::<f32>::zeros(spec.n, spec.d);
    for i in 0..base_n {
        let v = unit_gaussian(&mut rng, half);
        for (dst, x) in train.row_mut(i)[..half].iter_mut().zip(&v) {
            *dst = *x as f32;
        }
    }

    let templates = rand::seq::index::sample(&mut rng, base_n, spec.m).into_vec();
    let mut test = DenseMatrix::<f32>::zeros(spec.m, spec.d);
    let second_norm = std::f64::consts::FRAC_1_SQRT_2;
    for (j, &t) in templates.iter().enumerate() {
        let w = unit_gaussian(&mut rng, half);
        let first = train.row(t)[..half].to_vec();
        let q = test.row_mut(j);
        q[..half].copy_from_slice(&first);
        for (dst, x) in q[half..].iter_mut().zip(&w) {
            *dst = (x * second_norm) as f32;
        }
    }

    for j in 0..spec.m {
        let q: Vec<f64> = test.row(j).iter().map(|&x| x as f64).collect();
        for r in 0..spec.depth {
            let offset = if spec.depth == 1 {
                lo
            } else {
                lo + (hi - lo) * r as f64 / (spec.depth - 1) as f64
            };
            let u = unit_gaussian(&mut rng, spec.d);
            let row = train.row_mut(base_n + j * spec.depth + r);
            for ((dst, qx), ux) in row.iter_mut().zip(&q).zip(&u) {
                *dst = (qx + offset * ux) as f32;
            }
        }
    }

    let train = PointSet::Dense(train);
    let test = PointSet::Dense(test);
    let ground_truth = compute_ground_truth(&train, &test, spec.depth, spec.metric)?;
    let mut attributes = spec.base_attributes();
    attributes.insert("planted_offset".into(), base_n.to_string());
    attributes.insert("planted_min".into(), lo.to_string());
    attributes.insert("planted_max".into(), hi.to_string());
    attributes.insert("planted_directions".into(), "independent".into());
    Ok(DatasetFile {
        name: spec.name.clone(),
        metric: spec.metric,
        train,
        test,
        ground_truth,
        attributes,
    })
}
