//! In-process reference algorithms and the constructor registry.
//!
//! | name          | constructor args                   | query args           |
//! |---------------|------------------------------------|----------------------|
//! | `bruteforce`  | metric                             | none                 |
//! | `rpforest`    | metric, trees, leaf size           | search candidates    |
//! | `knngraph`    | metric, degree, entry points       | beam width           |
//! | `bitsampling` | metric, tables, bits per hash      | probes per table     |
//!
//! Names starting with `debug-` are diagnostic algorithms used to exercise
//! the runner's isolation and timing paths.

mod bitsampling;
mod bruteforce;
mod diagnostic;
mod knngraph;
mod rpforest;

use crate::config::ConfigValue;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{distance_unchecked, Metric, PointRef, PointSet};

pub use bitsampling::BitSamplingIndex;
pub use bruteforce::BruteForce;
pub use diagnostic::{Crash, Hang, Noop, Retain, Scripted};
pub use knngraph::KnnGraphIndex;
pub use rpforest::RpForestIndex;

/// An algorithm instance under test.
///
/// `query` returns train ids only; the harness recomputes distances itself.
pub trait Algorithm<T: Scalar>: Send {
    fn build(&mut self, train: &PointSet<T>) -> Result<()>;

    /// Reconfigures query-time parameters on a built index.
    fn set_query_params(&mut self, params: &[ConfigValue]) -> Result<()> {
        if params.is_empty() {
            Ok(())
        } else {
            Err(Error::usage("algorithm takes no query parameters"))
        }
    }

    fn query(&mut self, q: PointRef<'_, T>, k: usize) -> Result<Vec<usize>>;

    /// Distance computations performed by the last query, if tracked.
    fn last_candidates(&self) -> Option<usize> {
        None
    }

    fn supports_batch(&self) -> bool {
        false
    }

    /// Answers all queries at once; results are fetched with [`Algorithm::batch_results`].
    fn batch_query(&mut self, _queries: &PointSet<T>, _k: usize) -> Result<()> {
        Err(Error::usage("algorithm has no batch mode"))
    }

    fn batch_results(&mut self) -> Result<Vec<Vec<usize>>> {
        Err(Error::usage("algorithm has no batch mode"))
    }

    fn batch_candidates(&self) -> Option<Vec<usize>> {
        None
    }

    /// Extra key/value information recorded with the run.
    fn attributes(&self) -> Vec<(String, String)> {
        Vec::new()
    }
}

pub const REGISTERED: [&str; 9] = [
    "bruteforce",
    "rpforest",
    "knngraph",
    "bitsampling",
    "debug-noop",
    "debug-hang",
    "debug-crash",
    "debug-retain",
    "debug-scripted",
];

pub(crate) fn arg_metric(args: &[ConfigValue], name: &str) -> Result<Metric> {
    args.first()
        .and_then(ConfigValue::as_str)
        .ok_or_else(|| Error::config(name, "first argument must be the metric name"))?
        .parse()
        .map_err(|_| Error::config(name, "first argument must be the metric name"))
}

pub(crate) fn arg_usize(args: &[ConfigValue], idx: usize, name: &str, what: &str) -> Result<usize> {
    args.get(idx)
        .and_then(ConfigValue::as_i64)
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::config(name, format!("argument {idx} ({what}) must be a non-negative integer")))
}

pub(crate) fn expect_arity(args: &[ConfigValue], n: usize, name: &str) -> Result<()> {
    if args.len() != n {
        return Err(Error::config(name, format!("expected {n} arguments, got {}", args.len())));
    }
    Ok(())
}

/// Instantiates a registered algorithm. `seed` drives every random choice.
pub fn construct<T: Scalar>(name: &str, args: &[ConfigValue], seed: u64) -> Result<Box<dyn Algorithm<T>>> {
    let alg: Box<dyn Algorithm<T>> = match name {
        "bruteforce" => {
            expect_arity(args, 1, name)?;
            Box::new(BruteForce::new(arg_metric(args, name)?))
        }
        "rpforest" => {
            expect_arity(args, 3, name)?;
            Box::new(RpForestIndex::new(
                arg_metric(args, name)?,
                arg_usize(args, 1, name, "trees")?,
                arg_usize(args, 2, name, "leaf size")?,
                seed,
            )?)
        }
        "knngraph" => {
            expect_arity(args, 3, name)?;
            Box::new(KnnGraphIndex::new(
                arg_metric(args, name)?,
                arg_usize(args, 1, name, "degree")?,
                arg_usize(args, 2, name, "entry points")?,
                seed,
            )?)
        }
        "bitsampling" => {
            expect_arity(args, 3, name)?;
            Box::new(BitSamplingIndex::new(
                arg_metric(args, name)?,
                arg_usize(args, 1, name, "tables")?,
                arg_usize(args, 2, name, "bits")?,
                seed,
            )?)
        }
        "debug-noop" => Box::new(Noop),
        "debug-hang" => Box::new(Hang),
        "debug-crash" => Box::new(Crash),
        "debug-retain" => {
            expect_arity(args, 2, name)?;
            Box::new(Retain::new(arg_usize(args, 1, name, "megabytes")?))
        }
        "debug-scripted" => {
            expect_arity(args, 3, name)?;
            let delays = args[2]
                .as_str()
                .ok_or_else(|| Error::config(name, "argument 2 must be a comma-separated delay list"))?
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(name, format!("bad delay list: {e}")))?;
            Box::new(Scripted::new(
                arg_metric(args, name)?,
                arg_usize(args, 1, name, "queries per pass")?,
                delays,
            )?)
        }
        other => {
            return Err(Error::config(
                other,
                format!("unknown constructor; registered: {}", REGISTERED.join(", ")),
            ))
        }
    };
    Ok(alg)
}

/// Exact top-`k` among `candidates`, sorted by (distance, id).
pub(crate) fn rerank<T: Scalar>(
    q: PointRef<'_, T>,
    train: &PointSet<T>,
    candidates: impl IntoIterator<Item = usize>,
    k: usize,
    metric: Metric,
) -> Vec<usize> {
    let entries: Vec<(usize, f64)> = candidates
        .into_iter()
        .map(|id| (id, distance_unchecked(q, train.point(id), metric)))
        .filter(|e| !e.1.is_nan())
        .collect();
    crate::knn::select_k(entries, k).into_iter().map(|e| e.0).collect()
}

/// Epoch-stamped visited set, reset in O(1) between queries.
#[derive(Debug, Clone, Default)]
pub(crate) struct Visited {
    stamps: Vec<u32>,
    epoch: u32,
}

impl Visited {
    pub fn new(n: usize) -> Self {
        Self {
            stamps: vec![0; n],
            epoch: 0,
        }
    }

    pub fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    /// Marks `i`; returns true if it was not yet marked.
    #[inline]
    pub fn insert(&mut self, i: usize) -> bool {
        if self.stamps[i] == self.epoch {
            false
        } else {
            self.stamps[i] = self.epoch;
            true
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::dataio::{gen_random_uniform, DatasetFile, GeneratorKind, GeneratorSpec};
    use crate::space::Metric;

    pub fn uniform(n: usize, m: usize, d: usize, depth: usize, metric: Metric, seed: u64) -> DatasetFile {
        gen_random_uniform(&GeneratorSpec {
            depth,
            metric,
            ..GeneratorSpec::new(GeneratorKind::RandomUniform, "t", n, m, d, seed)
        })
        .unwrap()
    }

    /// Mean fraction of true `k`-NN ids found.
    pub fn id_recall(ds: &DatasetFile, results: &[Vec<usize>], k: usize) -> f64 {
        let mut total = 0.0;
        for (i, r) in results.iter().enumerate() {
            let truth = &ds.ground_truth.ids(i)[..k];
            total += r.iter().filter(|id| truth.contains(id)).count() as f64 / k as f64;
        }
        total / results.len() as f64
    }
}
