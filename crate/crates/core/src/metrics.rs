//! Quality and performance measures computed from result files.
//!
//! Every metric is a pure function of a dataset's ground truth and one
//! stored [`GroupResult`]; nothing depends on the process that produced it.
//! Recall is distance based: a returned point counts if it is no farther than
//! the k-th true neighbor, with a relative slack of [`TAU`] on the threshold.

use std::collections::BTreeMap;

use crate::dataio::GroundTruth;
use crate::error::{Error, Result};
use crate::runner::GroupResult;

/// Relative slack on distance thresholds.
pub const TAU: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

impl Orientation {
    /// Maps a value so that larger is always better.
    pub fn orient(self, v: f64) -> f64 {
        match self {
            Orientation::HigherBetter => v,
            Orientation::LowerBetter => -v,
        }
    }
}

pub struct MetricInput<'a> {
    pub ground_truth: &'a GroundTruth,
    pub run: &'a GroupResult,
}

pub struct MetricDescriptor {
    pub name: &'static str,
    pub description: &'static str,
    pub orientation: Orientation,
    /// `None` when the run lacks the information (e.g. no candidate counts).
    pub compute: fn(&MetricInput<'_>) -> Result<Option<f64>>,
}

fn recall_metric(i: &MetricInput<'_>) -> Result<Option<f64>> {
    recall(i.run, i.ground_truth, i.run.k).map(Some)
}

fn recall_eps_001(i: &MetricInput<'_>) -> Result<Option<f64>> {
    recall_eps(i.run, i.ground_truth, i.run.k, 0.01).map(Some)
}

fn recall_eps_01(i: &MetricInput<'_>) -> Result<Option<f64>> {
    recall_eps(i.run, i.ground_truth, i.run.k, 0.1).map(Some)
}

fn qps_metric(i: &MetricInput<'_>) -> Result<Option<f64>> {
    Ok(Some(qps(i.run)))
}

fn build_time_metric(i: &MetricInput<'_>) -> Result<Option<f64>> {
    Ok(Some(i.run.build_time))
}

fn index_size_metric(i: &MetricInput<'_>) -> Result<Option<f64>> {
    Ok(i.run.index_size)
}

fn dist_comps_metric(i: &MetricInput<'_>) -> Result<Option<f64>> {
    Ok(dist_comps(i.run))
}

fn index_size_per_qps_metric(i: &MetricInput<'_>) -> Result<Option<f64>> {
    Ok(index_size_per_qps(i.run))
}

pub static REGISTRY: &[MetricDescriptor] = &[
    MetricDescriptor {
        name: "recall",
        description: "fraction of returned points within the k-th true neighbor distance",
        orientation: Orientation::HigherBetter,
        compute: recall_metric,
    },
    MetricDescriptor {
        name: "recall-eps-0.01",
        description: "recall with the threshold scaled by 1.01",
        orientation: Orientation::HigherBetter,
        compute: recall_eps_001,
    },
    MetricDescriptor {
        name: "recall-eps-0.1",
        description: "recall with the threshold scaled by 1.1",
        orientation: Orientation::HigherBetter,
        compute: recall_eps_01,
    },
    MetricDescriptor {
        name: "qps",
        description: "queries per second (1/s)",
        orientation: Orientation::HigherBetter,
        compute: qps_metric,
    },
    MetricDescriptor {
        name: "build-time",
        description: "index build time (s)",
        orientation: Orientation::LowerBetter,
        compute: build_time_metric,
    },
    MetricDescriptor {
        name: "index-size",
        description: "resident memory growth during build (kB)",
        orientation: Orientation::LowerBetter,
        compute: index_size_metric,
    },
    MetricDescriptor {
        name: "dist-comps",
        description: "mean distance computations per query",
        orientation: Orientation::LowerBetter,
        compute: dist_comps_metric,
    },
    MetricDescriptor {
        name: "index-size-per-qps",
        description: "index size divided by qps (kB*s)",
        orientation: Orientation::LowerBetter,
        compute: index_size_per_qps_metric,
    },
];

pub fn lookup(name: &str) -> Result<&'static MetricDescriptor> {
    REGISTRY.iter().find(|m| m.name == name).ok_or_else(|| {
        let known: Vec<&str> = REGISTRY.iter().map(|m| m.name).collect();
        Error::usage(format!("unknown metric `{name}`; known metrics: {}", known.join(", ")))
    })
}

fn threshold_recall(run: &GroupResult, gt: &GroundTruth, k: usize, factor: f64) -> Result<f64> {
    if k == 0 || k > gt.depth() || k > run.k {
        return Err(Error::usage(format!(
            "k = {k} needs ground truth of depth {} and a run with k = {}",
            gt.depth(),
            run.k
        )));
    }
    let m = run.queries();
    if gt.rows() != m {
        return Err(Error::usage(format!("ground truth has {} rows, run has {m} queries", gt.rows())));
    }
    if m == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..m)
        .map(|i| {
            let dk = gt.distances(i)[k - 1] as f64;
            let thr = factor * dk + TAU * dk;
            let hits = run.row_distances(i).iter().take(k).filter(|&&d| d <= thr).count();
            hits as f64 / k as f64
        })
        .sum();
    Ok(total / m as f64)
}

/// Mean distance-based recall at `k`.
pub fn recall(run: &GroupResult, gt: &GroundTruth, k: usize) -> Result<f64> {
    threshold_recall(run, gt, k, 1.0)
}

/// Mean recall with the threshold inflated by `1 + eps`.
pub fn recall_eps(run: &GroupResult, gt: &GroundTruth, k: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::usage("epsilon must be positive; use recall for eps = 0"));
    }
    threshold_recall(run, gt, k, 1.0 + eps)
}

/// Queries per second: query count over total query time (the batch wall
/// time in batch mode). A zero total gives +inf.
pub fn qps(run: &GroupResult) -> f64 {
    let total = run.batch_time.unwrap_or_else(|| run.times.iter().sum());
    run.queries() as f64 / total
}

pub fn dist_comps(run: &GroupResult) -> Option<f64> {
    let c = run.candidates.as_ref()?;
    if c.is_empty() {
        return None;
    }
    Some(c.iter().sum::<f64>() / c.len() as f64)
}

pub fn index_size_per_qps(run: &GroupResult) -> Option<f64> {
    Some(run.index_size? / qps(run))
}

/// Every registered metric for one run; missing values are `None`.
pub fn compute_all(run: &GroupResult, gt: &GroundTruth) -> Result<BTreeMap<&'static str, Option<f64>>> {
    let input = MetricInput { ground_truth: gt, run };
    REGISTRY.iter().map(|m| Ok((m.name, (m.compute)(&input)?))).collect()
}
