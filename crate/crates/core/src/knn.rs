//! Exact k-nearest-neighbor search and result containers.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{distance_unchecked, Metric, PointRef, PointSet};

/// Exact neighbors of one query: ids and distances, non-decreasing by distance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
}

impl GroundTruthRow {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Points returned by an algorithm for one query, with harness-recomputed distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTuple {
    pub entries: Vec<(usize, f64)>,
    pub k_requested: usize,
}

impl ResultTuple {
    /// Recomputes distances for `ids` and sorts by (distance, id).
    ///
    /// Fails if more than `k` ids were returned, ids repeat, or an id is out of range.
    pub fn recompute<T: Scalar>(
        query: PointRef<'_, T>,
        train: &PointSet<T>,
        ids: &[usize],
        k: usize,
        metric: Metric,
    ) -> Result<Self> {
        if ids.len() > k {
            return Err(Error::run(format!("{} ids returned for k={k}", ids.len())));
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        let mut entries = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= train.len() {
                return Err(Error::run(format!("returned id {id} out of range")));
            }
            if !seen.insert(id) {
                return Err(Error::run(format!("returned id {id} twice")));
            }
            let d = distance_unchecked(query, train.point(id), metric);
            if d.is_nan() {
                return Err(Error::usage("distance undefined (zero-norm vector?)"));
            }
            entries.push((id, d));
        }
        entries.sort_by(cmp_entry);
        Ok(Self {
            entries,
            k_requested: k,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

/// Optional count of exact distance computations for one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CandidateStats {
    pub n_candidates: Option<usize>,
}

#[inline]
pub(crate) fn cmp_entry(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Keeps the `k` smallest (distance, id) pairs, sorted, ties by smaller id.
pub fn select_k(mut entries: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if k == 0 {
        return Vec::new();
    }
    if entries.len() > k {
        entries.select_nth_unstable_by(k - 1, cmp_entry);
        entries.truncate(k);
    }
    entries.sort_unstable_by(cmp_entry);
    entries
}

/// Exact `k` nearest neighbors of `query` in `train`, ties broken by smaller id.
pub fn brute_force_knn<T: Scalar>(
    query: PointRef<'_, T>,
    train: &PointSet<T>,
    k: usize,
    metric: Metric,
) -> Result<GroundTruthRow> {
    if k == 0 {
        return Err(Error::usage("k must be positive"));
    }
    if k > train.len() {
        return Err(Error::usage(format!(
            "k={k} exceeds train set size {}",
            train.len()
        )));
    }
    let qdim = match query {
        PointRef::Dense(q) => q.len(),
        PointRef::Bits(q) => q.len(),
    };
    let tdim = match train {
        PointSet::Dense(m) => m.dim(),
        PointSet::Bits(m) => m.words_per_row(),
    };
    if query.kind() != train.kind() || qdim != tdim {
        return Err(Error::usage("query does not match train point kind/dimension"));
    }
    if query.kind() != metric.point_kind() {
        return Err(Error::usage(format!(
            "metric {metric} is not defined on {} points",
            query.kind()
        )));
    }
    let mut entries = Vec::with_capacity(train.len());
    for id in 0..train.len() {
        let d = distance_unchecked(query, train.point(id), metric);
        if d.is_nan() {
            return Err(Error::usage(format!(
                "distance to train point {id} undefined (zero-norm vector)"
            )));
        }
        entries.push((id, d));
    }
    let top = select_k(entries, k);
    Ok(GroundTruthRow {
        ids: top.iter().map(|e| e.0).collect(),
        distances: top.iter().map(|e| e.1).collect(),
    })
}
