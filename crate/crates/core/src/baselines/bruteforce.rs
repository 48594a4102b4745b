use rayon::prelude::*;

use super::Algorithm;
use crate::error::{Error, Result};
use crate::knn::{brute_force_knn, GroundTruthRow};
use crate::scalar::Scalar;
use crate::space::{Metric, PointRef, PointSet};

/// Exact linear scan. Batch mode fans out across all available cores.
pub struct BruteForce<T> {
    metric: Metric,
    train: Option<PointSet<T>>,
    pending: Option<Vec<GroundTruthRow>>,
}

impl<T: Scalar> BruteForce<T> {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            train: None,
            pending: None,
        }
    }

    fn train(&self) -> Result<&PointSet<T>> {
        self.train.as_ref().ok_or_else(|| Error::usage("index not built"))
    }
}

impl<T: Scalar> Algorithm<T> for BruteForce<T> {
    fn build(&mut self, train: &PointSet<T>) -> Result<()> {
        train.check_compatible(self.metric)?;
        self.train = Some(train.clone());
        Ok(())
    }

    fn query(&mut self, q: PointRef<'_, T>, k: usize) -> Result<Vec<usize>> {
        let train = self.train()?;
        let row = brute_force_knn(q, train, k.min(train.len()), self.metric)?;
        Ok(row.ids)
    }

    fn last_candidates(&self) -> Option<usize> {
        self.train.as_ref().map(PointSet::len)
    }

    fn supports_batch(&self) -> bool {
        true
    }

    fn batch_query(&mut self, queries: &PointSet<T>, k: usize) -> Result<()> {
        let train = self.train()?;
        let k = k.min(train.len());
        let metric = self.metric;
        let rows = (0..queries.len())
            .into_par_iter()
            .map(|i| brute_force_knn(queries.point(i), train, k, metric))
            .collect::<Result<Vec<_>>>()?;
        self.pending = Some(rows);
        Ok(())
    }

    fn batch_results(&mut self) -> Result<Vec<Vec<usize>>> {
        let rows = self
            .pending
            .take()
            .ok_or_else(|| Error::usage("no batch query pending"))?;
        Ok(rows.into_iter().map(|r| r.ids).collect())
    }

    fn batch_candidates(&self) -> Option<Vec<usize>> {
        let n = self.train.as_ref()?.len();
        self.pending.as_ref().map(|rows| vec![n; rows.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::testutil::uniform;

    #[test]
    fn matches_ground_truth_rows() {
        let ds = uniform(500, 20, 8, 10, Metric::Euclidean, 1);
        let mut bf = BruteForce::new(Metric::Euclidean);
        bf.build(&ds.train).unwrap();
        for i in 0..ds.test.len() {
            let ids = bf.query(ds.test.point(i), 10).unwrap();
            assert_eq!(ids.as_slice(), ds.ground_truth.ids(i));
            assert_eq!(bf.last_candidates(), Some(500));
        }
    }

    #[test]
    fn batch_equals_single() {
        let ds = uniform(400, 30, 6, 5, Metric::Angular, 2);
        let mut bf = BruteForce::new(Metric::Angular);
        bf.build(&ds.train).unwrap();
        let single: Vec<Vec<usize>> = (0..ds.test.len())
            .map(|i| bf.query(ds.test.point(i), 5).unwrap())
            .collect();
        bf.batch_query(&ds.test, 5).unwrap();
        assert_eq!(bf.batch_candidates(), Some(vec![400; 30]));
        assert_eq!(bf.batch_results().unwrap(), single);
    }
}
