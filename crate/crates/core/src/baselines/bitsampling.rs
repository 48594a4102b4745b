use std::collections::HashMap;

use rand::seq::index::sample;

use super::{rerank, Algorithm, Visited};
use crate::config::ConfigValue;
use crate::dataio::seeded_rng;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{get_bit, Metric, PointRef, PointSet};

#[derive(Debug, Clone)]
struct Table {
    positions: Vec<usize>,
    buckets: HashMap<u64, Vec<u32>>,
}

impl Table {
    fn key(&self, p: &[u64]) -> u64 {
        self.positions
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &pos)| acc | ((get_bit(p, pos) as u64) << i))
    }
}

/// Bit-sampling LSH for hamming space with multi-probe lookups.
pub struct BitSamplingIndex<T> {
    n_tables: usize,
    bits: usize,
    seed: u64,
    probes: usize,
    tables: Vec<Table>,
    /// Flip masks in probe order, shared by every table.
    probe_masks: Vec<u64>,
    train: Option<PointSet<T>>,
    visited: Visited,
    last_candidates: Option<usize>,
}

/// Masks over `bits` positions ordered by number of flipped bits, then
/// lexicographically by position; at most `limit` of them.
pub(crate) fn probe_sequence(bits: usize, limit: usize) -> Vec<u64> {
    let mut out = vec![0u64];
    let mut layer: Vec<(u64, usize)> = vec![(0, 0)];
    while out.len() < limit && !layer.is_empty() {
        let mut next = Vec::new();
        'outer: for &(mask, start) in &layer {
            for pos in start..bits {
                let m = mask | (1 << pos);
                next.push((m, pos + 1));
                out.push(m);
                if out.len() >= limit {
                    break 'outer;
                }
            }
        }
        layer = next;
    }
    out.truncate(limit.max(1));
    out
}

impl<T: Scalar> BitSamplingIndex<T> {
    pub fn new(metric: Metric, n_tables: usize, bits: usize, seed: u64) -> Result<Self> {
        if metric != Metric::Hamming {
            return Err(Error::config("bitsampling", "only hamming datasets are supported"));
        }
        if n_tables == 0 {
            return Err(Error::config("bitsampling", "need at least one table"));
        }
        if bits > 64 {
            return Err(Error::config("bitsampling", "at most 64 bits per hash"));
        }
        Ok(Self {
            n_tables,
            bits,
            seed,
            probes: 1,
            tables: Vec::new(),
            probe_masks: vec![0],
            train: None,
            visited: Visited::default(),
            last_candidates: None,
        })
    }
}

impl<T: Scalar> Algorithm<T> for BitSamplingIndex<T> {
    fn build(&mut self, train: &PointSet<T>) -> Result<()> {
        train.check_compatible(Metric::Hamming)?;
        let PointSet::Bits(m) = train else {
            return Err(Error::config("bitsampling", "bit points required"));
        };
        if self.bits > m.dim() {
            return Err(Error::config("bitsampling", "more hash bits than dimensions"));
        }
        let mut rng = seeded_rng(self.seed);
        self.tables = (0..self.n_tables)
            .map(|_| {
                let positions = sample(&mut rng, m.dim(), self.bits).into_vec();
                let mut t = Table {
                    positions,
                    buckets: HashMap::new(),
                };
                for i in 0..m.rows() {
                    let key = t.key(m.row(i));
                    t.buckets.entry(key).or_default().push(i as u32);
                }
                t
            })
            .collect();
        self.visited = Visited::new(m.rows());
        self.train = Some(train.clone());
        Ok(())
    }

    fn set_query_params(&mut self, params: &[ConfigValue]) -> Result<()> {
        match params {
            [v] => {
                let probes = v
                    .as_i64()
                    .filter(|&x| x >= 1)
                    .ok_or_else(|| Error::usage("probes must be a positive integer"))?;
                self.probes = probes as usize;
                self.probe_masks = probe_sequence(self.bits, self.probes);
                Ok(())
            }
            _ => Err(Error::usage("bitsampling takes one query parameter (probes)")),
        }
    }

    fn query(&mut self, q: PointRef<'_, T>, k: usize) -> Result<Vec<usize>> {
        let PointRef::Bits(qbits) = q else {
            return Err(Error::usage("bit query required"));
        };
        let train = self.train.as_ref().ok_or_else(|| Error::usage("index not built"))?;
        self.visited.reset();
        let mut cands = Vec::new();
        for t in &self.tables {
            let key = t.key(qbits);
            for mask in &self.probe_masks {
                if let Some(bucket) = t.buckets.get(&(key ^ mask)) {
                    for &id in bucket {
                        if self.visited.insert(id as usize) {
                            cands.push(id as usize);
                        }
                    }
                }
            }
        }
        self.last_candidates = Some(cands.len());
        Ok(rerank(q, train, cands, k, Metric::Hamming))
    }

    fn last_candidates(&self) -> Option<usize> {
        self.last_candidates
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::testutil::uniform;
    use crate::dataio::DatasetFile;
    use crate::space::distance_unchecked;

    /// Distance-threshold recall against the stored ground truth.
    fn dist_recall(ds: &DatasetFile, idx: &mut BitSamplingIndex<f32>, k: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..ds.test.len() {
            let r = idx.query(ds.test.point(i), k).unwrap();
            let thr = ds.ground_truth.distances(i)[k - 1] as f64;
            total += r
                .iter()
                .filter(|&&id| distance_unchecked(ds.test.point(i), ds.train.point(id), Metric::Hamming) <= thr)
                .count() as f64
                / k as f64;
        }
        total / ds.test.len() as f64
    }

    #[test]
    fn probe_order() {
        assert_eq!(probe_sequence(3, 1), vec![0]);
        assert_eq!(probe_sequence(3, 5), vec![0, 1, 2, 4, 3]);
        assert_eq!(probe_sequence(3, 100).len(), 8);
        assert_eq!(probe_sequence(0, 4), vec![0]);
    }

    #[test]
    fn zero_bits_is_brute_force() {
        let ds = uniform(300, 10, 64, 10, Metric::Hamming, 1);
        let mut idx = BitSamplingIndex::new(Metric::Hamming, 1, 0, 0).unwrap();
        idx.build(&ds.train).unwrap();
        idx.set_query_params(&[ConfigValue::Int(1)]).unwrap();
        assert_eq!(dist_recall(&ds, &mut idx, 10), 1.0);
        assert_eq!(idx.last_candidates(), Some(300));
    }

    #[test]
    fn identical_code_always_collides() {
        let ds = uniform(500, 5, 128, 3, Metric::Hamming, 2);
        let mut idx = BitSamplingIndex::new(Metric::Hamming, 4, 20, 3).unwrap();
        idx.build(&ds.train).unwrap();
        idx.set_query_params(&[ConfigValue::Int(1)]).unwrap();
        for i in (0..500).step_by(50) {
            let r = idx.query(ds.train.point(i), 1).unwrap();
            assert_eq!(r, vec![i]);
        }
    }

    #[test]
    fn bucket_membership_matches_hash() {
        let ds = uniform(200, 2, 100, 3, Metric::Hamming, 4);
        let mut idx = BitSamplingIndex::new(Metric::Hamming, 3, 6, 5).unwrap();
        idx.build(&ds.train).unwrap();
        for t in &idx.tables {
            assert!(t.positions.iter().all(|&p| p < 100));
            for (key, ids) in &t.buckets {
                for &id in ids {
                    assert_eq!(t.key(match ds.train.point(id as usize) {
                        PointRef::Bits(b) => b,
                        _ => unreachable!(),
                    }), *key);
                }
            }
        }
    }

    #[test]
    fn recall_grows_with_tables_and_probes() {
        let ds = uniform(4000, 40, 128, 10, Metric::Hamming, 6);
        let mut by_tables = Vec::new();
        for l in [1, 4, 16] {
            let mut idx = BitSamplingIndex::new(Metric::Hamming, l, 16, 7).unwrap();
            idx.build(&ds.train).unwrap();
            idx.set_query_params(&[ConfigValue::Int(1)]).unwrap();
            by_tables.push(dist_recall(&ds, &mut idx, 10));
        }
        assert!(by_tables[0] < by_tables[1] && by_tables[1] < by_tables[2], "{by_tables:?}");

        let mut idx = BitSamplingIndex::new(Metric::Hamming, 4, 16, 7).unwrap();
        idx.build(&ds.train).unwrap();
        idx.set_query_params(&[ConfigValue::Int(1)]).unwrap();
        let one = dist_recall(&ds, &mut idx, 10);
        idx.set_query_params(&[ConfigValue::Int(17)]).unwrap();
        let many = dist_recall(&ds, &mut idx, 10);
        assert!(many > one);
    }

    #[test]
    fn float_dataset_is_a_config_error() {
        assert!(matches!(
            BitSamplingIndex::<f32>::new(Metric::Euclidean, 1, 4, 0),
            Err(Error::Config { .. })
        ));
    }
}
