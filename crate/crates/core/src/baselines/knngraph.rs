use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rayon::prelude::*;

use super::{Algorithm, Visited};
use crate::config::ConfigValue;
use crate::dataio::seeded_rng;
use crate::error::{Error, Result};
use crate::knn::brute_force_knn;
use crate::scalar::Scalar;
use crate::space::{distance_unchecked, Metric, PointRef, PointSet};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Exact k-NN graph searched greedily with a bounded beam.
pub struct KnnGraphIndex<T> {
    metric: Metric,
    degree: usize,
    n_entries: usize,
    seed: u64,
    beam_width: usize,
    clamped: bool,
    adjacency: Vec<Vec<u32>>,
    entries: Vec<usize>,
    train: Option<PointSet<T>>,
    visited: Visited,
    last_candidates: Option<usize>,
}

impl<T: Scalar> KnnGraphIndex<T> {
    pub fn new(metric: Metric, degree: usize, n_entries: usize, seed: u64) -> Result<Self> {
        if degree == 0 || n_entries == 0 {
            return Err(Error::config("knngraph", "degree and entry points must be positive"));
        }
        Ok(Self {
            metric,
            degree,
            n_entries,
            seed,
            beam_width: 0,
            clamped: false,
            adjacency: Vec::new(),
            entries: Vec::new(),
            train: None,
            visited: Visited::default(),
            last_candidates: None,
        })
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.adjacency[node]
    }

    fn search(&mut self, q: PointRef<'_, T>, k: usize) -> Result<Vec<usize>> {
        let train = self.train.as_ref().ok_or_else(|| Error::usage("index not built"))?;
        let ef = self.beam_width.max(k);
        let metric = self.metric;
        let dist = |id: usize| distance_unchecked(q, train.point(id), metric);
        self.visited.reset();
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut beam: BinaryHeap<Cand> = BinaryHeap::new();
        let mut computed = 0usize;
        for &e in &self.entries {
            if self.visited.insert(e) {
                let c = Cand(dist(e), e);
                computed += 1;
                frontier.push(Reverse(c));
                beam.push(c);
                if beam.len() > ef {
                    beam.pop();
                }
            }
        }
        while let Some(Reverse(c)) = frontier.pop() {
            if beam.len() >= ef && beam.peek().is_some_and(|w| c > *w) {
                break;
            }
            for &nb in &self.adjacency[c.1] {
                let nb = nb as usize;
                if !self.visited.insert(nb) {
                    continue;
                }
                let cand = Cand(dist(nb), nb);
                computed += 1;
                if beam.len() < ef || beam.peek().is_some_and(|w| cand < *w) {
                    frontier.push(Reverse(cand));
                    beam.push(cand);
                    if beam.len() > ef {
                        beam.pop();
                    }
                }
            }
        }
        self.last_candidates = Some(computed);
        let mut out = beam.into_sorted_vec();
        out.truncate(k);
        Ok(out.into_iter().map(|c| c.1).collect())
    }
}

impl<T: Scalar> Algorithm<T> for KnnGraphIndex<T> {
    fn build(&mut self, train: &PointSet<T>) -> Result<()> {
        train.check_compatible(self.metric)?;
        let n = train.len();
        if n < 2 {
            return Err(Error::usage("knngraph needs at least two points"));
        }
        let g = self.degree.min(n - 1);
        let metric = self.metric;
        self.adjacency = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = brute_force_knn(train.point(i), train, g + 1, metric)?;
                Ok(row
                    .ids
                    .into_iter()
                    .filter(|&j| j != i)
                    .take(g)
                    .map(|j| j as u32)
                    .collect())
            })
            .collect::<Result<Vec<Vec<u32>>>>()?;
        let mut rng = seeded_rng(self.seed);
        self.entries = sample(&mut rng, n, self.n_entries.min(n)).into_vec();
        self.visited = Visited::new(n);
        self.train = Some(train.clone());
        Ok(())
    }

    fn set_query_params(&mut self, params: &[ConfigValue]) -> Result<()> {
        match params {
            [v] => {
                self.beam_width = v
                    .as_i64()
                    .and_then(|x| usize::try_from(x).ok())
                    .ok_or_else(|| Error::usage("beam_width must be a non-negative integer"))?;
                Ok(())
            }
            _ => Err(Error::usage("knngraph takes one query parameter (beam_width)")),
        }
    }

    fn query(&mut self, q: PointRef<'_, T>, k: usize) -> Result<Vec<usize>> {
        if self.beam_width < k {
            self.clamped = true;
        }
        self.search(q, k)
    }

    fn last_candidates(&self) -> Option<usize> {
        self.last_candidates
    }

    fn attributes(&self) -> Vec<(String, String)> {
        if self.clamped {
            vec![("warning".into(), "beam_width clamped up to k".into())]
        } else {
            Vec::new()
        }
    }
}
