use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{rerank, Algorithm, Visited};
use crate::config::ConfigValue;
use crate::dataio::seeded_rng;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{DenseMatrix, Metric, PointRef, PointSet};

const SPLIT_RETRIES: usize = 3;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf(Vec<u32>),
    /// Points with positive margin go to `children[1]`.
    Plane {
        normal: Vec<T>,
        offset: f64,
        children: [u32; 2],
    },
    /// Fallback for nodes no hyperplane could separate.
    Halves { children: [u32; 2] },
}

#[derive(Debug, Clone)]
struct Tree<T> {
    nodes: Vec<Node<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Prio(f64, u32, u32);

impl Eq for Prio {}

impl PartialOrd for Prio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Prio {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total_cmp(&other.0)
            .then_with(|| other.1.cmp(&self.1))
            .then_with(|| other.2.cmp(&self.2))
    }
}

/// Forest of random-projection trees searched with one shared priority queue.
pub struct RpForestIndex<T> {
    metric: Metric,
    n_trees: usize,
    leaf_size: usize,
    seed: u64,
    search_candidates: usize,
    clamped: bool,
    trees: Vec<Tree<T>>,
    train: Option<PointSet<T>>,
    visited: Visited,
    last_candidates: Option<usize>,
    pending: Option<Vec<(Vec<usize>, usize)>>,
}

fn margin<T: Scalar>(normal: &[T], offset: f64, p: &[T]) -> f64 {
    normal
        .iter()
        .zip(p)
        .map(|(&a, &b)| a.widen() * b.widen())
        .sum::<f64>()
        - offset
}

fn unit(p: &[f64]) -> Option<Vec<f64>> {
    let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| p.iter().map(|x| x / n).collect())
}

impl<T: Scalar> RpForestIndex<T> {
    pub fn new(metric: Metric, n_trees: usize, leaf_size: usize, seed: u64) -> Result<Self> {
        if metric == Metric::Hamming {
            return Err(Error::config("rpforest", "hamming datasets are not supported"));
        }
        if n_trees == 0 || leaf_size == 0 {
            return Err(Error::config("rpforest", "trees and leaf size must be positive"));
        }
        Ok(Self {
            metric,
            n_trees,
            leaf_size,
            seed,
            search_candidates: 0,
            clamped: false,
            trees: Vec::new(),
            train: None,
            visited: Visited::default(),
            last_candidates: None,
            pending: None,
        })
    }

    /// Hyperplane through the midpoint of two sampled points (euclidean) or
    /// through the origin between their directions (angular).
    fn try_plane(&self, data: &DenseMatrix<T>, ids: &[u32], rng: &mut impl Rng) -> Option<(Vec<T>, f64)> {
        let a = ids[rng.random_range(0..ids.len())] as usize;
        let b = ids[rng.random_range(0..ids.len())] as usize;
        if a == b {
            return None;
        }
        let pa: Vec<f64> = data.row(a).iter().map(|x| x.widen()).collect();
        let pb: Vec<f64> = data.row(b).iter().map(|x| x.widen()).collect();
        let (normal, offset) = match self.metric {
            Metric::Angular => {
                let (ua, ub) = (unit(&pa)?, unit(&pb)?);
                (ua.iter().zip(&ub).map(|(x, y)| x - y).collect::<Vec<_>>(), 0.0)
            }
            _ => {
                let normal: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
                let offset = normal
                    .iter()
                    .zip(pa.iter().zip(&pb))
                    .map(|(n, (x, y))| n * (x + y) * 0.5)
                    .sum();
                (normal, offset)
            }
        };
        if normal.iter().all(|&x| x == 0.0) {
            return None;
        }
        Some((normal.into_iter().map(T::narrow).collect(), offset))
    }

    fn build_tree(&self, data: &DenseMatrix<T>, tree_seed: u64) -> Tree<T> {
        let mut rng = seeded_rng(tree_seed);
        let mut nodes: Vec<Node<T>> = vec![Node::Leaf(Vec::new())];
        let mut stack: Vec<(u32, Vec<u32>)> = vec![(0, (0..data.rows() as u32).collect())];
        while let Some((slot, ids)) = stack.pop() {
            if ids.len() <= self.leaf_size {
                nodes[slot as usize] = Node::Leaf(ids);
                continue;
            }
            let mut split = None;
            for _ in 0..SPLIT_RETRIES {
                let Some((normal, offset)) = self.try_plane(data, &ids, &mut rng) else {
                    continue;
                };
                let (right, left): (Vec<u32>, Vec<u32>) = ids
                    .iter()
                    .partition(|&&i| margin(&normal, offset, data.row(i as usize)) > 0.0);
                if !left.is_empty() && !right.is_empty() {
                    split = Some((Some((normal, offset)), left, right));
                    break;
                }
            }
            let (plane, left, right) = split.unwrap_or_else(|| {
                let mut ids = ids;
                ids.shuffle(&mut rng);
                let right = ids.split_off(ids.len() / 2);
                (None, ids, right)
            });
            let children = [nodes.len() as u32, nodes.len() as u32 + 1];
            nodes.push(Node::Leaf(Vec::new()));
            nodes.push(Node::Leaf(Vec::new()));
            nodes[slot as usize] = match plane {
                Some((normal, offset)) => Node::Plane {
                    normal,
                    offset,
                    children,
                },
                None => Node::Halves { children },
            };
            stack.push((children[0], left));
            stack.push((children[1], right));
        }
        Tree { nodes }
    }

    /// Collects at least `want` distinct candidates (or all points).
    fn candidates(&self, q: &[T], want: usize, visited: &mut Visited) -> Vec<usize> {
        visited.reset();
        let mut out = Vec::with_capacity(want + self.leaf_size);
        let mut heap = BinaryHeap::new();
        for t in 0..self.trees.len() {
            heap.push(Prio(f64::INFINITY, t as u32, 0));
        }
        while let Some(Prio(p, t, node)) = heap.pop() {
            if out.len() >= want {
                break;
            }
            match &self.trees[t as usize].nodes[node as usize] {
                Node::Leaf(ids) => {
                    for &id in ids {
                        if visited.insert(id as usize) {
                            out.push(id as usize);
                        }
                    }
                }
                Node::Plane {
                    normal,
                    offset,
                    children,
                } => {
                    let m = margin(normal, *offset, q);
                    heap.push(Prio(p.min(m), t, children[1]));
                    heap.push(Prio(p.min(-m), t, children[0]));
                }
                Node::Halves { children } => {
                    heap.push(Prio(p, t, children[0]));
                    heap.push(Prio(p, t, children[1]));
                }
            }
        }
        out
    }

    fn search(&self, q: &[T], k: usize, visited: &mut Visited) -> Result<(Vec<usize>, usize)> {
        let train = self.train.as_ref().ok_or_else(|| Error::usage("index not built"))?;
        let want = self.search_candidates.max(k);
        let cands = self.candidates(q, want, visited);
        let n = cands.len();
        Ok((rerank(PointRef::Dense(q), train, cands, k, self.metric), n))
    }
}

impl<T: Scalar> Algorithm<T> for RpForestIndex<T> {
    fn build(&mut self, train: &PointSet<T>) -> Result<()> {
        train.check_compatible(self.metric)?;
        let PointSet::Dense(data) = train else {
            return Err(Error::config("rpforest", "dense points required"));
        };
        let seeds: Vec<u64> = {
            let mut rng = seeded_rng(self.seed);
            (0..self.n_trees).map(|_| rng.random()).collect()
        };
        let this = &*self;
        let trees = seeds
            .par_iter()
            .map(|&s| this.build_tree(data, s))
            .collect::<Vec<_>>();
        self.trees = trees;
        self.visited = Visited::new(data.rows());
        self.train = Some(train.clone());
        Ok(())
    }

    fn set_query_params(&mut self, params: &[ConfigValue]) -> Result<()> {
        match params {
            [v] => {
                self.search_candidates = v
                    .as_i64()
                    .and_then(|x| usize::try_from(x).ok())
                    .ok_or_else(|| Error::usage("search_candidates must be a non-negative integer"))?;
                Ok(())
            }
            _ => Err(Error::usage("rpforest takes one query parameter (search_candidates)")),
        }
    }

    fn query(&mut self, q: PointRef<'_, T>, k: usize) -> Result<Vec<usize>> {
        let PointRef::Dense(q) = q else {
            return Err(Error::usage("dense query required"));
        };
        if self.search_candidates < k {
            self.clamped = true;
        }
        let mut visited = std::mem::take(&mut self.visited);
        let res = self.search(q, k, &mut visited);
        self.visited = visited;
        let (ids, n) = res?;
        self.last_candidates = Some(n);
        Ok(ids)
    }

    fn last_candidates(&self) -> Option<usize> {
        self.last_candidates
    }

    fn supports_batch(&self) -> bool {
        true
    }

    fn batch_query(&mut self, queries: &PointSet<T>, k: usize) -> Result<()> {
        let PointSet::Dense(qs) = queries else {
            return Err(Error::usage("dense queries required"));
        };
        if self.search_candidates < k {
            self.clamped = true;
        }
        let n = self.train.as_ref().map_or(0, PointSet::len);
        let this = &*self;
        let rows = (0..qs.rows())
            .into_par_iter()
            .map_init(|| Visited::new(n), |visited, i| this.search(qs.row(i), k, visited))
            .collect::<Result<Vec<_>>>()?;
        self.pending = Some(rows);
        Ok(())
    }

    fn batch_results(&mut self) -> Result<Vec<Vec<usize>>> {
        let rows = self.pending.as_ref().ok_or_else(|| Error::usage("no batch query pending"))?;
        Ok(rows.iter().map(|r| r.0.clone()).collect())
    }

    fn batch_candidates(&self) -> Option<Vec<usize>> {
        self.pending.as_ref().map(|rows| rows.iter().map(|r| r.1).collect())
    }

    fn attributes(&self) -> Vec<(String, String)> {
        if self.clamped {
            vec![("warning".into(), "search_candidates clamped up to k".into())]
        } else {
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::testutil::{id_recall, uniform};

    fn run(ds: &crate::dataio::DatasetFile, idx: &mut RpForestIndex<f32>, sc: i64, k: usize) -> (f64, f64) {
        idx.set_query_params(&[ConfigValue::Int(sc)]).unwrap();
        let mut n_total = 0;
        let results: Vec<Vec<usize>> = (0..ds.test.len())
            .map(|i| {
                let r = idx.query(ds.test.point(i), k).unwrap();
                n_total += idx.last_candidates().unwrap();
                assert!(idx.last_candidates().unwrap() >= r.len());
                r
            })
            .collect();
        (id_recall(ds, &results, k), n_total as f64 / ds.test.len() as f64)
    }

    #[test]
    fn full_scan_is_exact() {
        for metric in [Metric::Euclidean, Metric::Angular] {
            let ds = uniform(600, 20, 6, 10, metric, 3);
            let mut idx = RpForestIndex::new(metric, 3, 8, 1).unwrap();
            idx.build(&ds.train).unwrap();
            let (recall, n) = run(&ds, &mut idx, 600, 10);
            assert_eq!(recall, 1.0);
            assert_eq!(n, 600.0);
        }
    }

    #[test]
    fn every_id_in_one_leaf_per_tree() {
        let ds = uniform(500, 5, 4, 3, Metric::Euclidean, 4);
        let mut idx = RpForestIndex::new(Metric::Euclidean, 4, 10, 9).unwrap();
        idx.build(&ds.train).unwrap();
        for tree in &idx.trees {
            let mut count = vec![0; 500];
            for node in &tree.nodes {
                if let Node::Leaf(ids) = node {
                    assert!(ids.len() <= 10);
                    for &i in ids {
                        count[i as usize] += 1;
                    }
                }
            }
            assert!(count.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn duplicate_points_fall_back_to_halving() {
        let rows = vec![vec![1.0f32, 2.0]; 100];
        let train = PointSet::Dense(DenseMatrix::from_rows(&rows).unwrap());
        let mut idx = RpForestIndex::new(Metric::Euclidean, 2, 4, 0).unwrap();
        idx.build(&train).unwrap();
        assert!(idx.trees[0].nodes.iter().any(|n| matches!(n, Node::Halves { .. })));
        idx.set_query_params(&[ConfigValue::Int(100)]).unwrap();
        assert_eq!(idx.query(PointRef::Dense(&[1.0, 2.0]), 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn recall_trend_in_search_candidates() {
        let ds = uniform(3000, 50, 10, 10, Metric::Euclidean, 5);
        let mut idx = RpForestIndex::new(Metric::Euclidean, 8, 16, 2).unwrap();
        idx.build(&ds.train).unwrap();
        let mut prev = 0.0;
        for sc in [10, 50, 200, 800, 3000] {
            let (r, _) = run(&ds, &mut idx, sc, 10);
            assert!(r + 0.01 >= prev, "recall fell from {prev} to {r} at {sc}");
            prev = r;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn small_budget_is_clamped_to_k() {
        let ds = uniform(200, 3, 4, 5, Metric::Euclidean, 6);
        let mut idx = RpForestIndex::new(Metric::Euclidean, 2, 4, 2).unwrap();
        idx.build(&ds.train).unwrap();
        idx.set_query_params(&[ConfigValue::Int(1)]).unwrap();
        assert_eq!(idx.query(ds.test.point(0), 5).unwrap().len(), 5);
        assert!(idx.last_candidates().unwrap() >= 5);
        assert!(!idx.attributes().is_empty());
    }

    #[test]
    fn batch_equals_single_and_is_deterministic() {
        let ds = uniform(2000, 40, 8, 10, Metric::Euclidean, 7);
        let mut a = RpForestIndex::new(Metric::Euclidean, 4, 16, 42).unwrap();
        let mut b = RpForestIndex::new(Metric::Euclidean, 4, 16, 42).unwrap();
        a.build(&ds.train).unwrap();
        b.build(&ds.train).unwrap();
        a.set_query_params(&[ConfigValue::Int(100)]).unwrap();
        b.set_query_params(&[ConfigValue::Int(100)]).unwrap();
        let single: Vec<Vec<usize>> = (0..40).map(|i| a.query(ds.test.point(i), 10).unwrap()).collect();
        b.batch_query(&ds.test, 10).unwrap();
        assert_eq!(b.batch_results().unwrap(), single);
    }

    #[test]
    fn hamming_is_rejected() {
        assert!(matches!(
            RpForestIndex::<f32>::new(Metric::Hamming, 2, 4, 0),
            Err(Error::Config { .. })
        ));
    }
}
