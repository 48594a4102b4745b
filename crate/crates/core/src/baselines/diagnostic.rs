use std::time::Duration;

use super::{Algorithm, BruteForce};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{Metric, PointRef, PointSet};

/// Stores nothing and answers every query with an empty tuple.
pub struct Noop;

impl<T: Scalar> Algorithm<T> for Noop {
    fn build(&mut self, _train: &PointSet<T>) -> Result<()> {
        Ok(())
    }

    fn query(&mut self, _q: PointRef<'_, T>, _k: usize) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }
}

/// Never finishes building.
pub struct Hang;

impl<T: Scalar> Algorithm<T> for Hang {
    fn build(&mut self, _train: &PointSet<T>) -> Result<()> {
        loop {
            std::thread::sleep(Duration::from_secs(3600));
        }
    }

    fn query(&mut self, _q: PointRef<'_, T>, _k: usize) -> Result<Vec<usize>> {
        unreachable!("build never returns")
    }
}

/// Aborts the process during build.
pub struct Crash;

impl<T: Scalar> Algorithm<T> for Crash {
    fn build(&mut self, _train: &PointSet<T>) -> Result<()> {
        std::process::abort()
    }

    fn query(&mut self, _q: PointRef<'_, T>, _k: usize) -> Result<Vec<usize>> {
        unreachable!("build never returns")
    }
}

/// Holds a resident buffer of the given size for the lifetime of the index.
pub struct Retain {
    megabytes: usize,
    buffer: Vec<u8>,
}

impl Retain {
    pub fn new(megabytes: usize) -> Self {
        Self {
            megabytes,
            buffer: Vec::new(),
        }
    }
}

impl<T: Scalar> Algorithm<T> for Retain {
    fn build(&mut self, _train: &PointSet<T>) -> Result<()> {
        // Non-zero fill so every page is actually touched.
        self.buffer = vec![1u8; self.megabytes * 1_000_000];
        Ok(())
    }

    fn query(&mut self, _q: PointRef<'_, T>, _k: usize) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn attributes(&self) -> Vec<(String, String)> {
        vec![("retained_bytes".into(), self.buffer.len().to_string())]
    }
}

/// Exact answers with scripted per-query delays.
///
/// The `p`-th pass over the query set (passes are `queries_per_pass` calls
/// long) sleeps `delays[p % delays.len()]` seconds per query.
pub struct Scripted<T> {
    inner: BruteForce<T>,
    queries_per_pass: usize,
    delays: Vec<f64>,
    calls: usize,
}

impl<T: Scalar> Scripted<T> {
    pub fn new(metric: Metric, queries_per_pass: usize, delays: Vec<f64>) -> Result<Self> {
        if queries_per_pass == 0 || delays.is_empty() || delays.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::config("debug-scripted", "need a positive pass length and non-negative delays"));
        }
        Ok(Self {
            inner: BruteForce::new(metric),
            queries_per_pass,
            delays,
            calls: 0,
        })
    }
}

impl<T: Scalar> Algorithm<T> for Scripted<T> {
    fn build(&mut self, train: &PointSet<T>) -> Result<()> {
        self.inner.build(train)
    }

    fn set_query_params(&mut self, _params: &[crate::config::ConfigValue]) -> Result<()> {
        Ok(())
    }

    fn query(&mut self, q: PointRef<'_, T>, k: usize) -> Result<Vec<usize>> {
        let pass = self.calls / self.queries_per_pass;
        self.calls += 1;
        std::thread::sleep(Duration::from_secs_f64(self.delays[pass % self.delays.len()]));
        self.inner.query(q, k)
    }

    fn last_candidates(&self) -> Option<usize> {
        self.inner.last_candidates()
    }
}
