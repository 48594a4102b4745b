//! Points, metrics and exact distance kernels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    /// Dense vector of reals.
    Float,
    /// Packed bit vector.
    Bit,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Float => "float",
            PointKind::Bit => "bit",
        }
    }
}

impl fmt::Display for PointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(PointKind::Float),
            "bit" => Ok(PointKind::Bit),
            other => Err(Error::usage(format!("unknown point kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// One minus cosine similarity.
    Angular,
    Hamming,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Euclidean, Metric::Angular, Metric::Hamming];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Angular => "angular",
            Metric::Hamming => "hamming",
        }
    }

    pub fn point_kind(self) -> PointKind {
        match self {
            Metric::Hamming => PointKind::Bit,
            Metric::Euclidean | Metric::Angular => PointKind::Float,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "angular" | "cosine" => Ok(Metric::Angular),
            "hamming" => Ok(Metric::Hamming),
            other => Err(Error::usage(format!("unknown metric `{other}`"))),
        }
    }
}

/// Row-major matrix of dense points.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    data: Vec<T>,
    rows: usize,
    dim: usize,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(data: Vec<T>, rows: usize, dim: usize) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::usage(format!(
                "matrix buffer has {} entries, expected {rows}x{dim}",
                data.len()
            )));
        }
        Ok(Self { data, rows, dim })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            data: vec![T::zero(); rows * dim],
            rows,
            dim,
        }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::usage(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            data,
            rows: rows.len(),
            dim,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copies the selected rows, in the order given.
    pub fn select(&self, ids: &[usize]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            rows: ids.len(),
            dim: self.dim,
        }
    }
}

/// Row-major matrix of bit vectors packed into 64-bit words.
///
/// Bit `j` of a row lives in word `j / 64` at position `j % 64`; padding bits
/// past the dimensionality are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    words: Vec<u64>,
    rows: usize,
    dim: usize,
    words_per_row: usize,
}

impl BitMatrix {
    pub fn words_for(dim: usize) -> usize {
        dim.div_ceil(64)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        let words_per_row = Self::words_for(dim);
        Self {
            words: vec![0; rows * words_per_row],
            rows,
            dim,
            words_per_row,
        }
    }

    pub fn from_words(words: Vec<u64>, rows: usize, dim: usize) -> Result<Self> {
        let words_per_row = Self::words_for(dim);
        if words.len() != rows * words_per_row {
            return Err(Error::usage(format!(
                "bit buffer has {} words, expected {rows}x{words_per_row}",
                words.len()
            )));
        }
        let m = Self {
            words,
            rows,
            dim,
            words_per_row,
        };
        if dim % 64 != 0 {
            let mask = !((1u64 << (dim % 64)) - 1);
            for i in 0..rows {
                if m.row(i)[words_per_row - 1] & mask != 0 {
                    return Err(Error::usage(format!("row {i} has bits set past dimension {dim}")));
                }
            }
        }
        Ok(m)
    }

    /// Builds from one `bool`-like byte (0 or nonzero) per dimension.
    pub fn from_bytes_per_bit(bits: &[u8], rows: usize, dim: usize) -> Result<Self> {
        if bits.len() != rows * dim {
            return Err(Error::usage(format!(
                "bit array has {} entries, expected {rows}x{dim}",
                bits.len()
            )));
        }
        let mut m = Self::zeros(rows, dim);
        for i in 0..rows {
            for j in 0..dim {
                if bits[i * dim + j] != 0 {
                    m.set(i, j, true);
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`BitMatrix::from_bytes_per_bit`].
    pub fn to_bytes_per_bit(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.rows * self.dim);
        for i in 0..self.rows {
            for j in 0..self.dim {
                out.push(self.get(i, j) as u8);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        get_bit(self.row(i), j)
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        let w = &mut self.words[i * self.words_per_row + j / 64];
        if v {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    pub fn as_words(&self) -> &[u64] {
        &self.words
    }

    pub fn select(&self, ids: &[usize]) -> Self {
        let mut words = Vec::with_capacity(ids.len() * self.words_per_row);
        for &i in ids {
            words.extend_from_slice(self.row(i));
        }
        Self {
            words,
            rows: ids.len(),
            dim: self.dim,
            words_per_row: self.words_per_row,
        }
    }
}

#[inline]
pub fn get_bit(row: &[u64], j: usize) -> bool {
    (row[j / 64] >> (j % 64)) & 1 == 1
}

/// A set of points of one kind and dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub enum PointSet<T> {
    Dense(DenseMatrix<T>),
    Bits(BitMatrix),
}

/// Borrowed view of a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointRef<'a, T> {
    Dense(&'a [T]),
    Bits(&'a [u64]),
}

impl<T: Scalar> PointSet<T> {
    pub fn len(&self) -> usize {
        match self {
            PointSet::Dense(m) => m.rows(),
            PointSet::Bits(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            PointSet::Dense(m) => m.dim(),
            PointSet::Bits(m) => m.dim(),
        }
    }

    pub fn kind(&self) -> PointKind {
        match self {
            PointSet::Dense(_) => PointKind::Float,
            PointSet::Bits(_) => PointKind::Bit,
        }
    }

    #[inline]
    pub fn point(&self, i: usize) -> PointRef<'_, T> {
        match self {
            PointSet::Dense(m) => PointRef::Dense(m.row(i)),
            PointSet::Bits(m) => PointRef::Bits(m.row(i)),
        }
    }

    pub fn select(&self, ids: &[usize]) -> Self {
        match self {
            PointSet::Dense(m) => PointSet::Dense(m.select(ids)),
            PointSet::Bits(m) => PointSet::Bits(m.select(ids)),
        }
    }

    /// Checks that the point kind suits `metric` and that float entries are finite.
    pub fn check_compatible(&self, metric: Metric) -> Result<()> {
        if self.kind() != metric.point_kind() {
            return Err(Error::validation(format!(
                "metric {metric} requires {} points, found {}",
                metric.point_kind(),
                self.kind()
            )));
        }
        if let PointSet::Dense(m) = self {
            if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite entry in row {}",
                    pos / m.dim().max(1)
                )));
            }
        }
        Ok(())
    }
}

impl<'a, T: Scalar> PointRef<'a, T> {
    pub fn kind(&self) -> PointKind {
        match self {
            PointRef::Dense(_) => PointKind::Float,
            PointRef::Bits(_) => PointKind::Bit,
        }
    }
}

#[inline]
pub fn squared_l2<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.widen() - y.widen();
            d * d
        })
        .sum()
}

#[inline]
pub fn l2<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    squared_l2(a, b).sqrt()
}

/// `1 - cos(a, b)`; NaN when either vector has zero norm.
#[inline]
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.widen(), y.widen());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    // sqrt(x * x) == x exactly, so identical inputs give exactly zero.
    (1.0 - dot / (na * nb).sqrt()).max(0.0)
}

#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Distance without precondition checks. Returns NaN for a zero-norm vector
/// under the angular metric and for kind/metric mismatches.
#[inline]
pub fn distance_unchecked<T: Scalar>(a: PointRef<'_, T>, b: PointRef<'_, T>, metric: Metric) -> f64 {
    match (a, b, metric) {
        (PointRef::Dense(a), PointRef::Dense(b), Metric::Euclidean) => l2(a, b),
        (PointRef::Dense(a), PointRef::Dense(b), Metric::Angular) => cosine_distance(a, b),
        (PointRef::Bits(a), PointRef::Bits(b), Metric::Hamming) => hamming(a, b) as f64,
        _ => f64::NAN,
    }
}

/// Exact distance between two points under `metric`.
pub fn distance<T: Scalar>(a: PointRef<'_, T>, b: PointRef<'_, T>, metric: Metric) -> Result<f64> {
    let (la, lb) = match (a, b) {
        (PointRef::Dense(a), PointRef::Dense(b)) => (a.len(), b.len()),
        (PointRef::Bits(a), PointRef::Bits(b)) => (a.len(), b.len()),
        _ => return Err(Error::usage("cannot compare dense and bit points")),
    };
    if la != lb {
        return Err(Error::usage(format!("dimension mismatch: {la} vs {lb}")));
    }
    if a.kind() != metric.point_kind() {
        return Err(Error::usage(format!(
            "metric {metric} is not defined on {} points",
            a.kind()
        )));
    }
    let d = distance_unchecked(a, b, metric);
    if d.is_nan() {
        return Err(Error::usage("zero-norm vector has no angular distance"));
    }
    Ok(d)
}
