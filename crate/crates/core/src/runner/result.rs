use std::collections::BTreeMap;
use std::path::Path;

use hdf5_metno::File;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::ConfigValue;
use crate::dataio::container::{read_attrs, require, shape2, tmp_path, write_str_attr};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SingleQuery,
    Batch,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SingleQuery => "single-query",
            Mode::Batch => "batch",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-query" | "single" => Ok(Mode::SingleQuery),
            "batch" => Ok(Mode::Batch),
            _ => Err(Error::usage(format!("unknown mode `{s}` (single-query, batch)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything recorded for one query-parameter group of one instance.
///
/// `neighbors` and `distances` are row-major `m × k`; rows shorter than `k`
/// are padded with -1 and +inf. Distances are recomputed by the harness and
/// each row is sorted by (distance, id).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub dataset: String,
    pub algorithm: String,
    pub label: String,
    pub group: String,
    pub constructor_args: Vec<ConfigValue>,
    pub query_params: Vec<ConfigValue>,
    pub k: usize,
    pub mode: Mode,
    pub build_time: f64,
    /// Resident-set growth during build in kB; `None` when unmeasurable.
    pub index_size: Option<f64>,
    pub neighbors: Vec<i32>,
    pub distances: Vec<f64>,
    pub times: Vec<f64>,
    pub candidates: Option<Vec<f64>>,
    /// Wall time of the whole batch call, batch mode only.
    pub batch_time: Option<f64>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Params<'a> {
    constructor_args: std::borrow::Cow<'a, [ConfigValue]>,
    query_params: std::borrow::Cow<'a, [ConfigValue]>,
}

const OWN_ATTRS: [&str; 11] = [
    "dataset",
    "algorithm",
    "label",
    "group",
    "params",
    "k",
    "mode",
    "build_time",
    "index_size",
    "batch_time",
    "status",
];

impl GroupResult {
    pub fn queries(&self) -> usize {
        self.times.len()
    }

    /// Returned ids of query `i`, padding removed.
    pub fn ids(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i * self.k..(i + 1) * self.k]
            .iter()
            .take_while(|&&id| id >= 0)
            .map(|&id| id as usize)
    }

    pub fn row_distances(&self, i: usize) -> &[f64] {
        let row = &self.distances[i * self.k..(i + 1) * self.k];
        let n = self.ids(i).count();
        &row[..n]
    }

    pub fn params_json(&self) -> String {
        serde_json::to_string(&Params {
            constructor_args: (&self.constructor_args[..]).into(),
            query_params: (&self.query_params[..]).into(),
        })
        .expect("config values serialize")
    }

    /// Writes the result file atomically.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let m = self.queries();
        if self.neighbors.len() != m * self.k || self.distances.len() != m * self.k {
            return Err(Error::run("result arrays do not match m × k"));
        }
        let tmp = tmp_path(path);
        let result = (|| -> Result<()> {
            let file = File::create(&tmp)?;
            let shape = (m, self.k);
            let nb = Array2::from_shape_vec(shape, self.neighbors.clone()).map_err(|e| Error::run(e.to_string()))?;
            file.new_dataset_builder().with_data(&nb).create("neighbors")?;
            let ds = Array2::from_shape_vec(shape, self.distances.clone()).map_err(|e| Error::run(e.to_string()))?;
            file.new_dataset_builder().with_data(&ds).create("distances")?;
            file.new_dataset_builder()
                .with_data(&Array1::from(self.times.clone()))
                .create("times")?;
            if let Some(c) = &self.candidates {
                file.new_dataset_builder()
                    .with_data(&Array1::from(c.clone()))
                    .create("candidates")?;
            }
            let float = |key: &str, v: f64| -> Result<()> {
                file.new_attr::<f64>().create(key)?.write_scalar(&v)?;
                Ok(())
            };
            write_str_attr(&file, "dataset", &self.dataset)?;
            write_str_attr(&file, "algorithm", &self.algorithm)?;
            write_str_attr(&file, "label", &self.label)?;
            write_str_attr(&file, "group", &self.group)?;
            write_str_attr(&file, "params", &self.params_json())?;
            write_str_attr(&file, "mode", self.mode.as_str())?;
            write_str_attr(&file, "status", "completed")?;
            file.new_attr::<i64>().create("k")?.write_scalar(&(self.k as i64))?;
            float("build_time", self.build_time)?;
            if let Some(s) = self.index_size {
                float("index_size", s)?;
            }
            if let Some(t) = self.batch_time {
                float("batch_time", t)?;
            }
            for (k, v) in &self.attributes {
                if OWN_ATTRS.contains(&k.as_str()) {
                    return Err(Error::run(format!("attribute name `{k}` is reserved")));
                }
                write_str_attr(&file, k, v)?;
            }
            file.close()?;
            Ok(())
        })();
        if let Err(e) = result {
            let _ = std::fs::remove_file(&tmp);
            return Err(e);
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut attrs = read_attrs(&file)?;
        let mut take = |key: &str| {
            attrs
                .remove(key)
                .ok_or_else(|| Error::format(format!("{}: missing attribute `{key}`", path.display())))
        };
        let number = |key: &str, text: String| {
            text.parse::<f64>()
                .map_err(|_| Error::format(format!("attribute `{key}` is not a number")))
        };
        let dataset = take("dataset")?;
        let algorithm = take("algorithm")?;
        let label = take("label")?;
        let group = take("group")?;
        let params: Params = serde_json::from_str(&take("params")?)?;
        let mode = take("mode")?.parse()?;
        let k = take("k")?
            .parse::<usize>()
            .map_err(|_| Error::format("attribute `k` is not an integer"))?;
        let build_time = number("build_time", take("build_time")?)?;
        let index_size = take("index_size").ok().map(|t| number("index_size", t)).transpose()?;
        let batch_time = take("batch_time").ok().map(|t| number("batch_time", t)).transpose()?;
        let _ = take("status");

        let nb_ds = require(&file, "neighbors")?;
        let (m, kk) = shape2(&nb_ds, "neighbors")?;
        if kk != k {
            return Err(Error::format(format!("neighbors has {kk} columns but k = {k}")));
        }
        let neighbors = nb_ds.read_raw::<i32>()?;
        let dist_ds = require(&file, "distances")?;
        if shape2(&dist_ds, "distances")? != (m, k) {
            return Err(Error::format("distances shape differs from neighbors"));
        }
        let distances = dist_ds.read_raw::<f64>()?;
        let times = require(&file, "times")?.read_raw::<f64>()?;
        if times.len() != m {
            return Err(Error::format("times length differs from query count"));
        }
        let candidates = if file.link_exists("candidates") {
            Some(file.dataset("candidates")?.read_raw::<f64>()?)
        } else {
            None
        };
        Ok(Self {
            dataset,
            algorithm,
            label,
            group,
            constructor_args: params.constructor_args.into_owned(),
            query_params: params.query_params.into_owned(),
            k,
            mode,
            build_time,
            index_size,
            neighbors,
            distances,
            times,
            candidates,
            batch_time,
            attributes: attrs,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample() -> GroupResult {
        GroupResult {
            dataset: "toy".into(),
            algorithm: "bruteforce".into(),
            label: "bruteforce(\"euclidean\")".into(),
            group: "[]".into(),
            constructor_args: vec![ConfigValue::Str("euclidean".into())],
            query_params: vec![],
            k: 2,
            mode: Mode::SingleQuery,
            build_time: 0.5,
            index_size: Some(12.0),
            neighbors: vec![1, 0, 2, -1],
            distances: vec![0.1, 0.9, 0.3, f64::INFINITY],
            times: vec![0.001, 0.002],
            candidates: Some(vec![3.0, 3.0]),
            batch_time: None,
            attributes: [("pinned".to_string(), "true".to_string())].into(),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/x.res");
        let r = sample();
        r.write(&path).unwrap();
        let back = GroupResult::read(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.ids(1).collect::<Vec<_>>(), vec![2]);
        assert_eq!(back.row_distances(1), &[0.3]);
        assert!(std::fs::read_dir(path.parent().unwrap()).unwrap().count() == 1);
    }

    #[test]
    fn unknown_size_stays_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.res");
        let mut r = sample();
        r.index_size = None;
        r.candidates = None;
        r.mode = Mode::Batch;
        r.batch_time = Some(0.003);
        r.write(&path).unwrap();
        assert_eq!(GroupResult::read(&path).unwrap(), r);
    }
}
