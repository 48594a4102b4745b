#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use annbench::config::{expand, parse_config, AlgorithmInstance, ExpandContext};
use annbench::dataio::{generate, write_dataset, DatasetFile, GeneratorKind, GeneratorSpec};
use annbench::runner::{self, GroupResult, Mode, RunOutcome, RunSpec};
use annbench::Metric;

pub const BIN: &str = env!("CARGO_BIN_EXE_annbench");

pub struct Workdir {
    pub dir: tempfile::TempDir,
}

impl Workdir {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().expect("tempdir"),
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn results(&self) -> PathBuf {
        self.path().join("results")
    }

    pub fn reports(&self) -> PathBuf {
        self.path().join("reports")
    }

    pub fn dataset_path(&self, name: &str) -> PathBuf {
        self.path().join("datasets").join(format!("{name}.hdf5"))
    }

    /// Generates and stores a dataset; returns it together with its path.
    pub fn dataset(&self, spec: &GeneratorSpec) -> (DatasetFile, PathBuf) {
        let ds = generate(spec).expect("generate");
        let p = self.dataset_path(&spec.name);
        write_dataset(&ds, &p).expect("write dataset");
        (ds, p)
    }

    pub fn uniform(&self, name: &str, n: usize, m: usize, d: usize, metric: Metric, seed: u64) -> (DatasetFile, PathBuf) {
        let mut spec = GeneratorSpec::new(GeneratorKind::RandomUniform, name, n, m, d, seed);
        spec.metric = metric;
        self.dataset(&spec)
    }

    /// A run spec using the crate's binary as the worker.
    pub fn spec(&self, ds_path: &Path, ds_name: &str, inst: AlgorithmInstance, k: usize) -> RunSpec {
        let mut s = RunSpec::new(ds_path, ds_name, inst, k, &self.results());
        s.worker_exe = Some(PathBuf::from(BIN));
        s.run_count = 1;
        s.timeout = Duration::from_secs(600);
        s
    }
}

/// Instances of a one-algorithm config document for a float/euclidean or
/// bit/hamming dataset.
pub fn instances(doc: &str, ds: &DatasetFile) -> Vec<AlgorithmInstance> {
    let ctx = ExpandContext {
        metric: ds.metric,
        dimension: ds.dim(),
    };
    parse_config(doc, ds.point_kind(), ds.metric)
        .expect("config parses")
        .iter()
        .flat_map(|d| expand(d, &ctx).expect("config expands"))
        .collect()
}

pub fn simple(name: &str, args: &str, query_args: Option<&str>) -> String {
    let q = query_args.map(|q| format!("\n          query-args: {q}")).unwrap_or_default();
    format!(
        "float:\n  any:\n    {name}:\n      constructor: {name}\n      base-args: [\"@metric\"]\n      run-groups:\n        g:\n          args: {args}{q}\nbit:\n  hamming:\n    {name}:\n      constructor: {name}\n      base-args: [\"@metric\"]\n      run-groups:\n        g:\n          args: {args}{q}\n"
    )
}

pub fn run_one(spec: &RunSpec) -> (RunOutcome, Vec<GroupResult>) {
    let out = runner::run(spec).expect("run");
    let results = out.files.iter().map(|f| GroupResult::read(f).expect("read result")).collect();
    (out, results)
}

pub fn mode_dir(w: &Workdir, ds: &str, k: usize, mode: Mode) -> PathBuf {
    w.results().join(ds).join(k.to_string()).join(mode.as_str())
}

/// Every file below `root`, sorted.
pub fn walk(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(rd) = std::fs::read_dir(&d) else { continue };
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

pub fn files_with_suffix(root: &Path, suffix: &str) -> Vec<PathBuf> {
    walk(root)
        .into_iter()
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect()
}
