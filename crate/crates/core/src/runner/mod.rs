//! Runs algorithm instances in worker processes and persists their results.
//!
//! Every run gets a fresh child process (`annbench worker <job>`), so a hang
//! or crash inside an algorithm only costs that run. The worker builds the
//! index, answers the query set once per query-parameter group (best of
//! `run_count` passes), recomputes all distances and writes one result file
//! per group. The parent enforces the timeout and records a status file.

mod result;
mod worker;

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::construct;
use crate::config::{group_label, AlgorithmInstance, RunnerKind};
use crate::error::{Error, Result};

pub use result::{GroupResult, Mode};
pub use worker::{pin_to_one_core, resident_kb, rss_delta};
use worker::{Event, Job};

pub const DEFAULT_RUN_COUNT: usize = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2 * 3600);

/// Environment variable naming the executable that provides `worker`.
pub const WORKER_ENV: &str = "ANNBENCH_WORKER";

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub dataset_path: PathBuf,
    pub dataset_name: String,
    pub instance: AlgorithmInstance,
    pub k: usize,
    pub mode: Mode,
    pub timeout: Duration,
    pub run_count: usize,
    pub seed: u64,
    pub results_root: PathBuf,
    pub force: bool,
    /// Executable to launch as the worker; defaults to [`WORKER_ENV`] or the
    /// current executable.
    pub worker_exe: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(dataset_path: &Path, dataset_name: &str, instance: AlgorithmInstance, k: usize, results_root: &Path) -> Self {
        Self {
            dataset_path: dataset_path.to_path_buf(),
            dataset_name: dataset_name.to_string(),
            instance,
            k,
            mode: Mode::SingleQuery,
            timeout: DEFAULT_TIMEOUT,
            run_count: DEFAULT_RUN_COUNT,
            seed: 0,
            results_root: results_root.to_path_buf(),
            force: false,
            worker_exe: None,
        }
    }

    /// `results/<dataset>/<k>/<mode>/<algorithm>`
    pub fn output_dir(&self) -> PathBuf {
        self.results_root
            .join(&self.dataset_name)
            .join(self.k.to_string())
            .join(self.mode.as_str())
            .join(sanitize(&self.instance.algorithm))
    }

    /// Result file of each query-parameter group, in group order.
    pub fn output_files(&self) -> Vec<PathBuf> {
        let dir = self.output_dir();
        self.instance
            .query_param_groups
            .iter()
            .map(|g| dir.join(format!("{}.res", content_hash(&[&self.instance.label, &group_label(g)]))))
            .collect()
    }

    pub fn status_file(&self) -> PathBuf {
        self.output_dir()
            .join(format!("{}.status.json", content_hash(&[&self.instance.label])))
    }

    /// Rejects specs that cannot run, without starting a process.
    pub fn check(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::usage("k must be positive"));
        }
        if self.timeout.is_zero() {
            return Err(Error::usage("timeout must be positive"));
        }
        if self.run_count == 0 {
            return Err(Error::usage("run count must be positive"));
        }
        let inst = &self.instance;
        match inst.runner_kind {
            RunnerKind::InProcess => {
                let alg = construct::<f32>(&inst.entry_point, &inst.constructor_args, self.seed)
                    .map_err(|e| match e {
                        Error::Config { path, msg } => Error::config(format!("{} ({})", inst.label, path), msg),
                        other => other,
                    })?;
                if self.mode == Mode::Batch && !alg.supports_batch() {
                    return Err(Error::config(&inst.label, "algorithm has no batch mode"));
                }
            }
            RunnerKind::External if self.mode == Mode::Batch => {
                return Err(Error::config(&inst.label, "external programs run in single-query mode only"));
            }
            RunnerKind::External => {}
        }
        Ok(())
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn content_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    TimedOut,
    Failed,
    Skipped,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::TimedOut => "timed-out",
            RunStatus::Failed => "failed",
            RunStatus::Skipped => "skipped",
        }
    }
}

/// Outcome of one instance; also persisted as the status file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub label: String,
    pub status: RunStatus,
    pub build_time: Option<f64>,
    pub index_size: Option<f64>,
    /// Result files that were completely written.
    pub files: Vec<PathBuf>,
    pub groups_total: usize,
    pub elapsed: f64,
    pub message: Option<String>,
}

impl RunOutcome {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} {}: {}/{} groups",
            self.status.as_str(),
            self.label,
            self.files.len(),
            self.groups_total
        );
        if let Some(b) = self.build_time {
            s.push_str(&format!(", build {b:.3}s"));
        }
        if let Some(i) = self.index_size {
            s.push_str(&format!(", index {i:.0} kB"));
        }
        if let Some(m) = &self.message {
            s.push_str(&format!(" ({m})"));
        }
        s
    }
}

fn worker_exe(spec: &RunSpec) -> Result<PathBuf> {
    if let Some(p) = &spec.worker_exe {
        return Ok(p.clone());
    }
    if let Some(p) = std::env::var_os(WORKER_ENV) {
        return Ok(PathBuf::from(p));
    }
    Ok(std::env::current_exe()?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = crate::dataio::container::tmp_path(path);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs one instance to completion, timeout or failure.
///
/// Configuration problems (unknown constructor, batch mode unsupported) are
/// returned as errors before any process starts; everything that goes wrong
/// inside the worker is reported through the outcome instead.
pub fn run(spec: &RunSpec) -> Result<RunOutcome> {
    spec.check()?;
    let outputs = spec.output_files();
    let groups_total = outputs.len();
    if !spec.force && outputs.iter().all(|p| p.exists()) {
        let previous = RunOutcome::read(&spec.status_file()).ok();
        return Ok(RunOutcome {
            label: spec.instance.label.clone(),
            status: RunStatus::Skipped,
            build_time: previous.as_ref().and_then(|p| p.build_time),
            index_size: previous.as_ref().and_then(|p| p.index_size),
            files: outputs,
            groups_total,
            elapsed: 0.0,
            message: None,
        });
    }
    let dir = spec.output_dir();
    std::fs::create_dir_all(&dir)?;
    for p in &outputs {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }

    let job = Job {
        dataset_path: spec.dataset_path.clone(),
        dataset_name: spec.dataset_name.clone(),
        instance: spec.instance.clone(),
        k: spec.k,
        mode: spec.mode,
        run_count: spec.run_count,
        seed: spec.seed,
        timeout_secs: spec.timeout.as_secs_f64(),
        outputs: outputs.clone(),
    };
    let job_path = dir.join(format!(".job-{}-{}.json", content_hash(&[&spec.instance.label]), std::process::id()));
    std::fs::write(&job_path, serde_json::to_vec(&job)?)?;

    let start = Instant::now();
    let mut child = Command::new(worker_exe(spec)?)
        .arg("worker")
        .arg(&job_path)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::run(format!("cannot start worker: {e}")))?;
    let worker_pid = child.id();

    let stdout = child.stdout.take().expect("piped stdout");
    let events = thread::spawn(move || {
        BufReader::new(stdout)
            .lines()
            .map_while(|l| l.ok())
            .filter_map(|l| serde_json::from_str::<Event>(&l).ok())
            .collect::<Vec<_>>()
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let errors = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });

    let deadline = start + spec.timeout;
    let exit = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        thread::sleep(Duration::from_millis(5));
    };
    let elapsed = start.elapsed().as_secs_f64();
    let events = events.join().unwrap_or_default();
    let stderr_text = errors.join().unwrap_or_default();
    let _ = std::fs::remove_file(&job_path);

    // A killed worker may leave a half-written temporary file behind.
    let suffix = format!(".tmp{worker_pid}");
    if let Ok(entries) = std::fs::read_dir(&dir) {
        for e in entries.flatten() {
            if e.file_name().to_string_lossy().ends_with(&suffix) {
                let _ = std::fs::remove_file(e.path());
            }
        }
    }

    let (build_time, index_size) = events
        .iter()
        .find_map(|e| match e {
            Event::Built { build_time, index_size } => Some((Some(*build_time), *index_size)),
            _ => None,
        })
        .unwrap_or((None, None));
    let files: Vec<PathBuf> = events
        .iter()
        .filter_map(|e| match e {
            Event::Group { index } => outputs.get(*index).cloned(),
            _ => None,
        })
        .filter(|p| p.exists())
        .collect();
    let last_line = stderr_text.lines().rev().find(|l| !l.trim().is_empty()).map(str::to_owned);
    if !stderr_text.is_empty() {
        eprint!("{stderr_text}");
    }
    let (status, message) = match exit {
        None => (RunStatus::TimedOut, Some(format!("killed after {:.3}s", spec.timeout.as_secs_f64()))),
        Some(s) if s.success() && files.len() == groups_total => (RunStatus::Completed, None),
        Some(s) => (RunStatus::Failed, Some(last_line.unwrap_or_else(|| format!("worker {s}")))),
    };
    let outcome = RunOutcome {
        label: spec.instance.label.clone(),
        status,
        build_time,
        index_size,
        files,
        groups_total,
        elapsed,
        message,
    };
    write_atomic(&spec.status_file(), &serde_json::to_vec_pretty(&outcome)?)?;
    Ok(outcome)
}

/// Entry point of the `worker` subcommand.
pub fn worker_main(job_path: &Path) -> Result<()> {
    worker::run_job(job_path)
}

/// Lists every result file under `root` for a dataset, k and mode.
pub fn result_files(root: &Path, dataset: &str, k: usize, mode: Option<Mode>) -> Result<Vec<PathBuf>> {
    let base = root.join(dataset).join(k.to_string());
    let modes: Vec<Mode> = match mode {
        Some(m) => vec![m],
        None => vec![Mode::SingleQuery, Mode::Batch],
    };
    let mut out = Vec::new();
    for m in modes {
        let dir = base.join(m.as_str());
        let Ok(algs) = std::fs::read_dir(&dir) else {
            continue;
        };
        for alg in algs.flatten() {
            if !alg.path().is_dir() {
                continue;
            }
            for f in std::fs::read_dir(alg.path())?.flatten() {
                let p = f.path();
                if p.extension().is_some_and(|e| e == "res") {
                    out.push(p);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}
