use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::result::{GroupResult, Mode};
use crate::baselines::{construct, Algorithm};
use crate::config::{group_label, AlgorithmInstance, ConfigValue, RunnerKind};
use crate::dataio::{read_dataset, DatasetFile};
use crate::error::{Error, Result};
use crate::knn::ResultTuple;
use crate::wireproto::{ExternalSession, PROTOCOL_VERSION};

/// Instructions handed from the harness to a worker process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Job {
    pub dataset_path: PathBuf,
    pub dataset_name: String,
    pub instance: AlgorithmInstance,
    pub k: usize,
    pub mode: Mode,
    pub run_count: usize,
    pub seed: u64,
    pub timeout_secs: f64,
    /// One output file per query-parameter group, in group order.
    pub outputs: Vec<PathBuf>,
}

/// Progress line printed by the worker on stdout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub(crate) enum Event {
    Built { build_time: f64, index_size: Option<f64> },
    Group { index: usize },
}

fn emit(e: &Event) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string(e).expect("event serializes"));
    let _ = out.flush();
}

fn page_kb() -> f64 {
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if page > 0 {
        page as f64 / 1024.0
    } else {
        4.0
    }
}

/// Resident set size of a process in kB, from `/proc/<pid>/statm`.
pub fn resident_kb(pid: Option<u32>) -> Option<f64> {
    let path = match pid {
        Some(p) => format!("/proc/{p}/statm"),
        None => "/proc/self/statm".to_string(),
    };
    let text = std::fs::read_to_string(path).ok()?;
    let pages: f64 = text.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * page_kb())
}

/// Growth between two RSS readings, floored at zero.
pub fn rss_delta(before: Option<f64>, after: Option<f64>) -> Option<f64> {
    Some((after? - before?).max(0.0))
}

/// Restricts the calling process to the CPU it is currently running on
/// (the first allowed CPU if that is unknown). Returns the CPU index, or
/// `None` when affinity is unavailable.
pub fn pin_to_one_core() -> Option<usize> {
    #[cfg(target_os = "linux")]
    {
        // SAFETY: cpu_set_t is plain data; the calls only read/write the set.
        unsafe {
            let mut set: libc::cpu_set_t = std::mem::zeroed();
            if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
                return None;
            }
            let current = libc::sched_getcpu();
            let cpu = if current >= 0 && libc::CPU_ISSET(current as usize, &set) {
                current as usize
            } else {
                (0..libc::CPU_SETSIZE as usize).find(|&c| libc::CPU_ISSET(c, &set))?
            };
            let mut one: libc::cpu_set_t = std::mem::zeroed();
            libc::CPU_SET(cpu, &mut one);
            if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &one) != 0 {
                return None;
            }
            Some(cpu)
        }
    }
    #[cfg(not(target_os = "linux"))]
    {
        None
    }
}

/// One repetition of a group: ids, per-query seconds, candidate counts.
struct Pass {
    ids: Vec<Vec<usize>>,
    times: Vec<f64>,
    candidates: Option<Vec<f64>>,
    batch_time: Option<f64>,
}

impl Pass {
    fn total(&self) -> f64 {
        self.batch_time.unwrap_or_else(|| self.times.iter().sum())
    }
}

enum Runner {
    InProcess(Box<dyn Algorithm<f32>>),
    External(Box<ExternalSession>),
}

impl Runner {
    fn set_query_params(&mut self, params: &[ConfigValue]) -> Result<()> {
        match self {
            Runner::InProcess(a) => a.set_query_params(params),
            Runner::External(s) => s.set_query_params(params),
        }
    }

    fn pass(&mut self, ds: &DatasetFile, k: usize, mode: Mode) -> Result<Pass> {
        let m = ds.test.len();
        match (self, mode) {
            (Runner::InProcess(a), Mode::SingleQuery) => {
                let mut ids = Vec::with_capacity(m);
                let mut times = Vec::with_capacity(m);
                let mut cands = Some(Vec::with_capacity(m));
                for i in 0..m {
                    let q = ds.test.point(i);
                    let start = Instant::now();
                    let r = a.query(q, k)?;
                    times.push(start.elapsed().as_secs_f64());
                    ids.push(r);
                    match (a.last_candidates(), cands.as_mut()) {
                        (Some(c), Some(v)) => v.push(c as f64),
                        _ => cands = None,
                    }
                }
                Ok(Pass {
                    ids,
                    times,
                    candidates: cands,
                    batch_time: None,
                })
            }
            (Runner::InProcess(a), Mode::Batch) => {
                let start = Instant::now();
                a.batch_query(&ds.test, k)?;
                let total = start.elapsed().as_secs_f64();
                let ids = a.batch_results()?;
                if ids.len() != m {
                    return Err(Error::run(format!("batch returned {} rows for {m} queries", ids.len())));
                }
                Ok(Pass {
                    ids,
                    times: vec![total / m as f64; m],
                    candidates: a.batch_candidates().map(|c| c.into_iter().map(|x| x as f64).collect()),
                    batch_time: Some(total),
                })
            }
            (Runner::External(s), Mode::SingleQuery) => {
                let mut ids = Vec::with_capacity(m);
                let mut times = Vec::with_capacity(m);
                let mut cands = Some(Vec::with_capacity(m));
                for i in 0..m {
                    let (r, t) = s.timed_query(ds.test.point(i), k)?;
                    times.push(t.as_secs_f64());
                    ids.push(r);
                    if cands.is_some() {
                        let c = s
                            .stats()?
                            .into_iter()
                            .find(|(key, _)| key == "candidates")
                            .and_then(|(_, v)| v.parse::<f64>().ok());
                        match (c, cands.as_mut()) {
                            (Some(c), Some(v)) => v.push(c),
                            _ => cands = None,
                        }
                    }
                }
                Ok(Pass {
                    ids,
                    times,
                    candidates: cands,
                    batch_time: None,
                })
            }
            (Runner::External(_), Mode::Batch) => Err(Error::config("mode", "external programs run in single-query mode only")),
        }
    }

    fn attributes(&self) -> Vec<(String, String)> {
        match self {
            Runner::InProcess(a) => a.attributes(),
            Runner::External(s) => vec![
                ("protocol".into(), PROTOCOL_VERSION.into()),
                ("prepared_queries".into(), s.prepared_queries().to_string()),
            ],
        }
    }
}

/// Executes a job file; called inside the worker process.
pub(crate) fn run_job(job_path: &Path) -> Result<()> {
    let job: Job = serde_json::from_slice(&std::fs::read(job_path)?)?;
    let ds = read_dataset(&job.dataset_path)?;
    if job.k == 0 || job.k > ds.ground_truth.depth() {
        return Err(Error::usage(format!(
            "k = {} must be between 1 and the ground-truth depth {}",
            job.k,
            ds.ground_truth.depth()
        )));
    }
    let inst = &job.instance;
    if job.outputs.len() != inst.query_param_groups.len() {
        return Err(Error::run("job lists the wrong number of outputs"));
    }

    let mut attrs: BTreeMap<String, String> = BTreeMap::new();
    let pinned = match job.mode {
        Mode::SingleQuery => pin_to_one_core(),
        Mode::Batch => None,
    };
    attrs.insert(
        "pinned_cpu".into(),
        match (job.mode, pinned) {
            (Mode::Batch, _) => "all".into(),
            (_, Some(c)) => c.to_string(),
            (_, None) => "unpinned".into(),
        },
    );
    attrs.insert("runner".into(), match inst.runner_kind {
        RunnerKind::InProcess => "in-process".into(),
        RunnerKind::External => "external".into(),
    });

    let (mut runner, build_time, index_size) = match inst.runner_kind {
        RunnerKind::InProcess => {
            let mut alg = construct::<f32>(&inst.entry_point, &inst.constructor_args, job.seed)?;
            if job.mode == Mode::Batch && !alg.supports_batch() {
                return Err(Error::config(&inst.label, "algorithm has no batch mode"));
            }
            let before = resident_kb(None);
            let start = Instant::now();
            alg.build(&ds.train)?;
            let bt = start.elapsed().as_secs_f64();
            let size = rss_delta(before, resident_kb(None));
            (Runner::InProcess(alg), bt, size)
        }
        RunnerKind::External => {
            if job.mode == Mode::Batch {
                return Err(Error::config(&inst.label, "external programs run in single-query mode only"));
            }
            let timeout = Duration::from_secs_f64(job.timeout_secs.max(0.001));
            let mut s = ExternalSession::spawn(&inst.entry_point, timeout)?;
            s.configure(
                ds.metric.as_str(),
                ds.point_kind().as_str(),
                ds.dim(),
                &inst.constructor_args,
                true,
            )?;
            let before = resident_kb(Some(s.pid()));
            let bt = s.train(&ds.train)?.as_secs_f64();
            let size = rss_delta(before, resident_kb(Some(s.pid())));
            (Runner::External(Box::new(s)), bt, size)
        }
    };
    emit(&Event::Built {
        build_time,
        index_size,
    });

    for (gi, params) in inst.query_param_groups.iter().enumerate() {
        runner.set_query_params(params)?;
        let mut best: Option<Pass> = None;
        for _ in 0..job.run_count.max(1) {
            let pass = runner.pass(&ds, job.k, job.mode)?;
            if best.as_ref().is_none_or(|b| pass.total() < b.total()) {
                best = Some(pass);
            }
        }
        let pass = best.expect("run_count >= 1");
        let k = job.k;
        let m = ds.test.len();
        let mut neighbors = vec![-1i32; m * k];
        let mut distances = vec![f64::INFINITY; m * k];
        for (i, ids) in pass.ids.iter().enumerate() {
            let rt = ResultTuple::recompute(ds.test.point(i), &ds.train, ids, k, ds.metric)?;
            for (j, (id, d)) in rt.entries.into_iter().enumerate() {
                neighbors[i * k + j] = id as i32;
                distances[i * k + j] = d;
            }
        }
        let mut group_attrs = attrs.clone();
        group_attrs.extend(runner.attributes());
        GroupResult {
            dataset: job.dataset_name.clone(),
            algorithm: inst.algorithm.clone(),
            label: inst.label.clone(),
            group: group_label(params),
            constructor_args: inst.constructor_args.clone(),
            query_params: params.clone(),
            k,
            mode: job.mode,
            build_time,
            index_size,
            neighbors,
            distances,
            times: pass.times,
            candidates: pass.candidates,
            batch_time: pass.batch_time,
            attributes: group_attrs,
        }
        .write(&job.outputs[gi])?;
        emit(&Event::Group { index: gi });
    }

    if let Runner::External(s) = runner {
        s.exit()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rss_is_readable_and_delta_floors() {
        let a = resident_kb(None);
        if cfg!(target_os = "linux") {
            assert!(a.unwrap() > 0.0);
        }
        assert_eq!(rss_delta(Some(100.0), Some(40.0)), Some(0.0));
        assert_eq!(rss_delta(Some(100.0), Some(140.0)), Some(40.0));
        assert_eq!(rss_delta(None, Some(1.0)), None);
    }
}
