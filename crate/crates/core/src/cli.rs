//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime
//! failure, 3 dataset validation failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::{expand, parse_config, ExpandContext, DEFAULT_CONFIG};
use crate::dataio::{generate, read_dataset, write_dataset, GeneratorKind, GeneratorSpec, DEFAULT_DEPTH};
use crate::error::{Error, Result};
use crate::runner::{self, Mode, RunSpec, DEFAULT_RUN_COUNT};
use crate::{metrics, report, wireproto};

#[derive(Debug, Parser)]
#[command(name = "annbench", version, about = "Benchmark harness for nearest-neighbor search")]
struct Cli {
    /// Root directory holding datasets/, results/ and reports/.
    #[arg(long, global = true, env = "ANNBENCH_WORKDIR", default_value = ".")]
    workdir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, validate or import dataset files.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Run every configured algorithm instance against a dataset.
    Run(RunArgs),
    /// Inspect the metric registry or evaluate stored results.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Render plots and exports from stored results.
    Report(ReportArgs),
    /// Check an external program against the text protocol.
    ProtocolCheck(ProtocolCheckArgs),
    #[command(hide = true)]
    Worker { job: PathBuf },
    /// Exact linear-scan adapter speaking the text protocol on stdin/stdout.
    #[command(hide = true)]
    ServeBruteforce,
}

#[derive(Debug, Subcommand)]
enum DatasetCmd {
    /// Generate a synthetic dataset with exact ground truth.
    Gen(GenArgs),
    /// Check a dataset file's structure and ground truth.
    Validate(ValidateArgs),
    /// Copy an existing container file into the workdir after validating it.
    Import(ImportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// random-uniform or rand-euclidean.
    #[arg(long)]
    kind: String,
    /// Dataset name; also the file stem under datasets/.
    #[arg(long)]
    name: String,
    /// Number of train points.
    #[arg(long)]
    n: usize,
    /// Number of queries.
    #[arg(long)]
    m: usize,
    /// Dimensionality.
    #[arg(long)]
    d: usize,
    /// euclidean, angular or hamming (random-uniform only).
    #[arg(long, default_value = "euclidean")]
    metric: String,
    /// Stored neighbors per query.
    #[arg(long, default_value_t = DEFAULT_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path instead of datasets/<name>.hdf5.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threads for ground-truth computation.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Dataset name or file path.
    dataset: String,
    /// Relative tolerance for stored distances.
    #[arg(long, default_value_t = 1e-5)]
    rtol: f64,
    /// Also recompute every ground-truth row by brute force.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ImportArgs {
    /// Container file to import.
    file: PathBuf,
    /// Name to store it under; defaults to the file's `name` attribute or stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 1e-5)]
    rtol: f64,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Dataset name or file path.
    #[arg(long)]
    dataset: String,
    /// Number of neighbors requested per query.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Experiment configuration; the bundled grids are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// single-query or batch.
    #[arg(long, default_value = "single-query")]
    mode: String,
    /// Only run these algorithms (repeatable).
    #[arg(long = "algorithm")]
    algorithms: Vec<String>,
    /// Seed handed to every algorithm constructor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-instance time limit in seconds.
    #[arg(long, default_value_t = runner::DEFAULT_TIMEOUT.as_secs_f64())]
    timeout: f64,
    /// Passes over the query set per group; the fastest is kept.
    #[arg(long, default_value_t = DEFAULT_RUN_COUNT)]
    run_count: usize,
    /// Re-run instances whose result files already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum MetricsCmd {
    /// List registered metrics.
    List,
    /// Print every metric for every stored result as CSV.
    Compute {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Metric on the x axis.
    #[arg(short = 'x', long = "x-metric", default_value = "recall")]
    x: String,
    /// Metric on the y axis.
    #[arg(short = 'y', long = "y-metric", default_value = "qps")]
    y: String,
    /// Only batch-mode results.
    #[arg(long, conflicts_with = "mode")]
    batch: bool,
    /// Only results of this mode (single-query or batch).
    #[arg(long)]
    mode: Option<String>,
    /// Also render a scatter plot of every run.
    #[arg(long)]
    scatter: bool,
    /// Linear y axis instead of logarithmic.
    #[arg(long)]
    linear_y: bool,
}

#[derive(Debug, Args)]
struct ProtocolCheckArgs {
    /// Seconds to wait for each reply.
    #[arg(long, default_value_t = 10.0)]
    timeout: f64,
    /// Adapter command line.
    #[arg(last = true, required = true)]
    command: Vec<String>,
}

fn dataset_path(workdir: &Path, name_or_path: &str) -> PathBuf {
    let p = PathBuf::from(name_or_path);
    if p.exists() || name_or_path.contains('/') || name_or_path.ends_with(".hdf5") {
        p
    } else {
        workdir.join("datasets").join(format!("{name_or_path}.hdf5"))
    }
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn seconds(v: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(v)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| Error::usage(format!("{what} must be a positive number of seconds")))
}

fn dataset_cmd(workdir: &Path, cmd: DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::Gen(a) => {
            set_jobs(a.jobs);
            let kind: GeneratorKind = a.kind.parse()?;
            let mut spec = GeneratorSpec::new(kind, &a.name, a.n, a.m, a.d, a.seed);
            spec.depth = a.depth;
            spec.metric = a.metric.parse()?;
            let ds = generate(&spec)?;
            let out = a.out.unwrap_or_else(|| dataset_path(workdir, &a.name));
            write_dataset(&ds, &out)?;
            println!("wrote {} ({} train, {} queries, d = {})", out.display(), ds.train.len(), ds.test.len(), ds.dim());
        }
        DatasetCmd::Validate(a) => {
            set_jobs(a.jobs);
            let path = dataset_path(workdir, &a.dataset);
            let ds = read_dataset(&path)?;
            ds.validate(a.rtol, a.exact)?;
            println!("ok {} ({} {}, {} train, {} queries, depth {})", path.display(), ds.point_kind().as_str(), ds.metric.as_str(), ds.train.len(), ds.test.len(), ds.ground_truth.depth());
        }
        DatasetCmd::Import(a) => {
            let mut ds = read_dataset(&a.file)?;
            if let Some(n) = a.name {
                ds.name = n;
            } else if ds.name.is_empty() {
                ds.name = a.file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            }
            ds.validate(a.rtol, false)?;
            let out = dataset_path(workdir, &ds.name);
            write_dataset(&ds, &out)?;
            println!("imported {} as {}", a.file.display(), out.display());
        }
    }
    Ok(())
}

fn run_cmd(workdir: &Path, a: RunArgs) -> Result<()> {
    let path = dataset_path(workdir, &a.dataset);
    let ds = read_dataset(&path)?;
    let mode: Mode = a.mode.parse()?;
    let timeout = seconds(a.timeout, "timeout")?;
    let (doc, source) = match &a.config {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| Error::usage(format!("cannot read {}: {e}", p.display())))?,
            p.display().to_string(),
        ),
        None => (DEFAULT_CONFIG.to_string(), "bundled configuration".into()),
    };
    let defs = parse_config(&doc, ds.point_kind(), ds.metric)?;
    let ctx = ExpandContext {
        metric: ds.metric,
        dimension: ds.dim(),
    };
    let mut instances = Vec::new();
    for def in &defs {
        if a.algorithms.is_empty() || a.algorithms.contains(&def.name) {
            instances.extend(expand(def, &ctx)?.into_iter().map(|i| (def.path.clone(), i)));
        }
    }
    if instances.is_empty() {
        return Err(Error::usage(format!("{source} has no instances for {} datasets", ds.metric.as_str())));
    }
    let mut specs = Vec::with_capacity(instances.len());
    for (def_path, inst) in instances {
        let mut spec = RunSpec::new(&path, &ds.name, inst, a.k, &workdir.join("results"));
        spec.mode = mode;
        spec.timeout = timeout;
        spec.run_count = a.run_count;
        spec.seed = a.seed;
        spec.force = a.force;
        spec.check().map_err(|e| match e {
            Error::Config { path, msg } => Error::config(format!("{def_path}: {path}"), msg),
            other => other,
        })?;
        specs.push(spec);
    }
    // Fail on k before any process starts.
    if a.k == 0 || a.k > ds.ground_truth.depth() {
        return Err(Error::usage(format!("k must be between 1 and the ground-truth depth {}", ds.ground_truth.depth())));
    }
    drop(ds);
    for spec in &specs {
        let outcome = runner::run(spec)?;
        println!("{}", outcome.summary());
        let _ = std::io::stdout().flush();
    }
    Ok(())
}

fn metrics_cmd(workdir: &Path, cmd: MetricsCmd) -> Result<()> {
    match cmd {
        MetricsCmd::List => {
            for m in metrics::REGISTRY {
                let o = match m.orientation {
                    metrics::Orientation::HigherBetter => "higher-better",
                    metrics::Orientation::LowerBetter => "lower-better",
                };
                println!("{:<20} {:<14} {}", m.name, o, m.description);
            }
        }
        MetricsCmd::Compute { dataset, k } => {
            let path = dataset_path(workdir, &dataset);
            let ds = read_dataset(&path)?;
            let files = runner::result_files(&workdir.join("results"), &ds.name, k, None)?;
            print!("{}", report::metrics_csv(&ds, &files)?);
        }
    }
    Ok(())
}

fn report_cmd(workdir: &Path, a: ReportArgs) -> Result<()> {
    let path = dataset_path(workdir, &a.dataset);
    let name = read_dataset(&path)?.name;
    let mode = match (a.batch, &a.mode) {
        (true, _) => Some(Mode::Batch),
        (false, Some(m)) => Some(m.parse()?),
        (false, None) => None,
    };
    let req = report::ReportRequest {
        results_root: workdir.join("results"),
        reports_root: workdir.join("reports"),
        dataset_path: path,
        dataset_name: name,
        k: a.k,
        x: a.x,
        y: a.y,
        mode,
        scatter: a.scatter,
        log_y: !a.linear_y,
    };
    for p in report::generate(&req)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn protocol_check_cmd(a: ProtocolCheckArgs) -> Result<bool> {
    let timeout = seconds(a.timeout, "timeout")?;
    let command = wireproto::serialize(&a.command);
    let outcomes = wireproto::protocol_check(&command, timeout)?;
    let mut all = true;
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        all &= o.passed;
    }
    Ok(all && outcomes.iter().any(|o| o.name == "exit-status"))
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Dataset(c) => dataset_cmd(&cli.workdir, c)?,
        Command::Run(a) => run_cmd(&cli.workdir, a)?,
        Command::Metrics(c) => metrics_cmd(&cli.workdir, c)?,
        Command::Report(a) => report_cmd(&cli.workdir, a)?,
        Command::ProtocolCheck(a) => {
            if !protocol_check_cmd(a)? {
                eprintln!("wireproto: conformance check failed");
                return Ok(2);
            }
        }
        Command::Worker { job } => runner::worker_main(&job)?,
        Command::ServeBruteforce => {
            let stdin = std::io::stdin();
            wireproto::serve(stdin.lock(), std::io::stdout().lock())?;
        }
    }
    Ok(0)
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("annbench: {e}");
            e.exit_code()
        }
    }
}

/// Metric names accepted by `report -x/-y`.
pub fn metric_names() -> Vec<&'static str> {
    metrics::REGISTRY.iter().map(|m| m.name).collect()
}
