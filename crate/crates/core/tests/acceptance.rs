//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or exceeds its time budget.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use annbench::config::{expand, parse_config, ConfigValue, ExpandContext};
use annbench::dataio::{DatasetFile, GeneratorKind, GeneratorSpec, GroundTruth};
use annbench::metrics::{self, Orientation};
use annbench::report::{self, pareto_frontier, ReportRequest};
use annbench::runner::{GroupResult, Mode, RunOutcome, RunStatus};
use annbench::{Metric, PointKind, PointSet};

use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const FIG1: &str = r#"
float:
  euclidean:
    megasrch:
      docker-tag: ann-benchmarks-megasrch
      module: ann_benchmarks.algorithms.MEGASRCH
      constructor: MEGASRCH
      base-args: ["@metric"]
      run-groups:
        shallow-point-lake:
          args: ["lake", [100, 200]]
          query-args: [100, [100, 200, 400]]
        deep-point-ocean:
          args: ["sea", 1000]
          query-args: [[1000, 2000], [1000, 2000, 4000]]
"#;

fn s(v: &str) -> ConfigValue {
    ConfigValue::Str(v.into())
}

fn i(v: i64) -> ConfigValue {
    ConfigValue::Int(v)
}

fn config_expansion() -> Outcome {
    let defs = parse_config(FIG1, PointKind::Float, Metric::Euclidean).map_err(|e| e.to_string())?;
    ensure!(defs.len() == 1, "expected one definition, got {}", defs.len());
    let ctx = ExpandContext {
        metric: Metric::Euclidean,
        dimension: 128,
    };
    let inst = expand(&defs[0], &ctx).map_err(|e| e.to_string())?;
    let args: Vec<Vec<ConfigValue>> = inst.iter().map(|x| x.constructor_args.clone()).collect();
    let want_args = vec![
        vec![s("euclidean"), s("lake"), i(100)],
        vec![s("euclidean"), s("lake"), i(200)],
        vec![s("euclidean"), s("sea"), i(1000)],
    ];
    ensure!(args == want_args, "instances {args:?}");
    let lake: Vec<Vec<ConfigValue>> = [100, 200, 400].iter().map(|&b| vec![i(100), i(b)]).collect();
    let mut sea = Vec::new();
    for a in [1000, 2000] {
        for b in [1000, 2000, 4000] {
            sea.push(vec![i(a), i(b)]);
        }
    }
    let groups: Vec<usize> = inst.iter().map(|x| x.query_param_groups.len()).collect();
    ensure!(inst[0].query_param_groups == lake, "first instance groups {:?}", inst[0].query_param_groups);
    ensure!(inst[1].query_param_groups == lake, "second instance groups {:?}", inst[1].query_param_groups);
    ensure!(inst[2].query_param_groups == sea, "third instance groups {:?}", inst[2].query_param_groups);
    Ok(format!("3 instances, groups {groups:?}"))
}

fn hand_run(rows: &[Vec<f64>], k: usize) -> GroupResult {
    let m = rows.len();
    let mut neighbors = vec![-1; m * k];
    let mut distances = vec![f64::INFINITY; m * k];
    for (r, row) in rows.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            neighbors[r * k + j] = j as i32;
            distances[r * k + j] = d;
        }
    }
    GroupResult {
        dataset: "hand".into(),
        algorithm: "hand".into(),
        label: "hand()".into(),
        group: "[]".into(),
        constructor_args: vec![],
        query_params: vec![],
        k,
        mode: Mode::SingleQuery,
        build_time: 0.0,
        index_size: None,
        neighbors,
        distances,
        times: vec![1.0; m],
        candidates: None,
        batch_time: None,
        attributes: BTreeMap::new(),
    }
}

fn recall_definitions() -> Outcome {
    let err = |e: annbench::Error| e.to_string();
    let gt = GroundTruth::new(2, vec![0, 1], vec![1.0, 2.0]).map_err(err)?;
    let tie = metrics::recall(&hand_run(&[vec![2.0, 2.0]], 2), &gt, 2).map_err(err)?;
    ensure!(tie == 1.0, "tie case gave {tie}");
    let empty = metrics::recall(&hand_run(&[vec![]], 2), &gt, 2).map_err(err)?;
    ensure!(empty == 0.0, "empty result gave {empty}");
    let above = metrics::recall(&hand_run(&[vec![1.0, 2.0 * (1.0 + 2e-6)]], 2), &gt, 2).map_err(err)?;
    ensure!(above == 0.5, "point beyond the slack counted: {above}");
    let within = metrics::recall(&hand_run(&[vec![1.0, 2.0 * (1.0 + 0.5e-6)]], 2), &gt, 2).map_err(err)?;
    ensure!(within == 1.0, "point within the slack rejected: {within}");

    let gt1 = GroundTruth::new(1, vec![0], vec![1.0]).map_err(err)?;
    let near = hand_run(&[vec![1.05]], 1);
    let r = metrics::recall(&near, &gt1, 1).map_err(err)?;
    let re = metrics::recall_eps(&near, &gt1, 1, 0.1).map_err(err)?;
    ensure!(r == 0.0 && re == 1.0, "eps threshold: recall {r}, recall-eps {re}");

    let w = Workdir::new();
    let (ds, path) = w.uniform("lowrec", 5000, 100, 20, Metric::Euclidean, 3);
    let doc = simple("rpforest", "[2, 16]", Some("[10]"));
    let inst = instances(&doc, &ds).remove(0);
    let (out, runs) = run_one(&w.spec(&path, "lowrec", inst, 10));
    ensure!(out.status == RunStatus::Completed, "stored run {}", out.summary());
    let stored = GroupResult::read(&out.files[0]).map_err(err)?;
    ensure!(stored == runs[0], "stored run differs on re-read");
    let base = metrics::recall(&stored, &ds.ground_truth, 10).map_err(err)?;
    ensure!(base < 0.9, "run is not low-recall: {base}");
    let mut prev = base;
    let mut seq = vec![base];
    for eps in [0.001, 0.01, 0.05, 0.1, 0.5] {
        let v = metrics::recall_eps(&stored, &ds.ground_truth, 10, eps).map_err(err)?;
        ensure!(v >= prev && v <= 1.0, "recall-eps not monotone at eps {eps}: {v} < {prev}");
        prev = v;
        seq.push(v);
    }
    ensure!(seq[5] > seq[0], "eps 0.5 did not move recall ({:?})", seq);
    Ok(format!("recall {:.3}, eps 0.01 {:.3}, eps 0.1 {:.3}", seq[0], seq[2], seq[4]))
}

fn bruteforce_recall(w: &Workdir, ds: &DatasetFile, path: &std::path::Path, name: &str) -> Result<f64, String> {
    let inst = instances(&simple("bruteforce", "[]", None), ds).remove(0);
    let (out, runs) = run_one(&w.spec(path, name, inst, 10));
    ensure!(out.status == RunStatus::Completed, "{name}: {}", out.summary());
    metrics::recall(&runs[0], &ds.ground_truth, 10).map_err(|e| e.to_string())
}

fn oracle_equivalence() -> Outcome {
    let w = Workdir::new();
    let mut report = Vec::new();
    let mut specs = vec![
        GeneratorSpec::new(GeneratorKind::RandomUniform, "u8", 10_000, 100, 8, 1),
        GeneratorSpec::new(GeneratorKind::RandomUniform, "u20", 10_000, 100, 20, 2),
    ];
    let mut ham = GeneratorSpec::new(GeneratorKind::RandomUniform, "h256", 10_000, 100, 256, 3);
    ham.metric = Metric::Hamming;
    specs.push(ham);
    let mut re = GeneratorSpec::new(GeneratorKind::RandEuclidean, "re128", 100_000, 100, 128, 4);
    re.depth = 10;
    specs.push(re);
    for spec in &specs {
        let (ds, path) = w.dataset(spec);
        let r = bruteforce_recall(&w, &ds, &path, &spec.name)?;
        ensure!(r == 1.0, "{}: brute-force recall {r}", spec.name);
        report.push(format!("{} {r}", spec.name));
    }
    Ok(report.join(", "))
}

fn rand_euclidean() -> Outcome {
    let mut spec = GeneratorSpec::new(GeneratorKind::RandEuclidean, "re", 100_000, 100, 128, 11);
    spec.depth = 10;
    let ds = annbench::dataio::generate(&spec).map_err(|e| e.to_string())?;
    let offset: usize = ds.attributes["planted_offset"].parse().map_err(|_| "bad planted_offset")?;
    let (train, test) = match (&ds.train, &ds.test) {
        (PointSet::Dense(a), PointSet::Dense(b)) => (a, b),
        _ => return Err("expected dense points".into()),
    };
    let bound = std::f64::consts::FRAC_1_SQRT_2 - 1e-6;
    let mut exact = 0;
    let mut min_other = f64::INFINITY;
    for j in 0..test.rows() {
        let q = test.row(j);
        let planted = offset + j * spec.depth..offset + (j + 1) * spec.depth;
        let mut d: Vec<(f64, usize)> = (0..train.rows())
            .map(|t| {
                let s: f64 = train.row(t).iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
                (s.sqrt(), t)
            })
            .collect();
        for &(dist, t) in &d {
            if !planted.contains(&t) {
                min_other = min_other.min(dist);
            }
        }
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut top: Vec<usize> = d[..spec.depth].iter().map(|e| e.1).collect();
        top.sort_unstable();
        if top == planted.clone().collect::<Vec<_>>() {
            exact += 1;
        }
        let mut stored: Vec<usize> = ds.ground_truth.ids(j)[..spec.depth].to_vec();
        stored.sort_unstable();
        ensure!(stored == top, "query {j}: stored ground truth disagrees with the scan");
    }
    let frac = exact as f64 / test.rows() as f64;
    ensure!(frac >= 0.99, "only {frac} of queries have their planted points as the exact 10-NN");
    ensure!(min_other >= bound, "non-planted point at distance {min_other} < {bound}");
    Ok(format!("planted = exact 10-NN for {:.1}% of queries, min non-planted distance {min_other:.6}", frac * 100.0))
}

fn qps_of(r: &GroupResult) -> f64 {
    metrics::qps(r)
}

fn tradeoff() -> Outcome {
    let w = Workdir::new();
    let (ds, path) = w.uniform("u20", 100_000, 200, 20, Metric::Euclidean, 7);
    let mut bf = w.spec(&path, "u20", instances(&simple("bruteforce", "[]", None), &ds).remove(0), 10);
    bf.run_count = 3;
    let (out, bf_runs) = run_one(&bf);
    ensure!(out.status == RunStatus::Completed, "bruteforce: {}", out.summary());
    let bf_qps = qps_of(&bf_runs[0]);

    let doc = simple("rpforest", "[16, 32]", Some("[[10, 100, 1000, 3000, 10000, 30000]]"));
    let mut rp = w.spec(&path, "u20", instances(&doc, &ds).remove(0), 10);
    rp.run_count = 3;
    let (out, runs) = run_one(&rp);
    ensure!(out.status == RunStatus::Completed, "rpforest: {}", out.summary());
    let pts: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| Ok((metrics::recall(r, &ds.ground_truth, 10)?, qps_of(r))))
        .collect::<annbench::Result<_>>()
        .map_err(|e| e.to_string())?;
    let front: Vec<(f64, f64)> = pareto_frontier(&pts, Orientation::HigherBetter, Orientation::HigherBetter)
        .into_iter()
        .map(|i| pts[i])
        .collect();
    let mut distinct = front.clone();
    distinct.dedup();
    let lo = front.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = front.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let shown: Vec<String> = front.iter().map(|(r, q)| format!("({r:.3}, {q:.0})")).collect();
    ensure!(distinct.len() >= 4, "frontier has {} distinct points: {shown:?}", distinct.len());
    ensure!(lo <= 0.5 && hi >= 0.95, "frontier recall spans {lo:.3}..{hi:.3}");
    for &(r, q) in &front {
        ensure!(r > 0.9 || q > bf_qps, "frontier point recall {r:.3} qps {q:.0} not faster than brute force {bf_qps:.0}");
    }
    Ok(format!("brute force {bf_qps:.0} qps; frontier {}", shown.join(" ")))
}

fn pareto() -> Outcome {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let pts: Vec<(f64, f64)> = (0..1000)
        .map(|_| (rng.random_range(0..200) as f64 / 200.0, rng.random_range(0.0..1e4)))
        .collect();
    let oriented = [
        (Orientation::HigherBetter, Orientation::HigherBetter),
        (Orientation::HigherBetter, Orientation::LowerBetter),
        (Orientation::LowerBetter, Orientation::LowerBetter),
    ];
    let mut sizes = Vec::new();
    for (ox, oy) in oriented {
        let p: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (ox.orient(x), oy.orient(y))).collect();
        let dominated = |b: usize| {
            p.iter().any(|a| {
                a.0 >= p[b].0 && a.1 >= p[b].1 && (a.0 > p[b].0 || a.1 > p[b].1)
            })
        };
        let want: Vec<usize> = (0..p.len()).filter(|&b| !dominated(b)).collect();
        let mut got = pareto_frontier(&pts, ox, oy);
        let front: Vec<(f64, f64)> = got.iter().map(|&i| pts[i]).collect();
        ensure!(front.windows(2).all(|w| w[0].0 <= w[1].0), "frontier not sorted by x");
        got.sort_unstable();
        ensure!(got == want, "frontier {} points, oracle {} points", got.len(), want.len());
        let again = pareto_frontier(&front, ox, oy);
        ensure!(again.len() == front.len(), "frontier of the frontier lost points");
        sizes.push(want.len());
    }
    Ok(format!("frontier sizes {sizes:?} match the oracle"))
}

fn batch_mode() -> Outcome {
    let w = Workdir::new();
    let (ds, path) = w.uniform("b20", 10_000, 200, 20, Metric::Euclidean, 5);
    let mut report = Vec::new();
    for (alg, args, q) in [("bruteforce", "[]", None), ("rpforest", "[8, 32]", Some("[200]"))] {
        let inst = instances(&simple(alg, args, q), &ds).remove(0);
        let single = w.spec(&path, "b20", inst.clone(), 10);
        let mut batch = w.spec(&path, "b20", inst, 10);
        batch.mode = Mode::Batch;
        let (o1, r1) = run_one(&single);
        let (o2, r2) = run_one(&batch);
        ensure!(o1.status == RunStatus::Completed, "{}", o1.summary());
        ensure!(o2.status == RunStatus::Completed, "{}", o2.summary());
        ensure!(r1[0].neighbors == r2[0].neighbors, "{alg}: batch ids differ from single-query ids");
        ensure!(r2[0].mode == Mode::Batch && r2[0].batch_time.is_some(), "{alg}: batch result not flagged");
        ensure!(r1[0].mode == Mode::SingleQuery && r1[0].batch_time.is_none(), "{alg}: single result flagged");
        let bt = r2[0].batch_time.unwrap();
        ensure!((metrics::qps(&r2[0]) - 200.0 / bt).abs() <= 1e-9 * (200.0 / bt), "{alg}: batch qps not m/batch_time");
        ensure!(o2.files[0].starts_with(mode_dir(&w, "b20", 10, Mode::Batch)), "batch file outside the batch tree");
        report.push(format!("{alg} ids identical"));
    }
    let req = ReportRequest {
        results_root: w.results(),
        reports_root: w.reports(),
        dataset_path: path.clone(),
        dataset_name: "b20".into(),
        k: 10,
        x: "recall".into(),
        y: "qps".into(),
        mode: None,
        scatter: false,
        log_y: true,
    };
    report::generate(&req).map_err(|e| e.to_string())?;
    let html = std::fs::read_to_string(w.reports().join("index.html")).map_err(|e| e.to_string())?;
    let batch_sections = html.matches("class=\"mode batch\"").count();
    let single_sections = html.matches("class=\"mode single-query\"").count();
    ensure!(batch_sections == 1 && single_sections == 1, "sections: {batch_sections} batch, {single_sections} single");
    let batch_csv = w.reports().join("b20/10/recall-qps-batch.csv");
    let single_csv = w.reports().join("b20/10/recall-qps.csv");
    let bc = std::fs::read_to_string(&batch_csv).map_err(|e| e.to_string())?;
    let sc = std::fs::read_to_string(&single_csv).map_err(|e| e.to_string())?;
    ensure!(bc.contains("/batch/") && !bc.contains("/single-query/"), "batch export mixes modes");
    ensure!(sc.contains("/single-query/") && !sc.contains("/batch/"), "single-query export mixes modes");
    report.push("separate report sections".into());
    Ok(report.join(", "))
}

fn isolation() -> Outcome {
    let w = Workdir::new();
    let (ds, path) = w.uniform("iso", 1000, 10, 8, Metric::Euclidean, 8);

    let mut hang = w.spec(&path, "iso", instances(&simple("debug-hang", "[]", None), &ds).remove(0), 10);
    hang.timeout = Duration::from_secs(2);
    let start = Instant::now();
    let (out, _) = run_one(&hang);
    let waited = start.elapsed();
    ensure!(out.status == RunStatus::TimedOut, "hang: {}", out.summary());
    ensure!(waited < Duration::from_secs(10), "hang took {waited:?} to kill");
    let dir = hang.output_dir();
    let res = files_with_suffix(&dir, ".res");
    ensure!(res.is_empty() && out.files.is_empty(), "timed-out run left result files {res:?}");
    let stray: Vec<_> = walk(&w.results()).into_iter().filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().contains(".tmp"))).collect();
    ensure!(stray.is_empty(), "temporary files left behind: {stray:?}");
    let status = RunOutcome::read(&hang.status_file()).map_err(|e| e.to_string())?;
    ensure!(status.status == RunStatus::TimedOut, "status file says {:?}", status.status);

    let retain = w.spec(&path, "iso", instances(&simple("debug-retain", "[100]", None), &ds).remove(0), 10);
    let (out, runs) = run_one(&retain);
    ensure!(out.status == RunStatus::Completed, "retain: {}", out.summary());
    let size = runs[0].index_size.ok_or("retain index size unknown")?;
    ensure!(size >= 90_000.0, "retain index size {size} kB");

    let cfg = w.path().join("crash.yml");
    std::fs::write(
        &cfg,
        "float:\n  euclidean:\n    crasher:\n      constructor: debug-crash\n      run-groups:\n        only:\n          args: []\n",
    )
    .map_err(|e| e.to_string())?;
    let o = Command::new(BIN)
        .arg("--workdir")
        .arg(w.path())
        .args(["run", "--dataset", "iso", "--run-count", "1", "--config"])
        .arg(&cfg)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&o.stdout);
    ensure!(o.status.code() == Some(0), "harness exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    ensure!(stdout.contains("failed crasher"), "no failed summary line in {stdout:?}");
    let statuses = files_with_suffix(&w.results().join("iso/10/single-query/crasher"), ".status.json");
    ensure!(statuses.len() == 1, "crash status files: {statuses:?}");
    let st = RunOutcome::read(&statuses[0]).map_err(|e| e.to_string())?;
    ensure!(st.status == RunStatus::Failed, "crash recorded as {:?}", st.status);
    Ok(format!("hang killed after {:.1}s, retain {size:.0} kB, crash recorded as failed", waited.as_secs_f64()))
}

fn metrics_from_files() -> Outcome {
    let w = Workdir::new();
    let (ds, path) = w.uniform("mf", 5000, 100, 16, Metric::Euclidean, 9);
    for (alg, args, q) in [("bruteforce", "[]", None), ("rpforest", "[[4, 8], 16]", Some("[[10, 50, 200]]"))] {
        for inst in instances(&simple(alg, args, q), &ds) {
            let (out, _) = run_one(&w.spec(&path, "mf", inst, 10));
            ensure!(out.status == RunStatus::Completed, "{}", out.summary());
        }
    }
    let req = ReportRequest {
        results_root: w.results(),
        reports_root: w.reports(),
        dataset_path: path,
        dataset_name: "mf".into(),
        k: 10,
        x: "recall".into(),
        y: "qps".into(),
        mode: None,
        scatter: true,
        log_y: true,
    };
    let snapshot = || -> Result<BTreeMap<std::path::PathBuf, Vec<u8>>, String> {
        walk(&w.reports())
            .into_iter()
            .map(|p| std::fs::read(&p).map(|b| (p, b)).map_err(|e| e.to_string()))
            .collect()
    };
    report::generate(&req).map_err(|e| e.to_string())?;
    let first = snapshot()?;
    let metrics_csv = w.reports().join("mf/10/metrics.csv");
    ensure!(first.contains_key(&metrics_csv), "metrics.csv not written");
    std::fs::remove_dir_all(w.reports()).map_err(|e| e.to_string())?;
    report::generate(&req).map_err(|e| e.to_string())?;
    let second = snapshot()?;
    ensure!(first.keys().eq(second.keys()), "regenerated report has different files");
    for (p, b) in &first {
        ensure!(second[p] == *b, "{} differs after regeneration", p.display());
    }
    let rows = String::from_utf8_lossy(&first[&metrics_csv]).lines().count() - 1;
    Ok(format!("{} files identical, {rows} metric rows", first.len()))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 9] = [
        ("config-expansion", 1, config_expansion),
        ("recall-definitions", 1, recall_definitions),
        ("oracle-equivalence", 300, oracle_equivalence),
        ("rand-euclidean-construction", 120, rand_euclidean),
        ("recall-qps-tradeoff", 600, tradeoff),
        ("pareto-oracle", 1, pareto),
        ("batch-mode", 120, batch_mode),
        ("isolation-limits", 60, isolation),
        ("metrics-from-files", 60, metrics_from_files),
    ];
    let mut failed = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(d) if secs >= budget as f64 => Err(format!("over budget: {d}")),
            o => o,
        };
        match outcome {
            Ok(d) => println!("PASS {name} ({secs:.2}s / {budget}s): {d}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s / {budget}s): {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
