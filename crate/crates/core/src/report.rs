//! Pareto frontiers and plot/export rendering over stored result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::DatasetFile;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricDescriptor, MetricInput, Orientation};
use crate::runner::{result_files, GroupResult, Mode};

/// Indices of the non-dominated points, sorted by x then y.
///
/// `a` dominates `b` when it is at least as good on both oriented axes and
/// strictly better on one; exact duplicates therefore survive together.
/// Points with a NaN coordinate are ignored.
pub fn pareto_frontier(points: &[(f64, f64)], x: Orientation, y: Orientation) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len())
        .filter(|&i| !points[i].0.is_nan() && !points[i].1.is_nan())
        .collect();
    let ox = |i: usize| x.orient(points[i].0);
    let oy = |i: usize| y.orient(points[i].1);
    order.sort_by(|&a, &b| ox(b).total_cmp(&ox(a)));
    let mut keep = Vec::new();
    let mut best: Option<f64> = None;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && ox(order[end]) == ox(order[start]) {
            end += 1;
        }
        let group = &order[start..end];
        let top = group.iter().map(|&i| oy(i)).fold(f64::NEG_INFINITY, f64::max);
        if best.is_none_or(|b| top > b) {
            keep.extend(group.iter().copied().filter(|&i| oy(i) == top));
            best = Some(top);
        }
        start = end;
    }
    keep.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[a].1.total_cmp(&points[b].1))
            .then(a.cmp(&b))
    });
    keep
}

/// One plotted run: a query-parameter group of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub x: f64,
    pub y: f64,
    pub algorithm: String,
    pub instance: String,
    pub group: String,
    pub result_file: String,
}

/// Frontier of each algorithm separately, keyed by algorithm name.
pub fn frontiers_by_algorithm(
    points: &[RunPoint],
    x: Orientation,
    y: Orientation,
) -> BTreeMap<String, Vec<RunPoint>> {
    let mut by_alg: BTreeMap<String, Vec<RunPoint>> = BTreeMap::new();
    for p in points {
        by_alg.entry(p.algorithm.clone()).or_default().push(p.clone());
    }
    by_alg
        .into_iter()
        .map(|(alg, pts)| {
            let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.y)).collect();
            let front = pareto_frontier(&xy, x, y).into_iter().map(|i| pts[i].clone()).collect();
            (alg, front)
        })
        .collect()
}

/// Series name of a result: external programs are marked as going through
/// the text protocol.
pub fn series_name(r: &GroupResult) -> String {
    if r.attributes.get("runner").is_some_and(|v| v == "external") {
        format!("{} (protocol)", r.algorithm)
    } else {
        r.algorithm.clone()
    }
}

/// Loads every result for `(dataset, k, mode)` and evaluates two metrics.
/// Runs where either metric is unavailable are left out.
pub fn collect_points(
    ds: &DatasetFile,
    files: &[PathBuf],
    x: &MetricDescriptor,
    y: &MetricDescriptor,
) -> Result<Vec<RunPoint>> {
    let mut out = Vec::new();
    for f in files {
        let run = GroupResult::read(f)?;
        let input = MetricInput {
            ground_truth: &ds.ground_truth,
            run: &run,
        };
        if let (Some(xv), Some(yv)) = ((x.compute)(&input)?, (y.compute)(&input)?) {
            out.push(RunPoint {
                x: xv,
                y: yv,
                algorithm: series_name(&run),
                instance: run.label.clone(),
                group: run.group.clone(),
                result_file: f.display().to_string(),
            });
        }
    }
    Ok(out)
}

pub fn to_csv(points: &[RunPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(|e| Error::format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv(text: &str) -> Result<Vec<RunPoint>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(format!("csv: {e}"))))
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Color and marker shape derived from the algorithm name.
pub fn style(name: &str) -> (String, usize) {
    let h = fnv1a(name);
    (format!("hsl({},65%,40%)", h % 360), ((h >> 16) % 3) as usize)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub x_name: String,
    pub y_name: String,
    pub x_orientation: Orientation,
    pub y_orientation: Orientation,
    pub log_y: bool,
    pub scatter: bool,
    pub title: String,
}

impl PlotSpec {
    pub fn new(x: &MetricDescriptor, y: &MetricDescriptor, title: &str) -> Self {
        Self {
            x_name: x.name.to_string(),
            y_name: y.name.to_string(),
            x_orientation: x.orientation,
            y_orientation: y.orientation,
            log_y: true,
            scatter: false,
            title: title.to_string(),
        }
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let vals: Vec<f64> = values.filter(|v| v.is_finite() && (!log || *v > 0.0)).collect();
        let (mut lo, mut hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if vals.is_empty() {
            (lo, hi) = if log { (1.0, 10.0) } else { (0.0, 1.0) };
        }
        if log {
            lo = 10f64.powf(lo.log10().floor());
            hi = 10f64.powf(hi.log10().ceil());
            if lo == hi {
                hi = lo * 10.0;
            }
        } else if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        Self { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        if self.log {
            (v.max(self.lo).log10() - self.lo.log10()) / (self.hi.log10() - self.lo.log10())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.log10().round() as i32, self.hi.log10().round() as i32);
            (a..=b).map(|e| 10f64.powi(e)).collect()
        } else {
            (0..=5).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 5.0).collect()
        }
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn marker(shape: usize, x: f64, y: f64, color: &str) -> String {
    match shape {
        0 => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{color}"/>"#),
        1 => format!(
            r#"<rect x="{:.2}" y="{:.2}" width="7" height="7" fill="{color}"/>"#,
            x - 3.5,
            y - 3.5
        ),
        _ => format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - 4.0,
            x - 4.0,
            y + 3.5,
            x + 4.0,
            y + 3.5
        ),
    }
}

/// SVG plot: one frontier polyline per algorithm, or every run as a
/// marker when `spec.scatter` is set.
pub fn render_svg(points: &[RunPoint], spec: &PlotSpec) -> String {
    let fronts = frontiers_by_algorithm(points, spec.x_orientation, spec.y_orientation);
    let shown: Vec<&RunPoint> = if spec.scatter {
        points.iter().collect()
    } else {
        fronts.values().flatten().collect()
    };
    let log_y = spec.log_y && shown.iter().all(|p| p.y > 0.0);
    let xa = Axis::fit(shown.iter().map(|p| p.x), false);
    let ya = Axis::fit(shown.iter().map(|p| p.y), log_y);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |v: f64| LEFT + xa.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ya.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 16.0,
            tick_label(t)
        );
    }
    for t in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(&spec.x_name)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y_name),
        if log_y { " (log)" } else { "" }
    );

    let mut names: Vec<&String> = fronts.keys().collect();
    names.sort();
    for (li, name) in names.iter().enumerate() {
        let (color, shape) = style(name);
        let series: Vec<&RunPoint> = if spec.scatter {
            points.iter().filter(|p| &p.algorithm == *name).collect()
        } else {
            fronts[*name].iter().collect()
        };
        let _ = writeln!(s, r#"<g class="series" data-algorithm="{}">"#, escape(name));
        if !spec.scatter && series.len() > 1 {
            let coords: Vec<String> = series.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        for p in &series {
            let _ = writeln!(s, "{}", marker(shape, px(p.x), py(p.y), &color));
        }
        let _ = writeln!(s, "</g>");
        let ly = TOP + 10.0 + 18.0 * li as f64;
        let lx = W - RIGHT + 14.0;
        let _ = writeln!(
            s,
            r#"<g class="legend">{}<text x="{:.1}" y="{:.1}">{}</text></g>"#,
            marker(shape, lx, ly, &color),
            lx + 10.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// pgfplots code for the frontier plot.
pub fn render_pgfplots(points: &[RunPoint], spec: &PlotSpec) -> String {
    let fronts = frontiers_by_algorithm(points, spec.x_orientation, spec.y_orientation);
    let log_y = spec.log_y && points.iter().all(|p| p.y > 0.0);
    let mut s = String::new();
    s.push_str("\\begin{tikzpicture}\n\\begin{axis}[\n");
    let _ = writeln!(s, "  xlabel={{{}}},", spec.x_name);
    let _ = writeln!(s, "  ylabel={{{}}},", spec.y_name);
    if log_y {
        s.push_str("  ymode=log,\n");
    }
    s.push_str("  legend pos=outer north east,\n]\n");
    for (name, front) in &fronts {
        s.push_str("\\addplot coordinates {");
        for p in front {
            let _ = write!(s, " ({}, {})", p.x, p.y);
        }
        s.push_str(" };\n");
        let _ = writeln!(s, "\\addlegendentry{{{}}}", name.replace('_', "\\_"));
    }
    s.push_str("\\end{axis}\n\\end{tikzpicture}\n");
    s
}

/// One rendered block of the HTML report.
#[derive(Debug, Clone)]
pub struct Section {
    pub title: String,
    pub svg: String,
    pub frontier: Vec<RunPoint>,
}

/// HTML fragment for one dataset/k with separate single-query and batch parts.
pub fn render_html_fragment(dataset: &str, k: usize, sections: &[(Mode, Section)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<section class=\"dataset\"><h2>{} (k = {k})</h2>", escape(dataset));
    for (mode, sec) in sections {
        let heading = match mode {
            Mode::SingleQuery => "Single-query runs",
            Mode::Batch => "Batch runs",
        };
        let _ = writeln!(
            s,
            "<div class=\"mode {}\"><h3>{heading}: {}</h3>\n{}",
            mode.as_str(),
            escape(&sec.title),
            sec.svg
        );
        s.push_str("<table><tr><th>algorithm</th><th>instance</th><th>group</th><th>x</th><th>y</th><th>result file</th></tr>\n");
        for p in &sec.frontier {
            let _ = writeln!(
                s,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                escape(&p.algorithm),
                escape(&p.instance),
                escape(&p.group),
                p.x,
                p.y,
                escape(&p.result_file)
            );
        }
        s.push_str("</table></div>\n");
    }
    s.push_str("</section>\n");
    s
}

pub fn render_html_page(fragments: &[String]) -> String {
    let mut s = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>annbench report</title>\n\
<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;font-size:12px}\
td,th{border:1px solid #ccc;padding:2px 6px}.batch{border-top:3px double #888;margin-top:2em}</style>\n\
</head><body>\n<h1>annbench report</h1>\n",
    );
    for f in fragments {
        s.push_str(f);
    }
    let _ = writeln!(
        s,
        "<p class=\"note\">Recall counts returned points no farther than the k-th true neighbor, \
with a relative slack of {} on the threshold. Series marked (protocol) ran as external programs \
over the text protocol and include its overhead. Batch runs are shown apart from single-query runs.</p>",
        metrics::TAU
    );
    s.push_str("</body></html>\n");
    s
}

/// What to render and where.
#[derive(Debug, Clone)]
pub struct ReportRequest {
    pub results_root: PathBuf,
    pub reports_root: PathBuf,
    pub dataset_path: PathBuf,
    pub dataset_name: String,
    pub k: usize,
    pub x: String,
    pub y: String,
    /// Restrict to one mode; both are rendered (separately) otherwise.
    pub mode: Option<Mode>,
    pub scatter: bool,
    pub log_y: bool,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    let tmp = crate::dataio::container::tmp_path(path);
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Every registered metric for every result file, as CSV.
pub fn metrics_csv(ds: &DatasetFile, files: &[PathBuf]) -> Result<String> {
    let mut s = String::from("result_file,mode,algorithm,instance,group");
    for m in metrics::REGISTRY {
        s.push(',');
        s.push_str(m.name);
    }
    s.push('\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for f in files {
        let run = GroupResult::read(f)?;
        let vals = metrics::compute_all(&run, &ds.ground_truth)?;
        let mut rec = vec![
            f.display().to_string(),
            run.mode.as_str().to_string(),
            series_name(&run),
            run.label.clone(),
            run.group.clone(),
        ];
        rec.extend(
            metrics::REGISTRY
                .iter()
                .map(|m| vals[m.name].map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec).map_err(|e| Error::format(e.to_string()))?;
    }
    s.push_str(&String::from_utf8(w.into_inner().map_err(|e| Error::format(e.to_string()))?).expect("utf-8"));
    Ok(s)
}

/// Renders plots, exports and the HTML report; returns the written paths.
pub fn generate(req: &ReportRequest) -> Result<Vec<PathBuf>> {
    let x = metrics::lookup(&req.x)?;
    let y = metrics::lookup(&req.y)?;
    let ds = crate::dataio::read_dataset(&req.dataset_path)?;
    let out_dir = req.reports_root.join(&req.dataset_name).join(req.k.to_string());
    let mut written = Vec::new();
    let mut sections = Vec::new();

    let all_files = result_files(&req.results_root, &req.dataset_name, req.k, req.mode)?;
    if all_files.is_empty() {
        return Err(Error::usage(format!(
            "no results for dataset `{}` with k = {}",
            req.dataset_name, req.k
        )));
    }
    let p = out_dir.join("metrics.csv");
    write_file(&p, &metrics_csv(&ds, &all_files)?)?;
    written.push(p);

    let modes = match req.mode {
        Some(m) => vec![m],
        None => vec![Mode::SingleQuery, Mode::Batch],
    };
    for mode in modes {
        let files = result_files(&req.results_root, &req.dataset_name, req.k, Some(mode))?;
        if files.is_empty() {
            continue;
        }
        let points = collect_points(&ds, &files, x, y)?;
        let suffix = if mode == Mode::Batch { "-batch" } else { "" };
        let stem = format!("{}-{}{}", x.name, y.name, suffix);
        let title = format!("{} (k = {}, {})", req.dataset_name, req.k, mode.as_str());
        let mut spec = PlotSpec::new(x, y, &title);
        spec.log_y = req.log_y;
        let svg = render_svg(&points, &spec);
        for (name, text) in [
            (format!("{stem}.svg"), svg.clone()),
            (format!("{stem}.csv"), to_csv(&points)?),
            (format!("{stem}.tex"), render_pgfplots(&points, &spec)),
        ] {
            let p = out_dir.join(name);
            write_file(&p, &text)?;
            written.push(p);
        }
        if req.scatter {
            let mut sc = spec.clone();
            sc.scatter = true;
            let p = out_dir.join(format!("{stem}-scatter.svg"));
            write_file(&p, &render_svg(&points, &sc))?;
            written.push(p);
        }
        let frontier = frontiers_by_algorithm(&points, x.orientation, y.orientation)
            .into_values()
            .flatten()
            .collect();
        sections.push((mode, Section { title, svg, frontier }));
    }

    let fragment = render_html_fragment(&req.dataset_name, req.k, &sections);
    let p = out_dir.join("fragment.html");
    write_file(&p, &fragment)?;
    written.push(p);
    let p = req.reports_root.join("index.html");
    write_file(&p, &render_html_page(&collect_fragments(&req.reports_root)?))?;
    written.push(p);
    Ok(written)
}

/// Fragments of every dataset rendered so far, in path order.
fn collect_fragments(root: &Path) -> Result<Vec<String>> {
    let mut paths = Vec::new();
    for d in std::fs::read_dir(root)?.flatten() {
        if !d.path().is_dir() {
            continue;
        }
        for k in std::fs::read_dir(d.path())?.flatten() {
            let f = k.path().join("fragment.html");
            if f.exists() {
                paths.push(f);
            }
        }
    }
    paths.sort();
    paths.iter().map(|p| Ok(std::fs::read_to_string(p)?)).collect()
}
