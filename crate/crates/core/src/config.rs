//! Experiment configuration: parsing the point-kind → metric → algorithm tree
//! and expanding run groups into concrete algorithm instances.
//!
//! ```yaml
//! float:
//!   euclidean:
//!     rpforest:
//!       constructor: rpforest
//!       base-args: ["@metric"]
//!       run-groups:
//!         small:
//!           args: [[4, 16], 32]
//!           query-args: [[10, 100, 1000]]
//! ```
//!
//! A list inside `args`/`query-args` is an axis of alternatives; the product
//! is expanded left to right with the last axis varying fastest.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use crate::error::{Error, Result};
use crate::space::{Metric, PointKind};

/// A scalar argument, kept with its document type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ConfigValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ConfigValue::Int(v) => Some(*v),
            ConfigValue::Float(v) if v.fract() == 0.0 => Some(*v as i64),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ConfigValue::Int(v) => Some(*v as f64),
            ConfigValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ConfigValue::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Plain text form used on the wire (strings unquoted).
    pub fn to_text(&self) -> String {
        match self {
            ConfigValue::Str(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for ConfigValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).map_err(|_| fmt::Error)?;
        f.write_str(&s)
    }
}

/// One `args` / `query-args` entry: a fixed scalar or an axis of alternatives.
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    Scalar(ConfigValue),
    Choice(Vec<ConfigValue>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunnerKind {
    InProcess,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunGroup {
    pub name: String,
    pub args: Vec<Template>,
    pub query_args: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmDef {
    pub name: String,
    pub runner_kind: RunnerKind,
    /// Constructor name (in-process) or command line (external).
    pub entry_point: String,
    pub module: Option<String>,
    pub base_args: Vec<ConfigValue>,
    pub run_groups: Vec<RunGroup>,
    /// Document path of the definition, for error messages.
    pub path: String,
}

/// Values substituted for `@keyword` arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandContext {
    pub metric: Metric,
    pub dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmInstance {
    pub algorithm: String,
    pub runner_kind: RunnerKind,
    pub entry_point: String,
    pub run_group: String,
    pub constructor_args: Vec<ConfigValue>,
    pub query_param_groups: Vec<Vec<ConfigValue>>,
    pub label: String,
}

/// Canonical printable form `name(arg, …)`, arguments as JSON scalars.
pub fn instance_label(name: &str, args: &[ConfigValue]) -> String {
    let inner: Vec<String> = args.iter().map(|a| a.to_string()).collect();
    format!("{name}({})", inner.join(","))
}

/// Inverse of [`instance_label`].
pub fn parse_label(label: &str) -> Result<(String, Vec<ConfigValue>)> {
    let open = label
        .find('(')
        .ok_or_else(|| Error::usage(format!("label `{label}` has no argument list")))?;
    let inner = label[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::usage(format!("label `{label}` is not closed")))?;
    let args: Vec<ConfigValue> = serde_json::from_str(&format!("[{inner}]"))?;
    Ok((label[..open].to_owned(), args))
}

/// Printable form of a query-parameter group.
pub fn group_label(group: &[ConfigValue]) -> String {
    let inner: Vec<String> = group.iter().map(|a| a.to_string()).collect();
    format!("[{}]", inner.join(","))
}

const ALGORITHM_KEYS: [&str; 7] = [
    "docker-tag",
    "module",
    "constructor",
    "command",
    "base-args",
    "run-groups",
    "disabled",
];

fn key_str<'a>(key: &'a Value, path: &str) -> Result<&'a str> {
    key.as_str()
        .ok_or_else(|| Error::config(path, "mapping keys must be strings"))
}

fn as_mapping<'a>(v: &'a Value, path: &str) -> Result<&'a serde_yaml::Mapping> {
    v.as_mapping()
        .ok_or_else(|| Error::config(path, "expected a mapping"))
}

fn scalar(v: &Value, path: &str) -> Result<ConfigValue> {
    match v {
        Value::Bool(b) => Ok(ConfigValue::Bool(*b)),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(ConfigValue::Int(i))
            } else if let Some(f) = n.as_f64() {
                Ok(ConfigValue::Float(f))
            } else {
                Err(Error::config(path, format!("unsupported number {n}")))
            }
        }
        Value::String(s) => Ok(ConfigValue::Str(s.clone())),
        Value::Sequence(_) => Err(Error::config(path, "list nesting deeper than one level")),
        _ => Err(Error::config(path, "expected a scalar")),
    }
}

fn templates(v: &Value, path: &str) -> Result<Vec<Template>> {
    let seq = match v {
        Value::Sequence(s) => s,
        // A lone scalar is shorthand for a one-element list.
        other => return Ok(vec![Template::Scalar(scalar(other, path)?)]),
    };
    let mut out = Vec::with_capacity(seq.len());
    for (i, item) in seq.iter().enumerate() {
        let p = format!("{path}[{i}]");
        match item {
            Value::Sequence(alts) => {
                if alts.is_empty() {
                    return Err(Error::config(p, "empty list of alternatives"));
                }
                let vals = alts
                    .iter()
                    .enumerate()
                    .map(|(j, a)| scalar(a, &format!("{p}[{j}]")))
                    .collect::<Result<Vec<_>>>()?;
                out.push(Template::Choice(vals));
            }
            other => out.push(Template::Scalar(scalar(other, &p)?)),
        }
    }
    Ok(out)
}

fn parse_algorithm(name: &str, v: &Value, path: &str) -> Result<Option<AlgorithmDef>> {
    let map = as_mapping(v, path)?;
    for (k, _) in map {
        let k = key_str(k, path)?;
        if !ALGORITHM_KEYS.contains(&k) {
            return Err(Error::config(format!("{path}.{k}"), "unknown key"));
        }
    }
    let get = |k: &str| map.get(Value::String(k.to_owned()));
    if let Some(d) = get("disabled") {
        match d {
            Value::Bool(true) => return Ok(None),
            Value::Bool(false) => {}
            _ => return Err(Error::config(format!("{path}.disabled"), "expected a boolean")),
        }
    }
    let string_field = |k: &str| -> Result<Option<String>> {
        match get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::config(format!("{path}.{k}"), "expected a string")),
        }
    };
    let module = string_field("module")?;
    let constructor = string_field("constructor")?;
    let command = match get("command") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Sequence(parts)) => {
            let words = parts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    p.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| Error::config(format!("{path}.command[{i}]"), "expected a string"))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(shell_words::join(words))
        }
        Some(_) => return Err(Error::config(format!("{path}.command"), "expected a string or list")),
    };
    let (runner_kind, entry_point) = match (constructor, command) {
        (Some(c), None) => (RunnerKind::InProcess, c),
        (None, Some(c)) => (RunnerKind::External, c),
        (Some(_), Some(_)) => {
            return Err(Error::config(path, "`constructor` and `command` are mutually exclusive"))
        }
        (None, None) => return Err(Error::config(path, "needs `constructor` or `command`")),
    };
    let base_args = match get("base-args") {
        None => Vec::new(),
        Some(Value::Sequence(s)) => s
            .iter()
            .enumerate()
            .map(|(i, a)| scalar(a, &format!("{path}.base-args[{i}]")))
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::config(format!("{path}.base-args"), "expected a list")),
    };
    let groups_path = format!("{path}.run-groups");
    let groups = get("run-groups").ok_or_else(|| Error::config(&groups_path, "missing"))?;
    let mut run_groups = Vec::new();
    for (gk, gv) in as_mapping(groups, &groups_path)? {
        let gname = key_str(gk, &groups_path)?;
        let gpath = format!("{groups_path}.{gname}");
        let gmap = match gv {
            Value::Null => serde_yaml::Mapping::new(),
            other => as_mapping(other, &gpath)?.clone(),
        };
        let mut args = Vec::new();
        let mut query_args = Vec::new();
        for (k, val) in &gmap {
            let k = key_str(k, &gpath)?;
            let p = format!("{gpath}.{k}");
            match k {
                "args" => args = templates(val, &p)?,
                "query-args" => query_args = templates(val, &p)?,
                _ => return Err(Error::config(p, "unknown key")),
            }
        }
        run_groups.push(RunGroup {
            name: gname.to_owned(),
            args,
            query_args,
        });
    }
    if run_groups.is_empty() {
        return Err(Error::config(groups_path, "no run groups"));
    }
    Ok(Some(AlgorithmDef {
        name: name.to_owned(),
        runner_kind,
        entry_point,
        module,
        base_args,
        run_groups,
        path: path.to_owned(),
    }))
}

/// Parses a configuration document and returns the definitions applicable to
/// datasets of the given point kind and metric. The whole document is
/// checked, including sections that do not apply.
pub fn parse_config(document: &str, kind: PointKind, metric: Metric) -> Result<Vec<AlgorithmDef>> {
    let root: Value =
        serde_yaml::from_str(document).map_err(|e| Error::config("<document>", e.to_string()))?;
    let mut out: Vec<AlgorithmDef> = Vec::new();
    if root.is_null() {
        return Ok(out);
    }
    for (pk, pv) in as_mapping(&root, "<root>")? {
        let pk_name = key_str(pk, "<root>")?;
        let point_kind: PointKind = pk_name
            .parse()
            .map_err(|_| Error::config(pk_name, "unknown point kind"))?;
        for (mk, mv) in as_mapping(pv, pk_name)? {
            let mk_name = key_str(mk, pk_name)?;
            let mpath = format!("{pk_name}.{mk_name}");
            let metric_match = if mk_name == "any" {
                true
            } else {
                let m: Metric = mk_name
                    .parse()
                    .map_err(|_| Error::config(&mpath, "unknown metric"))?;
                m == metric
            };
            for (ak, av) in as_mapping(mv, &mpath)? {
                let aname = key_str(ak, &mpath)?;
                let apath = format!("{mpath}.{aname}");
                let Some(def) = parse_algorithm(aname, av, &apath)? else {
                    continue;
                };
                if point_kind == kind && metric_match {
                    if out.iter().any(|d| d.name == def.name) {
                        return Err(Error::config(apath, "algorithm defined twice for this dataset"));
                    }
                    out.push(def);
                }
            }
        }
    }
    Ok(out)
}

fn substitute(v: &ConfigValue, ctx: &ExpandContext, path: &str) -> Result<ConfigValue> {
    match v {
        ConfigValue::Str(s) if s.starts_with('@') => match s.as_str() {
            "@metric" => Ok(ConfigValue::Str(ctx.metric.as_str().to_owned())),
            "@dimension" => Ok(ConfigValue::Int(ctx.dimension as i64)),
            other => Err(Error::config(path, format!("unknown keyword `{other}`"))),
        },
        other => Ok(other.clone()),
    }
}

/// Cartesian product of the template axes, last axis fastest.
fn product(axes: &[Template], ctx: &ExpandContext, path: &str) -> Result<Vec<Vec<ConfigValue>>> {
    let axes: Vec<Vec<ConfigValue>> = axes
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let p = format!("{path}[{i}]");
            match t {
                Template::Scalar(v) => Ok(vec![substitute(v, ctx, &p)?]),
                Template::Choice(vs) => vs.iter().map(|v| substitute(v, ctx, &p)).collect(),
            }
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Vec<ConfigValue>> = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut row = prefix.clone();
                row.push(v.clone());
                next.push(row);
            }
        }
        out = next;
    }
    Ok(out)
}

/// Expands one definition into its algorithm instances.
pub fn expand(def: &AlgorithmDef, ctx: &ExpandContext) -> Result<Vec<AlgorithmInstance>> {
    let base = def
        .base_args
        .iter()
        .enumerate()
        .map(|(i, v)| substitute(v, ctx, &format!("{}.base-args[{i}]", def.path)))
        .collect::<Result<Vec<_>>>()?;
    let mut instances: Vec<AlgorithmInstance> = Vec::new();
    let mut labels = HashSet::new();
    for group in &def.run_groups {
        let gpath = format!("{}.run-groups.{}", def.path, group.name);
        let query_param_groups = product(&group.query_args, ctx, &format!("{gpath}.query-args"))?;
        for args in product(&group.args, ctx, &format!("{gpath}.args"))? {
            let mut constructor_args = base.clone();
            constructor_args.extend(args);
            let label = instance_label(&def.name, &constructor_args);
            if !labels.insert(label.clone()) {
                return Err(Error::config(&gpath, format!("instance {label} generated twice")));
            }
            instances.push(AlgorithmInstance {
                algorithm: def.name.clone(),
                runner_kind: def.runner_kind,
                entry_point: def.entry_point.clone(),
                run_group: group.name.clone(),
                constructor_args,
                query_param_groups: query_param_groups.clone(),
                label,
            });
        }
    }
    Ok(instances)
}

/// Parameter grids for the bundled baselines.
pub const DEFAULT_CONFIG: &str = r#"
float:
  any:
    bruteforce:
      constructor: bruteforce
      base-args: ["@metric"]
      run-groups:
        exact:
          args: []
    rpforest:
      constructor: rpforest
      base-args: ["@metric"]
      run-groups:
        forest:
          args: [[4, 16, 64], 32]
          query-args: [[10, 40, 100, 400, 1000, 4000, 10000]]
    knngraph:
      constructor: knngraph
      base-args: ["@metric"]
      run-groups:
        graph:
          args: [[16, 32], 8]
          query-args: [[10, 20, 40, 80, 160]]
bit:
  hamming:
    bruteforce:
      constructor: bruteforce
      base-args: ["@metric"]
      run-groups:
        exact:
          args: []
    bitsampling:
      constructor: bitsampling
      base-args: ["@metric"]
      run-groups:
        tables:
          args: [[4, 16], [8, 12, 16]]
          query-args: [[1, 4, 16]]
    knngraph:
      constructor: knngraph
      base-args: ["@metric"]
      run-groups:
        graph:
          args: [[16], 8]
          query-args: [[10, 40, 160]]
"#;
