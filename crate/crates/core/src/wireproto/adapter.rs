use std::io::{BufRead, Write};

use super::{parse_bits, parse_dense, tokenize, PROTOCOL_VERSION};
use crate::error::{Error, Result};
use crate::knn::brute_force_knn;
use crate::space::{BitMatrix, DenseMatrix, Metric, PointKind, PointRef, PointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Configuring,
    Training,
    Receiving { n: usize, d: usize },
    Received,
    Querying,
}

enum Query {
    Dense(Vec<f32>),
    Bits(Vec<u64>),
}

impl Query {
    fn as_ref(&self) -> PointRef<'_, f32> {
        match self {
            Query::Dense(v) => PointRef::Dense(v),
            Query::Bits(w) => PointRef::Bits(w),
        }
    }
}

struct Adapter {
    state: State,
    metric: Metric,
    kind: PointKind,
    prepared_allowed: bool,
    train_dim: usize,
    rows: Vec<Vec<f32>>,
    bit_rows: Vec<Vec<u64>>,
    train: Option<PointSet<f32>>,
    prepared: Option<Query>,
    queries: usize,
    last_candidates: usize,
}

enum Outcome {
    Reply(Vec<String>),
    Silent,
    Exit,
}

fn ok() -> Outcome {
    Outcome::Reply(vec!["ok".into()])
}

impl Adapter {
    fn new() -> Self {
        Self {
            state: State::Configuring,
            metric: Metric::Euclidean,
            kind: PointKind::Float,
            prepared_allowed: false,
            train_dim: 0,
            rows: Vec::new(),
            bit_rows: Vec::new(),
            train: None,
            prepared: None,
            queries: 0,
            last_candidates: 0,
        }
    }

    fn parse_point(&self, tokens: &[String], d: usize) -> Result<Query> {
        match self.kind {
            PointKind::Float => {
                if tokens.len() != d {
                    return Err(Error::protocol("bad-dim"));
                }
                Ok(Query::Dense(parse_dense(tokens).map_err(|_| Error::protocol("bad-number"))?))
            }
            PointKind::Bit => match tokens {
                [t] => Ok(Query::Bits(parse_bits(t, d).map_err(|_| Error::protocol("bad-dim"))?)),
                _ => Err(Error::protocol("bad-dim")),
            },
        }
    }

    fn answer(&mut self, q: &Query, k: usize) -> Result<Vec<String>> {
        let train = self.train.as_ref().expect("querying implies trained");
        let ids = if k == 0 {
            Vec::new()
        } else {
            brute_force_knn(q.as_ref(), train, k.min(train.len()), self.metric)?.ids
        };
        self.queries += 1;
        self.last_candidates = train.len();
        let mut out = vec![format!("ok {}", ids.len())];
        out.extend(ids.iter().map(|id| id.to_string()));
        Ok(out)
    }

    fn handle(&mut self, line: &str) -> Result<Outcome> {
        if let State::Receiving { n, d } = self.state {
            let tokens = tokenize(line)?;
            let point = self.parse_point(&tokens, d)?;
            match point {
                Query::Dense(v) => self.rows.push(v),
                Query::Bits(w) => self.bit_rows.push(w),
            }
            if self.rows.len() + self.bit_rows.len() == n {
                self.state = State::Received;
            }
            return Ok(Outcome::Silent);
        }
        let tokens = tokenize(line)?;
        let Some((verb, args)) = tokens.split_first() else {
            return Err(Error::protocol("empty-command"));
        };
        let out_of_phase = || Err(Error::protocol("out-of-phase"));
        match (verb.as_str(), self.state) {
            ("exit", _) => Ok(Outcome::Exit),
            ("config", State::Configuring) => {
                let [key, value] = args else {
                    return Err(Error::protocol("config takes a key and a value"));
                };
                match key.as_str() {
                    "proto" if value == PROTOCOL_VERSION => {}
                    "proto" => return Err(Error::protocol("unsupported-version")),
                    "metric" => self.metric = value.parse().map_err(|_| Error::protocol("unknown-metric"))?,
                    "point-kind" => self.kind = value.parse().map_err(|_| Error::protocol("unknown-point-kind"))?,
                    "prepared-queries" => self.prepared_allowed = value == "1",
                    _ => {}
                }
                Ok(ok())
            }
            ("config-done", State::Configuring) => {
                if self.metric.point_kind() != self.kind {
                    return Err(Error::protocol("metric-kind-mismatch"));
                }
                self.state = State::Training;
                Ok(ok())
            }
            ("train", State::Training) => {
                let [n, d] = args else {
                    return Err(Error::protocol("train takes n and d"));
                };
                let (Ok(n), Ok(d)) = (n.parse::<usize>(), d.parse::<usize>()) else {
                    return Err(Error::protocol("bad-size"));
                };
                if n == 0 || d == 0 {
                    return Err(Error::protocol("bad-size"));
                }
                self.rows.clear();
                self.bit_rows.clear();
                self.train_dim = d;
                self.state = State::Receiving { n, d };
                Ok(ok())
            }
            ("train-done", State::Received) => {
                let set = match self.kind {
                    PointKind::Float => PointSet::Dense(DenseMatrix::from_rows(&std::mem::take(&mut self.rows))?),
                    PointKind::Bit => {
                        let rows = std::mem::take(&mut self.bit_rows);
                        PointSet::Bits(BitMatrix::from_words(rows.concat(), rows.len(), self.train_dim)?)
                    }
                };
                self.train = Some(set);
                self.state = State::Querying;
                Ok(ok())
            }
            ("query-params", State::Querying) => Ok(ok()),
            ("query", State::Querying) => {
                let Some((k, coords)) = args.split_last() else {
                    return Err(Error::protocol("bad-dim"));
                };
                let k = k.parse::<usize>().map_err(|_| Error::protocol("bad-k"))?;
                let q = self.parse_point(coords, self.train_dim)?;
                Ok(Outcome::Reply(self.answer(&q, k)?))
            }
            ("prepare", State::Querying) if self.prepared_allowed => {
                self.prepared = Some(self.parse_point(args, self.train_dim)?);
                Ok(ok())
            }
            ("run", State::Querying) => {
                let [k] = args else {
                    return Err(Error::protocol("run takes k"));
                };
                let k = k.parse::<usize>().map_err(|_| Error::protocol("bad-k"))?;
                let q = self.prepared.take().ok_or_else(|| Error::protocol("nothing-prepared"))?;
                Ok(Outcome::Reply(self.answer(&q, k)?))
            }
            ("stats", State::Querying) => Ok(Outcome::Reply(vec![
                "ok 2".into(),
                format!("candidates {}", self.last_candidates),
                format!("queries {}", self.queries),
            ])),
            ("config" | "config-done" | "train" | "train-done" | "query-params" | "query" | "prepare" | "run" | "stats", _) => {
                out_of_phase()
            }
            _ => Err(Error::protocol("unknown-command")),
        }
    }
}

/// Error text sent to the harness: the protocol reason when there is one,
/// otherwise a fixed token so the reply always tokenizes.
fn reason(e: &Error) -> String {
    match e {
        Error::Protocol(msg) if msg.starts_with("cannot tokenize") => "malformed-line".into(),
        Error::Protocol(msg) => super::serialize(&[msg.as_str()]),
        _ => "internal-error".into(),
    }
}

/// Serves one protocol session with exact linear-scan answers until `exit`
/// or end of input.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W) -> Result<()> {
    let mut adapter = Adapter::new();
    for line in input.lines() {
        let line = line?;
        let reply = match adapter.handle(&line) {
            Ok(Outcome::Reply(lines)) => lines,
            Ok(Outcome::Silent) => continue,
            Ok(Outcome::Exit) => return Ok(()),
            Err(e) => vec![format!("error {}", reason(&e))],
        };
        for l in reply {
            writeln!(output, "{l}")?;
        }
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn transcript(input: &str) -> String {
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn three_point_session() {
        let input = "\
config proto annb-proto/1
config metric euclidean
config point-kind float
config prepared-queries 1
config-done
train 3 2
0 0
1 0
0 2
train-done
query-params
query 0.9 0.1 2
prepare 0.1 1.9
run 1
stats
exit
query 0 0 1
";
        let expected = "\
ok
ok
ok
ok
ok
ok
ok
ok
ok 2
1
0
ok
ok 1
2
ok 2
candidates 3
queries 2
";
        assert_eq!(transcript(input), expected);
    }

    #[test]
    fn identity_query_on_single_point() {
        let input = "config metric euclidean\nconfig-done\ntrain 1 2\n0 0\ntrain-done\nquery 0.0 0.0 1\n";
        assert!(transcript(input).ends_with("ok 1\n0\n"));
    }

    #[test]
    fn errors_keep_the_session_alive() {
        let input = "\
query 0 0 1
config-done
train 1 2
0 0
train-done
query 0.5 1
query \"0.5 1
query 0 0 1
";
        let out = transcript(input);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "error out-of-phase");
        assert_eq!(lines[4], "error bad-dim");
        assert!(lines[5].starts_with("error "));
        assert_eq!(&lines[6..], ["ok 1", "0"]);
    }

    #[test]
    fn bit_session() {
        let input = "\
config metric hamming
config point-kind bit
config-done
train 2 12
ff0f
0000
train-done
query 0100 1
";
        assert!(transcript(input).ends_with("ok 1\n1\n"));
    }

    #[test]
    fn prepare_requires_negotiation() {
        let input = "config-done\ntrain 1 1\n0\ntrain-done\nprepare 0\n";
        assert!(transcript(input).ends_with("error out-of-phase\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn survives_garbage(lines in prop::collection::vec("[ -~]{0,24}", 1..160)) {
            let mut input = String::from("config-done\ntrain 2 2\n0 0\n1 1\ntrain-done\n");
            for l in &lines {
                if l.trim() != "exit" {
                    input.push_str(l);
                    input.push('\n');
                }
            }
            input.push_str("query 0 0 1\n");
            let out = transcript(&input);
            prop_assert!(out.ends_with("ok 1\n0\n") || out.contains("error"));
        }
    }
}
