use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::{point_tokens, serialize, tokenize, PROTOCOL_VERSION};
use crate::config::ConfigValue;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{PointRef, PointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Configuring,
    Training,
    Querying,
    Prepared,
    Done,
}

/// A parsed reply: `ok` with its tokens and any continuation lines, or `error`.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ok { args: Vec<String>, lines: Vec<Vec<String>> },
    Error(String),
}

/// Harness end of a conversation with one adapter process.
pub struct ExternalSession {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<std::io::Result<String>>,
    phase: Phase,
    prepared_queries: bool,
    reply_timeout: Duration,
    dim: usize,
}

impl ExternalSession {
    /// Starts `command` (shell-tokenized) with piped stdin/stdout.
    pub fn spawn(command: &str, reply_timeout: Duration) -> Result<Self> {
        let argv = tokenize(command)?;
        let (prog, args) = argv.split_first().ok_or_else(|| Error::usage("empty adapter command"))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::protocol(format!("cannot start adapter `{prog}`: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take().expect("piped stdin");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin: Some(BufWriter::new(stdin)),
            lines: rx,
            phase: Phase::Configuring,
            prepared_queries: false,
            reply_timeout,
            dim: 0,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn prepared_queries(&self) -> bool {
        self.prepared_queries
    }

    fn send_line(&mut self, line: &str) -> Result<()> {
        let w = self.stdin.as_mut().ok_or_else(|| Error::protocol("session closed"))?;
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|e| Error::protocol(format!("adapter stdin closed: {e}")))
    }

    fn send(&mut self, tokens: &[String]) -> Result<()> {
        self.send_line(&serialize(tokens))
    }

    fn recv_line(&mut self) -> Result<Vec<String>> {
        tokenize(&self.recv_raw()?)
    }

    fn recv_raw(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.reply_timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::protocol(format!("cannot read adapter reply: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::protocol("adapter reply timed out")),
            Err(RecvTimeoutError::Disconnected) => Err(Error::protocol("adapter exited")),
        }
    }

    /// Reads one reply, plus `c` continuation lines when `expect_count` is set
    /// and the reply is `ok <c>`.
    fn recv_reply(&mut self, expect_count: bool) -> Result<Reply> {
        let line = self.recv_raw()?;
        if let Some(rest) = line.strip_prefix("error").filter(|r| r.is_empty() || r.starts_with([' ', '\t'])) {
            return Ok(Reply::Error(rest.trim().to_string()));
        }
        let tokens = tokenize(&line)?;
        match tokens.first().map(String::as_str) {
            Some("ok") => {
                let args = tokens[1..].to_vec();
                let mut lines = Vec::new();
                if expect_count {
                    let c: usize = match args.as_slice() {
                        [c] => c.parse().map_err(|_| Error::protocol(format!("bad count `{c}`")))?,
                        _ => return Err(Error::protocol("expected `ok <count>`")),
                    };
                    for _ in 0..c {
                        lines.push(self.recv_line()?);
                    }
                }
                Ok(Reply::Ok { args, lines })
            }
            _ => Err(Error::protocol(format!("malformed reply `{}`", serialize(&tokens)))),
        }
    }

    /// Sends a raw line that expects no reply.
    pub fn send_raw(&mut self, line: &str) -> Result<()> {
        self.send_line(line)
    }

    /// Sends a raw line and reads the reply without phase bookkeeping.
    pub fn exchange_raw(&mut self, line: &str, expect_count: bool) -> Result<Reply> {
        self.send_line(line)?;
        self.recv_reply(expect_count)
    }

    fn expect_ok(&mut self, tokens: &[String], expect_count: bool) -> Result<Reply> {
        self.send(tokens)?;
        match self.recv_reply(expect_count)? {
            Reply::Error(msg) => Err(Error::protocol(format!("adapter error on `{}`: {msg}", tokens[0]))),
            ok => Ok(ok),
        }
    }

    fn require(&self, allowed: &[Phase], verb: &str) -> Result<()> {
        if allowed.contains(&self.phase) {
            Ok(())
        } else {
            Err(Error::protocol(format!("`{verb}` is not allowed in phase {:?}", self.phase)))
        }
    }

    /// Sends one `config` line; an `error` reply is returned as `Ok(false)`.
    pub fn config(&mut self, key: &str, value: &str) -> Result<bool> {
        self.require(&[Phase::Configuring], "config")?;
        self.send(&["config".into(), key.into(), value.into()])?;
        Ok(matches!(self.recv_reply(false)?, Reply::Ok { .. }))
    }

    /// Runs the whole configuration exchange and enters the training phase.
    pub fn configure(
        &mut self,
        metric: &str,
        point_kind: &str,
        dim: usize,
        args: &[ConfigValue],
        want_prepared: bool,
    ) -> Result<()> {
        let mut required = vec![
            ("proto".to_string(), PROTOCOL_VERSION.to_string()),
            ("metric".into(), metric.into()),
            ("point-kind".into(), point_kind.into()),
            ("dimension".into(), dim.to_string()),
        ];
        required.extend(args.iter().enumerate().map(|(i, a)| (format!("arg.{i}"), a.to_text())));
        for (k, v) in &required {
            if !self.config(k, v)? {
                return Err(Error::protocol(format!("adapter rejected `config {k} {v}`")));
            }
        }
        if want_prepared {
            self.prepared_queries = self.config("prepared-queries", "1")?;
        }
        self.require(&[Phase::Configuring], "config-done")?;
        self.expect_ok(&["config-done".into()], false)?;
        self.dim = dim;
        self.phase = Phase::Training;
        Ok(())
    }

    /// Streams the train set and returns the time the adapter spent building.
    pub fn train<T: Scalar>(&mut self, train: &PointSet<T>) -> Result<Duration> {
        self.require(&[Phase::Training], "train")?;
        let d = train.dim();
        self.expect_ok(&["train".into(), train.len().to_string(), d.to_string()], false)?;
        for i in 0..train.len() {
            let line = serialize(&point_tokens(train.point(i), d));
            self.send_line(&line)?;
        }
        let start = Instant::now();
        self.expect_ok(&["train-done".into()], false)?;
        let elapsed = start.elapsed();
        self.phase = Phase::Querying;
        Ok(elapsed)
    }

    pub fn set_query_params(&mut self, params: &[ConfigValue]) -> Result<()> {
        self.require(&[Phase::Querying, Phase::Prepared], "query-params")?;
        let mut tokens = vec!["query-params".to_string()];
        tokens.extend(params.iter().map(ConfigValue::to_text));
        self.expect_ok(&tokens, false)?;
        self.phase = Phase::Querying;
        Ok(())
    }

    fn parse_ids(reply: Reply, k: usize) -> Result<Vec<usize>> {
        let Reply::Ok { lines, .. } = reply else {
            unreachable!("errors are mapped before")
        };
        if lines.len() > k {
            return Err(Error::protocol(format!("adapter returned {} ids for k={k}", lines.len())));
        }
        lines
            .iter()
            .map(|l| {
                l.first()
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| Error::protocol(format!("malformed result line `{}`", serialize(l))))
            })
            .collect()
    }

    /// One-shot query; the duration covers sending the query and reading all
    /// result lines.
    pub fn query<T: Scalar>(&mut self, q: PointRef<'_, T>, k: usize) -> Result<(Vec<usize>, Duration)> {
        self.require(&[Phase::Querying], "query")?;
        let mut tokens = vec!["query".to_string()];
        tokens.extend(point_tokens(q, self.dim));
        tokens.push(k.to_string());
        let start = Instant::now();
        let reply = self.expect_ok(&tokens, true)?;
        let elapsed = start.elapsed();
        Ok((Self::parse_ids(reply, k)?, elapsed))
    }

    /// Sends a query point for later execution by [`run`](Self::run).
    pub fn prepare<T: Scalar>(&mut self, q: PointRef<'_, T>) -> Result<()> {
        self.require(&[Phase::Querying, Phase::Prepared], "prepare")?;
        if !self.prepared_queries {
            return Err(Error::protocol("prepared queries were not negotiated"));
        }
        let mut tokens = vec!["prepare".to_string()];
        tokens.extend(point_tokens(q, self.dim));
        self.expect_ok(&tokens, false)?;
        self.phase = Phase::Prepared;
        Ok(())
    }

    /// Runs the prepared query; only this exchange is timed.
    pub fn run(&mut self, k: usize) -> Result<(Vec<usize>, Duration)> {
        self.require(&[Phase::Prepared], "run")?;
        let start = Instant::now();
        let reply = self.expect_ok(&["run".into(), k.to_string()], true)?;
        let elapsed = start.elapsed();
        self.phase = Phase::Querying;
        Ok((Self::parse_ids(reply, k)?, elapsed))
    }

    /// Queries through whichever mode was negotiated.
    pub fn timed_query<T: Scalar>(&mut self, q: PointRef<'_, T>, k: usize) -> Result<(Vec<usize>, Duration)> {
        if self.prepared_queries {
            self.prepare(q)?;
            self.run(k)
        } else {
            self.query(q, k)
        }
    }

    /// Extra attributes reported by the adapter as `key value` pairs.
    pub fn stats(&mut self) -> Result<Vec<(String, String)>> {
        self.require(&[Phase::Querying, Phase::Prepared], "stats")?;
        let Reply::Ok { lines, .. } = self.expect_ok(&["stats".into()], true)? else {
            unreachable!()
        };
        lines
            .into_iter()
            .map(|l| match l.as_slice() {
                [k, rest @ ..] => Ok((k.clone(), rest.join(" "))),
                [] => Err(Error::protocol("empty stats line")),
            })
            .collect()
    }

    /// Sends `exit` and waits for the adapter to terminate.
    pub fn exit(mut self) -> Result<ExitStatus> {
        self.send_line("exit")?;
        self.stdin = None;
        self.phase = Phase::Done;
        let deadline = Instant::now() + self.reply_timeout;
        loop {
            if let Some(status) = self.child.try_wait()? {
                return Ok(status);
            }
            if Instant::now() >= deadline {
                return Err(Error::protocol("adapter did not exit"));
            }
            thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Drop for ExternalSession {
    fn drop(&mut self) {
        if self.phase != Phase::Done {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}
