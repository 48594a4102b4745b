use std::time::Duration;

use super::{ExternalSession, Reply, PROTOCOL_VERSION};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

struct Suite {
    session: ExternalSession,
    outcomes: Vec<CheckOutcome>,
}

fn ok_lines(reply: &Reply) -> Option<Vec<String>> {
    match reply {
        Reply::Ok { lines, .. } => Some(lines.iter().map(|l| l.join(" ")).collect()),
        Reply::Error(_) => None,
    }
}

impl Suite {
    fn record(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) -> bool {
        self.outcomes.push(CheckOutcome {
            name,
            passed,
            detail: detail.into(),
        });
        passed
    }

    /// Sends `line` and checks the reply; transport failures end the suite.
    fn check(
        &mut self,
        name: &'static str,
        line: &str,
        expect_count: bool,
        pred: impl Fn(&Reply) -> bool,
    ) -> Option<bool> {
        match self.session.exchange_raw(line, expect_count) {
            Ok(reply) => {
                let passed = pred(&reply);
                Some(self.record(name, passed, format!("`{line}` -> {reply:?}")))
            }
            Err(e) => {
                self.record(name, false, format!("`{line}`: {e}"));
                None
            }
        }
    }
}

fn is_ok(r: &Reply) -> bool {
    matches!(r, Reply::Ok { .. })
}

fn is_error(r: &Reply) -> bool {
    matches!(r, Reply::Error(_))
}

/// Runs the conformance suite against the adapter started by `command`.
///
/// The suite trains on the three points (0,0), (1,0), (0,2) under the
/// euclidean metric and checks replies, error handling and liveness. It
/// stops at the first transport failure.
pub fn protocol_check(command: &str, reply_timeout: Duration) -> Result<Vec<CheckOutcome>> {
    let session = ExternalSession::spawn(command, reply_timeout)?;
    let mut s = Suite {
        session,
        outcomes: Vec::new(),
    };
    run(&mut s);
    let healthy = s.outcomes.iter().all(|o| o.passed);
    if healthy {
        match s.session.exit() {
            Ok(status) => {
                let passed = status.success();
                s.outcomes.push(CheckOutcome {
                    name: "exit-status",
                    passed,
                    detail: format!("{status}"),
                });
            }
            Err(e) => s.outcomes.push(CheckOutcome {
                name: "exit-status",
                passed: false,
                detail: e.to_string(),
            }),
        }
    }
    Ok(s.outcomes)
}

fn run(s: &mut Suite) -> Option<()> {
    s.check("handshake", &format!("config proto {PROTOCOL_VERSION}"), false, is_ok)?;
    s.check("config-metric", "config metric euclidean", false, is_ok)?;
    s.check("config-point-kind", "config point-kind float", false, is_ok)?;
    s.check("config-dimension", "config dimension 2", false, is_ok)?;
    s.check("out-of-phase-query", "query 0 0 1", false, is_error)?;
    s.check("unterminated-quote", "config key \"open", false, is_error)?;
    let prepared = s.session.exchange_raw("config prepared-queries 1", false).ok()?;
    s.record("prepared-negotiation", true, format!("{prepared:?}"));
    s.check("config-done", "config-done", false, is_ok)?;
    s.check("train-header", "train 3 2", false, is_ok)?;
    for line in ["0 0", "1 0", "0 2"] {
        if let Err(e) = s.session.send_raw(line) {
            s.record("train-points", false, e.to_string());
            return None;
        }
    }
    s.check("train-done", "train-done", false, is_ok)?;
    s.check("query-params", "query-params", false, is_ok)?;
    s.check("query-origin", "query 0.9 0.1 2", true, |r| {
        ok_lines(r).is_some_and(|l| l.first().map(String::as_str) == Some("1") && l.get(1).map(String::as_str) == Some("0"))
    })?;
    s.check("query-count-bound", "query 0 0 5", true, |r| ok_lines(r).is_some_and(|l| l.len() <= 5 && !l.is_empty()))?;
    s.check("query-quoted", "query \"0.1\" '1.9' 1", true, |r| ok_lines(r).is_some_and(|l| l == ["2"]))?;
    s.check("wrong-dimension", "query 0.5 1", false, is_error)?;
    s.check("bad-number", "query x y 1", false, is_error)?;
    s.check("unknown-command", "frobnicate", false, is_error)?;
    s.check("config-after-training", "config metric angular", false, is_error)?;
    s.check("alive-after-errors", "query 1 0.1 1", true, |r| ok_lines(r).is_some_and(|l| l == ["1"]))?;
    if is_ok(&prepared) {
        s.check("prepare", "prepare 0.1 1.9", false, is_ok)?;
        s.check("run", "run 1", true, |r| ok_lines(r).is_some_and(|l| l == ["2"]))?;
        s.check("run-without-prepare", "run 1", false, is_error)?;
    }
    s.check("stats", "stats", true, |r| {
        ok_lines(r).is_some_and(|l| l.iter().all(|x| !x.is_empty()))
    })?;
    Some(())
}
