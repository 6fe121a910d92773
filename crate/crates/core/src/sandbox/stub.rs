//! Process-free executor driven by a directive comment in the script.
//!
//! ```text
//! # STUB: success objective=5 units_a=2
//! # STUB: runtime_error ZeroDivisionError: division by zero
//! # STUB: timeout
//! # STUB: non_numeric
//! ```

use std::collections::BTreeMap;

use super::{render_answer_block, Executor, SandboxError};
use crate::domain::{ExecStatus, ExecutionResult, Extracted};

const MARKER: &str = "STUB:";

#[derive(Debug, Clone, PartialEq)]
pub enum StubOutcome {
    Success(Extracted),
    RuntimeError(String),
    Timeout,
    NonNumeric,
}

impl StubOutcome {
    pub fn to_directive(&self) -> String {
        match self {
            StubOutcome::Success(x) => {
                let mut s = format!("# {MARKER} success objective={:?}", x.objective);
                for (k, v) in &x.requirements {
                    s.push_str(&format!(" {k}={v:?}"));
                }
                s
            }
            StubOutcome::RuntimeError(msg) => {
                format!("# {MARKER} runtime_error {}", msg.lines().next().unwrap_or(""))
                    .trim_end()
                    .to_string()
            }
            StubOutcome::Timeout => format!("# {MARKER} timeout"),
            StubOutcome::NonNumeric => format!("# {MARKER} non_numeric"),
        }
    }

    pub fn is_directive_line(line: &str) -> bool {
        line.contains(MARKER)
    }

    /// Decodes the last directive in `script`. Malformed success arguments
    /// decode as `NonNumeric`.
    pub fn find(script: &str) -> Option<StubOutcome> {
        let line = script.lines().rev().find(|l| Self::is_directive_line(l))?;
        let rest = line[line.find(MARKER)? + MARKER.len()..].trim();
        let (kind, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        Some(match kind {
            "success" => parse_success(args).map_or(StubOutcome::NonNumeric, StubOutcome::Success),
            "runtime_error" => StubOutcome::RuntimeError(args.trim().to_string()),
            "timeout" => StubOutcome::Timeout,
            "non_numeric" => StubOutcome::NonNumeric,
            other => StubOutcome::RuntimeError(format!("unknown stub directive {other:?}")),
        })
    }
}

fn parse_success(args: &str) -> Option<Extracted> {
    let mut objective = None;
    let mut requirements = BTreeMap::new();
    for tok in args.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        let v: f64 = v.parse().ok().filter(|v: &f64| v.is_finite())?;
        if k == "objective" {
            objective = Some(v);
        } else {
            requirements.insert(k.to_string(), v);
        }
    }
    Some(Extracted {
        objective: objective?,
        requirements,
    })
}

/// Executes scripts by decoding their `STUB:` directive.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubExecutor;

pub fn stub_execute(script: &str) -> ExecutionResult {
    match StubOutcome::find(script) {
        Some(StubOutcome::Success(x)) => {
            let stdout = render_answer_block(&x);
            ExecutionResult::success(x, stdout, 0.0)
        }
        Some(StubOutcome::RuntimeError(msg)) => {
            ExecutionResult::failure(ExecStatus::RuntimeError, String::new(), msg, 0.0)
        }
        Some(StubOutcome::Timeout) => ExecutionResult::failure(
            ExecStatus::Timeout,
            String::new(),
            "execution timed out".into(),
            0.0,
        ),
        Some(StubOutcome::NonNumeric) => ExecutionResult::failure(
            ExecStatus::NonNumericOutput,
            String::new(),
            "no answer block in output".into(),
            0.0,
        ),
        None => ExecutionResult::failure(
            ExecStatus::RuntimeError,
            String::new(),
            "stub executor: script has no `# STUB:` directive".into(),
            0.0,
        ),
    }
}

impl Executor for StubExecutor {
    fn execute(&self, script: &str) -> Result<ExecutionResult, SandboxError> {
        if script.trim().is_empty() {
            return Err(SandboxError::EmptyScript);
        }
        Ok(stub_execute(script))
    }
}
