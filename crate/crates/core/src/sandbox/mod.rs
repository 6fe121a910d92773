//! Execution of generated solver scripts and judging of their answers.
//!
//! Scripts run through an external harness: `harness <script> <timeout>`
//! (or `python harness.py <script> <timeout>` for a `.py` harness) inside a
//! fresh temporary directory. Harness exit codes: 0 success, 2 script error,
//! 3 timeout, 4 non-numeric output. Answers are read from the sentinel block:
//!
//! ```text
//! ===DCM-ANSWER-BEGIN===
//! objective=70.0
//! units_a=3.0
//! ===DCM-ANSWER-END===
//! ```

pub mod stub;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use wait_timeout::ChildExt;

use crate::domain::{ExecStatus, ExecutionResult, Extracted, GroundTruth, Tolerance};

pub use stub::{stub_execute, StubExecutor, StubOutcome};

pub const ANSWER_BEGIN: &str = "===DCM-ANSWER-BEGIN===";
pub const ANSWER_END: &str = "===DCM-ANSWER-END===";
pub const TRUNCATION_MARKER: &str = "\n[output truncated]";
/// Extra time allowed past the policy timeout before the run is killed.
pub const TIMEOUT_GRACE: Duration = Duration::from_secs(1);

/// Import names of the allowed solver libraries.
pub const ALLOWED_LIBRARIES: [&str; 5] = ["gurobipy", "pulp", "ortools", "scipy", "networkx"];

/// Standard-library modules scripts may use alongside the solver libraries.
pub const ALLOWED_STDLIB: &[&str] = &[
    "math", "itertools", "collections", "functools", "fractions", "decimal", "heapq", "bisect",
    "json", "typing", "dataclasses", "statistics", "copy", "operator", "random", "re", "sys",
];

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("execution harness not found at {0}")]
    HarnessMissing(PathBuf),
    #[error("script is empty")]
    EmptyScript,
    #[error("sandbox i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs one script and reports a structured result. Script failures are
/// results, not errors; `Err` means the environment itself is broken.
pub trait Executor: Send + Sync {
    fn execute(&self, script: &str) -> Result<ExecutionResult, SandboxError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandboxPolicy {
    pub timeout: Duration,
    pub max_output_bytes: usize,
    pub network: bool,
    pub allowed_libraries: Vec<String>,
    pub allowed_stdlib: Vec<String>,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            max_output_bytes: 256 * 1024,
            network: false,
            allowed_libraries: ALLOWED_LIBRARIES.iter().map(|s| s.to_string()).collect(),
            allowed_stdlib: ALLOWED_STDLIB.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SandboxPolicy {
    fn allows(&self, module: &str) -> bool {
        self.allowed_libraries.iter().any(|m| m == module)
            || self.allowed_stdlib.iter().any(|m| m == module)
    }

    /// Top-level modules imported by `script` that the policy does not allow.
    pub fn disallowed_imports(&self, script: &str) -> Vec<String> {
        imported_modules(script)
            .into_iter()
            .filter(|m| !self.allows(m))
            .collect()
    }
}

/// Top-level module names from `import` / `from ... import` statements.
pub fn imported_modules(script: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for line in script.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if let Some(rest) = line.strip_prefix("import ") {
            for part in rest.split(',') {
                if let Some(name) = part.split_whitespace().next() {
                    out.insert(top_level(name));
                }
            }
        } else if let Some(rest) = line.strip_prefix("from ") {
            if let Some(name) = rest.split_whitespace().next() {
                if !name.starts_with('.') {
                    out.insert(top_level(name));
                }
            }
        }
    }
    out
}

fn top_level(name: &str) -> String {
    name.split('.').next().unwrap_or(name).trim().to_string()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnswerBlockError {
    #[error("no answer block")]
    Missing,
    #[error("more than one answer block")]
    Multiple,
    #[error("answer block line {0:?} is not key=value")]
    BadLine(String),
    #[error("answer block value for {0:?} is not a finite number")]
    BadNumber(String),
    #[error("answer block must start with objective=")]
    NoObjective,
    #[error("duplicate key {0:?} in answer block")]
    Duplicate(String),
}

/// Renders the sentinel block; values use the shortest exact representation.
pub fn render_answer_block(x: &Extracted) -> String {
    let mut s = format!("{ANSWER_BEGIN}\nobjective={:?}\n", x.objective);
    for (k, v) in &x.requirements {
        s.push_str(&format!("{k}={v:?}\n"));
    }
    s.push_str(ANSWER_END);
    s.push('\n');
    s
}

/// Parses the single sentinel block from solver output.
pub fn parse_answer_block(stdout: &str) -> Result<Extracted, AnswerBlockError> {
    let lines: Vec<&str> = stdout.lines().map(|l| l.trim_end_matches('\r')).collect();
    let begins: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim() == ANSWER_BEGIN)
        .map(|(i, _)| i)
        .collect();
    let start = match begins.as_slice() {
        [] => return Err(AnswerBlockError::Missing),
        [one] => *one,
        _ => return Err(AnswerBlockError::Multiple),
    };
    let end = lines[start + 1..]
        .iter()
        .position(|l| l.trim() == ANSWER_END)
        .map(|p| start + 1 + p)
        .ok_or(AnswerBlockError::Missing)?;
    let mut objective = None;
    let mut requirements = BTreeMap::new();
    for (i, line) in lines[start + 1..end].iter().enumerate() {
        let line = line.trim();
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| AnswerBlockError::BadLine(line.to_string()))?;
        let (k, v) = (k.trim(), v.trim());
        let value: f64 = v
            .parse()
            .ok()
            .filter(|x: &f64| x.is_finite())
            .ok_or_else(|| AnswerBlockError::BadNumber(k.to_string()))?;
        if i == 0 {
            if k != "objective" {
                return Err(AnswerBlockError::NoObjective);
            }
            objective = Some(value);
        } else if k == "objective" || requirements.insert(k.to_string(), value).is_some() {
            return Err(AnswerBlockError::Duplicate(k.to_string()));
        }
    }
    Ok(Extracted {
        objective: objective.ok_or(AnswerBlockError::NoObjective)?,
        requirements,
    })
}

/// True iff the objective and every ground-truth requirement match within tolerance.
pub fn judge(extracted: &Extracted, truth: &GroundTruth, tolerance: Tolerance) -> bool {
    tolerance.matches(extracted.objective, truth.objective)
        && truth.requirements.iter().all(|(name, want)| {
            extracted
                .requirements
                .get(name)
                .is_some_and(|got| tolerance.matches(*got, *want))
        })
}

/// Counting semaphore bounding concurrent executions.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().expect("semaphore lock");
        while *p == 0 {
            p = self.freed.wait(p).expect("semaphore wait");
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore lock") += 1;
        self.0.freed.notify_one();
    }
}

/// Subprocess executor backed by the external harness.
#[derive(Debug)]
pub struct Sandbox {
    harness: PathBuf,
    python: String,
    policy: SandboxPolicy,
    slots: Semaphore,
}

impl Sandbox {
    pub fn new(harness: impl Into<PathBuf>, python: impl Into<String>, policy: SandboxPolicy) -> Self {
        Self {
            harness: harness.into(),
            python: python.into(),
            policy,
            slots: Semaphore::new(4),
        }
    }

    pub fn with_max_parallel(mut self, n: usize) -> Self {
        self.slots = Semaphore::new(n);
        self
    }

    pub fn policy(&self) -> &SandboxPolicy {
        &self.policy
    }

    fn command(&self, script: &Path) -> Command {
        let harness = std::fs::canonicalize(&self.harness).unwrap_or_else(|_| self.harness.clone());
        let mut cmd = if harness.extension().is_some_and(|e| e == "py") {
            let mut c = Command::new(&self.python);
            c.arg(&harness);
            c
        } else {
            Command::new(&harness)
        };
        cmd.arg(script)
            .arg(format!("{}", self.policy.timeout.as_secs_f64()))
            .env("DCM_NETWORK", if self.policy.network { "1" } else { "0" })
            .env("DCM_ALLOWED_LIBRARIES", self.policy.allowed_libraries.join(","))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        cmd
    }
}

fn read_capped(mut src: impl Read + Send + 'static, cap: usize) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match src.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        let mut s = String::from_utf8_lossy(&kept).into_owned();
        if truncated {
            s.push_str(TRUNCATION_MARKER);
        }
        s
    })
}

/// Kills the harness and anything it spawned; descendants would otherwise
/// keep the output pipes open.
fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // The harness was spawned as leader of its own process group.
        if let Ok(pgid) = libc::pid_t::try_from(child.id()) {
            if pgid > 0 {
                unsafe { libc::killpg(pgid, libc::SIGKILL) };
            }
        }
    }
    child.kill().ok();
    child.wait().ok();
}

impl Executor for Sandbox {
    fn execute(&self, script: &str) -> Result<ExecutionResult, SandboxError> {
        if script.trim().is_empty() {
            return Err(SandboxError::EmptyScript);
        }
        if !self.harness.is_file() {
            return Err(SandboxError::HarnessMissing(self.harness.clone()));
        }
        let banned = self.policy.disallowed_imports(script);
        if !banned.is_empty() {
            return Ok(ExecutionResult::failure(
                ExecStatus::RuntimeError,
                String::new(),
                format!("ImportError: disallowed library import(s): {}", banned.join(", ")),
                0.0,
            ));
        }

        let _permit = self.slots.acquire();
        let workdir = tempfile::tempdir()?;
        let script_path = workdir.path().join("solution.py");
        std::fs::write(&script_path, script)?;

        let started = Instant::now();
        let mut child = self.command(&script_path).current_dir(workdir.path()).spawn()?;
        let out = read_capped(child.stdout.take().expect("piped stdout"), self.policy.max_output_bytes);
        let err = read_capped(child.stderr.take().expect("piped stderr"), self.policy.max_output_bytes);
        let status = match child.wait_timeout(self.policy.timeout + TIMEOUT_GRACE)? {
            Some(status) => Some(status),
            None => {
                kill_tree(&mut child);
                None
            }
        };
        let wall_time = started.elapsed().as_secs_f64();
        let stdout = out.join().unwrap_or_default();
        let mut stderr = err.join().unwrap_or_default();

        let code = match status {
            None => {
                stderr.push_str("\n[killed: timeout]");
                return Ok(ExecutionResult::failure(ExecStatus::Timeout, stdout, stderr, wall_time));
            }
            Some(s) => s.code(),
        };
        Ok(match code {
            Some(0) => match parse_answer_block(&stdout) {
                Ok(x) => ExecutionResult::success(x, stdout, wall_time),
                Err(e) => {
                    stderr.push_str(&format!("\n[answer block: {e}]"));
                    ExecutionResult::failure(ExecStatus::NonNumericOutput, stdout, stderr, wall_time)
                }
            },
            Some(3) => ExecutionResult::failure(ExecStatus::Timeout, stdout, stderr, wall_time),
            Some(4) => ExecutionResult::failure(ExecStatus::NonNumericOutput, stdout, stderr, wall_time),
            other => {
                if other != Some(2) {
                    stderr.push_str(&format!("\n[harness exit: {other:?}]"));
                }
                ExecutionResult::failure(ExecStatus::RuntimeError, stdout, stderr, wall_time)
            }
        })
    }
}
