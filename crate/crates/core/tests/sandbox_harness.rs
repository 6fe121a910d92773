//! Invocation contract with the execution harness, exercised through a fake
//! shell harness that picks its behavior from a `# MODE:` line in the script.
#![cfg(unix)]

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dcm_core::sandbox::{Executor, Sandbox, SandboxPolicy, TRUNCATION_MARKER};
use dcm_core::ExecStatus;

const FAKE_HARNESS: &str = r#"#!/bin/sh
script="$1"
timeout="$2"
mode=$(sed -n 's/^# MODE: //p' "$script")
case "$mode" in
  ok)
    echo "CBC solver log line"
    printf '===DCM-ANSWER-BEGIN===\nobjective=70.0\nunits_a=3.0\n===DCM-ANSWER-END===\n'
    exit 0 ;;
  error)
    echo "Traceback (most recent call last):" >&2
    echo "ZeroDivisionError: division by zero" >&2
    exit 2 ;;
  timeout) echo "script exceeded ${timeout}s" >&2; exit 3 ;;
  nonnumeric) echo "status: unbounded"; exit 4 ;;
  noblock) echo "optimal"; exit 0 ;;
  crash) exit 9 ;;
  hang) sleep 30; exit 0 ;;
  flood) yes xxxxxxxx | head -c 200000; exit 2 ;;
  env) echo "network=$DCM_NETWORK libs=$DCM_ALLOWED_LIBRARIES timeout=$timeout cwd_has_script=$(test -f solution.py && echo yes)" >&2; exit 2 ;;
esac
exit 2
"#;

fn harness(dir: &Path) -> PathBuf {
    let path = dir.join("harness.sh");
    std::fs::write(&path, FAKE_HARNESS).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn sandbox(dir: &Path, timeout: Duration) -> Sandbox {
    let policy = SandboxPolicy { timeout, max_output_bytes: 4096, ..SandboxPolicy::default() };
    Sandbox::new(harness(dir), "python3", policy)
}

fn script(mode: &str) -> String {
    format!("import pulp\n# MODE: {mode}\n")
}

#[test]
fn exit_codes_map_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let sb = sandbox(dir.path(), Duration::from_secs(5));

    let ok = sb.execute(&script("ok")).unwrap();
    assert_eq!(ok.status, ExecStatus::Success);
    let x = ok.extracted.unwrap();
    assert_eq!(x.objective, 70.0);
    assert_eq!(x.requirements["units_a"], 3.0);

    let err = sb.execute(&script("error")).unwrap();
    assert_eq!(err.status, ExecStatus::RuntimeError);
    assert!(err.stderr.contains("ZeroDivisionError"));
    assert!(err.error_payload().contains("ZeroDivisionError"));

    assert_eq!(sb.execute(&script("timeout")).unwrap().status, ExecStatus::Timeout);
    assert_eq!(sb.execute(&script("nonnumeric")).unwrap().status, ExecStatus::NonNumericOutput);
    assert_eq!(sb.execute(&script("noblock")).unwrap().status, ExecStatus::NonNumericOutput);
    let crash = sb.execute(&script("crash")).unwrap();
    assert_eq!(crash.status, ExecStatus::RuntimeError);
    assert!(crash.stderr.contains("harness exit"));
}

#[test]
fn hung_harness_is_killed() {
    let dir = tempfile::tempdir().unwrap();
    let sb = sandbox(dir.path(), Duration::from_millis(300));
    let started = Instant::now();
    let r = sb.execute(&script("hang")).unwrap();
    assert_eq!(r.status, ExecStatus::Timeout);
    assert!(started.elapsed() < Duration::from_secs(10), "took {:?}", started.elapsed());
}

#[test]
fn output_is_capped() {
    let dir = tempfile::tempdir().unwrap();
    let r = sandbox(dir.path(), Duration::from_secs(5)).execute(&script("flood")).unwrap();
    assert!(r.stdout.ends_with(TRUNCATION_MARKER));
    assert!(r.stdout.len() <= 4096 + TRUNCATION_MARKER.len());
}

#[test]
fn harness_receives_policy_and_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let r = sandbox(dir.path(), Duration::from_secs(7)).execute(&script("env")).unwrap();
    assert!(r.stderr.contains("network=0"), "{}", r.stderr);
    assert!(r.stderr.contains("libs=gurobipy,pulp,ortools,scipy,networkx"));
    assert!(r.stderr.contains("timeout=7"));
    assert!(r.stderr.contains("cwd_has_script=yes"));
}

#[test]
fn disallowed_imports_never_reach_the_harness() {
    let dir = tempfile::tempdir().unwrap();
    let r = sandbox(dir.path(), Duration::from_secs(5)).execute("import socket\n# MODE: ok\n").unwrap();
    assert_eq!(r.status, ExecStatus::RuntimeError);
    assert!(r.stderr.contains("socket"));
}
