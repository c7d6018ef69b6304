//! The process executor against a Python test double that speaks the runner
//! protocol. Skipped when no `python3` is on PATH.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tabrl_core::extraction::CodeCandidate;
use tabrl_core::sandbox::{exec_success, parse_answer, ExecLimits, Executor, ProcessExecutor};

fn python() -> Option<String> {
    Command::new("python3")
        .arg("--version")
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|_| "python3".to_string())
}

fn runner() -> Option<Vec<String>> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/support/runner_double.py");
    python().map(|py| vec![py, script.to_string_lossy().into_owned()])
}

macro_rules! require_runner {
    () => {
        match runner() {
            Some(r) => r,
            None => {
                eprintln!("skipping: python3 not available");
                return;
            }
        }
    };
}

fn workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(d.path().join("data")).unwrap();
    std::fs::write(d.path().join("data/sales.csv"), "region,amount\nnorth,40\nsouth,95\n").unwrap();
    d
}

fn run(ex: &ProcessExecutor, src: &str, ws: &Path, limits: &ExecLimits) -> tabrl_core::sandbox::ExecOutcome {
    ex.execute(&CodeCandidate::from_source(src), ws, limits)
}

#[test]
fn echo_program() {
    let ex = ProcessExecutor::new(require_runner!(), 2);
    let ws = workspace();
    let o = run(&ex, "print('7')", ws.path(), &ExecLimits::default());
    assert!(o.exit_ok, "{o:?}");
    assert_eq!(o.stdout, "7\n");
    assert!(!o.timed_out && !o.runner_protocol_error);
    assert_eq!(parse_answer(&o).unwrap().text, "7");
}

#[test]
fn reads_workspace_tables() {
    let ex = ProcessExecutor::new(require_runner!(), 2);
    let ws = workspace();
    let src = "import csv\nwith open('data/sales.csv') as f:\n    rows = list(csv.DictReader(f))\nprint('loading')\nprint(sum(int(r['amount']) for r in rows))";
    let o = run(&ex, src, ws.path(), &ExecLimits::default());
    assert_eq!(parse_answer(&o).unwrap().text, "135");
}

#[test]
fn timeout_kills_the_program() {
    let ex = ProcessExecutor::new(require_runner!(), 2);
    let ws = workspace();
    let limits = ExecLimits {
        wall_timeout: 2.0,
        ..Default::default()
    };
    let start = Instant::now();
    let o = run(&ex, "while True: pass", ws.path(), &limits);
    let took = start.elapsed();
    assert!(o.timed_out && !o.exit_ok, "{o:?}");
    assert!(!exec_success(&o));
    assert!(took < Duration::from_secs(2 + 5), "{took:?}");
    assert!(o.wall_time <= 2.0 + 5.0);
}

#[test]
fn timeout_also_kills_grandchildren() {
    let ex = ProcessExecutor::new(require_runner!(), 2);
    let ws = workspace();
    let limits = ExecLimits {
        wall_timeout: 1.0,
        ..Default::default()
    };
    let src = "import subprocess, time\nsubprocess.Popen(['sleep', '30'])\ntime.sleep(30)";
    let start = Instant::now();
    let o = run(&ex, src, ws.path(), &limits);
    assert!(o.timed_out);
    assert!(start.elapsed() < Duration::from_secs(6));
}

#[test]
fn division_by_zero_matches_golden_shape() {
    let ex = ProcessExecutor::new(require_runner!(), 2);
    let ws = workspace();
    let o = run(&ex, "x = 1 / 0\nprint(x)", ws.path(), &ExecLimits::default());
    let golden: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/div_zero_outcome.json"))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(o.exit_ok, golden["exit_ok"].as_bool().unwrap());
    assert_eq!(o.stdout, golden["stdout"].as_str().unwrap());
    assert_eq!(o.timed_out, golden["timed_out"].as_bool().unwrap());
    assert_eq!(o.runner_protocol_error, golden["runner_protocol_error"].as_bool().unwrap());
    let last = o.stderr.lines().rev().find(|l| !l.trim().is_empty()).unwrap();
    assert_eq!(last, golden["stderr_last_line"].as_str().unwrap());
    assert!(parse_answer(&o).is_none());
}

#[test]
fn stdout_capture_is_bounded() {
    let ex = ProcessExecutor::new(require_runner!(), 2);
    let ws = workspace();
    let limits = ExecLimits {
        max_stdout: 1024,
        ..Default::default()
    };
    let o = run(&ex, "import sys\nsys.stdout.write('x' * (8 << 20))\nprint('é' * 1000)", ws.path(), &limits);
    assert!(o.exit_ok, "{o:?}");
    assert!(o.stdout.len() <= 1024);
}

#[test]
fn writes_never_reach_the_original_workspace() {
    let ex = Arc::new(ProcessExecutor::new(require_runner!(), 4));
    let ws = workspace();
    let before = std::fs::read_to_string(ws.path().join("data/sales.csv")).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let ex = ex.clone();
            let path: PathBuf = ws.path().to_path_buf();
            thread::spawn(move || {
                let src = format!(
                    "import os, time\nopen('marker.txt', 'w').write('{i}')\nopen('data/sales.csv', 'a').write('x,{i}\\n')\ntime.sleep(0.3)\nprint(open('marker.txt').read(), len(os.listdir('.')))"
                );
                run(&ex, &src, &path, &ExecLimits::default())
            })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let o = h.join().unwrap();
        // Each run sees only its own marker: data/, the candidate file, marker.txt.
        assert_eq!(o.stdout.trim(), format!("{i} 3"), "{o:?}");
    }
    assert!(!ws.path().join("marker.txt").exists());
    assert!(!ws.path().join("__candidate__.src").exists());
    assert_eq!(std::fs::read_to_string(ws.path().join("data/sales.csv")).unwrap(), before);
}

#[test]
fn pool_bounds_concurrency() {
    let ex = Arc::new(ProcessExecutor::new(require_runner!(), 2));
    let ws = workspace();
    let log = tempfile::tempdir().unwrap();
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let (ex, path) = (ex.clone(), ws.path().to_path_buf());
            let out = log.path().join(format!("{i}.txt"));
            thread::spawn(move || {
                let src = format!(
                    "import time\ns = time.time()\ntime.sleep(0.3)\nopen({:?}, 'w').write(f'{{s}} {{time.time()}}')\nprint(1)",
                    out.to_string_lossy()
                );
                run(&ex, &src, &path, &ExecLimits::default())
            })
        })
        .collect();
    for h in handles {
        assert!(h.join().unwrap().exit_ok);
    }
    let spans: Vec<(f64, f64)> = (0..6)
        .map(|i| {
            let t = std::fs::read_to_string(log.path().join(format!("{i}.txt"))).unwrap();
            let v: Vec<f64> = t.split(' ').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect();
    let peak = spans
        .iter()
        .map(|(s, _)| spans.iter().filter(|(a, b)| a <= s && s < b).count())
        .max()
        .unwrap();
    assert!(peak <= 2, "{spans:?}");
    assert_eq!(ex.pool().available(), 2);
}

#[test]
fn missing_runner_is_a_protocol_error() {
    let ex = ProcessExecutor::new(vec!["/nonexistent/tabrl-runner".into()], 1);
    let ws = workspace();
    let o = run(&ex, "print(1)", ws.path(), &ExecLimits::default());
    assert!(o.runner_protocol_error && !o.exit_ok);
    assert!(!exec_success(&o));
    let none = ProcessExecutor::new(vec![], 1);
    assert!(run(&none, "print(1)", ws.path(), &ExecLimits::default()).runner_protocol_error);
}

#[test]
fn runner_exit_two_is_a_protocol_error() {
    let ex = ProcessExecutor::new(
        vec!["sh".into(), "-c".into(), "echo 'bad arguments' >&2; exit 2".into(), "runner".into()],
        1,
    );
    let ws = workspace();
    let o = run(&ex, "print(1)", ws.path(), &ExecLimits::default());
    assert!(o.runner_protocol_error, "{o:?}");
    assert!(o.stderr.contains("bad arguments"));
}

#[test]
fn missing_workspace_is_a_protocol_error() {
    let ex = ProcessExecutor::new(require_runner!(), 1);
    let o = run(&ex, "print(1)", Path::new("/nonexistent/ws"), &ExecLimits::default());
    assert!(o.runner_protocol_error);
}

#[test]
fn receives_the_protocol_arguments() {
    let ex = ProcessExecutor::new(vec!["sh".into(), "-c".into(), "echo \"$@\"; cat \"$4/$2\"".into(), "runner".into()], 1);
    let ws = workspace();
    let o = run(&ex, "print(42)", ws.path(), &ExecLimits::default());
    let mut lines = o.stdout.lines();
    let args: Vec<&str> = lines.next().unwrap().split(' ').collect();
    assert_eq!(args[..3], ["--code", "__candidate__.src", "--cwd"]);
    assert_eq!(lines.next(), Some("print(42)"));
}
