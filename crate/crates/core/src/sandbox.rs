//! Isolated execution of candidate programs and answer parsing.
//!
//! The [`Executor`] trait is the seam between the reward pipeline and the
//! outside world. [`ProcessExecutor`] launches the external runner in a child
//! process against a private copy of the table workspace; [`ScriptedExecutor`]
//! replays canned outcomes and never spawns anything.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::extraction::CodeCandidate;
use crate::Error;

/// File name the candidate program is written to inside the workspace copy.
pub const CANDIDATE_FILE: &str = "__candidate__.src";

/// Runner exit code reserved for protocol errors (bad arguments, unreadable code file).
pub const RUNNER_PROTOCOL_EXIT: i32 = 2;

const READER_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecLimits {
    /// Wall-clock budget in seconds.
    pub wall_timeout: f64,
    /// Bytes of stdout kept; the rest is drained and dropped.
    pub max_stdout: usize,
    /// Address-space cap applied to the child. Advisory: `None` disables it.
    pub max_memory: Option<u64>,
    pub network_allowed: bool,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            wall_timeout: 30.0,
            max_stdout: 1 << 20,
            max_memory: None,
            network_allowed: false,
        }
    }
}

impl ExecLimits {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.wall_timeout > 0.0 && self.wall_timeout.is_finite()) {
            return Err(Error::Config(format!(
                "sandbox wall_timeout must be > 0, got {}",
                self.wall_timeout
            )));
        }
        if self.max_stdout == 0 {
            return Err(Error::Config("sandbox max_stdout must be > 0".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.wall_timeout)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecOutcome {
    pub exit_ok: bool,
    pub stdout: String,
    pub stderr: String,
    /// Seconds.
    pub wall_time: f64,
    pub timed_out: bool,
    pub runner_protocol_error: bool,
}

impl ExecOutcome {
    /// A clean run that printed `stdout`.
    pub fn success(stdout: impl Into<String>) -> Self {
        Self {
            exit_ok: true,
            stdout: stdout.into(),
            ..Self::default()
        }
    }

    /// A run that died with `stderr`.
    pub fn failure(stderr: impl Into<String>) -> Self {
        Self {
            exit_ok: false,
            stderr: stderr.into(),
            ..Self::default()
        }
    }

    pub fn protocol_error(msg: impl Into<String>) -> Self {
        Self {
            runner_protocol_error: true,
            ..Self::failure(msg)
        }
    }
}

/// Candidate answer parsed from program output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub text: String,
    pub source_line_index: usize,
}

impl ParsedAnswer {
    /// Wrap free text as an answer; `None` if it is blank.
    pub fn from_text(text: &str) -> Option<Self> {
        let t = text.trim();
        (!t.is_empty()).then(|| Self {
            text: t.to_string(),
            source_line_index: 0,
        })
    }
}

/// An execution produced output: clean exit, no timeout, no protocol error,
/// and at least one non-whitespace character on stdout.
pub fn exec_success(outcome: &ExecOutcome) -> bool {
    outcome.exit_ok
        && !outcome.timed_out
        && !outcome.runner_protocol_error
        && outcome.stdout.chars().any(|c| !c.is_whitespace())
}

/// Last non-empty stdout line, trimmed.
pub fn parse_answer(outcome: &ExecOutcome) -> Option<ParsedAnswer> {
    if !exec_success(outcome) {
        return None;
    }
    let lines: Vec<&str> = outcome.stdout.lines().collect();
    lines
        .iter()
        .enumerate()
        .rev()
        .map(|(i, l)| (i, l.trim()))
        .find(|(_, l)| !l.is_empty())
        .map(|(i, l)| ParsedAnswer {
            text: l.to_string(),
            source_line_index: i,
        })
}

/// Runs a candidate program against a table workspace.
pub trait Executor: Send + Sync {
    fn execute(&self, code: &CodeCandidate, workspace: &Path, limits: &ExecLimits) -> ExecOutcome;
}

impl<E: Executor + ?Sized> Executor for std::sync::Arc<E> {
    fn execute(&self, code: &CodeCandidate, workspace: &Path, limits: &ExecLimits) -> ExecOutcome {
        (**self).execute(code, workspace, limits)
    }
}

/// Outcomes keyed by exact program source, with a fallback.
#[derive(Debug, Clone, Default)]
pub struct ScriptedExecutor {
    scripts: HashMap<String, ExecOutcome>,
    fallback: ExecOutcome,
}

impl ScriptedExecutor {
    /// Unknown programs fail with a runner-style error.
    pub fn new() -> Self {
        Self {
            scripts: HashMap::new(),
            fallback: ExecOutcome::failure("ScriptedExecutor: no script for this program"),
        }
    }

    pub fn with_fallback(mut self, outcome: ExecOutcome) -> Self {
        self.fallback = outcome;
        self
    }

    pub fn script(mut self, source: impl Into<String>, outcome: ExecOutcome) -> Self {
        self.scripts.insert(source.into(), outcome);
        self
    }

    pub fn insert(&mut self, source: impl Into<String>, outcome: ExecOutcome) {
        self.scripts.insert(source.into(), outcome);
    }

    /// Load scripts from JSONL lines `{"code": ..., "outcome": {...}}`.
    /// Omitted outcome fields take their defaults.
    pub fn from_jsonl(text: &str) -> Result<Self, Error> {
        #[derive(Deserialize)]
        struct Line {
            code: String,
            outcome: ExecOutcome,
        }
        let mut ex = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(line)
                .map_err(|e| Error::Config(format!("mock script line {}: {e}", i + 1)))?;
            ex.insert(l.code, l.outcome);
        }
        Ok(ex)
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }
}

impl Executor for ScriptedExecutor {
    fn execute(&self, code: &CodeCandidate, _workspace: &Path, limits: &ExecLimits) -> ExecOutcome {
        let mut out = self
            .scripts
            .get(&code.source)
            .unwrap_or(&self.fallback)
            .clone();
        truncate_utf8(&mut out.stdout, limits.max_stdout);
        out
    }
}

/// Executor backed by a closure.
pub struct FnExecutor<F>(pub F);

impl<F> Executor for FnExecutor<F>
where
    F: Fn(&CodeCandidate, &Path) -> ExecOutcome + Send + Sync,
{
    fn execute(&self, code: &CodeCandidate, workspace: &Path, limits: &ExecLimits) -> ExecOutcome {
        let mut out = (self.0)(code, workspace);
        truncate_utf8(&mut out.stdout, limits.max_stdout);
        out
    }
}

fn truncate_utf8(s: &mut String, max: usize) {
    if s.len() > max {
        let mut cut = max;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
}

/// Counting semaphore bounding concurrent child processes.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        SemaphoreGuard(self)
    }

    pub fn available(&self) -> usize {
        *self.permits.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

pub fn default_max_concurrent() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Launches the external runner as `runner --code __candidate__.src --cwd <copy>`
/// in its own process group, inside a private copy of the workspace.
#[derive(Debug)]
pub struct ProcessExecutor {
    runner: Vec<String>,
    pool: Semaphore,
    scratch_root: Option<PathBuf>,
}

impl ProcessExecutor {
    /// `runner` is the program followed by any fixed leading arguments.
    pub fn new(runner: Vec<String>, max_concurrent: usize) -> Self {
        Self {
            runner,
            pool: Semaphore::new(max_concurrent),
            scratch_root: None,
        }
    }

    /// Place workspace copies under `dir` instead of the system temp dir.
    pub fn with_scratch_root(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch_root = Some(dir.into());
        self
    }

    pub fn pool(&self) -> &Semaphore {
        &self.pool
    }

    fn scratch(&self) -> std::io::Result<tempfile::TempDir> {
        let mut b = tempfile::Builder::new();
        b.prefix("tabrl-exec-");
        match &self.scratch_root {
            Some(root) => b.tempdir_in(root),
            None => b.tempdir(),
        }
    }

    fn run(&self, code: &CodeCandidate, workspace: &Path, limits: &ExecLimits) -> ExecOutcome {
        let Some((program, fixed_args)) = self.runner.split_first() else {
            return ExecOutcome::protocol_error("no runner configured");
        };
        if !workspace.is_dir() {
            return ExecOutcome::protocol_error(format!(
                "workspace {} is not a directory",
                workspace.display()
            ));
        }
        let scratch = match self.scratch() {
            Ok(d) => d,
            Err(e) => return ExecOutcome::protocol_error(format!("scratch dir: {e}")),
        };
        let work = scratch.path().join("ws");
        if let Err(e) = copy_tree(workspace, &work) {
            return ExecOutcome::protocol_error(format!("copying workspace: {e}"));
        }
        if let Err(e) = fs::write(work.join(CANDIDATE_FILE), &code.source) {
            return ExecOutcome::protocol_error(format!("writing candidate: {e}"));
        }

        let mut cmd = Command::new(program);
        cmd.args(fixed_args)
            .arg("--code")
            .arg(CANDIDATE_FILE)
            .arg("--cwd")
            .arg(&work)
            .current_dir(&work)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        let max_memory = limits.max_memory;
        let isolate_net = !limits.network_allowed;
        // SAFETY: only async-signal-safe syscalls run between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                if let Some(bytes) = max_memory {
                    let lim = libc::rlimit {
                        rlim_cur: bytes as libc::rlim_t,
                        rlim_max: bytes as libc::rlim_t,
                    };
                    libc::setrlimit(libc::RLIMIT_AS, &lim);
                }
                if isolate_net {
                    // Best effort: needs CAP_SYS_ADMIN; silently skipped otherwise.
                    libc::unshare(libc::CLONE_NEWNET);
                }
                Ok(())
            });
        }

        let start = Instant::now();
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => {
                return ExecOutcome::protocol_error(format!("failed to launch runner {program}: {e}"))
            }
        };
        let stdout_rx = spawn_reader(child.stdout.take(), limits.max_stdout);
        let stderr_rx = spawn_reader(child.stderr.take(), limits.max_stdout);

        let (status, timed_out) = match child.wait_timeout(limits.timeout()) {
            Ok(Some(status)) => (Some(status), false),
            Ok(None) => {
                kill_group(&mut child);
                (child.wait().ok(), true)
            }
            Err(e) => {
                kill_group(&mut child);
                let _ = child.wait();
                return ExecOutcome::protocol_error(format!("waiting on runner: {e}"));
            }
        };
        // Stray grandchildren may still hold the pipes open.
        kill_group(&mut child);
        let stdout = stdout_rx.recv_timeout(READER_GRACE).unwrap_or_default();
        let stderr = stderr_rx.recv_timeout(READER_GRACE).unwrap_or_default();
        let wall_time = start.elapsed().as_secs_f64();

        let code = status.and_then(|s| s.code());
        let runner_protocol_error = !timed_out && code == Some(RUNNER_PROTOCOL_EXIT);
        ExecOutcome {
            exit_ok: !timed_out && code == Some(0),
            stdout,
            stderr,
            wall_time,
            timed_out,
            runner_protocol_error,
        }
    }
}

impl Executor for ProcessExecutor {
    fn execute(&self, code: &CodeCandidate, workspace: &Path, limits: &ExecLimits) -> ExecOutcome {
        let _permit = self.pool.acquire();
        self.run(code, workspace, limits)
    }
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: plain syscall; the group id equals the child pid (process_group(0)).
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

/// Drain `pipe` on a thread, keeping at most `cap` bytes.
fn spawn_reader<R: Read + Send + 'static>(pipe: Option<R>, cap: usize) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut kept = Vec::new();
        if let Some(mut pipe) = pipe {
            let mut buf = [0u8; 8192];
            loop {
                match pipe.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        let room = cap.saturating_sub(kept.len());
                        kept.extend_from_slice(&buf[..n.min(room)]);
                    }
                }
            }
        }
        let mut s = String::from_utf8_lossy(&kept).into_owned();
        truncate_utf8(&mut s, cap);
        let _ = tx.send(s);
    });
    rx
}

/// Recursive copy of regular files and directories; symlinks are not followed.
fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in walkdir::WalkDir::new(src).min_depth(1).follow_links(false) {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(src).map_err(std::io::Error::other)?;
        let target = dst.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&target)?;
        } else if ft.is_file() {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}
