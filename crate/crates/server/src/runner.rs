//! Test-case runner.
//!
//! The default [`PythonRunner`] starts one interpreter per test in its own
//! process group with a cleared environment, resource limits and, when the
//! server runs as root, an unprivileged uid. Inside the interpreter an audit
//! hook refuses file access outside the standard library, process spawning
//! and sockets. Expected outputs never leave this process: the child only
//! receives the arguments and reports what the function returned.

use std::path::PathBuf;
use std::process::Stdio;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::process::Command;

use crate::problem::Problem;

pub const DEFAULT_TEST_TIMEOUT: Duration = Duration::from_millis(2000);
pub const DEFAULT_MEMORY_BYTES: u64 = 512 * 1024 * 1024;
const OUTPUT_LIMIT: u64 = 64 * 1024;
const STDERR_EXCERPT: usize = 2000;
/// uid/gid of `nobody`.
const SANDBOX_ID: u32 = 65534;

const HARNESS: &str = include_str!("../assets/harness.py");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestOutcome {
    pub passed: bool,
    /// What the function returned, as JSON; `null` when it did not return.
    pub actual: Value,
    pub stderr: String,
    #[serde(default)]
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunResult {
    pub per_test: Vec<TestOutcome>,
    pub all_passed: bool,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunnerError {
    #[error("runner unavailable: {0}")]
    Unavailable(String),
}

#[async_trait]
pub trait Runner: Send + Sync {
    async fn run(&self, problem: &Problem, code: &str) -> Result<RunResult, RunnerError>;
}

#[derive(Debug, Clone)]
pub struct RunnerLimits {
    pub timeout: Duration,
    pub memory_bytes: u64,
}

impl Default for RunnerLimits {
    fn default() -> Self {
        RunnerLimits { timeout: DEFAULT_TEST_TIMEOUT, memory_bytes: DEFAULT_MEMORY_BYTES }
    }
}

#[derive(Debug, Clone)]
pub struct PythonRunner {
    pub python: PathBuf,
    pub limits: RunnerLimits,
    /// Paths learner code must never read, such as the data directory.
    pub deny: Vec<PathBuf>,
}

impl PythonRunner {
    pub fn new(python: impl Into<PathBuf>, limits: RunnerLimits) -> Self {
        PythonRunner { python: python.into(), limits, deny: Vec::new() }
    }

    pub fn deny(mut self, path: impl Into<PathBuf>) -> Self {
        self.deny.push(path.into());
        self
    }

    async fn run_one(&self, problem: &Problem, code: &str, index: usize) -> Result<TestOutcome, RunnerError> {
        let test = &problem.tests[index];
        let nonce = format!("@@{}@@", uuid::Uuid::new_v4().simple());
        let request = json!({
            "source": code,
            "entry": problem.entry_point,
            "args": test.input,
            "nonce": nonce,
            "deny": self.deny,
        });

        let mut command = Command::new(&self.python);
        command
            .args(["-I", "-S", "-B", "-X", "utf8", "-c", HARNESS])
            .env_clear()
            .current_dir("/")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        let memory = self.limits.memory_bytes;
        let cpu_seconds = self.limits.timeout.as_secs() + 1;
        // SAFETY: only async-signal-safe libc calls run between fork and exec.
        unsafe {
            command.pre_exec(move || sandbox_child(memory, cpu_seconds));
        }
        let mut child = command.spawn().map_err(|e| RunnerError::Unavailable(format!("{}: {e}", self.python.display())))?;
        let pid = child.id();

        let mut stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let stderr = child.stderr.take().expect("stderr piped");
        let payload = request.to_string();
        let feed = tokio::spawn(async move {
            let _ = stdin.write_all(payload.as_bytes()).await;
        });
        let out_task = tokio::spawn(read_limited(stdout));
        let err_task = tokio::spawn(read_limited(stderr));

        let waited = tokio::time::timeout(self.limits.timeout, child.wait()).await;
        if waited.is_err() {
            if let Some(pid) = pid {
                // SAFETY: plain syscall on the group we created for the child.
                unsafe {
                    libc::killpg(pid as libc::pid_t, libc::SIGKILL);
                }
            }
            let _ = child.kill().await;
            feed.abort();
            out_task.abort();
            err_task.abort();
            return Ok(TestOutcome {
                passed: false,
                actual: Value::Null,
                stderr: format!("timed out after {} ms", self.limits.timeout.as_millis()),
                timed_out: true,
            });
        }
        let _ = feed.await;
        let stdout = out_task.await.unwrap_or_default();
        let stderr = err_task.await.unwrap_or_default();

        let verdict = String::from_utf8_lossy(&stdout)
            .lines()
            .rev()
            .find_map(|line| line.strip_prefix(nonce.as_str()).and_then(|rest| serde_json::from_str::<Value>(rest).ok()));
        let stderr = excerpt(&String::from_utf8_lossy(&stderr));
        Ok(match verdict {
            Some(v) if v["ok"] == Value::Bool(true) => {
                let actual = v["result"].clone();
                TestOutcome { passed: same(&actual, &test.expected), actual, stderr, timed_out: false }
            }
            Some(v) => {
                let stderr = if stderr.is_empty() { excerpt(v["error"].as_str().unwrap_or_default()) } else { stderr };
                TestOutcome { passed: false, actual: Value::Null, stderr, timed_out: false }
            }
            None => {
                let stderr = if stderr.is_empty() { "process ended without a result".to_string() } else { stderr };
                TestOutcome { passed: false, actual: Value::Null, stderr, timed_out: false }
            }
        })
    }
}

#[async_trait]
impl Runner for PythonRunner {
    async fn run(&self, problem: &Problem, code: &str) -> Result<RunResult, RunnerError> {
        let started = Instant::now();
        let mut handles = Vec::with_capacity(problem.tests.len());
        for index in 0..problem.tests.len() {
            let runner = self.clone();
            let problem = problem.clone();
            let code = code.to_string();
            handles.push(tokio::spawn(async move { runner.run_one(&problem, &code, index).await }));
        }
        let mut per_test = Vec::with_capacity(handles.len());
        for handle in handles {
            let outcome = handle.await.map_err(|e| RunnerError::Unavailable(e.to_string()))??;
            per_test.push(outcome);
        }
        let all_passed = per_test.iter().all(|t| t.passed);
        Ok(RunResult { per_test, all_passed, duration_ms: started.elapsed().as_millis() as u64 })
    }
}

async fn read_limited(stream: impl tokio::io::AsyncRead + Unpin) -> Vec<u8> {
    let mut buf = Vec::new();
    let _ = stream.take(OUTPUT_LIMIT).read_to_end(&mut buf).await;
    buf
}

/// Structural equality where numbers compare by value, so `2.0` matches `2`.
fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_i64(), y.as_i64()) {
            (Some(x), Some(y)) => x == y,
            _ => x.as_f64() == y.as_f64(),
        },
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(x, y)| same(x, y)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same(v, w)))
        }
        _ => a == b,
    }
}

fn excerpt(text: &str) -> String {
    let text = text.trim_end();
    match text.char_indices().rev().nth(STDERR_EXCERPT - 1) {
        Some((start, _)) => text[start..].to_string(),
        None => text.to_string(),
    }
}

/// Runs in the forked child before exec.
fn sandbox_child(memory: u64, cpu_seconds: u64) -> std::io::Result<()> {
    let limit = |resource, value: u64| {
        let rlim = libc::rlimit { rlim_cur: value as libc::rlim_t, rlim_max: value as libc::rlim_t };
        // SAFETY: setrlimit on the current process with a valid struct.
        if unsafe { libc::setrlimit(resource, &rlim) } != 0 {
            return Err(std::io::Error::last_os_error());
        }
        Ok(())
    };
    // SAFETY: setpgid/setgroups/setgid/setuid are async-signal-safe.
    unsafe {
        if libc::setpgid(0, 0) != 0 {
            return Err(std::io::Error::last_os_error());
        }
    }
    limit(libc::RLIMIT_AS, memory)?;
    limit(libc::RLIMIT_CPU, cpu_seconds)?;
    limit(libc::RLIMIT_CORE, 0)?;
    limit(libc::RLIMIT_FSIZE, 0)?;
    limit(libc::RLIMIT_NOFILE, 64)?;
    unsafe {
        if libc::geteuid() == 0
            && (libc::setgroups(0, std::ptr::null()) != 0
                || libc::setgid(SANDBOX_ID) != 0
                || libc::setuid(SANDBOX_ID) != 0)
        {
            return Err(std::io::Error::last_os_error());
        }
    }
    Ok(())
}
