//! Runs the generated code bundle as a child process.
//!
//! The child starts in `04-development/src` with a scrubbed environment, in
//! its own process group so a timeout kills everything it spawned. Both
//! output streams are drained on background threads while the parent
//! polls for exit.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Stage;
use crate::llm::duration_ms;
use crate::store::{StoreError, WorkspaceLayout};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_CAPTURED_BYTES: usize = 1 << 20;

/// Variables passed through to the child; everything else is dropped.
const PASSTHROUGH_ENV: &[&str] = &["PATH", "HOME", "LANG", "LC_ALL", "TERM", "TMPDIR"];

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("entry command is empty")]
    EmptyCommand,
    #[error("cannot start `{program}`: {source}")]
    SpawnError {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no code bundle at {0}")]
    MissingBundle(String),
    #[error("waiting for child: {0}")]
    Wait(#[source] std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionLimits {
    pub timeout: Duration,
    pub max_captured_bytes: usize,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self { timeout: DEFAULT_TIMEOUT, max_captured_bytes: DEFAULT_MAX_CAPTURED_BYTES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ExitStatus {
    Code(i32),
    Signalled(i32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub command: Vec<String>,
    pub exit_status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    #[serde(with = "duration_ms", rename = "duration_ms")]
    pub duration: Duration,
    pub timed_out: bool,
}

impl ExecutionResult {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit_status == ExitStatus::Code(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum TestOutcome {
    Passed { result: ExecutionResult },
    Failed { result: Option<ExecutionResult>, error: Option<String> },
    Skipped { reason: String },
}

struct Captured {
    bytes: Vec<u8>,
    truncated: bool,
}

/// Reads `stream` to EOF, keeping at most `cap` bytes.
fn drain<R: Read + Send + 'static>(mut stream: R, cap: usize) -> JoinHandle<Captured> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
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
        Captured { bytes: kept, truncated }
    })
}

/// Lossy UTF-8 text no longer than `cap` bytes.
fn capped_text(bytes: &[u8], cap: usize) -> String {
    let mut text = String::from_utf8_lossy(bytes).into_owned();
    if text.len() > cap {
        let mut end = cap;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        text.truncate(end);
    }
    text
}

fn kill_group(child: &mut Child) {
    // The child leads its own process group, so its pid is the group id.
    let pgid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
    let _ = child.kill();
}

/// Runs `command` in `cwd` under `limits`.
pub fn run_command(cwd: &Path, command: &[String], limits: ExecutionLimits) -> Result<ExecutionResult, SandboxError> {
    let (program, args) = command.split_first().ok_or(SandboxError::EmptyCommand)?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(cwd)
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for key in PASSTHROUGH_ENV {
        if let Some(value) = std::env::var_os(key) {
            cmd.env(key, value);
        }
    }

    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|source| SandboxError::SpawnError { program: program.clone(), source })?;
    let stdout = drain(child.stdout.take().expect("stdout piped"), limits.max_captured_bytes);
    let stderr = drain(child.stderr.take().expect("stderr piped"), limits.max_captured_bytes);

    let mut timed_out = false;
    let status = loop {
        match child.try_wait().map_err(SandboxError::Wait)? {
            Some(status) => break status,
            None if started.elapsed() >= limits.timeout => {
                timed_out = true;
                kill_group(&mut child);
                break child.wait().map_err(SandboxError::Wait)?;
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    };
    let duration = started.elapsed();
    if !timed_out {
        // Reap anything the child left behind holding our pipes.
        let pgid = child.id() as libc::pid_t;
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let stdout = stdout.join().expect("stdout reader");
    let stderr = stderr.join().expect("stderr reader");

    let exit_status = match (status.code(), status.signal()) {
        (Some(code), _) => ExitStatus::Code(code),
        (None, Some(signal)) => ExitStatus::Signalled(signal),
        (None, None) => ExitStatus::Signalled(0),
    };
    Ok(ExecutionResult {
        command: command.to_vec(),
        exit_status,
        stdout: capped_text(&stdout.bytes, limits.max_captured_bytes),
        stderr: capped_text(&stderr.bytes, limits.max_captured_bytes),
        stdout_truncated: stdout.truncated,
        stderr_truncated: stderr.truncated,
        duration,
        timed_out,
    })
}

/// Runs the entry command against the development bundle and records the
/// result as `05-testing/execution.json`.
pub fn execute(
    layout: &WorkspaceLayout,
    entry_command: &[String],
    limits: ExecutionLimits,
) -> Result<ExecutionResult, SandboxError> {
    let cwd = layout.src_dir(Stage::Development);
    if !cwd.is_dir() {
        return Err(SandboxError::MissingBundle(layout.relative(&cwd)));
    }
    let result = run_command(&cwd, entry_command, limits)?;
    layout.write_json(&layout.execution_path(), &result)?;
    Ok(result)
}

fn has_test_files(layout: &WorkspaceLayout) -> bool {
    let testing_src = layout.src_dir(Stage::Testing);
    let testing_has_files =
        std::fs::read_dir(&testing_src).map(|mut entries| entries.next().is_some()).unwrap_or(false);
    testing_has_files || dir_has_test_named_file(&layout.src_dir(Stage::Development))
}

fn dir_has_test_named_file(dir: &Path) -> bool {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return false;
    };
    entries.flatten().any(|entry| {
        let path = entry.path();
        if path.is_dir() {
            dir_has_test_named_file(&path)
        } else {
            entry.file_name().to_string_lossy().to_ascii_lowercase().contains("test")
        }
    })
}

/// Runs the configured test command from the development bundle.
///
/// Skipped when no command is given or when neither the testing stage nor
/// the development bundle carries test files. The outcome is recorded as
/// `05-testing/test-run.json`.
pub fn run_tests(
    layout: &WorkspaceLayout,
    test_command: Option<&[String]>,
    limits: ExecutionLimits,
) -> Result<TestOutcome, SandboxError> {
    let outcome = match test_command {
        None => TestOutcome::Skipped { reason: "no test command configured".into() },
        Some(_) if !has_test_files(layout) => TestOutcome::Skipped { reason: "no test files attached".into() },
        Some(command) => {
            let cwd = layout.src_dir(Stage::Development);
            if !cwd.is_dir() {
                return Err(SandboxError::MissingBundle(layout.relative(&cwd)));
            }
            match run_command(&cwd, command, limits) {
                Ok(result) if result.success() => TestOutcome::Passed { result },
                Ok(result) => TestOutcome::Failed { result: Some(result), error: None },
                Err(err @ SandboxError::SpawnError { .. }) => {
                    TestOutcome::Failed { result: None, error: Some(err.to_string()) }
                }
                Err(err) => return Err(err),
            }
        }
    };
    layout.write_json(&layout.test_run_path(), &outcome)?;
    Ok(outcome)
}
