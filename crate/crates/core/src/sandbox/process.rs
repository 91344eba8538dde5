use std::fs;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use tracing::debug;

use super::{ExecLimits, Mode, SandboxError, ShimResult, TestFailure, TestOutcome, TestStatus};

/// Source of the in-interpreter harness written into every run directory.
pub const SHIM_SOURCE: &str = include_str!("../../shim/exec_shim.py");

const STARTED: &str = "===EXFORGE-SHIM-STARTED===";
const FENCE_BEGIN: &str = "===EXFORGE-SHIM-RESULT-BEGIN===";
const FENCE_END: &str = "===EXFORGE-SHIM-RESULT-END===";
const SHIM_INTERNAL_FAULT: i32 = 70;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug)]
pub(crate) struct RawExecution {
    pub document: Option<ShimResult>,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub duration: Duration,
    pub stderr: String,
}

impl RawExecution {
    pub(crate) fn test_outcome(&self) -> TestOutcome {
        if self.timed_out {
            return TestOutcome::without_tests(TestStatus::Timeout);
        }
        match &self.document {
            Some(doc) => doc.test_outcome(),
            None => TestOutcome {
                status: TestStatus::Errored,
                total: 0,
                passed: 0,
                failures: vec![TestFailure {
                    test_name: "<process>".into(),
                    message: format!(
                        "process exited with {:?} before reporting: {}",
                        self.exit_code,
                        tail(&self.stderr, 500)
                    ),
                }],
            },
        }
    }
}

fn tail(s: &str, max_chars: usize) -> &str {
    let count = s.chars().count();
    if count <= max_chars {
        return s;
    }
    let skip = s.char_indices().nth(count - max_chars).map_or(0, |(i, _)| i);
    &s[skip..]
}

fn io_err(what: &str, e: std::io::Error) -> SandboxError {
    SandboxError::Io(format!("{what}: {e}"))
}

/// Reads at most `cap` bytes, then keeps draining so the child never blocks.
fn capped_reader<R: Read + Send + 'static>(mut source: R, cap: usize) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match source.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    })
}

/// Last fenced document on the stream, if any parses.
fn last_document(stdout: &str) -> Option<ShimResult> {
    let begin = stdout.rfind(FENCE_BEGIN)?;
    let body = &stdout[begin + FENCE_BEGIN.len()..];
    let end = body.find(FENCE_END)?;
    serde_json::from_str(body[..end].trim()).ok()
}

pub(crate) fn execute(
    python: &Path,
    mode: Mode,
    solution: &str,
    tests: &str,
    stdin: Option<&str>,
    limits: &ExecLimits,
) -> Result<RawExecution, SandboxError> {
    let dir = tempfile::Builder::new()
        .prefix("exforge-run-")
        .tempdir()
        .map_err(|e| io_err("temp dir", e))?;
    let root = dir.path();
    let shim = root.join("exec_shim.py");
    let solution_path = root.join("solution.py");
    let tests_path = root.join("tests.py");
    fs::write(&shim, SHIM_SOURCE).map_err(|e| io_err("write shim", e))?;
    fs::write(&solution_path, solution).map_err(|e| io_err("write solution", e))?;
    fs::write(&tests_path, tests).map_err(|e| io_err("write tests", e))?;

    let mut command = Command::new(python);
    command
        .arg("-I")
        .arg("-B")
        .arg(&shim)
        .arg(mode.as_str())
        .arg(&solution_path)
        .arg(&tests_path);
    if let Some(input) = stdin {
        let stdin_path = root.join("stdin.txt");
        fs::write(&stdin_path, input).map_err(|e| io_err("write stdin", e))?;
        command.arg(&stdin_path);
    }
    command
        .env_clear()
        .env("PATH", "/usr/local/bin:/usr/bin:/bin")
        .env("HOME", root)
        .env("TMPDIR", root)
        .env("LC_ALL", "C.UTF-8")
        .env("EXFORGE_MAX_OUTPUT", limits.max_output_bytes.to_string())
        .current_dir(root)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);

    let started = Instant::now();
    let mut child = command
        .spawn()
        .map_err(|e| SandboxError::LaunchFailure(format!("{}: {e}", python.display())))?;
    let pid = child.id() as libc::pid_t;
    // room for the base64 document around the capped solution output
    let stdout_cap = limits.max_output_bytes.saturating_mul(3).saturating_add(64 * 1024);
    let out_reader = capped_reader(child.stdout.take().expect("piped"), stdout_cap);
    let err_reader = capped_reader(child.stderr.take().expect("piped"), limits.max_output_bytes);

    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| io_err("wait", e))? {
            break status;
        }
        if started.elapsed() >= limits.wall_clock_timeout {
            timed_out = true;
            // SAFETY: signalling the process group we created for this child.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
            break child.wait().map_err(|e| io_err("wait", e))?;
        }
        thread::sleep(POLL);
    };
    let duration = started.elapsed();
    if !timed_out {
        // reap anything the solution left behind in the group
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let stdout = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    let exit_code = status.code();
    debug!(mode = mode.as_str(), ?exit_code, timed_out, ?duration, "sandbox run finished");

    let document = last_document(&stdout);
    if !timed_out && !stdout.contains(STARTED) {
        return Err(SandboxError::LaunchFailure(format!(
            "runtime did not start the shim (exit {exit_code:?}): {}",
            tail(&stderr, 500)
        )));
    }
    if document.is_none() && exit_code == Some(SHIM_INTERNAL_FAULT) && stderr.contains("shim internal fault") {
        return Err(SandboxError::LaunchFailure(format!(
            "shim internal fault: {}",
            tail(&stderr, 500)
        )));
    }
    Ok(RawExecution {
        document,
        exit_code,
        timed_out,
        duration,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_last_fenced_document() {
        let forged = format!(
            "{FENCE_BEGIN}\n{{\"schema_version\":1,\"mode\":\"run\",\"status\":\"Forged\"}}\n{FENCE_END}\n"
        );
        let real = format!(
            "{FENCE_BEGIN}\n{{\"schema_version\":1,\"mode\":\"run\",\"status\":\"Ok\"}}\n{FENCE_END}\n"
        );
        let doc = last_document(&format!("{STARTED}\n{forged}noise\n{real}")).unwrap();
        assert_eq!(doc.status, "Ok");
    }

    #[test]
    fn unterminated_document_is_none() {
        assert!(last_document(&format!("{FENCE_BEGIN}\n{{}}")).is_none());
    }

    #[test]
    fn tail_keeps_end() {
        assert_eq!(tail("abcdef", 3), "def");
        assert_eq!(tail("ab", 3), "ab");
    }
}
