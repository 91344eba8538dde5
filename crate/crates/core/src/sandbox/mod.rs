//! Subprocess execution of exercise code.
//!
//! Each run gets a fresh temporary directory holding the shim, the solution,
//! the tests and an optional scripted stdin. The interpreter starts in
//! isolated mode with a scrubbed environment, its own process group and the
//! temp dir as working directory; the shim denies socket creation. This is
//! process-level isolation only. Hostile code needs an OS container around
//! the whole service.

mod process;

use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::limit::ConcurrencyLimit;

pub use process::SHIM_SOURCE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("sandbox launch failure: {0}")]
    LaunchFailure(String),
    #[error("sandbox precondition: {0}")]
    Precondition(String),
    #[error("sandbox I/O: {0}")]
    Io(String),
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_MAX_OUTPUT: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecLimits {
    #[serde(with = "secs")]
    pub wall_clock_timeout: Duration,
    pub max_output_bytes: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            wall_clock_timeout: DEFAULT_TIMEOUT,
            max_output_bytes: DEFAULT_MAX_OUTPUT,
        }
    }
}

impl ExecLimits {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.wall_clock_timeout = timeout;
        self
    }

    fn validate(&self) -> Result<(), SandboxError> {
        if self.wall_clock_timeout.is_zero() {
            return Err(SandboxError::Precondition("timeout must be positive".into()));
        }
        if self.max_output_bytes == 0 {
            return Err(SandboxError::Precondition("output cap must be positive".into()));
        }
        Ok(())
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Duration::try_from_secs_f64(f64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Ok,
    RuntimeError,
    Timeout,
    LaunchFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub stdout: String,
    pub stderr: String,
    pub duration: Duration,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestStatus {
    AllPassed,
    SomeFailed,
    Errored,
    NoTests,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFailure {
    pub test_name: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub status: TestStatus,
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<TestFailure>,
}

impl TestOutcome {
    fn without_tests(status: TestStatus) -> Self {
        Self {
            status,
            total: 0,
            passed: 0,
            failures: Vec::new(),
        }
    }
}

/// Statement coverage of the solution. `statements_total == 0` means the
/// fraction is not applicable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub statements_total: usize,
    pub statements_hit: usize,
}

impl CoverageReport {
    pub const NOT_APPLICABLE: CoverageReport = CoverageReport {
        statements_total: 0,
        statements_hit: 0,
    };

    pub fn new(statements_hit: usize, statements_total: usize) -> Self {
        debug_assert!(statements_hit <= statements_total);
        Self {
            statements_total,
            statements_hit,
        }
    }

    pub fn fraction(&self) -> Option<f64> {
        (self.statements_total > 0)
            .then(|| self.statements_hit as f64 / self.statements_total as f64)
    }

    pub fn is_applicable(&self) -> bool {
        self.statements_total > 0
    }

    pub fn is_full(&self) -> bool {
        self.is_applicable() && self.statements_hit == self.statements_total
    }
}

/// One test verdict as reported by the shim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimTest {
    pub name: String,
    pub verdict: String,
    #[serde(default)]
    pub message: String,
}

/// The fenced JSON document the shim prints last on stdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimResult {
    pub schema_version: u32,
    pub mode: String,
    pub status: String,
    #[serde(default)]
    pub tests: Vec<ShimTest>,
    #[serde(default)]
    pub covered_lines: Vec<u32>,
    #[serde(default)]
    pub executable_lines: Vec<u32>,
    #[serde(default)]
    pub message: String,
    #[serde(default)]
    pub stdout_b64: String,
    #[serde(default)]
    pub stderr_b64: String,
    #[serde(default)]
    pub output_truncated: bool,
}

impl ShimResult {
    fn decoded(b64: &str) -> String {
        base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map(|bytes| String::from_utf8_lossy(&bytes).into_owned())
            .unwrap_or_default()
    }

    pub fn stdout(&self) -> String {
        Self::decoded(&self.stdout_b64)
    }

    pub fn stderr(&self) -> String {
        Self::decoded(&self.stderr_b64)
    }

    fn test_outcome(&self) -> TestOutcome {
        let status = match self.status.as_str() {
            "AllPassed" => TestStatus::AllPassed,
            "SomeFailed" => TestStatus::SomeFailed,
            "NoTests" => TestStatus::NoTests,
            _ => TestStatus::Errored,
        };
        let passed = self.tests.iter().filter(|t| t.verdict == "pass").count();
        let mut failures: Vec<TestFailure> = self
            .tests
            .iter()
            .filter(|t| t.verdict != "pass")
            .map(|t| TestFailure {
                test_name: t.name.clone(),
                message: t.message.clone(),
            })
            .collect();
        if status == TestStatus::Errored && failures.is_empty() {
            failures.push(TestFailure {
                test_name: "<load>".into(),
                message: self.message.clone(),
            });
        }
        TestOutcome {
            status,
            total: self.tests.len(),
            passed,
            failures,
        }
    }

    fn coverage(&self) -> CoverageReport {
        let hit = self
            .covered_lines
            .iter()
            .filter(|l| self.executable_lines.contains(l))
            .count();
        CoverageReport::new(hit, self.executable_lines.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Run,
    Test,
    Coverage,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Run => "run",
            Mode::Test => "test",
            Mode::Coverage => "coverage",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxSettings {
    /// Interpreter for exercise code.
    pub python: PathBuf,
    /// Maximum simultaneous child processes.
    pub max_concurrent: usize,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        Self {
            python: PathBuf::from("python3"),
            max_concurrent: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(2),
        }
    }
}

/// Runs solutions and tests in child interpreter processes.
#[derive(Debug)]
pub struct Sandbox {
    settings: SandboxSettings,
    limit: ConcurrencyLimit,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new(SandboxSettings::default())
    }
}

fn require_non_blank(what: &str, text: &str) -> Result<(), SandboxError> {
    if text.trim().is_empty() {
        return Err(SandboxError::Precondition(format!("{what} is blank")));
    }
    Ok(())
}

impl Sandbox {
    pub fn new(settings: SandboxSettings) -> Self {
        let limit = ConcurrencyLimit::new(settings.max_concurrent);
        Self { settings, limit }
    }

    pub fn settings(&self) -> &SandboxSettings {
        &self.settings
    }

    pub fn max_concurrent(&self) -> usize {
        self.limit.max()
    }

    /// Runs the solution as a standalone program with empty stdin.
    pub fn run_solution(&self, solution: &str, limits: &ExecLimits) -> Result<RunOutcome, SandboxError> {
        self.run_solution_with_input(solution, None, limits)
    }

    /// Runs the solution with `stdin` supplied to `input()` calls.
    pub fn run_solution_with_input(
        &self,
        solution: &str,
        stdin: Option<&str>,
        limits: &ExecLimits,
    ) -> Result<RunOutcome, SandboxError> {
        require_non_blank("solution", solution)?;
        limits.validate()?;
        let raw = match self.execute(Mode::Run, solution, "", stdin, limits) {
            Err(SandboxError::LaunchFailure(message)) => {
                return Ok(RunOutcome {
                    status: RunStatus::LaunchFailure,
                    stdout: String::new(),
                    stderr: message,
                    duration: Duration::ZERO,
                    exit_code: None,
                })
            }
            other => other?,
        };
        let (stdout, stderr) = match &raw.document {
            Some(doc) => (doc.stdout(), doc.stderr()),
            None => (String::new(), raw.stderr.clone()),
        };
        let status = if raw.timed_out {
            RunStatus::Timeout
        } else if raw.exit_code == Some(0) {
            RunStatus::Ok
        } else {
            RunStatus::RuntimeError
        };
        Ok(RunOutcome {
            status,
            stdout,
            stderr,
            duration: raw.duration,
            exit_code: raw.exit_code,
        })
    }

    /// Runs the tests against the solution. Blank tests give `NoTests`
    /// without launching anything.
    pub fn run_tests(
        &self,
        solution: &str,
        tests: &str,
        limits: &ExecLimits,
    ) -> Result<TestOutcome, SandboxError> {
        if tests.trim().is_empty() {
            return Ok(TestOutcome::without_tests(TestStatus::NoTests));
        }
        require_non_blank("solution", solution)?;
        limits.validate()?;
        let raw = self.execute(Mode::Test, solution, tests, None, limits)?;
        Ok(raw.test_outcome())
    }

    /// Runs the tests with line tracing restricted to the solution.
    pub fn measure_coverage(
        &self,
        solution: &str,
        tests: &str,
        limits: &ExecLimits,
    ) -> Result<(TestOutcome, CoverageReport), SandboxError> {
        if tests.trim().is_empty() {
            return Ok((
                TestOutcome::without_tests(TestStatus::NoTests),
                CoverageReport::NOT_APPLICABLE,
            ));
        }
        require_non_blank("solution", solution)?;
        limits.validate()?;
        let raw = self.execute(Mode::Coverage, solution, tests, None, limits)?;
        let coverage = match (&raw.document, raw.timed_out) {
            (Some(doc), false) => doc.coverage(),
            _ => CoverageReport::NOT_APPLICABLE,
        };
        Ok((raw.test_outcome(), coverage))
    }

    fn execute(
        &self,
        mode: Mode,
        solution: &str,
        tests: &str,
        stdin: Option<&str>,
        limits: &ExecLimits,
    ) -> Result<process::RawExecution, SandboxError> {
        let _permit = self.limit.acquire();
        process::execute(&self.settings.python, mode, solution, tests, stdin, limits)
    }
}
