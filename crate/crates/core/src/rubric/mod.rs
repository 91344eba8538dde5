//! Automated readiness rubric, manual Yes/No/Maybe assessments and the
//! regenerate / backfill loops.

mod loops;
mod manual;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::ExerciseBundle;
use crate::sandbox::{
    CoverageReport, ExecLimits, RunStatus, Sandbox, SandboxError, TestFailure, TestStatus,
};

pub use loops::{backfill_tests, regenerate_until_valid, Attempt, LoopSuccess, DEFAULT_BUDGET};
pub use manual::{
    AssessmentLog, ConsensusResolution, EffectiveAssessment, ManualRubricRecord, ManualVerdict,
    RubricField,
};

#[derive(Debug, Error)]
pub enum RubricError {
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid assessment: {0}")]
    Validation(String),
    #[error("conflicting resolution: {0}")]
    Conflict(String),
    #[error("budget of {} attempt(s) exhausted", attempts.len())]
    Exhausted { attempts: Vec<Attempt> },
    /// Backend or infrastructure failure mid-loop; `attempts` holds what
    /// completed before it.
    #[error("loop aborted after {} attempt(s): {source}", attempts.len())]
    Aborted {
        source: Box<crate::Error>,
        attempts: Vec<Attempt>,
    },
}

impl RubricError {
    /// Attempts recorded before the loop gave up, if this is a loop error.
    pub fn attempts(&self) -> &[Attempt] {
        match self {
            RubricError::Exhausted { attempts } | RubricError::Aborted { attempts, .. } => attempts,
            _ => &[],
        }
    }
}

/// Three-valued machine verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
    #[serde(rename = "NA")]
    NotApplicable,
}

impl Verdict {
    fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }
}

/// Machine answers to the readiness questions for one bundle.
///
/// `coverage` is set only when the tests pass; `raw_coverage` keeps whatever
/// the tracer measured. A passing suite over a solution with no executable
/// statements has coverage 0 of 0, which counts as full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoRubricReport {
    pub bundle_id: String,
    pub has_sample_solution: bool,
    pub solution_runnable: Verdict,
    pub has_tests: bool,
    pub tests_pass: Verdict,
    pub coverage: Option<CoverageReport>,
    pub raw_coverage: CoverageReport,
    pub tests_total: usize,
    pub tests_passed: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<TestFailure>,
    #[serde(default)]
    pub stdin_scripted: bool,
}

impl AutoRubricReport {
    /// Report for a bundle with no extractable solution or tests.
    pub fn empty(bundle_id: impl Into<String>) -> Self {
        Self {
            bundle_id: bundle_id.into(),
            has_sample_solution: false,
            solution_runnable: Verdict::NotApplicable,
            has_tests: false,
            tests_pass: Verdict::NotApplicable,
            coverage: None,
            raw_coverage: CoverageReport::NOT_APPLICABLE,
            tests_total: 0,
            tests_passed: 0,
            failures: Vec::new(),
            stdin_scripted: false,
        }
    }

    /// Checks the field dependencies; returns the first violation.
    /// Statement coverage fraction when applicable.
    pub fn coverage_fraction(&self) -> Option<f64> {
        self.coverage.map(|c| c.fraction().unwrap_or(1.0))
    }

    pub fn has_full_coverage(&self) -> bool {
        self.coverage
            .is_some_and(|c| c.statements_hit == c.statements_total)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if (self.solution_runnable == Verdict::NotApplicable) == self.has_sample_solution {
            return Err("runnable must be NA exactly when there is no solution".into());
        }
        let both = self.has_sample_solution && self.has_tests;
        if (self.tests_pass == Verdict::NotApplicable) == both {
            return Err("tests_pass must be NA exactly when solution or tests are missing".into());
        }
        if self.tests_pass == Verdict::Yes && self.solution_runnable != Verdict::Yes {
            return Err("passing tests require a runnable solution".into());
        }
        if (self.tests_pass == Verdict::Yes) != self.coverage.is_some() {
            return Err("coverage must be applicable exactly when tests pass".into());
        }
        if self
            .coverage
            .is_some_and(|c| c.statements_hit > c.statements_total)
        {
            return Err("coverage hit exceeds total".into());
        }
        Ok(())
    }
}

/// Runs the automated rubric over a bundle.
pub fn auto_evaluate(
    bundle: &ExerciseBundle,
    sandbox: &Sandbox,
    limits: &ExecLimits,
) -> Result<AutoRubricReport, SandboxError> {
    auto_evaluate_with_input(bundle, sandbox, limits, None)
}

/// Like [`auto_evaluate`], feeding `stdin` to the runnability check.
pub fn auto_evaluate_with_input(
    bundle: &ExerciseBundle,
    sandbox: &Sandbox,
    limits: &ExecLimits,
    stdin: Option<&str>,
) -> Result<AutoRubricReport, SandboxError> {
    let mut report = AutoRubricReport::empty(bundle.id.clone());
    report.has_sample_solution = bundle.has_sample_solution();
    report.has_tests = bundle.has_tests();
    report.stdin_scripted = stdin.is_some();

    let Some(solution) = bundle.sample_solution.as_deref().filter(|_| report.has_sample_solution)
    else {
        return Ok(report);
    };
    let run = sandbox.run_solution_with_input(solution, stdin, limits)?;
    report.solution_runnable = match run.status {
        RunStatus::Ok => Verdict::Yes,
        RunStatus::RuntimeError | RunStatus::Timeout => Verdict::No,
        RunStatus::LaunchFailure => return Err(SandboxError::LaunchFailure(run.stderr)),
    };

    let Some(tests) = bundle.tests.as_deref().filter(|_| report.has_tests) else {
        return Ok(report);
    };
    let (outcome, coverage) = sandbox.measure_coverage(solution, tests, limits)?;
    let passed = outcome.status == TestStatus::AllPassed && outcome.total >= 1;
    report.tests_pass = Verdict::from_bool(passed && report.solution_runnable == Verdict::Yes);
    report.tests_total = outcome.total;
    report.tests_passed = outcome.passed;
    report.failures = outcome.failures;
    report.raw_coverage = coverage;
    if report.tests_pass == Verdict::Yes {
        report.coverage = Some(coverage);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_bundle, Provenance};

    #[test]
    fn empty_bundle_is_all_negative() {
        let bundle = parse_bundle("", Provenance::default());
        let report = auto_evaluate(&bundle, &Sandbox::default(), &ExecLimits::default()).unwrap();
        assert!(!report.has_sample_solution && !report.has_tests);
        assert_eq!(report.solution_runnable, Verdict::NotApplicable);
        assert_eq!(report.tests_pass, Verdict::NotApplicable);
        assert!(report.coverage.is_none());
        report.check_invariants().unwrap();
    }

    #[test]
    fn invariant_checker_catches_violations() {
        let mut r = AutoRubricReport::empty("x");
        r.check_invariants().unwrap();
        r.has_sample_solution = true;
        assert!(r.check_invariants().is_err());
        r.solution_runnable = Verdict::No;
        r.has_tests = true;
        r.tests_pass = Verdict::Yes;
        assert!(r.check_invariants().is_err());
    }

    #[test]
    fn verdict_serializes_na() {
        assert_eq!(serde_json::to_string(&Verdict::NotApplicable).unwrap(), "\"NA\"");
    }
}
