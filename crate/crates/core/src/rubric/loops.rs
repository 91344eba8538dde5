use serde::{Deserialize, Serialize};

use super::{auto_evaluate, AutoRubricReport, RubricError, Verdict};
use crate::gateway::GenerationConfig;
use crate::parser::{leading_section, parse_bundle, ExerciseBundle, Provenance};
use crate::pipeline::Pipeline;
use crate::prompt::{build_test_prompt, KeywordSet, PrimingExercise, TESTS_MARKER};

pub const DEFAULT_BUDGET: u32 = 5;

/// One loop iteration: the candidate bundle and its rubric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// 1-based.
    pub attempt: u32,
    pub bundle: ExerciseBundle,
    pub report: AutoRubricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSuccess {
    pub bundle: ExerciseBundle,
    pub report: AutoRubricReport,
    /// Every attempt including the accepted one (last).
    pub attempts: Vec<Attempt>,
}

fn check_budget(budget: u32) -> Result<(), RubricError> {
    if budget == 0 {
        return Err(RubricError::Precondition("budget must be at least 1".into()));
    }
    Ok(())
}

fn abort(err: impl Into<crate::Error>, attempts: Vec<Attempt>) -> RubricError {
    RubricError::Aborted {
        source: Box::new(err.into()),
        attempts,
    }
}

/// Generates until a bundle's tests pass or the budget runs out. Attempt `i`
/// (0-based) uses sample index `config.sample + i`, so each attempt is a
/// distinct request. Makes exactly one backend call per attempt.
pub fn regenerate_until_valid(
    pipeline: &Pipeline<'_>,
    prime: &PrimingExercise,
    keywords: &KeywordSet,
    config: &GenerationConfig,
    budget: u32,
) -> Result<LoopSuccess, RubricError> {
    check_budget(budget)?;
    let mut attempts = Vec::new();
    for i in 0..budget {
        let attempt_config = config.clone().with_sample(config.sample + i);
        let bundle = match pipeline.generate(prime, keywords, &attempt_config) {
            Ok(b) => b,
            Err(e) => return Err(abort(e, attempts)),
        };
        let report = match pipeline.evaluate(&bundle) {
            Ok(r) => r,
            Err(e) => return Err(abort(e, attempts)),
        };
        let passed = report.tests_pass == Verdict::Yes;
        tracing::debug!(attempt = i + 1, bundle = %bundle.id, passed, "regenerate attempt");
        attempts.push(Attempt {
            attempt: i + 1,
            bundle: bundle.clone(),
            report: report.clone(),
        });
        if passed {
            return Ok(LoopSuccess {
                bundle,
                report,
                attempts,
            });
        }
    }
    Err(RubricError::Exhausted { attempts })
}

/// Asks the backend for tests only, given the bundle's statement and
/// solution, and accepts the first candidate whose tests all pass against
/// the unchanged solution.
///
/// The candidate bundle keeps the original sections, gains the generated
/// tests, and records the original id as `parent_id`.
pub fn backfill_tests(
    pipeline: &Pipeline<'_>,
    bundle: &ExerciseBundle,
    prime: Option<&PrimingExercise>,
    config: &GenerationConfig,
    budget: u32,
) -> Result<LoopSuccess, RubricError> {
    check_budget(budget)?;
    let (Some(statement), Some(solution)) = (
        bundle.problem_statement.as_deref().filter(|_| bundle.has_problem_statement()),
        bundle.sample_solution.as_deref().filter(|_| bundle.has_sample_solution()),
    ) else {
        return Err(RubricError::Precondition(
            "backfill needs a problem statement and a sample solution".into(),
        ));
    };
    if bundle.has_tests() {
        return Err(RubricError::Precondition("bundle already has tests".into()));
    }
    let keywords = bundle.keywords.clone().unwrap_or_default();
    let prompt = build_test_prompt(prime, &keywords, statement, solution)
        .map_err(|e| RubricError::Precondition(e.to_string()))?;

    let mut base = bundle.clone();
    base.tests = None;
    let mut prefix = base.render();
    prefix.push_str(TESTS_MARKER);
    prefix.push('\n');

    let mut attempts = Vec::new();
    for i in 0..budget {
        let attempt_config = config.clone().with_sample(config.sample + i);
        let result = match pipeline.gateway.complete(&prompt, &attempt_config) {
            Ok(r) => r,
            Err(e) => return Err(abort(e, attempts)),
        };
        let tests = leading_section(&result.text);
        let provenance = Provenance {
            config: Some(GenerationConfig {
                stop_sequence: prompt.stop_sequence.clone(),
                ..attempt_config
            }),
            backend_id: result.backend_id.clone(),
            timestamp: Some(result.created_at),
            parent_id: Some(bundle.id.clone()),
            ..bundle.provenance.clone()
        };
        let candidate = parse_bundle(&format!("{prefix}{tests}\n"), provenance);
        let report = match auto_evaluate(&candidate, pipeline.sandbox, pipeline.limits) {
            Ok(r) => r,
            Err(e) => return Err(abort(e, attempts)),
        };
        let passed = report.tests_pass == Verdict::Yes;
        tracing::debug!(attempt = i + 1, candidate = %candidate.id, passed, "backfill attempt");
        attempts.push(Attempt {
            attempt: i + 1,
            bundle: candidate.clone(),
            report: report.clone(),
        });
        if passed {
            return Ok(LoopSuccess {
                bundle: candidate,
                report,
                attempts,
            });
        }
    }
    Err(RubricError::Exhausted { attempts })
}
