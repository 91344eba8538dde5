//! Generate → parse → evaluate plumbing shared by the loops, the explainer
//! and the experiment grid.

use crate::gateway::{Gateway, GenerationConfig};
use crate::parser::{parse_bundle, ExerciseBundle, Provenance};
use crate::prompt::{build_exercise_prompt, KeywordSet, PrimingExercise};
use crate::rubric::{self, AutoRubricReport};
use crate::sandbox::{ExecLimits, Sandbox, SandboxError};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct Pipeline<'a> {
    pub gateway: &'a Gateway,
    pub sandbox: &'a Sandbox,
    pub limits: &'a ExecLimits,
}

impl<'a> Pipeline<'a> {
    pub fn new(gateway: &'a Gateway, sandbox: &'a Sandbox, limits: &'a ExecLimits) -> Self {
        Self {
            gateway,
            sandbox,
            limits,
        }
    }

    /// One generation call: prompt, complete, parse.
    pub fn generate(
        &self,
        prime: &PrimingExercise,
        keywords: &KeywordSet,
        config: &GenerationConfig,
    ) -> Result<ExerciseBundle> {
        let prompt = build_exercise_prompt(prime, keywords)?;
        let result = self.gateway.complete(&prompt, config)?;
        let provenance = Provenance {
            prime_id: Some(prime.id.clone()),
            keyword_set: keywords.clone(),
            config: Some(GenerationConfig {
                stop_sequence: prompt.stop_sequence.clone(),
                ..config.clone()
            }),
            backend_id: result.backend_id.clone(),
            timestamp: Some(result.created_at),
            parent_id: None,
        };
        Ok(parse_bundle(&result.text, provenance))
    }

    pub fn evaluate(&self, bundle: &ExerciseBundle) -> Result<AutoRubricReport, SandboxError> {
        rubric::auto_evaluate(bundle, self.sandbox, self.limits)
    }

    /// Generate then evaluate.
    pub fn generate_and_evaluate(
        &self,
        prime: &PrimingExercise,
        keywords: &KeywordSet,
        config: &GenerationConfig,
    ) -> Result<(ExerciseBundle, AutoRubricReport)> {
        let bundle = self.generate(prime, keywords, config)?;
        let report = self.evaluate(&bundle)?;
        Ok((bundle, report))
    }
}
