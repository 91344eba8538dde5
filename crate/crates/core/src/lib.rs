//! Generation and validation pipeline for programming exercises.
//!
//! Seed exercises ("primes") plus keyword themes are rendered into completion
//! prompts, sent to a completion backend (remote HTTP or a replay cassette),
//! parsed back into [`ExerciseBundle`]s and checked in a subprocess sandbox
//! for runnability, passing tests and statement coverage. The same backend
//! drives step-by-step code explanations, which instructors score line by
//! line. Experiment grids aggregate the automated rubric over many bundles.

pub mod builtin;
pub mod digest;
pub mod error;
pub mod explainer;
pub mod gateway;
pub mod grid;
mod limit;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod rubric;
pub mod sandbox;
pub mod store;

pub use error::{Error, Result};
pub use explainer::{ExplanationScore, LineJudgment, LineVerdict};
pub use gateway::{
    CompletionBackend, CompletionResult, FinishReason, Gateway, GatewayError, GenerationConfig,
    ReplayCassette,
};
pub use grid::{GridJob, GridResult, GridSpec, SummaryReport};
pub use parser::{parse_bundle, parse_explanation, ExerciseBundle, Explanation, Provenance};
pub use prompt::{
    build_exercise_prompt, build_explanation_prompt, ExplanationStyle, KeywordSet,
    PrimingExercise, PromptText,
};
pub use rubric::{AutoRubricReport, ManualRubricRecord, ManualVerdict, Verdict};
pub use sandbox::{CoverageReport, ExecLimits, RunOutcome, Sandbox, TestOutcome};
pub use store::Store;
