//! Prompt assembly for exercise generation and code explanation.
//!
//! Rendering is a pure function of its inputs. Exercise prompts follow the
//! double-dash marker layout of the seed files:
//!
//! ```text
//! """Exercise 1
//! --Keywords--
//! cars
//! --Problem statement--
//! ...
//! --Sample solution--
//! ...
//! --Tests--
//! ...
//! """Exercise 2
//! --Keywords--
//! ice hockey
//! --Problem statement--
//! ```

mod library;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use library::PrimeLibrary;

/// The fence that closes every exercise block and stops every completion.
pub const STOP_SEQUENCE: &str = "\"\"\"";

pub const KEYWORDS_MARKER: &str = "--Keywords--";
pub const PROBLEM_STATEMENT_MARKER: &str = "--Problem statement--";
pub const SAMPLE_SOLUTION_MARKER: &str = "--Sample solution--";
pub const TESTS_MARKER: &str = "--Tests--";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("invalid prime `{id}`: {reason}")]
    InvalidPrime { id: String, reason: String },
    #[error("invalid keyword: {0}")]
    InvalidKeyword(String),
    #[error("code to explain is empty")]
    EmptyCode,
    #[error("prime library: {0}")]
    Library(String),
}

/// A seed exercise used as the few-shot example in a generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimingExercise {
    pub id: String,
    pub keywords: Vec<String>,
    pub problem_statement: String,
    pub sample_solution: String,
    pub tests: String,
}

impl PrimingExercise {
    /// Checks the invariants needed for exercise generation. Tests may be
    /// empty only when `allow_empty_tests` is set (test-generation mode).
    pub fn validate(&self, allow_empty_tests: bool) -> Result<(), PromptError> {
        let invalid = |reason: &str| PromptError::InvalidPrime {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("id is empty"));
        }
        if self.problem_statement.trim().is_empty() {
            return Err(invalid("problem statement is empty"));
        }
        if self.sample_solution.trim().is_empty() {
            return Err(invalid("sample solution is empty"));
        }
        if !allow_empty_tests && self.tests.trim().is_empty() {
            return Err(invalid("tests are empty"));
        }
        if self.keywords.iter().any(|k| k.trim().is_empty()) {
            return Err(invalid("blank keyword"));
        }
        Ok(())
    }

    /// Renders the prime as an `"""Exercise 1` block, without a trailing fence.
    pub fn render_block(&self) -> String {
        let mut out = String::new();
        out.push_str(STOP_SEQUENCE);
        out.push_str("Exercise 1\n");
        push_section(&mut out, KEYWORDS_MARKER, &self.keywords.join("\n"));
        push_section(&mut out, PROBLEM_STATEMENT_MARKER, &self.problem_statement);
        push_section(&mut out, SAMPLE_SOLUTION_MARKER, &self.sample_solution);
        push_section(&mut out, TESTS_MARKER, &self.tests);
        out
    }
}

fn push_section(out: &mut String, marker: &str, body: &str) {
    out.push_str(marker);
    out.push('\n');
    let body = normalize_newlines(body);
    let body = body.trim_end_matches('\n');
    if !body.is_empty() {
        out.push_str(body);
        out.push('\n');
    }
}

pub(crate) fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n")
}

/// Contextual and programming-related keywords for the exercise to generate.
/// Either half may be absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contextual: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub programmatic: Option<Vec<String>>,
}

impl KeywordSet {
    /// Builds a keyword set, trimming and lowercasing every keyword.
    pub fn new(
        contextual: Option<&str>,
        programmatic: Option<&[&str]>,
    ) -> Result<Self, PromptError> {
        let contextual = contextual.map(normalize_keyword).transpose()?;
        let programmatic = programmatic
            .map(|set| set.iter().map(|k| normalize_keyword(k)).collect())
            .transpose()?;
        Ok(Self {
            contextual,
            programmatic,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Re-applies normalization to a deserialized set.
    pub fn normalized(self) -> Result<Self, PromptError> {
        let contextual = self.contextual.as_deref().map(normalize_keyword).transpose()?;
        let programmatic = self
            .programmatic
            .map(|set| set.iter().map(|k| normalize_keyword(k)).collect())
            .transpose()?;
        Ok(Self {
            contextual,
            programmatic,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.contextual.is_none() && self.programmatic.is_none()
    }

    /// Contextual keyword first, then the programmatic ones in order.
    pub fn keywords(&self) -> Vec<&str> {
        self.contextual
            .iter()
            .map(String::as_str)
            .chain(self.programmatic.iter().flatten().map(String::as_str))
            .collect()
    }
}

fn normalize_keyword(raw: &str) -> Result<String, PromptError> {
    let k = raw.trim().to_lowercase();
    if k.is_empty() || k.contains('\n') {
        return Err(PromptError::InvalidKeyword(format!("{raw:?}")));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationStyle {
    StepByStep,
    HighLevel,
    ProblemStatementLike,
}

impl ExplanationStyle {
    pub const ALL: [ExplanationStyle; 3] = [
        ExplanationStyle::StepByStep,
        ExplanationStyle::HighLevel,
        ExplanationStyle::ProblemStatementLike,
    ];

    pub fn header(self) -> &'static str {
        match self {
            ExplanationStyle::StepByStep => "Step-by-step explanation of the above program:",
            ExplanationStyle::HighLevel => "A high-level description of the above program:",
            ExplanationStyle::ProblemStatementLike => "A problem statement for the above program:",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExplanationStyle::StepByStep => "step_by_step",
            ExplanationStyle::HighLevel => "high_level",
            ExplanationStyle::ProblemStatementLike => "problem_statement_like",
        }
    }
}

impl fmt::Display for ExplanationStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExplanationStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "step_by_step" => Ok(Self::StepByStep),
            "high_level" => Ok(Self::HighLevel),
            "problem_statement_like" | "problem_statement" => Ok(Self::ProblemStatementLike),
            other => Err(format!("unknown explanation style `{other}`")),
        }
    }
}

/// A rendered prompt together with the stop sequence the backend must honor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub body: String,
    pub stop_sequence: String,
}

/// Renders the generation prompt: the prime as Exercise 1, then the opening
/// of Exercise 2 with the requested keywords, ending right after the
/// problem-statement marker.
pub fn build_exercise_prompt(
    prime: &PrimingExercise,
    keywords: &KeywordSet,
) -> Result<PromptText, PromptError> {
    prime.validate(false)?;
    let mut body = prime.render_block();
    body.push_str(STOP_SEQUENCE);
    body.push_str("Exercise 2\n");
    if !keywords.is_empty() {
        push_section(&mut body, KEYWORDS_MARKER, &keywords.keywords().join("\n"));
    }
    body.push_str(PROBLEM_STATEMENT_MARKER);
    body.push('\n');
    Ok(PromptText {
        body,
        stop_sequence: STOP_SEQUENCE.to_string(),
    })
}

/// Renders the test-generation prompt: an optional prime as Exercise 1, then
/// the given exercise with its statement and solution, ending right after the
/// tests marker.
pub fn build_test_prompt(
    prime: Option<&PrimingExercise>,
    keywords: &[String],
    problem_statement: &str,
    sample_solution: &str,
) -> Result<PromptText, PromptError> {
    if problem_statement.trim().is_empty() || sample_solution.trim().is_empty() {
        return Err(PromptError::InvalidPrime {
            id: "<test target>".into(),
            reason: "test generation needs a problem statement and a sample solution".into(),
        });
    }
    let mut body = String::new();
    let number = match prime {
        Some(prime) => {
            prime.validate(false)?;
            body.push_str(&prime.render_block());
            2
        }
        None => 1,
    };
    body.push_str(STOP_SEQUENCE);
    body.push_str(&format!("Exercise {number}\n"));
    push_section(&mut body, KEYWORDS_MARKER, &keywords.join("\n"));
    push_section(&mut body, PROBLEM_STATEMENT_MARKER, problem_statement);
    push_section(&mut body, SAMPLE_SOLUTION_MARKER, sample_solution);
    body.push_str(TESTS_MARKER);
    body.push('\n');
    Ok(PromptText {
        body,
        stop_sequence: STOP_SEQUENCE.to_string(),
    })
}

/// Renders an explanation prompt: the code, a blank line, then the fenced
/// style header. Step-by-step prompts end with the primed `1.` enumerator.
pub fn build_explanation_prompt(
    code: &str,
    style: ExplanationStyle,
) -> Result<PromptText, PromptError> {
    let code = normalize_newlines(code);
    let code = code.trim_end();
    if code.trim().is_empty() {
        return Err(PromptError::EmptyCode);
    }
    let mut body = format!("{code}\n\n{STOP_SEQUENCE}{}\n", style.header());
    if style == ExplanationStyle::StepByStep {
        body.push_str("1.");
    }
    Ok(PromptText {
        body,
        stop_sequence: STOP_SEQUENCE.to_string(),
    })
}
