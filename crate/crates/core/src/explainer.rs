//! Code explanations and human line-accuracy scoring.
//!
//! Correctness is judged by people; this module only checks that every step
//! got exactly one verdict and aggregates the counts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GenerationConfig};
use crate::parser::{parse_explanation, Explanation, Provenance};
use crate::prompt::{build_explanation_prompt, ExplanationStyle};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExplainError {
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("step {step} judged more than once")]
    DuplicateJudgment { step: usize },
    #[error("step {step} has no judgment")]
    MissingJudgment { step: usize },
    #[error("step {step} does not exist (explanation has {steps} steps)")]
    UnknownStep { step: usize, steps: usize },
    #[error("judgment set is for explanation {found}, expected {expected}")]
    WrongExplanation { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineVerdict {
    Correct,
    Incorrect,
}

/// Verdict for one explanation step. `step_index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineJudgment {
    pub step_index: usize,
    pub verdict: LineVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl LineJudgment {
    pub fn new(step_index: usize, verdict: LineVerdict) -> Self {
        Self {
            step_index,
            verdict,
            reason: None,
        }
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }
}

/// A rater's full judgment of one explanation, as stored and exchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentSet {
    pub explanation_id: String,
    #[serde(default)]
    pub rater_id: String,
    pub all_parts_explained: bool,
    pub judgments: Vec<LineJudgment>,
}

impl JudgmentSet {
    pub fn score(&self, explanation: &Explanation) -> Result<ExplanationScore, ExplainError> {
        if self.explanation_id != explanation.id {
            return Err(ExplainError::WrongExplanation {
                expected: explanation.id.clone(),
                found: self.explanation_id.clone(),
            });
        }
        score_steps(explanation.steps.len(), &self.judgments, self.all_parts_explained)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplanationScore {
    pub all_parts_explained: bool,
    pub total_lines: usize,
    pub correct_lines: usize,
    pub accuracy: f64,
}

impl ExplanationScore {
    fn from_counts(all_parts_explained: bool, total_lines: usize, correct_lines: usize) -> Self {
        let accuracy = if total_lines == 0 {
            0.0
        } else {
            correct_lines as f64 / total_lines as f64
        };
        Self {
            all_parts_explained,
            total_lines,
            correct_lines,
            accuracy,
        }
    }
}

/// Generates `n_samples` explanations of `code`. Sample `i` is requested with
/// sample index `config.sample + i`; requests run concurrently up to the
/// gateway's in-flight cap. Results keep sample order.
pub fn explain(
    gateway: &Gateway,
    code: &str,
    style: ExplanationStyle,
    config: &GenerationConfig,
    n_samples: u32,
) -> crate::Result<Vec<Explanation>> {
    if n_samples == 0 {
        return Err(ExplainError::NoSamples.into());
    }
    let prompt = build_explanation_prompt(code, style)?;
    config.validate()?;
    let results: Vec<crate::Result<Explanation>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_samples)
            .map(|i| {
                let prompt = &prompt;
                scope.spawn(move || {
                    let sample_config = config.clone().with_sample(config.sample + i);
                    let result = gateway.complete(prompt, &sample_config)?;
                    let mut explanation = parse_explanation(&result.text, style);
                    explanation.source_code = code.to_string();
                    explanation.provenance = Some(Provenance {
                        config: Some(GenerationConfig {
                            stop_sequence: prompt.stop_sequence.clone(),
                            ..sample_config
                        }),
                        backend_id: result.backend_id,
                        timestamp: Some(result.created_at),
                        ..Provenance::default()
                    });
                    explanation.refresh_id();
                    Ok(explanation)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("explanation worker panicked"))
            .collect()
    });
    results.into_iter().collect()
}

/// Scores one explanation from per-step judgments.
pub fn score(
    explanation: &Explanation,
    judgments: &[LineJudgment],
    all_parts_explained: bool,
) -> Result<ExplanationScore, ExplainError> {
    score_steps(explanation.steps.len(), judgments, all_parts_explained)
}

/// Scoring by step count alone; every step in `1..=steps` must be judged
/// exactly once.
pub fn score_steps(
    steps: usize,
    judgments: &[LineJudgment],
    all_parts_explained: bool,
) -> Result<ExplanationScore, ExplainError> {
    let mut seen = BTreeSet::new();
    let mut correct = 0;
    for j in judgments {
        if j.step_index == 0 || j.step_index > steps {
            return Err(ExplainError::UnknownStep {
                step: j.step_index,
                steps,
            });
        }
        if !seen.insert(j.step_index) {
            return Err(ExplainError::DuplicateJudgment { step: j.step_index });
        }
        if j.verdict == LineVerdict::Correct {
            correct += 1;
        }
    }
    if let Some(step) = (1..=steps).find(|s| !seen.contains(s)) {
        return Err(ExplainError::MissingJudgment { step });
    }
    Ok(ExplanationScore::from_counts(all_parts_explained, steps, correct))
}

/// Corpus totals over many scored explanations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    pub explanations: usize,
    pub all_parts_explained: usize,
    pub total_lines: usize,
    pub correct_lines: usize,
}

impl CorpusScore {
    pub fn aggregate<'a>(scores: impl IntoIterator<Item = &'a ExplanationScore>) -> Self {
        let mut out = CorpusScore {
            explanations: 0,
            all_parts_explained: 0,
            total_lines: 0,
            correct_lines: 0,
        };
        for s in scores {
            out.explanations += 1;
            out.all_parts_explained += usize::from(s.all_parts_explained);
            out.total_lines += s.total_lines;
            out.correct_lines += s.correct_lines;
        }
        out
    }

    /// Σ correct / Σ total; 0 when there are no lines.
    pub fn accuracy(&self) -> f64 {
        if self.total_lines == 0 {
            0.0
        } else {
            self.correct_lines as f64 / self.total_lines as f64
        }
    }

    /// Share of explanations flagged as covering all parts; 0 when empty.
    pub fn all_parts_rate(&self) -> f64 {
        if self.explanations == 0 {
            0.0
        } else {
            self.all_parts_explained as f64 / self.explanations as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use LineVerdict::*;

    fn judged(verdicts: &[LineVerdict]) -> Vec<LineJudgment> {
        verdicts
            .iter()
            .enumerate()
            .map(|(i, v)| LineJudgment::new(i + 1, *v))
            .collect()
    }

    #[test]
    fn all_correct_is_full_accuracy() {
        let s = score_steps(3, &judged(&[Correct, Correct, Correct]), true).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert!(s.all_parts_explained);
    }

    #[test]
    fn zero_steps_scores_zero() {
        let s = score_steps(0, &[], false).unwrap();
        assert_eq!((s.total_lines, s.accuracy), (0, 0.0));
    }

    #[test]
    fn coverage_errors() {
        assert_eq!(
            score_steps(2, &judged(&[Correct]), true),
            Err(ExplainError::MissingJudgment { step: 2 })
        );
        let mut dup = judged(&[Correct, Incorrect]);
        dup.push(LineJudgment::new(1, Incorrect));
        assert_eq!(
            score_steps(2, &dup, true),
            Err(ExplainError::DuplicateJudgment { step: 1 })
        );
        assert!(matches!(
            score_steps(1, &[LineJudgment::new(2, Correct)], true),
            Err(ExplainError::UnknownStep { .. })
        ));
    }

    #[test]
    fn order_does_not_matter() {
        let mut j = judged(&[Correct, Incorrect, Correct, Correct]);
        let a = score_steps(4, &j, true).unwrap();
        j.reverse();
        assert_eq!(a, score_steps(4, &j, true).unwrap());
        assert_eq!(a.correct_lines, 3);
    }
}
