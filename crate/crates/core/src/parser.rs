//! Tolerant extraction of exercise sections and explanation steps.
//!
//! A section starts at a line that is exactly one of the four markers and runs
//! to the next marker, a closing fence line, or the end of the text. Markers
//! embedded in other lines are plain content. Completions begin in the middle
//! of a problem statement, so unmarked leading text is the problem statement.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::gateway::GenerationConfig;
use crate::prompt::{
    ExplanationStyle, KeywordSet, KEYWORDS_MARKER, PROBLEM_STATEMENT_MARKER,
    SAMPLE_SOLUTION_MARKER, STOP_SEQUENCE, TESTS_MARKER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Keywords,
    ProblemStatement,
    SampleSolution,
    Tests,
}

impl SectionKind {
    pub fn marker(self) -> &'static str {
        match self {
            SectionKind::Keywords => KEYWORDS_MARKER,
            SectionKind::ProblemStatement => PROBLEM_STATEMENT_MARKER,
            SectionKind::SampleSolution => SAMPLE_SOLUTION_MARKER,
            SectionKind::Tests => TESTS_MARKER,
        }
    }

    fn from_line(line: &str) -> Option<Self> {
        match line {
            KEYWORDS_MARKER => Some(SectionKind::Keywords),
            PROBLEM_STATEMENT_MARKER => Some(SectionKind::ProblemStatement),
            SAMPLE_SOLUTION_MARKER => Some(SectionKind::SampleSolution),
            TESTS_MARKER => Some(SectionKind::Tests),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// A marker seen a second time; its content was discarded.
    DuplicateMarker { section: SectionKind, line: usize },
    /// Step enumerators skipped or repeated a number.
    NonContiguousStep { position: usize, expected: u32, found: u32 },
    /// An enumerator with no text after it.
    EmptyStep { number: u32 },
}

/// Borrowed view of the sections found in a text.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Sections<'a> {
    pub keywords: Option<Vec<String>>,
    pub problem_statement: Option<&'a str>,
    pub sample_solution: Option<&'a str>,
    pub tests: Option<&'a str>,
    pub warnings: Vec<ParseWarning>,
}

fn is_fence(line: &str) -> bool {
    line == STOP_SEQUENCE || line.starts_with("\"\"\"Exercise")
}

/// Yields `(line_without_newline, start, end_of_line, start_of_next_line)`.
fn lines_with_offsets(text: &str) -> impl Iterator<Item = (&str, usize, usize)> + '_ {
    let mut pos = 0;
    std::iter::from_fn(move || {
        if pos >= text.len() {
            return None;
        }
        let start = pos;
        let (end, next) = match text[start..].find('\n') {
            Some(i) => (start + i, start + i + 1),
            None => (text.len(), text.len()),
        };
        pos = next;
        let line = text[start..end].strip_suffix('\r').unwrap_or(&text[start..end]);
        Some((line, start, next))
    })
}

/// Splits `text` into its marked sections. Never fails.
pub fn split_sections(text: &str) -> Sections<'_> {
    let mut out = Sections::default();
    // (kind, body start) of the open section; None kind = discarded duplicate
    let mut open: Option<(Option<SectionKind>, usize)> = None;
    let mut leading_start = 0;
    let mut end_of_content = text.len();

    let mut closed: Vec<(SectionKind, usize, usize)> = Vec::new();
    let mut leading: Option<(usize, usize)> = None;
    let mut seen = Vec::new();

    for (index, (line, start, next)) in lines_with_offsets(text).enumerate() {
        if index == 0 && line.starts_with("\"\"\"Exercise") {
            leading_start = next;
            continue;
        }
        if let Some(kind) = SectionKind::from_line(line) {
            match open.take() {
                Some((Some(k), body)) => closed.push((k, body, start)),
                Some((None, _)) => {}
                None => leading = Some((leading_start, start)),
            }
            if seen.contains(&kind) {
                out.warnings.push(ParseWarning::DuplicateMarker {
                    section: kind,
                    line: index + 1,
                });
                open = Some((None, next));
            } else {
                seen.push(kind);
                open = Some((Some(kind), next));
            }
        } else if is_fence(line) {
            end_of_content = start;
            break;
        }
    }
    match open {
        Some((Some(k), body)) => closed.push((k, body, end_of_content)),
        Some((None, _)) => {}
        None => leading = Some((leading_start, end_of_content)),
    }

    if let Some((s, e)) = leading {
        let body = text[s..e].trim();
        if !body.is_empty() {
            out.problem_statement = Some(body);
        }
    }
    for (kind, s, e) in closed {
        let body = text[s.min(e)..e].trim();
        match kind {
            SectionKind::Keywords => {
                out.keywords = Some(
                    body.lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(str::to_string)
                        .collect(),
                )
            }
            SectionKind::ProblemStatement => {
                if out.problem_statement.is_some() {
                    let line = text[..s].lines().count();
                    out.warnings.push(ParseWarning::DuplicateMarker { section: kind, line });
                } else {
                    out.problem_statement = Some(body);
                }
            }
            SectionKind::SampleSolution => out.sample_solution = Some(body),
            SectionKind::Tests => out.tests = Some(body),
        }
    }
    out
}

/// Where a bundle came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prime_id: Option<String>,
    #[serde(default)]
    pub keyword_set: KeywordSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GenerationConfig>,
    #[serde(default)]
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    /// Bundle this one was derived from (test backfill).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

/// One generated exercise: the extracted sections, the raw completion and
/// its provenance. The id is a digest of everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseBundle {
    pub id: String,
    pub keywords: Option<Vec<String>>,
    pub problem_statement: Option<String>,
    pub sample_solution: Option<String>,
    pub tests: Option<String>,
    pub raw_text: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ParseWarning>,
}

#[derive(Serialize)]
struct BundleContent<'a> {
    keywords: &'a Option<Vec<String>>,
    problem_statement: &'a Option<String>,
    sample_solution: &'a Option<String>,
    tests: &'a Option<String>,
    raw_text: &'a str,
    provenance: &'a Provenance,
}

impl ExerciseBundle {
    /// Digest of the bundle content, excluding the id itself.
    pub fn content_id(&self) -> String {
        digest::short_id(&BundleContent {
            keywords: &self.keywords,
            problem_statement: &self.problem_statement,
            sample_solution: &self.sample_solution,
            tests: &self.tests,
            raw_text: &self.raw_text,
            provenance: &self.provenance,
        })
    }

    /// Recomputes `id` after a field was changed.
    pub fn refresh_id(&mut self) {
        self.id = self.content_id();
    }

    pub fn has_sample_solution(&self) -> bool {
        non_blank(&self.sample_solution)
    }

    pub fn has_tests(&self) -> bool {
        non_blank(&self.tests)
    }

    pub fn has_problem_statement(&self) -> bool {
        non_blank(&self.problem_statement)
    }

    /// Renders the sections back into marker form (no leading header, no fence).
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = |marker: &str, body: Option<&str>| {
            if let Some(body) = body {
                out.push_str(marker);
                out.push('\n');
                if !body.is_empty() {
                    out.push_str(body);
                    out.push('\n');
                }
            }
        };
        let keywords = self.keywords.as_ref().map(|k| k.join("\n"));
        section(KEYWORDS_MARKER, keywords.as_deref());
        section(PROBLEM_STATEMENT_MARKER, self.problem_statement.as_deref());
        section(SAMPLE_SOLUTION_MARKER, self.sample_solution.as_deref());
        section(TESTS_MARKER, self.tests.as_deref());
        out
    }
}

fn non_blank(section: &Option<String>) -> bool {
    section.as_deref().is_some_and(|s| !s.trim().is_empty())
}

/// Parses a raw completion into a bundle. Total: any text is accepted.
pub fn parse_bundle(raw: &str, provenance: Provenance) -> ExerciseBundle {
    let sections = split_sections(raw);
    let mut bundle = ExerciseBundle {
        id: String::new(),
        keywords: sections.keywords,
        problem_statement: sections.problem_statement.map(str::to_string),
        sample_solution: sections.sample_solution.map(str::to_string),
        tests: sections.tests.map(str::to_string),
        raw_text: raw.to_string(),
        provenance,
        warnings: sections.warnings,
    };
    bundle.refresh_id();
    bundle
}

/// Text before the first marker or fence, trimmed. Used when the prompt
/// ended at a marker and the completion is that section's body.
pub fn leading_section(raw: &str) -> &str {
    let mut end = raw.len();
    for (line, start, _) in lines_with_offsets(raw) {
        if SectionKind::from_line(line).is_some() || is_fence(line) {
            end = start;
            break;
        }
    }
    raw[..end].trim()
}

/// A generated code explanation split into steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub id: String,
    pub source_code: String,
    pub style: ExplanationStyle,
    pub steps: Vec<String>,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ParseWarning>,
}

#[derive(Serialize)]
struct ExplanationContent<'a> {
    source_code: &'a str,
    style: ExplanationStyle,
    raw_text: &'a str,
    provenance: &'a Option<Provenance>,
}

impl Explanation {
    pub fn content_id(&self) -> String {
        digest::short_id(&ExplanationContent {
            source_code: &self.source_code,
            style: self.style,
            raw_text: &self.raw_text,
            provenance: &self.provenance,
        })
    }

    pub fn refresh_id(&mut self) {
        self.id = self.content_id();
    }
}

fn enumerator(line: &str) -> Option<(u32, &str)> {
    let trimmed = line.trim_start();
    let digits = trimmed.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 6 {
        return None;
    }
    let rest = trimmed[digits..].strip_prefix('.')?;
    if !(rest.is_empty() || rest.starts_with(char::is_whitespace)) {
        return None;
    }
    Some((trimmed[..digits].parse().ok()?, rest.trim()))
}

/// Parses an explanation completion. Step-by-step text is split on
/// line-leading `N.` enumerators; the prompt already supplied `1.`, so
/// unnumbered leading text is step 1. Other styles yield a single step.
pub fn parse_explanation(raw: &str, style: ExplanationStyle) -> Explanation {
    let mut explanation = Explanation {
        id: String::new(),
        source_code: String::new(),
        style,
        steps: Vec::new(),
        raw_text: raw.to_string(),
        provenance: None,
        warnings: Vec::new(),
    };
    let body = {
        let mut end = raw.len();
        for (line, start, _) in lines_with_offsets(raw) {
            if line.trim() == STOP_SEQUENCE {
                end = start;
                break;
            }
        }
        &raw[..end]
    };

    if style != ExplanationStyle::StepByStep {
        let text = body.trim();
        if !text.is_empty() {
            explanation.steps.push(text.to_string());
        }
        explanation.refresh_id();
        return explanation;
    }

    let mut numbered: Vec<(u32, String)> = Vec::new();
    let mut current: Option<(u32, Vec<&str>)> = None;
    for (line, _, _) in lines_with_offsets(body) {
        if let Some((n, text)) = enumerator(line) {
            if let Some((num, parts)) = current.take() {
                numbered.push((num, parts.join("\n")));
            }
            current = Some((n, vec![text]));
        } else {
            match current.as_mut() {
                Some((_, parts)) => parts.push(line.trim()),
                None if line.trim().is_empty() => {}
                None => current = Some((1, vec![line.trim()])),
            }
        }
    }
    if let Some((num, parts)) = current.take() {
        numbered.push((num, parts.join("\n")));
    }

    let mut expected = 1;
    for (number, text) in numbered {
        let text = text.trim().to_string();
        if text.is_empty() {
            explanation.warnings.push(ParseWarning::EmptyStep { number });
            continue;
        }
        if number != expected {
            explanation.warnings.push(ParseWarning::NonContiguousStep {
                position: explanation.steps.len() + 1,
                expected,
                found: number,
            });
        }
        expected = number.saturating_add(1);
        explanation.steps.push(text);
    }
    explanation.refresh_id();
    explanation
}
