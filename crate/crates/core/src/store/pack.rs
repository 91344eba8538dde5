use std::collections::BTreeMap;
use std::io::{Cursor, Write};

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipWriter};

use super::{Store, StoreError};
use crate::digest;
use crate::parser::ExerciseBundle;
use crate::rubric::{AutoRubricReport, EffectiveAssessment, ManualVerdict, RubricField, Verdict};

/// Selection criteria for a pack. Every set criterion must hold. Manual
/// criteria use the effective assessment (primary rater unless `rater` is
/// set); a bundle with no manual record fails any manual criterion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PackFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests_pass: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution_runnable: Option<Verdict>,
    /// Minimum statement coverage fraction, 0..=1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub manual: BTreeMap<RubricField, ManualVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rater: Option<String>,
    /// Restrict to these bundles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_ids: Option<Vec<String>>,
}

impl PackFilter {
    pub fn passing() -> Self {
        Self {
            tests_pass: Some(Verdict::Yes),
            ..Self::default()
        }
    }

    fn needs_report(&self) -> bool {
        self.tests_pass.is_some() || self.solution_runnable.is_some() || self.min_coverage.is_some()
    }

    fn accepts(
        &self,
        bundle: &ExerciseBundle,
        report: Option<&AutoRubricReport>,
        manual: Option<&EffectiveAssessment>,
    ) -> bool {
        if let Some(ids) = &self.bundle_ids {
            if !ids.contains(&bundle.id) {
                return false;
            }
        }
        if self.needs_report() {
            let Some(r) = report else { return false };
            if self.tests_pass.is_some_and(|v| r.tests_pass != v)
                || self.solution_runnable.is_some_and(|v| r.solution_runnable != v)
            {
                return false;
            }
            if let Some(min) = self.min_coverage {
                if r.coverage_fraction().is_none_or(|f| f < min) {
                    return false;
                }
            }
        }
        if !self.manual.is_empty() {
            let Some(m) = manual else { return false };
            if self.manual.iter().any(|(f, v)| m.record.get(*f) != *v) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackManifest {
    pub count: usize,
    pub bundle_ids: Vec<String>,
    /// sha256 of the archive bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExportOutcome {
    Pack { archive: Vec<u8>, manifest: PackManifest },
    /// Nothing matched the filter.
    Empty,
}

#[derive(Serialize)]
struct Metadata<'a> {
    schema_version: u32,
    bundle_id: &'a str,
    keywords: &'a Option<Vec<String>>,
    provenance: &'a crate::parser::Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    auto_report: Option<&'a AutoRubricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    manual: Option<&'a EffectiveAssessment>,
}

fn statement_markdown(bundle: &ExerciseBundle) -> String {
    let mut out = format!("# Exercise {}\n\n", bundle.id);
    if let Some(k) = bundle.keywords.as_ref().filter(|k| !k.is_empty()) {
        out.push_str(&format!("Keywords: {}\n\n", k.join(", ")));
    }
    out.push_str(bundle.problem_statement.as_deref().unwrap_or("").trim());
    out.push('\n');
    out
}

fn with_newline(s: Option<&str>) -> String {
    let mut s = s.unwrap_or("").trim_end().to_string();
    s.push('\n');
    s
}

pub(super) fn export(store: &Store, filter: &PackFilter) -> Result<ExportOutcome, StoreError> {
    let mut selected = Vec::new();
    for bundle in store.list_bundles()? {
        let report = store.find_auto_report(&bundle.id)?;
        let manual = store.effective_assessment(&bundle.id, filter.rater.as_deref())?;
        if filter.accepts(&bundle, report.as_ref(), manual.as_ref()) {
            selected.push((bundle, report, manual));
        }
    }
    if selected.is_empty() {
        return Ok(ExportOutcome::Empty);
    }

    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let zip_err = |e: zip::result::ZipError| StoreError::Archive(e.to_string());
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let mut ids = Vec::new();
    for (bundle, report, manual) in &selected {
        let metadata = Metadata {
            schema_version: super::SCHEMA_VERSION,
            bundle_id: &bundle.id,
            keywords: &bundle.keywords,
            provenance: &bundle.provenance,
            auto_report: report.as_ref(),
            manual: manual.as_ref(),
        };
        let mut meta = serde_json::to_string_pretty(&metadata).expect("metadata serializes");
        meta.push('\n');
        let files = [
            ("statement.md", statement_markdown(bundle)),
            ("solution.py", with_newline(bundle.sample_solution.as_deref())),
            ("tests.py", with_newline(bundle.tests.as_deref())),
            ("metadata.json", meta),
        ];
        for (name, body) in files {
            zip.start_file(format!("{}/{name}", bundle.id), options)
                .map_err(zip_err)?;
            zip.write_all(body.as_bytes())
                .map_err(|e| StoreError::Archive(e.to_string()))?;
        }
        ids.push(bundle.id.clone());
    }
    let archive = zip.finish().map_err(zip_err)?.into_inner();
    let manifest = PackManifest {
        count: ids.len(),
        bundle_ids: ids,
        sha256: digest::sha256_hex(&archive),
    };
    Ok(ExportOutcome::Pack { archive, manifest })
}
