//! Flat-file JSON store.
//!
//! ```text
//! <root>/
//!   store.json                       layout version
//!   bundles/<id>.json                content-addressed bundles
//!   assessments/auto/<bundle>.json   latest automated report per bundle
//!   assessments/manual/<bundle>.json manual records and resolutions
//!   explanations/<id>.json
//!   judgments/<explanation>.json     judgment sets, one per rater
//!   cassettes/<name>.jsonl
//!   grids/<id>/...                   spec, checkpoint, summary
//!   jobs/<id>.json
//!   events.jsonl                     append-only event log
//!   locks/<class>.lock
//! ```
//!
//! Documents are written to a temp file in the same directory and renamed
//! into place; readers never see a partial document. Writers of one entity
//! class serialize on an advisory lock file.

mod pack;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explainer::{ExplanationScore, JudgmentSet};
use crate::parser::{ExerciseBundle, Explanation};
use crate::rubric::{
    AssessmentLog, AutoRubricReport, ConsensusResolution, EffectiveAssessment, ManualRubricRecord,
    RubricError,
};

pub use pack::{ExportOutcome, PackFilter, PackManifest};

pub const SCHEMA_VERSION: u32 = 1;

const TMP_PREFIX: &str = ".tmp-";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed document: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{path}: unsupported schema_version {found}")]
    SchemaVersion { path: PathBuf, found: u32 },
    #[error("{class} `{id}` not found")]
    NotFound { class: &'static str, id: String },
    #[error("reference error: {0}")]
    Reference(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid id {0:?}")]
    InvalidId(String),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    Explain(#[from] crate::explainer::ExplainError),
    #[error("archive: {0}")]
    Archive(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize)]
struct DocOut<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    entity: &'a T,
}

#[derive(Deserialize)]
struct DocIn<T> {
    schema_version: u32,
    #[serde(flatten)]
    entity: T,
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreEvent {
    pub at: DateTime<Utc>,
    pub kind: String,
    pub id: String,
}

/// Judgment sets for one explanation, keyed by rater (latest wins).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct JudgmentDoc {
    sets: Vec<JudgmentSet>,
}

/// Entity classes with their own directory and writer lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Bundles,
    AutoAssessments,
    ManualAssessments,
    Explanations,
    Judgments,
    Grids,
    Jobs,
}

impl Class {
    pub fn name(self) -> &'static str {
        match self {
            Class::Bundles => "bundle",
            Class::AutoAssessments => "auto assessment",
            Class::ManualAssessments => "manual assessment",
            Class::Explanations => "explanation",
            Class::Judgments => "judgments",
            Class::Grids => "grid",
            Class::Jobs => "job",
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Class::Bundles => "bundles",
            Class::AutoAssessments => "assessments/auto",
            Class::ManualAssessments => "assessments/manual",
            Class::Explanations => "explanations",
            Class::Judgments => "judgments",
            Class::Grids => "grids",
            Class::Jobs => "jobs",
        }
    }

    fn lock_name(self) -> &'static str {
        match self {
            Class::Bundles => "bundles",
            Class::AutoAssessments => "auto",
            Class::ManualAssessments => "manual",
            Class::Explanations => "explanations",
            Class::Judgments => "judgments",
            Class::Grids => "grids",
            Class::Jobs => "jobs",
        }
    }

    const ALL: [Class; 7] = [
        Class::Bundles,
        Class::AutoAssessments,
        Class::ManualAssessments,
        Class::Explanations,
        Class::Judgments,
        Class::Grids,
        Class::Jobs,
    ];
}

/// Held while writing one entity class. Unlocks on drop.
struct ClassLock(File);

impl Drop for ClassLock {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let store = Self { root: root.into() };
        for class in Class::ALL {
            let dir = store.root.join(class.dir());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        for extra in ["cassettes", "locks"] {
            let dir = store.root.join(extra);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let marker = store.root.join("store.json");
        if marker.exists() {
            let found: serde_json::Value = read_json(&marker)?;
            let version = found["schema_version"].as_u64().unwrap_or(0) as u32;
            if version != SCHEMA_VERSION {
                return Err(StoreError::SchemaVersion {
                    path: marker,
                    found: version,
                });
            }
        } else {
            write_atomic(&marker, br#"{"schema_version":1}"#)?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cassette_path(&self, name: &str) -> Result<PathBuf, StoreError> {
        check_id(name)?;
        Ok(self.root.join("cassettes").join(format!("{name}.jsonl")))
    }

    pub fn grid_dir(&self, grid_id: &str) -> Result<PathBuf, StoreError> {
        check_id(grid_id)?;
        let dir = self.root.join(Class::Grids.dir()).join(grid_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    fn lock(&self, class: Class) -> Result<ClassLock, StoreError> {
        let path = self.root.join("locks").join(format!("{}.lock", class.lock_name()));
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.lock().map_err(io_err(&path))?;
        Ok(ClassLock(file))
    }

    fn doc_path(&self, class: Class, id: &str) -> Result<PathBuf, StoreError> {
        check_id(id)?;
        Ok(self.root.join(class.dir()).join(format!("{id}.json")))
    }

    /// Writes a versioned document under the class lock.
    pub fn put_document<T: Serialize>(
        &self,
        class: Class,
        id: &str,
        entity: &T,
    ) -> Result<(), StoreError> {
        let path = self.doc_path(class, id)?;
        let _lock = self.lock(class)?;
        write_doc(&path, entity)
    }

    pub fn get_document<T: DeserializeOwned>(&self, class: Class, id: &str) -> Result<T, StoreError> {
        let path = self.doc_path(class, id)?;
        if !path.exists() {
            return Err(StoreError::NotFound {
                class: class.name(),
                id: id.to_string(),
            });
        }
        read_doc(&path)
    }

    pub fn contains(&self, class: Class, id: &str) -> bool {
        self.doc_path(class, id).is_ok_and(|p| p.exists())
    }

    /// Ids in a class, sorted. Temp files are skipped.
    pub fn list_ids(&self, class: Class) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(class.dir());
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if name.starts_with(TMP_PREFIX) {
                continue;
            }
            if let Some(id) = name.strip_suffix(".json") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn list_documents<T: DeserializeOwned>(&self, class: Class) -> Result<Vec<T>, StoreError> {
        self.list_ids(class)?
            .iter()
            .map(|id| self.get_document(class, id))
            .collect()
    }

    /// Appends to the event log.
    pub fn log_event(&self, kind: &str, id: &str) -> Result<(), StoreError> {
        let path = self.root.join("events.jsonl");
        let lock_path = self.root.join("locks").join("events.lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        lock.lock().map_err(io_err(&lock_path))?;
        let _guard = ClassLock(lock);
        let event = StoreEvent {
            at: Utc::now(),
            kind: kind.to_string(),
            id: id.to_string(),
        };
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.write_all(line.as_bytes()).map_err(io_err(&path))
    }

    pub fn events(&self) -> Result<Vec<StoreEvent>, StoreError> {
        let path = self.root.join("events.jsonl");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect())
    }

    // Bundles

    /// Stores a bundle under its content id. Re-putting an identical bundle
    /// is a no-op returning the same id.
    pub fn put_bundle(&self, bundle: &ExerciseBundle) -> Result<String, StoreError> {
        let expected = bundle.content_id();
        if bundle.id != expected {
            return Err(StoreError::Integrity(format!(
                "bundle id {} does not match its content ({expected})",
                bundle.id
            )));
        }
        if let Some(parent) = &bundle.provenance.parent_id {
            if !self.contains(Class::Bundles, parent) {
                return Err(StoreError::Reference(format!("parent bundle {parent} not found")));
            }
        }
        let path = self.doc_path(Class::Bundles, &bundle.id)?;
        let _lock = self.lock(Class::Bundles)?;
        if path.exists() {
            return Ok(bundle.id.clone());
        }
        write_doc(&path, bundle)?;
        drop(_lock);
        self.log_event("bundle.put", &bundle.id)?;
        Ok(bundle.id.clone())
    }

    pub fn get_bundle(&self, id: &str) -> Result<ExerciseBundle, StoreError> {
        let bundle: ExerciseBundle = self.get_document(Class::Bundles, id)?;
        if bundle.id != id || bundle.content_id() != id {
            return Err(StoreError::Integrity(format!("bundle document {id} was altered")));
        }
        Ok(bundle)
    }

    pub fn list_bundles(&self) -> Result<Vec<ExerciseBundle>, StoreError> {
        self.list_ids(Class::Bundles)?
            .iter()
            .map(|id| self.get_bundle(id))
            .collect()
    }

    fn require_bundle(&self, id: &str) -> Result<(), StoreError> {
        if self.contains(Class::Bundles, id) {
            Ok(())
        } else {
            Err(StoreError::Reference(format!("bundle {id} not found")))
        }
    }

    // Automated assessments

    pub fn put_auto_report(&self, report: &AutoRubricReport) -> Result<(), StoreError> {
        self.require_bundle(&report.bundle_id)?;
        report
            .check_invariants()
            .map_err(|m| StoreError::Integrity(format!("report {}: {m}", report.bundle_id)))?;
        self.put_document(Class::AutoAssessments, &report.bundle_id, report)?;
        self.log_event("assessment.auto", &report.bundle_id)
    }

    pub fn get_auto_report(&self, bundle_id: &str) -> Result<AutoRubricReport, StoreError> {
        self.get_document(Class::AutoAssessments, bundle_id)
    }

    pub fn find_auto_report(&self, bundle_id: &str) -> Result<Option<AutoRubricReport>, StoreError> {
        match self.get_auto_report(bundle_id) {
            Ok(r) => Ok(Some(r)),
            Err(StoreError::NotFound { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    // Manual assessments

    pub fn assessment_log(&self, bundle_id: &str) -> Result<AssessmentLog, StoreError> {
        match self.get_document(Class::ManualAssessments, bundle_id) {
            Ok(log) => Ok(log),
            Err(StoreError::NotFound { .. }) => Ok(AssessmentLog::default()),
            Err(e) => Err(e),
        }
    }

    fn update_log<R>(
        &self,
        bundle_id: &str,
        f: impl FnOnce(&mut AssessmentLog) -> Result<R, RubricError>,
    ) -> Result<R, StoreError> {
        self.require_bundle(bundle_id)?;
        let path = self.doc_path(Class::ManualAssessments, bundle_id)?;
        let _lock = self.lock(Class::ManualAssessments)?;
        let mut log = self.assessment_log(bundle_id)?;
        let out = f(&mut log)?;
        write_doc(&path, &log)?;
        Ok(out)
    }

    /// Appends a manual record; returns it with its id assigned.
    pub fn record_manual(&self, record: ManualRubricRecord) -> Result<ManualRubricRecord, StoreError> {
        let bundle_id = record.bundle_id.clone();
        let sealed = self.update_log(&bundle_id, |log| log.record(record))?;
        self.log_event("assessment.manual", &sealed.id)?;
        Ok(sealed)
    }

    pub fn resolve_maybe(&self, resolution: ConsensusResolution) -> Result<(), StoreError> {
        let bundle_id = resolution.bundle_id.clone();
        let record_id = resolution.record_id.clone();
        self.update_log(&bundle_id, |log| log.resolve(resolution))?;
        self.log_event("assessment.resolve", &record_id)
    }

    /// Finds a manual record by id across bundles.
    pub fn find_manual_record(&self, record_id: &str) -> Result<ManualRubricRecord, StoreError> {
        for bundle_id in self.list_ids(Class::ManualAssessments)? {
            if let Some(r) = self.assessment_log(&bundle_id)?.find_record(record_id) {
                return Ok(r.clone());
            }
        }
        Err(StoreError::NotFound {
            class: "manual record",
            id: record_id.to_string(),
        })
    }

    pub fn effective_assessment(
        &self,
        bundle_id: &str,
        rater: Option<&str>,
    ) -> Result<Option<EffectiveAssessment>, StoreError> {
        Ok(self.assessment_log(bundle_id)?.effective(bundle_id, rater))
    }

    // Explanations

    pub fn put_explanation(&self, explanation: &Explanation) -> Result<String, StoreError> {
        if explanation.id != explanation.content_id() {
            return Err(StoreError::Integrity(format!(
                "explanation id {} does not match its content",
                explanation.id
            )));
        }
        self.put_document(Class::Explanations, &explanation.id, explanation)?;
        self.log_event("explanation.put", &explanation.id)?;
        Ok(explanation.id.clone())
    }

    pub fn get_explanation(&self, id: &str) -> Result<Explanation, StoreError> {
        self.get_document(Class::Explanations, id)
    }

    pub fn list_explanations(&self) -> Result<Vec<Explanation>, StoreError> {
        self.list_documents(Class::Explanations)
    }

    /// Validates the set against the explanation, stores it (replacing the
    /// same rater's earlier set) and returns the score.
    pub fn put_judgments(&self, set: &JudgmentSet) -> Result<ExplanationScore, StoreError> {
        let explanation = match self.get_explanation(&set.explanation_id) {
            Ok(e) => e,
            Err(StoreError::NotFound { .. }) => {
                return Err(StoreError::Reference(format!(
                    "explanation {} not found",
                    set.explanation_id
                )))
            }
            Err(e) => return Err(e),
        };
        let score = set.score(&explanation)?;
        let path = self.doc_path(Class::Judgments, &set.explanation_id)?;
        let _lock = self.lock(Class::Judgments)?;
        let mut doc: JudgmentDoc = if path.exists() {
            read_doc(&path)?
        } else {
            JudgmentDoc::default()
        };
        doc.sets.retain(|s| s.rater_id != set.rater_id);
        doc.sets.push(set.clone());
        doc.sets.sort_by(|a, b| a.rater_id.cmp(&b.rater_id));
        write_doc(&path, &doc)?;
        drop(_lock);
        self.log_event("judgments.put", &set.explanation_id)?;
        Ok(score)
    }

    pub fn judgments(&self, explanation_id: &str) -> Result<Vec<JudgmentSet>, StoreError> {
        match self.get_document::<JudgmentDoc>(Class::Judgments, explanation_id) {
            Ok(doc) => Ok(doc.sets),
            Err(StoreError::NotFound { .. }) => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }

    /// Builds a zip of the bundles selected by `filter`.
    pub fn export_pack(&self, filter: &PackFilter) -> Result<ExportOutcome, StoreError> {
        pack::export(self, filter)
    }
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

fn write_doc<T: Serialize>(path: &Path, entity: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(&DocOut {
        schema_version: SCHEMA_VERSION,
        entity,
    })
    .map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_doc<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let doc: DocIn<T> = read_json(path)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(StoreError::SchemaVersion {
            path: path.to_path_buf(),
            found: doc.schema_version,
        });
    }
    Ok(doc.entity)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Temp file in the target directory, fsync, rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new()
        .prefix(TMP_PREFIX)
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_bundle, Provenance};

    fn bundle(text: &str) -> ExerciseBundle {
        parse_bundle(text, Provenance::default())
    }

    #[test]
    fn bundle_round_trip_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let b = bundle("--Problem statement--\nAdd.\n--Sample solution--\nx = 1\n");
        let id = store.put_bundle(&b).unwrap();
        assert_eq!(store.put_bundle(&b).unwrap(), id);
        assert_eq!(store.list_ids(Class::Bundles).unwrap(), vec![id.clone()]);
        assert_eq!(store.get_bundle(&id).unwrap(), b);
    }

    #[test]
    fn unknown_id_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(store.get_bundle("abc"), Err(StoreError::NotFound { .. })));
        assert!(matches!(store.get_bundle("../x"), Err(StoreError::InvalidId(_))));
    }

    #[test]
    fn tampered_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut b = bundle("x");
        b.id = "deadbeefdeadbeef".into();
        assert!(matches!(store.put_bundle(&b), Err(StoreError::Integrity(_))));
    }

    #[test]
    fn stray_temp_files_are_invisible() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        fs::write(dir.path().join("bundles").join(".tmp-abc.json"), b"{trunc").unwrap();
        assert!(store.list_bundles().unwrap().is_empty());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let b = bundle("x");
        store.put_bundle(&b).unwrap();
        let path = dir.path().join("bundles").join(format!("{}.json", b.id));
        let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 9");
        fs::write(&path, text).unwrap();
        assert!(matches!(store.get_bundle(&b.id), Err(StoreError::SchemaVersion { found: 9, .. })));
    }
}
