//! Persisted records for long-running service operations.

use chrono::{DateTime, Utc};
use exforge_core::store::{Class, Store};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ApiError, ErrorCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Generate,
    Regenerate,
    Backfill,
    Explain,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum JobState {
    Pending,
    Done { result: Value },
    Failed { error: ApiError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    /// Entity the job acts on, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(flatten)]
    pub state: JobState,
}

impl Job {
    pub fn pending(kind: JobKind, target: Option<String>) -> Self {
        let now = Utc::now();
        Self {
            id: format!("job-{}", uuid::Uuid::new_v4().simple()),
            kind,
            target,
            created_at: now,
            updated_at: now,
            state: JobState::Pending,
        }
    }

    pub fn is_pending(&self) -> bool {
        matches!(self.state, JobState::Pending)
    }

    pub fn finish(&mut self, outcome: Result<Value, ApiError>) {
        self.state = match outcome {
            Ok(result) => JobState::Done { result },
            Err(error) => JobState::Failed { error },
        };
        self.updated_at = Utc::now();
    }
}

pub fn save(store: &Store, job: &Job) -> Result<(), ApiError> {
    Ok(store.put_document(Class::Jobs, &job.id, job)?)
}

pub fn load(store: &Store, id: &str) -> Result<Job, ApiError> {
    Ok(store.get_document(Class::Jobs, id)?)
}

/// Marks jobs left pending by a previous process as failed. Returns how
/// many were changed.
pub fn fail_interrupted(store: &Store) -> Result<usize, ApiError> {
    let mut n = 0;
    for mut job in store.list_documents::<Job>(Class::Jobs)? {
        if job.is_pending() {
            job.finish(Err(ApiError::new(
                ErrorCode::Interrupted,
                "the service stopped before the job finished",
            )));
            save(store, &job)?;
            n += 1;
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn state_is_tagged_inline() {
        let mut job = Job::pending(JobKind::Generate, None);
        let v = serde_json::to_value(&job).unwrap();
        assert_eq!(v["status"], "Pending");
        job.finish(Ok(json!({ "bundle_id": "b" })));
        let v = serde_json::to_value(&job).unwrap();
        assert_eq!(v["status"], "Done");
        assert_eq!(v["result"]["bundle_id"], "b");
        let back: Job = serde_json::from_value(v).unwrap();
        assert_eq!(back, job);
    }

    #[test]
    fn interrupted_jobs_fail_on_restart() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let pending = Job::pending(JobKind::Grid, None);
        let mut done = Job::pending(JobKind::Generate, None);
        done.finish(Ok(json!(null)));
        save(&store, &pending).unwrap();
        save(&store, &done).unwrap();
        assert_eq!(fail_interrupted(&store).unwrap(), 1);
        let reloaded = load(&store, &pending.id).unwrap();
        assert!(
            matches!(reloaded.state, JobState::Failed { ref error } if error.code == ErrorCode::Interrupted)
        );
        assert_eq!(load(&store, &done.id).unwrap(), done);
    }
}
