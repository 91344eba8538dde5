use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RubricError;
use crate::digest;

/// Human verdict on one rubric question. `NA` is only valid for the three
/// topicality fields, when the matching concept was not part of the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManualVerdict {
    Yes,
    No,
    Maybe,
    #[serde(rename = "NA")]
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricField {
    Sensible,
    Novel,
    SolutionMatchesStatement,
    TopicMatchesContext,
    UsesFunctionOrClass,
    UsesListOrDictionary,
}

impl RubricField {
    pub const ALL: [RubricField; 6] = [
        RubricField::Sensible,
        RubricField::Novel,
        RubricField::SolutionMatchesStatement,
        RubricField::TopicMatchesContext,
        RubricField::UsesFunctionOrClass,
        RubricField::UsesListOrDictionary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RubricField::Sensible => "sensible",
            RubricField::Novel => "novel",
            RubricField::SolutionMatchesStatement => "solution_matches_statement",
            RubricField::TopicMatchesContext => "topic_matches_context",
            RubricField::UsesFunctionOrClass => "uses_function_or_class",
            RubricField::UsesListOrDictionary => "uses_list_or_dictionary",
        }
    }

    /// Topicality questions are conditional on the concept being requested.
    pub fn allows_not_applicable(self) -> bool {
        matches!(
            self,
            RubricField::TopicMatchesContext
                | RubricField::UsesFunctionOrClass
                | RubricField::UsesListOrDictionary
        )
    }
}

impl fmt::Display for RubricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RubricField {
    type Err = RubricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RubricField::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| RubricError::Validation(format!("unknown rubric field {s:?}")))
    }
}

/// One rater's answers for one bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualRubricRecord {
    /// Digest of the other fields; filled by [`ManualRubricRecord::seal`].
    #[serde(default)]
    pub id: String,
    pub bundle_id: String,
    pub rater_id: String,
    pub sensible: ManualVerdict,
    pub novel: ManualVerdict,
    pub solution_matches_statement: ManualVerdict,
    pub topic_matches_context: ManualVerdict,
    pub uses_function_or_class: ManualVerdict,
    pub uses_list_or_dictionary: ManualVerdict,
    #[serde(default)]
    pub notes: String,
}

impl ManualRubricRecord {
    pub fn get(&self, field: RubricField) -> ManualVerdict {
        match field {
            RubricField::Sensible => self.sensible,
            RubricField::Novel => self.novel,
            RubricField::SolutionMatchesStatement => self.solution_matches_statement,
            RubricField::TopicMatchesContext => self.topic_matches_context,
            RubricField::UsesFunctionOrClass => self.uses_function_or_class,
            RubricField::UsesListOrDictionary => self.uses_list_or_dictionary,
        }
    }

    fn get_mut(&mut self, field: RubricField) -> &mut ManualVerdict {
        match field {
            RubricField::Sensible => &mut self.sensible,
            RubricField::Novel => &mut self.novel,
            RubricField::SolutionMatchesStatement => &mut self.solution_matches_statement,
            RubricField::TopicMatchesContext => &mut self.topic_matches_context,
            RubricField::UsesFunctionOrClass => &mut self.uses_function_or_class,
            RubricField::UsesListOrDictionary => &mut self.uses_list_or_dictionary,
        }
    }

    pub fn validate(&self) -> Result<(), RubricError> {
        if self.bundle_id.trim().is_empty() {
            return Err(RubricError::Validation("bundle_id is empty".into()));
        }
        if self.rater_id.trim().is_empty() {
            return Err(RubricError::Validation("rater_id is empty".into()));
        }
        for field in RubricField::ALL {
            if self.get(field) == ManualVerdict::NotApplicable && !field.allows_not_applicable() {
                return Err(RubricError::Validation(format!("{field} cannot be NA")));
            }
        }
        Ok(())
    }

    /// Validates and assigns the content id.
    pub fn seal(mut self) -> Result<Self, RubricError> {
        self.validate()?;
        self.id = String::new();
        self.id = digest::short_id(&self);
        Ok(self)
    }
}

/// Consensus decision turning a stored Maybe into Yes or No.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusResolution {
    pub record_id: String,
    pub bundle_id: String,
    pub field: RubricField,
    pub resolved: ManualVerdict,
    pub resolvers: Vec<String>,
    #[serde(default)]
    pub rationale: String,
}

impl ConsensusResolution {
    fn validate(&self) -> Result<(), RubricError> {
        if !matches!(self.resolved, ManualVerdict::Yes | ManualVerdict::No) {
            return Err(RubricError::Validation("a resolution must be Yes or No".into()));
        }
        let distinct: BTreeSet<&str> = self
            .resolvers
            .iter()
            .map(|r| r.trim())
            .filter(|r| !r.is_empty())
            .collect();
        if distinct.len() < 2 {
            return Err(RubricError::Validation(
                "a resolution needs at least two distinct resolvers".into(),
            ));
        }
        Ok(())
    }
}

/// Effective answers for one bundle: the chosen rater's latest record with
/// resolutions applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveAssessment {
    pub bundle_id: String,
    pub rater_id: String,
    pub record: ManualRubricRecord,
    pub resolved_fields: Vec<RubricField>,
    pub unresolved_maybes: Vec<RubricField>,
}

/// Append-only log of manual records and resolutions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentLog {
    pub records: Vec<ManualRubricRecord>,
    pub resolutions: Vec<ConsensusResolution>,
}

impl AssessmentLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record, returning it sealed.
    pub fn record(&mut self, record: ManualRubricRecord) -> Result<ManualRubricRecord, RubricError> {
        let record = record.seal()?;
        if !self.records.iter().any(|r| r.id == record.id) {
            self.records.push(record.clone());
        }
        Ok(record)
    }

    pub fn find_record(&self, record_id: &str) -> Option<&ManualRubricRecord> {
        self.records.iter().find(|r| r.id == record_id)
    }

    /// Records a consensus decision. The target field must hold Maybe, and a
    /// different earlier decision for the same field is a conflict.
    pub fn resolve(&mut self, resolution: ConsensusResolution) -> Result<(), RubricError> {
        resolution.validate()?;
        let record = self.find_record(&resolution.record_id).ok_or_else(|| {
            RubricError::Precondition(format!("no record {}", resolution.record_id))
        })?;
        if record.bundle_id != resolution.bundle_id {
            return Err(RubricError::Validation(format!(
                "record {} belongs to bundle {}",
                record.id, record.bundle_id
            )));
        }
        let stored = record.get(resolution.field);
        if stored != ManualVerdict::Maybe {
            return Err(RubricError::Validation(format!(
                "{} is {:?}, only Maybe can be resolved",
                resolution.field, stored
            )));
        }
        if let Some(prior) = self
            .resolutions
            .iter()
            .find(|r| r.record_id == resolution.record_id && r.field == resolution.field)
        {
            if prior.resolved != resolution.resolved {
                return Err(RubricError::Conflict(format!(
                    "{} already resolved to {:?}",
                    resolution.field, prior.resolved
                )));
            }
            return Ok(());
        }
        self.resolutions.push(resolution);
        Ok(())
    }

    /// Rater ids for a bundle in first-appearance order. The first is the
    /// primary rater.
    pub fn raters(&self, bundle_id: &str) -> Vec<&str> {
        let mut seen = Vec::new();
        for r in self.records.iter().filter(|r| r.bundle_id == bundle_id) {
            if !seen.contains(&r.rater_id.as_str()) {
                seen.push(r.rater_id.as_str());
            }
        }
        seen
    }

    /// Effective values for `bundle_id`, using `rater` if given, otherwise
    /// the primary rater.
    pub fn effective(&self, bundle_id: &str, rater: Option<&str>) -> Option<EffectiveAssessment> {
        let rater = match rater {
            Some(r) => r,
            None => self.raters(bundle_id).first().copied()?,
        };
        let record = self
            .records
            .iter()
            .rev()
            .find(|r| r.bundle_id == bundle_id && r.rater_id == rater)?;
        let mut effective = record.clone();
        let mut resolved_fields = Vec::new();
        for res in self.resolutions.iter().filter(|r| r.record_id == record.id) {
            *effective.get_mut(res.field) = res.resolved;
            resolved_fields.push(res.field);
        }
        resolved_fields.sort();
        let unresolved_maybes = RubricField::ALL
            .into_iter()
            .filter(|f| effective.get(*f) == ManualVerdict::Maybe)
            .collect();
        Some(EffectiveAssessment {
            bundle_id: bundle_id.to_string(),
            rater_id: rater.to_string(),
            record: effective,
            resolved_fields,
            unresolved_maybes,
        })
    }
}
