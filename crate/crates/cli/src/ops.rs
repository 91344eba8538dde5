//! Operations shared by the CLI and the HTTP service. Each one is a thin
//! composition of library calls plus persistence in the store.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use exforge_core::builtin;
use exforge_core::explainer::{self, ExplanationScore, JudgmentSet, LineJudgment};
use exforge_core::gateway::{
    CassetteStore, CompletionBackend, Gateway, GenerationConfig, RecordingBackend, RemoteBackend,
    ReplayBackend,
};
use exforge_core::grid::{self, Checkpoint, GridSpec, SummaryReport};
use exforge_core::parser::{parse_bundle, ExerciseBundle, Explanation, Provenance};
use exforge_core::pipeline::Pipeline;
use exforge_core::prompt::{ExplanationStyle, KeywordSet, PrimeLibrary, PrimingExercise};
use exforge_core::rubric::{
    self, AutoRubricReport, ConsensusResolution, EffectiveAssessment, LoopSuccess,
    ManualRubricRecord, ManualVerdict, RubricError, RubricField, Verdict,
};
use exforge_core::sandbox::{ExecLimits, Sandbox};
use exforge_core::store::{Class, ExportOutcome, PackFilter, Store};
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, Config};
use crate::error::ApiError;

/// Everything an operation needs. Holds no durable state of its own.
pub struct Context {
    pub store: Store,
    pub gateway: Gateway,
    pub sandbox: Sandbox,
    pub limits: ExecLimits,
    pub primes: PrimeLibrary,
    pub generation: GenerationConfig,
    pub budget: u32,
}

impl Context {
    pub fn from_config(config: &Config) -> Result<Self, ApiError> {
        let store = Store::open(&config.store)?;
        let mut primes = PrimeLibrary::builtin();
        if let Some(dir) = &config.primes_dir {
            primes.merge(PrimeLibrary::load_dir(dir)?)?;
        }
        let generation = GenerationConfig {
            max_tokens: config.generation.max_tokens,
            ..GenerationConfig::default()
        }
        .with_model(config.generation.model_id.clone());
        generation.validate()?;
        Ok(Self {
            gateway: build_gateway(config, &store)?,
            sandbox: Sandbox::new(config.sandbox.clone()),
            limits: config.limits.clone(),
            primes,
            generation,
            budget: config.budget,
            store,
        })
    }

    pub fn pipeline(&self) -> Pipeline<'_> {
        Pipeline::new(&self.gateway, &self.sandbox, &self.limits)
    }

    fn prime(&self, id: &str) -> Result<&PrimingExercise, ApiError> {
        self.primes
            .get(id)
            .map_err(|_| ApiError::not_found("prime", id))
    }
}

fn build_gateway(config: &Config, store: &Store) -> Result<Gateway, ApiError> {
    let cassette = || -> Result<Arc<CassetteStore>, ApiError> {
        let path = match &config.backend.cassette {
            Some(p) => p.clone(),
            None => store.cassette_path("default")?,
        };
        Ok(Arc::new(CassetteStore::open(path)?))
    };
    let backend: Arc<dyn CompletionBackend> = match config.backend.kind {
        BackendKind::Replay => Arc::new(ReplayBackend::new(cassette()?)),
        BackendKind::Remote => Arc::new(RemoteBackend::new(config.backend.remote.clone())?),
        BackendKind::Record => Arc::new(RecordingBackend::new(
            Arc::new(RemoteBackend::new(config.backend.remote.clone())?),
            cassette()?,
        )),
    };
    Ok(Gateway::with_max_in_flight(backend, config.backend.max_in_flight))
}

// Exercises

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub prime: String,
    #[serde(default)]
    pub context: Option<String>,
    /// Name of a built-in concept set (`function`, `class`).
    #[serde(default)]
    pub concept_set: Option<String>,
    #[serde(default)]
    pub concepts: Option<Vec<String>>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub sample: Option<u32>,
    /// Regenerate until the tests pass, making at most this many calls.
    #[serde(default)]
    pub budget: Option<u32>,
}

impl GenerateRequest {
    fn keywords(&self) -> Result<KeywordSet, ApiError> {
        let concepts: Option<Vec<String>> = match (&self.concept_set, &self.concepts) {
            (Some(_), Some(_)) => {
                return Err(ApiError::validation("give concept_set or concepts, not both"))
            }
            (Some(name), None) => Some(
                builtin::concept_set(name)
                    .ok_or_else(|| ApiError::validation(format!("unknown concept set `{name}`")))?
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
            (None, c) => c.clone(),
        };
        let refs: Option<Vec<&str>> = concepts
            .as_ref()
            .map(|c| c.iter().map(String::as_str).collect());
        Ok(KeywordSet::new(self.context.as_deref(), refs.as_deref())?)
    }
}

/// A stored bundle with its automated report and the number of backend
/// calls that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub bundle: ExerciseBundle,
    pub report: AutoRubricReport,
    pub attempts: usize,
}

fn save(ctx: &Context, bundle: &ExerciseBundle, report: &AutoRubricReport) -> Result<(), ApiError> {
    ctx.store.put_bundle(bundle)?;
    ctx.store.put_auto_report(report)?;
    Ok(())
}

/// Persists every attempt of a loop, then reports its outcome.
fn finish_loop(
    ctx: &Context,
    outcome: Result<LoopSuccess, RubricError>,
) -> Result<Generated, ApiError> {
    let attempts = match &outcome {
        Ok(s) => &s.attempts,
        Err(e) => e.attempts(),
    };
    for a in attempts {
        save(ctx, &a.bundle, &a.report)?;
    }
    let success = outcome?;
    Ok(Generated {
        attempts: success.attempts.len(),
        bundle: success.bundle,
        report: success.report,
    })
}

pub fn generate(ctx: &Context, req: &GenerateRequest) -> Result<Generated, ApiError> {
    let prime = ctx.prime(&req.prime)?;
    let keywords = req.keywords()?;
    let config = ctx
        .generation
        .clone()
        .with_temperature(req.temperature.unwrap_or(0.0))
        .with_sample(req.sample.unwrap_or(0));
    config.validate()?;
    match req.budget {
        Some(budget) => finish_loop(
            ctx,
            rubric::regenerate_until_valid(&ctx.pipeline(), prime, &keywords, &config, budget),
        ),
        None => {
            let (bundle, report) = ctx.pipeline().generate_and_evaluate(prime, &keywords, &config)?;
            save(ctx, &bundle, &report)?;
            Ok(Generated {
                bundle,
                report,
                attempts: 1,
            })
        }
    }
}

/// Draws fresh candidates with the same prime, keywords and settings as an
/// existing bundle. Sample indices continue after the original's.
pub fn regenerate(ctx: &Context, bundle_id: &str, budget: Option<u32>) -> Result<Generated, ApiError> {
    let original = ctx.store.get_bundle(bundle_id)?;
    let prime_id = original.provenance.prime_id.as_deref().ok_or_else(|| {
        ApiError::validation(format!("bundle {bundle_id} records no prime; it cannot be regenerated"))
    })?;
    let prime = ctx.prime(prime_id)?;
    let base = original
        .provenance
        .config
        .clone()
        .unwrap_or_else(|| ctx.generation.clone());
    let config = base.clone().with_sample(base.sample + 1);
    finish_loop(
        ctx,
        rubric::regenerate_until_valid(
            &ctx.pipeline(),
            prime,
            &original.provenance.keyword_set,
            &config,
            budget.unwrap_or(ctx.budget),
        ),
    )
}

/// Asks the backend for tests for a bundle that has a statement and a
/// solution, keeping the first candidate whose tests pass.
pub fn backfill(ctx: &Context, bundle_id: &str, budget: Option<u32>) -> Result<Generated, ApiError> {
    let bundle = ctx.store.get_bundle(bundle_id)?;
    let prime = match bundle.provenance.prime_id.as_deref() {
        Some(id) => Some(ctx.prime(id)?),
        None => None,
    };
    let config = bundle
        .provenance
        .config
        .clone()
        .unwrap_or_else(|| ctx.generation.clone());
    finish_loop(
        ctx,
        rubric::backfill_tests(
            &ctx.pipeline(),
            &bundle,
            prime,
            &config,
            budget.unwrap_or(ctx.budget),
        ),
    )
}

/// Re-runs the automated rubric on a stored bundle.
pub fn evaluate(ctx: &Context, bundle_id: &str) -> Result<AutoRubricReport, ApiError> {
    let bundle = ctx.store.get_bundle(bundle_id)?;
    let report = ctx.pipeline().evaluate(&bundle)?;
    ctx.store.put_auto_report(&report)?;
    Ok(report)
}

/// Parses raw completion text (for example a hand-written exercise), stores
/// it and evaluates it.
pub fn validate_text(ctx: &Context, raw: &str) -> Result<Generated, ApiError> {
    let bundle = parse_bundle(raw, Provenance::default());
    let report = ctx.pipeline().evaluate(&bundle)?;
    save(ctx, &bundle, &report)?;
    Ok(Generated {
        bundle,
        report,
        attempts: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleView {
    pub bundle: ExerciseBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AutoRubricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<EffectiveAssessment>,
}

pub fn bundle_view(ctx: &Context, id: &str) -> Result<BundleView, ApiError> {
    let bundle = ctx.store.get_bundle(id)?;
    Ok(BundleView {
        report: ctx.store.find_auto_report(id)?,
        assessment: ctx.store.effective_assessment(id, None)?,
        bundle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub id: String,
    pub keywords: Option<Vec<String>>,
    pub problem_statement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests_pass: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleList {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<BundleSummary>,
}

pub fn list_bundles(ctx: &Context, offset: usize, limit: usize) -> Result<BundleList, ApiError> {
    let ids = ctx.store.list_ids(Class::Bundles)?;
    let mut items = Vec::new();
    for id in ids.iter().skip(offset).take(limit) {
        let b = ctx.store.get_bundle(id)?;
        items.push(BundleSummary {
            tests_pass: ctx.store.find_auto_report(id)?.map(|r| r.tests_pass),
            created_at: b.provenance.timestamp,
            id: b.id,
            keywords: b.keywords,
            problem_statement: b.problem_statement,
        });
    }
    Ok(BundleList {
        total: ids.len(),
        offset,
        items,
    })
}

// Manual assessment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentRequest {
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

pub fn record_assessment(
    ctx: &Context,
    bundle_id: &str,
    req: AssessmentRequest,
) -> Result<ManualRubricRecord, ApiError> {
    if !ctx.store.contains(Class::Bundles, bundle_id) {
        return Err(ApiError::not_found("bundle", bundle_id));
    }
    let record = ManualRubricRecord {
        id: String::new(),
        bundle_id: bundle_id.to_string(),
        rater_id: req.rater_id,
        sensible: req.sensible,
        novel: req.novel,
        solution_matches_statement: req.solution_matches_statement,
        topic_matches_context: req.topic_matches_context,
        uses_function_or_class: req.uses_function_or_class,
        uses_list_or_dictionary: req.uses_list_or_dictionary,
        notes: req.notes,
    };
    Ok(ctx.store.record_manual(record)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolveRequest {
    pub field: RubricField,
    pub resolved: ManualVerdict,
    pub resolvers: Vec<String>,
    #[serde(default)]
    pub rationale: String,
}

/// Resolves a Maybe on a stored record; returns the record's effective
/// assessment afterwards.
pub fn resolve(
    ctx: &Context,
    record_id: &str,
    req: ResolveRequest,
) -> Result<EffectiveAssessment, ApiError> {
    let record = ctx.store.find_manual_record(record_id)?;
    ctx.store.resolve_maybe(ConsensusResolution {
        record_id: record.id.clone(),
        bundle_id: record.bundle_id.clone(),
        field: req.field,
        resolved: req.resolved,
        resolvers: req.resolvers,
        rationale: req.rationale,
    })?;
    ctx.store
        .effective_assessment(&record.bundle_id, Some(&record.rater_id))?
        .ok_or_else(|| ApiError::internal("resolved record has no effective assessment"))
}

// Explanations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    /// Source to explain; alternatively `program` names a built-in one.
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub program: Option<String>,
    #[serde(default = "default_style")]
    pub style: ExplanationStyle,
    #[serde(default = "one")]
    pub samples: u32,
    #[serde(default)]
    pub temperature: Option<f64>,
}

fn default_style() -> ExplanationStyle {
    ExplanationStyle::StepByStep
}

fn one() -> u32 {
    1
}

pub fn builtin_program(name: &str) -> Option<&'static str> {
    match name {
        "fisherman" => Some(builtin::programs::FISHERMAN),
        other => builtin::programs::EXPLANATION_SET
            .iter()
            .find(|(n, _)| *n == other)
            .map(|(_, code)| *code),
    }
}

pub fn explain(ctx: &Context, req: &ExplainRequest) -> Result<Vec<Explanation>, ApiError> {
    let code = match (&req.code, &req.program) {
        (Some(code), None) => code.as_str(),
        (None, Some(name)) => {
            builtin_program(name).ok_or_else(|| ApiError::not_found("program", name))?
        }
        _ => return Err(ApiError::validation("give exactly one of code or program")),
    };
    let config = ctx
        .generation
        .clone()
        .with_temperature(req.temperature.unwrap_or(0.0));
    let explanations = explainer::explain(&ctx.gateway, code, req.style, &config, req.samples)?;
    for e in &explanations {
        ctx.store.put_explanation(e)?;
    }
    Ok(explanations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeRequest {
    pub rater_id: String,
    pub all_parts_explained: bool,
    pub judgments: Vec<LineJudgment>,
}

pub fn judge(
    ctx: &Context,
    explanation_id: &str,
    req: JudgeRequest,
) -> Result<ExplanationScore, ApiError> {
    if !ctx.store.contains(Class::Explanations, explanation_id) {
        return Err(ApiError::not_found("explanation", explanation_id));
    }
    Ok(ctx.store.put_judgments(&JudgmentSet {
        explanation_id: explanation_id.to_string(),
        rater_id: req.rater_id,
        all_parts_explained: req.all_parts_explained,
        judgments: req.judgments,
    })?)
}

// Grids

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRequest {
    /// Reusing an id resumes that grid from its checkpoint.
    #[serde(default)]
    pub id: Option<String>,
    /// Defaults to the 240-job grid over the built-in keyword themes.
    #[serde(default)]
    pub spec: Option<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub job: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub id: String,
    pub spec: GridSpec,
    pub summary: SummaryReport,
    pub bundle_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<JobError>,
    pub completed_at: DateTime<Utc>,
}

pub fn run_grid(ctx: &Context, req: GridRequest) -> Result<GridRecord, ApiError> {
    let spec = req.spec.unwrap_or_else(GridSpec::standard).resolved()?;
    let id = req
        .id
        .unwrap_or_else(|| format!("grid-{}", exforge_core::digest::short_id(&spec)));
    let jobs = grid::build_grid(&spec)?;
    let checkpoint = Checkpoint::open(ctx.store.grid_dir(&id)?.join("checkpoint.jsonl"))?;
    let results = grid::run_grid(
        &ctx.pipeline(),
        &ctx.primes,
        &jobs,
        &ctx.generation,
        Some(&checkpoint),
    )?;
    let mut bundle_ids = Vec::new();
    let mut errors = Vec::new();
    for r in &results {
        if let Some(bundle) = &r.bundle {
            ctx.store.put_bundle(bundle)?;
            bundle_ids.push(bundle.id.clone());
        }
        if let Some(report) = &r.report {
            ctx.store.put_auto_report(report)?;
        }
        if let Some(error) = &r.error {
            errors.push(JobError {
                job: r.job.key(),
                error: error.clone(),
            });
        }
    }
    let record = GridRecord {
        summary: SummaryReport::from_results(&results),
        id: id.clone(),
        spec,
        bundle_ids,
        errors,
        completed_at: Utc::now(),
    };
    ctx.store.put_document(Class::Grids, &id, &record)?;
    ctx.store.log_event("grid.complete", &id)?;
    Ok(record)
}

pub fn grid_record(ctx: &Context, id: &str) -> Result<GridRecord, ApiError> {
    Ok(ctx.store.get_document(Class::Grids, id)?)
}

/// The most recently completed grid.
pub fn latest_grid_id(ctx: &Context) -> Result<String, ApiError> {
    ctx.store
        .events()?
        .into_iter()
        .rev()
        .find(|e| e.kind == "grid.complete")
        .map(|e| e.id)
        .ok_or_else(|| ApiError::new(crate::error::ErrorCode::NotFound, "no grid has been run"))
}

// Export

/// Builds a pack filter from `key=value` pairs: `tests_pass`,
/// `solution_runnable`, `min_coverage`, `rater`, `bundle_ids` (comma
/// separated) and any manual rubric field.
pub fn filter_from_pairs<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<PackFilter, ApiError> {
    fn verdict<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T, ApiError> {
        serde_json::from_value(serde_json::Value::String(value.to_string()))
            .map_err(|_| ApiError::validation(format!("invalid value `{value}` for {key}")))
    }
    let mut filter = PackFilter::default();
    let mut manual = BTreeMap::new();
    for (key, value) in pairs {
        match key {
            "tests_pass" => filter.tests_pass = Some(verdict(key, value)?),
            "solution_runnable" => filter.solution_runnable = Some(verdict(key, value)?),
            "min_coverage" => {
                let v: f64 = value
                    .parse()
                    .ok()
                    .filter(|v| (0.0..=1.0).contains(v))
                    .ok_or_else(|| ApiError::validation("min_coverage must be in [0, 1]"))?;
                filter.min_coverage = Some(v);
            }
            "rater" => filter.rater = Some(value.to_string()),
            "bundle_ids" => {
                filter.bundle_ids = Some(value.split(',').map(|s| s.trim().to_string()).collect())
            }
            other => {
                let field: RubricField = other
                    .parse()
                    .map_err(|_| ApiError::validation(format!("unknown filter `{other}`")))?;
                manual.insert(field, verdict(key, value)?);
            }
        }
    }
    filter.manual = manual;
    Ok(filter)
}

pub fn export(ctx: &Context, filter: &PackFilter) -> Result<ExportOutcome, ApiError> {
    let outcome = ctx.store.export_pack(filter)?;
    if let ExportOutcome::Pack { manifest, .. } = &outcome {
        ctx.store.log_event("export", &manifest.sha256)?;
    }
    Ok(outcome)
}
