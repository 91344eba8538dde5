//! Cartesian generation grids and their summary statistics.
//!
//! A grid is contexts × concept sets × primes × temperatures × repeats.
//! "none" is an explicit member of the context and concept-set dimensions.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builtin;
use crate::gateway::GenerationConfig;
use crate::parser::ExerciseBundle;
use crate::pipeline::Pipeline;
use crate::prompt::{KeywordSet, PrimeLibrary};
use crate::rubric::{AutoRubricReport, Verdict};
use crate::sandbox::SandboxError;

/// Literal used for the "leave it out" member of a dimension.
pub const NONE: &str = "none";

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("grid aborted: {0}")]
    Infrastructure(#[source] SandboxError),
}

/// A named list of programming concepts. The set named `none` must be empty
/// and means no programmatic keywords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub name: String,
    #[serde(default)]
    pub concepts: Vec<String>,
}

impl ConceptSet {
    pub fn none() -> Self {
        Self {
            name: NONE.into(),
            concepts: Vec::new(),
        }
    }

    /// A built-in set (`function` or `class`) by name.
    pub fn builtin(name: &str) -> Option<Self> {
        builtin::concept_set(name).map(|c| Self {
            name: name.into(),
            concepts: c.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn is_none(&self) -> bool {
        self.name == NONE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Contextual keywords; include `"none"` for the no-context member.
    pub contexts: Vec<String>,
    pub concept_sets: Vec<ConceptSet>,
    pub primes: Vec<String>,
    pub temperatures: Vec<f64>,
    pub repeats: u32,
}

impl GridSpec {
    /// Nine contexts plus none, two concept sets plus none, both built-in
    /// primes, temperatures 0 and 0.75, two repeats.
    pub fn standard() -> Self {
        let mut contexts: Vec<String> = builtin::CONTEXTS.iter().map(|s| s.to_string()).collect();
        contexts.push(NONE.into());
        Self {
            contexts,
            concept_sets: vec![
                ConceptSet::builtin("function").expect("built-in set"),
                ConceptSet::builtin("class").expect("built-in set"),
                ConceptSet::none(),
            ],
            primes: builtin::PRIME_FILES.iter().map(|(id, _)| id.to_string()).collect(),
            temperatures: vec![0.0, 0.75],
            repeats: 2,
        }
    }

    /// Parses a TOML spec. A concept set given only by name resolves to the
    /// built-in set of that name.
    pub fn from_toml(text: &str) -> Result<Self, GridError> {
        let spec: GridSpec =
            toml::from_str(text).map_err(|e| GridError::InvalidSpec(e.to_string()))?;
        spec.resolved()
    }

    /// Fills concept sets given only by name from the built-in sets, then
    /// validates.
    pub fn resolved(mut self) -> Result<Self, GridError> {
        for set in &mut self.concept_sets {
            if set.concepts.is_empty() && !set.is_none() {
                *set = ConceptSet::builtin(&set.name).ok_or_else(|| {
                    GridError::InvalidSpec(format!("concept set `{}` has no concepts", set.name))
                })?;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: &str| Err(GridError::InvalidSpec(m.to_string()));
        if self.contexts.is_empty() {
            return bad("contexts is empty");
        }
        if self.concept_sets.is_empty() {
            return bad("concept_sets is empty");
        }
        if self.primes.is_empty() {
            return bad("primes is empty");
        }
        if self.temperatures.is_empty() {
            return bad("temperatures is empty");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(GridError::InvalidSpec(format!("temperature {t} out of range")));
        }
        for set in &self.concept_sets {
            if set.is_none() != set.concepts.is_empty() {
                return Err(GridError::InvalidSpec(format!(
                    "concept set `{}`: only `none` may be empty",
                    set.name
                )));
            }
        }
        for c in &self.contexts {
            if c.trim().is_empty() {
                return bad("blank context");
            }
        }
        Ok(())
    }

    pub fn job_count(&self) -> usize {
        self.contexts.len()
            * self.concept_sets.len()
            * self.primes.len()
            * self.temperatures.len()
            * self.repeats as usize
    }
}

/// Coordinates of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridJob {
    pub context: Option<String>,
    pub concept_set: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concepts: Vec<String>,
    pub prime_id: String,
    pub temperature: f64,
    pub repeat_index: u32,
}

impl GridJob {
    /// Stable key used for checkpoint lookup.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{:.4}|{}",
            self.context.as_deref().unwrap_or(NONE),
            self.concept_set.as_deref().unwrap_or(NONE),
            self.prime_id,
            self.temperature,
            self.repeat_index
        )
    }

    pub fn keywords(&self) -> Result<KeywordSet, crate::prompt::PromptError> {
        let concepts: Vec<&str> = self.concepts.iter().map(String::as_str).collect();
        KeywordSet::new(
            self.context.as_deref(),
            (!concepts.is_empty()).then_some(concepts.as_slice()),
        )
    }
}

/// Enumerates the jobs in nested order: context, concept set, prime,
/// temperature, repeat (the last varies fastest).
pub fn build_grid(spec: &GridSpec) -> Result<Vec<GridJob>, GridError> {
    spec.validate()?;
    let mut jobs = Vec::with_capacity(spec.job_count());
    for context in &spec.contexts {
        for set in &spec.concept_sets {
            for prime in &spec.primes {
                for &temperature in &spec.temperatures {
                    for repeat_index in 0..spec.repeats {
                        jobs.push(GridJob {
                            context: (context != NONE).then(|| context.clone()),
                            concept_set: (!set.is_none()).then(|| set.name.clone()),
                            concepts: set.concepts.clone(),
                            prime_id: prime.clone(),
                            temperature,
                            repeat_index,
                        });
                    }
                }
            }
        }
    }
    Ok(jobs)
}

/// Outcome of one job. Exactly one of `report` / `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub job: GridJob,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<ExerciseBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AutoRubricReport>,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GridResult {
    pub fn bundle_id(&self) -> Option<&str> {
        self.bundle.as_ref().map(|b| b.id.as_str())
    }
}

/// JSON-lines file of completed results. Only successful results are
/// written, so errored jobs are retried on resume. A torn final line is
/// ignored.
#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    done: HashMap<String, GridResult>,
    file: Mutex<File>,
}

impl Checkpoint {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GridError> {
        let path = path.into();
        let err = |e: std::io::Error| GridError::Checkpoint {
            path: path.clone(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(err)?;
        }
        let mut done = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(err)?);
            for line in reader.lines() {
                let line = line.map_err(err)?;
                match serde_json::from_str::<GridResult>(&line) {
                    Ok(r) if r.error.is_none() => {
                        done.insert(r.job.key(), r);
                    }
                    Ok(_) => {}
                    Err(e) => tracing::warn!(path = %path.display(), "skipping bad checkpoint line: {e}"),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(err)?;
        // Terminate a torn line so the next append starts fresh.
        if fs::read(&path).map_err(err)?.last().is_some_and(|b| *b != b'\n') {
            file.write_all(b"\n").map_err(err)?;
        }
        Ok(Self {
            path,
            done,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn completed(&self) -> usize {
        self.done.len()
    }

    fn get(&self, job: &GridJob) -> Option<&GridResult> {
        self.done.get(&job.key())
    }

    fn append(&self, result: &GridResult) -> Result<(), GridError> {
        let mut line = serde_json::to_string(result).expect("grid result serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| GridError::Checkpoint {
                path: self.path.clone(),
                message: e.to_string(),
            })
    }
}

/// Runs every job, returning results in job order. Jobs already in the
/// checkpoint are returned from it without backend calls. Backend and
/// parse problems become error results; a sandbox that cannot launch
/// aborts the grid.
pub fn run_grid(
    pipeline: &Pipeline<'_>,
    primes: &PrimeLibrary,
    jobs: &[GridJob],
    config_base: &GenerationConfig,
    checkpoint: Option<&Checkpoint>,
) -> Result<Vec<GridResult>, GridError> {
    for job in jobs {
        primes
            .get(&job.prime_id)
            .map_err(|e| GridError::InvalidSpec(e.to_string()))?;
    }
    config_base
        .validate()
        .map_err(|e| GridError::InvalidSpec(e.to_string()))?;

    let workers = pipeline
        .gateway
        .max_in_flight()
        .min(pipeline.sandbox.max_concurrent())
        .clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<GridResult>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let failure: Mutex<Option<GridError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { return };
                if let Some(done) = checkpoint.and_then(|c| c.get(job)) {
                    *slots[i].lock().unwrap() = Some(done.clone());
                    continue;
                }
                match run_job(pipeline, primes, job, config_base) {
                    Ok(result) => {
                        if result.error.is_none() {
                            if let Some(Err(e)) = checkpoint.map(|c| c.append(&result)) {
                                failure.lock().unwrap().get_or_insert(e);
                                abort.store(true, Ordering::SeqCst);
                            }
                        }
                        *slots[i].lock().unwrap() = Some(result);
                    }
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        abort.store(true, Ordering::SeqCst);
                    }
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every job produced a result"))
        .collect())
}

fn run_job(
    pipeline: &Pipeline<'_>,
    primes: &PrimeLibrary,
    job: &GridJob,
    config_base: &GenerationConfig,
) -> Result<GridResult, GridError> {
    let started = Instant::now();
    let mut result = GridResult {
        job: job.clone(),
        bundle: None,
        report: None,
        duration_ms: 0,
        error: None,
    };
    let prime = primes.get(&job.prime_id).expect("checked before the run");
    let config = config_base
        .clone()
        .with_temperature(job.temperature)
        .with_sample(config_base.sample + job.repeat_index);
    let outcome = job
        .keywords()
        .map_err(crate::Error::from)
        .and_then(|k| pipeline.generate(prime, &k, &config));
    match outcome {
        Ok(bundle) => match pipeline.evaluate(&bundle) {
            Ok(report) => {
                result.bundle = Some(bundle);
                result.report = Some(report);
            }
            Err(e @ SandboxError::LaunchFailure(_)) => return Err(GridError::Infrastructure(e)),
            Err(e) => {
                result.bundle = Some(bundle);
                result.error = Some(e.to_string());
            }
        },
        Err(e) => result.error = Some(e.to_string()),
    }
    result.duration_ms = started.elapsed().as_millis() as u64;
    Ok(result)
}

/// `n` out of `d`, with the percentage rounded to one decimal. The
/// percentage is absent when `d` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub n: usize,
    pub d: usize,
    pub percentage: Option<f64>,
}

impl Ratio {
    pub fn new(n: usize, d: usize) -> Self {
        debug_assert!(n <= d);
        Self {
            n,
            d,
            percentage: (d > 0).then(|| round1(100.0 * n as f64 / d as f64)),
        }
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn fmt_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |p| format!("{p:.1}%"))
}

/// Table-style aggregation of grid results.
///
/// Denominators: solutions and tests are counted over evaluated jobs;
/// runnable over bundles with a solution; passing over bundles with both;
/// coverage over passing suites. Errored jobs are excluded from every
/// denominator and counted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub jobs: usize,
    pub errored: usize,
    pub has_sample_solution: Ratio,
    pub solution_runnable: Ratio,
    pub has_tests: Ratio,
    pub has_both: usize,
    pub tests_pass: Ratio,
    /// Full-coverage suites out of passing suites.
    pub full_coverage: Ratio,
    /// Mean statement coverage over passing suites, in percent, one decimal.
    pub mean_coverage: Option<f64>,
}

impl SummaryReport {
    /// Aggregates results. Pure; order does not matter.
    pub fn from_results(results: &[GridResult]) -> Self {
        let reports: Vec<&AutoRubricReport> =
            results.iter().filter_map(|r| r.report.as_ref()).collect();
        let mut summary = Self::from_reports(reports.iter().copied());
        summary.jobs = results.len();
        summary.errored = results.len() - reports.len();
        summary
    }

    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a AutoRubricReport>) -> Self {
        let (mut total, mut solution, mut runnable, mut tests, mut both, mut pass, mut full) =
            (0, 0, 0, 0, 0, 0, 0);
        let mut coverage_sum = 0.0;
        for r in reports {
            total += 1;
            solution += usize::from(r.has_sample_solution);
            runnable += usize::from(r.solution_runnable == Verdict::Yes);
            tests += usize::from(r.has_tests);
            both += usize::from(r.has_sample_solution && r.has_tests);
            if r.tests_pass == Verdict::Yes {
                pass += 1;
                full += usize::from(r.has_full_coverage());
                coverage_sum += r.coverage_fraction().unwrap_or(0.0);
            }
        }
        Self {
            jobs: total,
            errored: 0,
            has_sample_solution: Ratio::new(solution, total),
            solution_runnable: Ratio::new(runnable, solution),
            has_tests: Ratio::new(tests, total),
            has_both: both,
            tests_pass: Ratio::new(pass, both),
            full_coverage: Ratio::new(full, pass),
            mean_coverage: (pass > 0).then(|| round1(100.0 * coverage_sum / pass as f64)),
        }
    }

    fn columns(&self) -> [(&'static str, String, String); 5] {
        let nd = |r: &Ratio| format!("{} / {}", r.n, r.d);
        [
            (
                "Has sample solution?",
                fmt_pct(self.has_sample_solution.percentage),
                nd(&self.has_sample_solution),
            ),
            (
                "Can run the sample solution?",
                fmt_pct(self.solution_runnable.percentage),
                nd(&self.solution_runnable),
            ),
            ("Has tests?", fmt_pct(self.has_tests.percentage), nd(&self.has_tests)),
            ("All tests pass?", fmt_pct(self.tests_pass.percentage), nd(&self.tests_pass)),
            ("Test coverage", fmt_pct(self.mean_coverage), nd(&self.full_coverage)),
        ]
    }

    /// Two-row Markdown table: percentages, then n out of N.
    pub fn to_markdown(&self) -> String {
        let cols = self.columns();
        let mut out = String::from("| |");
        for (h, _, _) in &cols {
            let _ = write!(out, " {h} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(cols.len()));
        out.push_str("\n| Percentages |");
        for (_, p, _) in &cols {
            let _ = write!(out, " {p} |");
        }
        out.push_str("\n| n out of N |");
        for (_, _, nd) in &cols {
            let _ = write!(out, " {nd} |");
        }
        out.push('\n');
        out
    }

    /// One row per metric: `metric,n,N,percentage`. Empty percentage when
    /// undefined. The coverage row carries the mean as its percentage.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,n,N,percentage\n");
        let rows = [
            ("has_sample_solution", self.has_sample_solution, self.has_sample_solution.percentage),
            ("solution_runnable", self.solution_runnable, self.solution_runnable.percentage),
            ("has_tests", self.has_tests, self.has_tests.percentage),
            ("tests_pass", self.tests_pass, self.tests_pass.percentage),
            ("full_coverage", self.full_coverage, self.full_coverage.percentage),
            ("mean_coverage", self.full_coverage, self.mean_coverage),
        ];
        for (name, r, p) in rows {
            let p = p.map(|p| format!("{p:.1}")).unwrap_or_default();
            let _ = writeln!(out, "{name},{},{},{p}", r.n, r.d);
        }
        out
    }
}

/// Grid results grouped by a coordinate, e.g. per temperature.
pub fn summarize_by<K: Ord>(
    results: &[GridResult],
    key: impl Fn(&GridJob) -> K,
) -> BTreeMap<K, SummaryReport> {
    let mut groups: BTreeMap<K, Vec<GridResult>> = BTreeMap::new();
    for r in results {
        groups.entry(key(&r.job)).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, SummaryReport::from_results(&v)))
        .collect()
}
