//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when the operation fails, 2 on a usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exforge_core::grid::{GridSpec, SummaryReport};
use exforge_core::parser::Explanation;
use exforge_core::prompt::ExplanationStyle;
use exforge_core::rubric::{AutoRubricReport, Verdict};
use exforge_core::store::ExportOutcome;
use serde::Serialize;
use serde_json::json;

use crate::config::{BackendKind, Config};
use crate::error::ApiError;
use crate::ops::{self, Context, Generated};
use crate::server;

const DEFAULT_CONFIG: &str = "exforge.toml";

#[derive(Debug, Parser)]
#[command(name = "exforge", version, about = "Generate, validate and curate programming exercises")]
pub struct Cli {
    /// Config file (default: ./exforge.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Store directory, overriding the config.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Completion backend: replay, remote or record.
    #[arg(long, global = true)]
    pub backend: Option<BackendKind>,
    /// Cassette file for the replay and record backends.
    #[arg(long, global = true)]
    pub cassette: Option<PathBuf>,
    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one exercise and evaluate it.
    Generate(GenerateArgs),
    /// Generate explanations of a program.
    Explain(ExplainArgs),
    /// Evaluate a stored bundle or a completion file.
    Validate(ValidateArgs),
    /// Run an experiment grid.
    Grid(GridArgs),
    /// Print the summary table of a grid.
    Report(ReportArgs),
    /// Export selected exercises as a zip pack.
    Export(ExportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub prime: String,
    /// Contextual keyword, e.g. "ice hockey".
    #[arg(long)]
    pub context: Option<String>,
    /// Built-in concept set: function or class.
    #[arg(long, conflicts_with = "concept")]
    pub concept_set: Option<String>,
    /// Programming concept; repeatable.
    #[arg(long)]
    pub concept: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long)]
    pub sample: Option<u32>,
    /// Regenerate until the tests pass, making at most this many calls.
    #[arg(long)]
    pub budget: Option<u32>,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct ExplainSource {
    /// Built-in program: speeding_check, fizz_buzz, rainfall, converter, fisherman.
    #[arg(long, group = "source")]
    pub program: Option<String>,
    /// Python file to explain.
    #[arg(long, group = "source")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub source: ExplainSource,
    #[arg(long, default_value = "step_by_step")]
    pub style: ExplanationStyle,
    #[arg(long, default_value_t = 1)]
    pub samples: u32,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Stored bundle id.
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    pub bundle: Option<String>,
    /// Raw completion text to parse and evaluate.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Generate tests for the bundle until they pass.
    #[arg(long, requires = "bundle", conflicts_with = "regenerate")]
    pub backfill: bool,
    /// Draw new candidates with the bundle's settings until the tests pass.
    #[arg(long, requires = "bundle")]
    pub regenerate: bool,
    #[arg(long)]
    pub budget: Option<u32>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// TOML grid spec; defaults to the 240-job grid.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Grid id; reusing one resumes from its checkpoint.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Grid id; defaults to the most recent grid.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Yes, No or NA.
    #[arg(long)]
    pub tests_pass: Option<String>,
    #[arg(long)]
    pub solution_runnable: Option<String>,
    #[arg(long)]
    pub min_coverage: Option<String>,
    /// Manual rubric criterion, e.g. `sensible=Yes`; repeatable.
    #[arg(long = "where", value_name = "FIELD=VERDICT")]
    pub manual: Vec<String>,
    #[arg(long)]
    pub rater: Option<String>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    /// Directory of built workbench assets.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .try_init();
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&e).expect("error serializes"));
            } else {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, String> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| e.to_string())?,
        None if Path::new(DEFAULT_CONFIG).exists() => {
            Config::load(Path::new(DEFAULT_CONFIG)).map_err(|e| e.to_string())?
        }
        None => Config::default(),
    };
    if let Some(store) = &cli.store {
        config.store = store.clone();
    }
    if let Some(kind) = cli.backend {
        config.backend.kind = kind;
    }
    if let Some(cassette) = &cli.cassette {
        config.backend.cassette = Some(cassette.clone());
    }
    if let Command::Serve(args) = &cli.command {
        if let Some(port) = args.port {
            config.server.port = port;
        }
        if let Some(host) = &args.host {
            config.server.host = host.clone();
        }
        if let Some(assets) = &args.assets {
            config.server.assets = Some(assets.clone());
        }
    }
    Ok(config)
}

fn read(path: &Path) -> Result<String, ApiError> {
    std::fs::read_to_string(path)
        .map_err(|e| ApiError::validation(format!("cannot read {}: {e}", path.display())))
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
    } else {
        print!("{}", text());
    }
}

pub fn run(cli: &Cli, config: Config) -> Result<(), ApiError> {
    let ctx = Context::from_config(&config)?;
    match &cli.command {
        Command::Generate(a) => {
            let req = ops::GenerateRequest {
                prime: a.prime.clone(),
                context: a.context.clone(),
                concept_set: a.concept_set.clone(),
                concepts: (!a.concept.is_empty()).then(|| a.concept.clone()),
                temperature: Some(a.temperature),
                sample: a.sample,
                budget: a.budget,
            };
            let g = ops::generate(&ctx, &req)?;
            emit(cli.json, &g, || render_generated(&g));
        }
        Command::Explain(a) => {
            let code = a.source.file.as_deref().map(read).transpose()?;
            let req = ops::ExplainRequest {
                code,
                program: a.source.program.clone(),
                style: a.style,
                samples: a.samples,
                temperature: a.temperature,
            };
            let explanations = ops::explain(&ctx, &req)?;
            emit(cli.json, &explanations, || render_explanations(&explanations));
        }
        Command::Validate(a) => {
            let g = match (&a.bundle, &a.file) {
                (Some(id), _) if a.backfill => ops::backfill(&ctx, id, a.budget)?,
                (Some(id), _) if a.regenerate => ops::regenerate(&ctx, id, a.budget)?,
                (Some(id), _) => {
                    let report = ops::evaluate(&ctx, id)?;
                    Generated {
                        bundle: ctx.store.get_bundle(id)?,
                        report,
                        attempts: 0,
                    }
                }
                (None, Some(path)) => ops::validate_text(&ctx, &read(path)?)?,
                (None, None) => unreachable!("clap requires --bundle or --file"),
            };
            emit(cli.json, &g, || render_generated(&g));
        }
        Command::Grid(a) => {
            let spec = match &a.spec {
                Some(path) => Some(GridSpec::from_toml(&read(path)?)?),
                None => None,
            };
            let record = ops::run_grid(
                &ctx,
                ops::GridRequest {
                    id: a.id.clone(),
                    spec,
                },
            )?;
            emit(cli.json, &record, || {
                format!(
                    "grid {}: {} jobs, {} errored\n\n{}",
                    record.id,
                    record.summary.jobs,
                    record.summary.errored,
                    record.summary.to_markdown()
                )
            });
        }
        Command::Report(a) => {
            let id = match &a.grid {
                Some(id) => id.clone(),
                None => ops::latest_grid_id(&ctx)?,
            };
            let record = ops::grid_record(&ctx, &id)?;
            let summary: &SummaryReport = &record.summary;
            emit(cli.json, summary, || match a.format {
                ReportFormat::Markdown => summary.to_markdown(),
                ReportFormat::Csv => summary.to_csv(),
            });
        }
        Command::Export(a) => {
            let mut pairs: Vec<(&str, &str)> = Vec::new();
            if let Some(v) = &a.tests_pass {
                pairs.push(("tests_pass", v));
            }
            if let Some(v) = &a.solution_runnable {
                pairs.push(("solution_runnable", v));
            }
            if let Some(v) = &a.min_coverage {
                pairs.push(("min_coverage", v));
            }
            if let Some(v) = &a.rater {
                pairs.push(("rater", v));
            }
            for m in &a.manual {
                let (k, v) = m
                    .split_once('=')
                    .ok_or_else(|| ApiError::validation(format!("expected FIELD=VERDICT, got `{m}`")))?;
                pairs.push((k.trim(), v.trim()));
            }
            let filter = ops::filter_from_pairs(pairs)?;
            match ops::export(&ctx, &filter)? {
                ExportOutcome::Empty => {
                    emit(cli.json, &json!({ "count": 0 }), || {
                        "no exercises match; nothing written\n".into()
                    });
                }
                ExportOutcome::Pack { archive, manifest } => {
                    std::fs::write(&a.out, &archive).map_err(|e| {
                        ApiError::internal(format!("cannot write {}: {e}", a.out.display()))
                    })?;
                    emit(cli.json, &manifest, || {
                        format!(
                            "wrote {} exercise(s) to {} (sha256 {})\n",
                            manifest.count,
                            a.out.display(),
                            manifest.sha256
                        )
                    });
                }
            }
        }
        Command::Serve(_) => {
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| ApiError::internal(format!("cannot start runtime: {e}")))?;
            runtime.block_on(server::serve(ctx, &config.server))?;
        }
    }
    Ok(())
}

fn verdict(v: Verdict) -> &'static str {
    match v {
        Verdict::Yes => "yes",
        Verdict::No => "no",
        Verdict::NotApplicable => "n/a",
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn render_report(r: &AutoRubricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("  has sample solution  {}\n", yes_no(r.has_sample_solution)));
    out.push_str(&format!("  solution runnable    {}\n", verdict(r.solution_runnable)));
    out.push_str(&format!("  has tests            {}\n", yes_no(r.has_tests)));
    out.push_str(&format!(
        "  tests pass           {} ({}/{})\n",
        verdict(r.tests_pass),
        r.tests_passed,
        r.tests_total
    ));
    let coverage = match &r.coverage {
        Some(c) => format!(
            "{:.1}% ({}/{})",
            100.0 * r.coverage_fraction().unwrap_or(1.0),
            c.statements_hit,
            c.statements_total
        ),
        None => "n/a".into(),
    };
    out.push_str(&format!("  statement coverage   {coverage}\n"));
    for f in &r.failures {
        let first = f.message.lines().last().unwrap_or("");
        out.push_str(&format!("  failed: {}: {first}\n", f.test_name));
    }
    out
}

fn render_generated(g: &Generated) -> String {
    let attempts = match g.attempts {
        0 => String::new(),
        1 => " (1 attempt)".into(),
        n => format!(" ({n} attempts)"),
    };
    format!(
        "bundle {}{attempts}\n\n{}\nautomated rubric\n{}",
        g.bundle.id,
        g.bundle.render(),
        render_report(&g.report)
    )
}

fn render_explanations(explanations: &[Explanation]) -> String {
    let mut out = String::new();
    for e in explanations {
        out.push_str(&format!("explanation {} ({})\n", e.id, e.style));
        if e.steps.is_empty() {
            out.push_str(e.raw_text.trim_end());
            out.push('\n');
        }
        for (i, step) in e.steps.iter().enumerate() {
            out.push_str(&format!("{:>3}. {step}\n", i + 1));
        }
        out.push('\n');
    }
    out
}
