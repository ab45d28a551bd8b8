//! `devagents` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error or something
//! named on the command line that does not exist.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use devagents::agents::ContextBudget;
use devagents::domain::VerificationStatus;
use devagents::llm::{ChatBackend, Clock, ManualClock, MockBackend, MockScript, OpenAiBackend, SystemClock};
use devagents::metrics::{self, BaselineTable, MetricsError};
use devagents::pipeline::{run_pipeline, BackendSelector, PipelineError, RunConfig, RunManifest};
use devagents::sandbox::{self, ExecutionLimits, SandboxError};
use devagents::store::{self, RunLock, StoreError, WorkspaceLayout};
use devagents::TemplateCatalog;
use serde_json::json;

mod render;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Clock step used by `--fixed-clock`.
const FIXED_CLOCK_STEP: Duration = Duration::from_millis(250);

#[derive(Debug, Parser)]
#[command(name = "devagents", version, about = "Producer/reviewer agent pipeline for software projects")]
pub struct Cli {
    /// Root directory holding run-<id> directories.
    #[arg(long, global = true, default_value = "./runs")]
    pub out: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    /// The versioned JSON documents.
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Live,
    Mock,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run all six stages for a prompt.
    Run(RunArgs),
    /// Print a run's metrics, optionally against a published baseline.
    Report {
        #[arg(long = "run")]
        run_id: String,
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Record a verification status for one requirement.
    Verify {
        #[arg(long = "run")]
        run_id: String,
        #[arg(long = "req")]
        requirement: String,
        #[arg(long, value_parser = parse_status)]
        status: VerificationStatus,
        #[arg(long, default_value = "")]
        note: String,
    },
    /// Run a command against the generated code bundle.
    Exec {
        #[arg(long = "run")]
        run_id: String,
        /// Timeout in seconds.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        /// Treat the command as the test command.
        #[arg(long)]
        test: bool,
        /// Program and arguments; must come last.
        #[arg(long = "cmd", required = true, num_args = 1.., allow_hyphen_values = true)]
        command: Vec<String>,
    },
    /// Print a bundled baseline record, or list them.
    Baseline { experiment_id: Option<String> },
    /// Recompute metrics from a stored run and compare with metrics.json.
    Replay {
        #[arg(long = "run")]
        run_id: String,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub prompt: String,
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    pub backend: BackendKind,
    /// Mock script; required with the mock backend.
    #[arg(long, required_if_eq("backend", "mock"))]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_rounds: Option<u32>,
    /// Upstream context budget in whitespace tokens.
    #[arg(long)]
    pub context_budget: Option<u64>,
    /// Directory of template overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Use a deterministic clock starting at this many ms past the epoch.
    #[arg(long, value_name = "EPOCH_MS")]
    pub fixed_clock: Option<u64>,
}

fn parse_status(s: &str) -> Result<VerificationStatus, String> {
    s.parse()
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn failure(message: impl Into<String>) -> Self {
        Self { code: EXIT_FAILURE, message: message.into() }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::RunNotFound(_) | StoreError::InvalidRunId(_) | StoreError::RunAlreadyExists(_) => {
                Self::usage(e.to_string())
            }
            _ => Self::failure(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::UnknownExperiment(_) | MetricsError::UnknownRequirement(_) => Self::usage(e.to_string()),
            _ => Self::failure(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) => Self::usage(e.to_string()),
            PipelineError::Store(inner) => inner.into(),
            PipelineError::StageFailed { .. } => Self::failure(e.to_string()),
        }
    }
}

impl From<SandboxError> for CliError {
    fn from(e: SandboxError) -> Self {
        match e {
            SandboxError::EmptyCommand | SandboxError::MissingBundle(_) => Self::usage(e.to_string()),
            SandboxError::Store(inner) => inner.into(),
            _ => Self::failure(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::failure(e.to_string())
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{text}");
            return EXIT_OK;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(args) => cmd_run(cli, args, out),
        Command::Report { run_id, baseline } => cmd_report(cli, run_id, baseline.as_deref(), out),
        Command::Verify { run_id, requirement, status, note } => {
            cmd_verify(cli, run_id, requirement, *status, note, out)
        }
        Command::Exec { run_id, timeout, test, command } => cmd_exec(cli, run_id, *timeout, *test, command, out),
        Command::Baseline { experiment_id } => cmd_baseline(cli, experiment_id.as_deref(), out),
        Command::Replay { run_id } => cmd_replay(cli, run_id, out),
    }
}

fn emit_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), CliError> {
    out.write_all(store::to_pretty_json(value).as_bytes())?;
    Ok(())
}

/// `<UTC timestamp>-<6 hex digits>`.
pub fn default_run_id() -> String {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    format!("{stamp}-{:06x}", rand::random::<u32>() & 0xff_ffff)
}

fn cmd_run(cli: &Cli, args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (backend, selector): (Box<dyn ChatBackend>, BackendSelector) = match args.backend {
        BackendKind::Mock => {
            let path =
                args.script.as_ref().ok_or_else(|| CliError::usage("--script is required for the mock backend"))?;
            if !path.is_file() {
                return Err(CliError::usage(format!("mock script `{}` not found", path.display())));
            }
            let script = MockScript::load(path).map_err(|e| CliError::usage(e.to_string()))?;
            (Box::new(MockBackend::new(script)), BackendSelector::Mock { script: path.clone() })
        }
        BackendKind::Live => {
            let live = OpenAiBackend::from_env().map_err(|e| CliError::usage(e.to_string()))?;
            let selector = BackendSelector::Live { base_url: live.base_url().to_string() };
            (Box::new(live), selector)
        }
    };

    let mut config = RunConfig::new(args.prompt.clone(), selector);
    if let Some(model) = &args.model {
        config.model_id = model.clone();
    }
    if let Some(rounds) = args.max_rounds {
        config.max_review_rounds = rounds;
    }
    if let Some(tokens) = args.context_budget {
        config.context_budget = ContextBudget::new(tokens);
    }
    config.validate()?;

    let catalog = match &args.templates {
        Some(dir) => TemplateCatalog::with_overrides(dir).map_err(|e| CliError::usage(e.to_string()))?,
        None => TemplateCatalog::defaults(),
    };
    let clock: Box<dyn Clock> = match args.fixed_clock {
        Some(ms) => Box::new(ManualClock::stepping(Duration::from_millis(ms), FIXED_CLOCK_STEP)),
        None => Box::new(SystemClock),
    };
    let run_id = args.run_id.clone().unwrap_or_else(default_run_id);
    fs::create_dir_all(&cli.out)?;

    let result = run_pipeline(&config, backend.as_ref(), clock.as_ref(), &catalog, &cli.out, &run_id);
    let manifest = match result {
        Ok(manifest) => manifest,
        Err(e @ PipelineError::StageFailed { .. }) => {
            // Whatever was finalized is on disk; show it before failing.
            if let Ok(run) = store::load_run(&cli.out, &run_id) {
                print_run(cli, &run.manifest, None, out)?;
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };

    let run = store::load_run(&cli.out, &run_id)?;
    let metrics = metrics::collect_metrics(&run, &store::read_ledger(&run.layout)?)?;
    metrics::persist_metrics(&run.layout, &metrics)?;
    print_run(cli, &manifest, Some(&metrics), out)
}

fn print_run(
    cli: &Cli,
    manifest: &RunManifest,
    metrics: Option<&metrics::Metrics>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    match cli.format {
        Format::Structured => emit_json(out, manifest),
        Format::Text => {
            let layout = WorkspaceLayout::open(&cli.out, &manifest.run_id)?;
            render::run_summary(out, manifest, &layout.run_dir().display().to_string())?;
            if let Some(metrics) = metrics {
                writeln!(out)?;
                render::metrics(out, metrics)?;
            }
            Ok(())
        }
    }
}

fn cmd_report(cli: &Cli, run_id: &str, baseline: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    // Look the baseline up first so a bad id fails before any work.
    let record = baseline.map(|id| BaselineTable::bundled().get(id).cloned()).transpose()?;
    let run = store::load_run(&cli.out, run_id)?;
    let ledger = store::read_ledger(&run.layout)?;
    let metrics = metrics::collect_metrics(&run, &ledger)?;
    let comparison = record.as_ref().map(|r| metrics::compare(&metrics, r));
    match cli.format {
        Format::Structured => match comparison {
            Some(comparison) => emit_json(
                out,
                &json!({ "schema_version": store::SCHEMA_VERSION, "metrics": metrics, "comparison": comparison }),
            ),
            None => emit_json(out, &metrics),
        },
        Format::Text => {
            render::metrics(out, &metrics)?;
            if let Some(comparison) = comparison {
                writeln!(out)?;
                render::comparison(out, &comparison)?;
            }
            Ok(())
        }
    }
}

fn cmd_verify(
    cli: &Cli,
    run_id: &str,
    requirement: &str,
    status: VerificationStatus,
    note: &str,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let layout = WorkspaceLayout::open(&cli.out, run_id)?;
    let _lock = RunLock::acquire(&layout)?;
    let run = store::load_run(&cli.out, run_id)?;
    let requirements = metrics::run_requirements(&run)?;
    let mut ledger = store::read_ledger(&layout)?;
    metrics::record_verification(&mut ledger, &requirements, requirement, status, note)?;
    let metrics = metrics::collect_metrics(&run, &ledger)?;
    store::write_ledger(&layout, &ledger)?;
    metrics::persist_metrics(&layout, &metrics)?;
    match cli.format {
        Format::Structured => emit_json(out, &metrics.status_summary),
        Format::Text => {
            let s = metrics.status_summary;
            writeln!(out, "{requirement}: {}", render::status_label(status))?;
            writeln!(
                out,
                "ledger: {} of {} requirements recorded (fully {}, partial {}, not verified {}, not met {})",
                s.total,
                requirements.len(),
                s.fully_met,
                s.partially_met,
                s.not_verified,
                s.not_met
            )?;
            Ok(())
        }
    }
}

fn cmd_exec(
    cli: &Cli,
    run_id: &str,
    timeout: f64,
    test: bool,
    command: &[String],
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(CliError::usage("--timeout must be a positive number of seconds"));
    }
    let limits = ExecutionLimits { timeout: Duration::from_secs_f64(timeout), ..ExecutionLimits::default() };
    let layout = WorkspaceLayout::open(&cli.out, run_id)?;
    let _lock = RunLock::acquire(&layout)?;
    if test {
        let outcome = sandbox::run_tests(&layout, Some(command), limits)?;
        return match cli.format {
            Format::Structured => emit_json(out, &outcome),
            Format::Text => Ok(render::test_outcome(out, &outcome)?),
        };
    }
    let result = sandbox::execute(&layout, command, limits)?;
    match cli.format {
        Format::Structured => emit_json(out, &result),
        Format::Text => Ok(render::execution(out, &result)?),
    }
}

fn cmd_baseline(cli: &Cli, experiment_id: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let table = BaselineTable::bundled();
    let Some(id) = experiment_id else {
        return match cli.format {
            Format::Structured => emit_json(out, &table),
            Format::Text => {
                for record in &table.records {
                    writeln!(out, "{}  {}  \"{}\"", record.experiment_id, record.model_id, record.prompt)?;
                }
                Ok(())
            }
        };
    };
    let record = table.get(id)?;
    match cli.format {
        Format::Structured => emit_json(out, record),
        Format::Text => Ok(render::baseline(out, record)?),
    }
}

fn cmd_replay(cli: &Cli, run_id: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let run = store::load_run(&cli.out, run_id)?;
    let ledger = store::read_ledger(&run.layout)?;
    let metrics = metrics::collect_metrics(&run, &ledger)?;
    let derived = store::to_pretty_json(&metrics);
    let stored = read_optional(&run.layout.metrics_path())?;
    match cli.format {
        Format::Structured => out.write_all(derived.as_bytes())?,
        Format::Text => render::metrics(out, &metrics)?,
    }
    match stored {
        Some(stored) if stored != derived => {
            Err(CliError::failure("recomputed metrics differ from the stored metrics.json"))
        }
        Some(_) => {
            if cli.format == Format::Text {
                writeln!(out, "\nmatches stored metrics.json")?;
            }
            Ok(())
        }
        None => {
            if cli.format == Format::Text {
                writeln!(out, "\nno stored metrics.json to compare against")?;
            }
            Ok(())
        }
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, CliError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}
