//! Command-line frontend: single runs, corpus runs and report formats.
//!
//! Exit codes: 0 holds or exact within epsilon, 1 fails, 2 inconclusive,
//! 3 usage, parse or model error, 4 state cap exceeded.

pub mod report;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;
use truncheck_core::checker::{refine_with, CheckError, RefineParams, Verdict, DEFAULT_TOL};
use truncheck_core::csl::{parse_property, property_lines};
use truncheck_core::explorer::{export, ExploreError, DEFAULT_STATE_CAP};
use truncheck_core::model::{parse_model_with_constants, Model};
use truncheck_core::oracle::{enumerate_full, exact_until, OracleError, DEFAULT_ORACLE_CAP};

pub use report::{Entry, Failure, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILS: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_CAP: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(CheckError::Explore(ExploreError::StateCap { .. })) => EXIT_CAP,
            _ => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub model_path: PathBuf,
    /// Inline property text, or `@PATH` for a property file.
    pub property: String,
    pub params: RefineParams,
    pub constants: Vec<(String, String)>,
    pub export_states: Option<PathBuf>,
    pub oracle: bool,
    pub oracle_cap: usize,
    pub format: Format,
}

impl CliConfig {
    pub fn new(model_path: impl Into<PathBuf>, property: impl Into<String>) -> Self {
        CliConfig {
            model_path: model_path.into(),
            property: property.into(),
            params: RefineParams::default(),
            constants: Vec::new(),
            export_states: None,
            oracle: false,
            oracle_cap: DEFAULT_ORACLE_CAP,
            format: Format::Text,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "truncheck", version, about = "Bounds for time-bounded CSL properties of infinite-state CTMCs")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Property text, or @PATH to read properties from a file.
    #[arg(long, value_name = "TEXT|@PATH", allow_hyphen_values = true)]
    property: Option<String>,
    #[arg(long, global = true, default_value_t = 1e-3)]
    kappa: f64,
    #[arg(long, global = true, default_value_t = 1000.0)]
    rfactor: f64,
    #[arg(long, global = true, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long = "max-iters", global = true, default_value_t = 10)]
    max_iters: usize,
    #[arg(long = "state-cap", global = true, default_value_t = DEFAULT_STATE_CAP)]
    state_cap: usize,
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Write the final truncated graph to PATH and its transitions to PATH.tra.
    #[arg(long = "export-states", value_name = "PATH")]
    export_states: Option<PathBuf>,
    /// Cross-check against full enumeration (finite models only).
    #[arg(long)]
    oracle: bool,
    #[arg(long = "oracle-cap", default_value_t = DEFAULT_ORACLE_CAP)]
    oracle_cap: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Override a model constant; may be repeated.
    #[arg(long = "const", value_name = "NAME=VALUE", global = true, value_parser = parse_const)]
    constants: Vec<(String, String)>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Operations on a directory of paired .sm/.csl files.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(Debug, Subcommand)]
enum CorpusAction {
    /// Check every model against its property file, sequentially.
    Run { dir: PathBuf },
}

fn parse_const(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((k.trim().into(), v.trim().into())),
        _ => Err(format!("expected NAME=VALUE, found `{s}`")),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                EXIT_OK
            } else {
                let _ = write!(err, "{e}");
                EXIT_USAGE
            };
        }
    };
    let params = RefineParams {
        kappa0: cli.kappa,
        reduction_factor: cli.rfactor,
        epsilon: cli.epsilon,
        max_iterations: cli.max_iters,
        state_cap: cli.state_cap,
        tol: cli.tol,
        ..RefineParams::default()
    };
    match cli.command {
        Some(Command::Corpus {
            action: CorpusAction::Run { dir },
        }) => {
            let mut config = CliConfig::new(PathBuf::new(), String::new());
            config.params = params;
            config.constants = cli.constants;
            config.format = cli.format;
            run_corpus(&dir, &config, out, err)
        }
        None => {
            let (Some(model), Some(property)) = (cli.model, cli.property) else {
                let _ = writeln!(err, "error: --model and --property are required");
                return EXIT_USAGE;
            };
            let config = CliConfig {
                model_path: model,
                property,
                params,
                constants: cli.constants,
                export_states: cli.export_states,
                oracle: cli.oracle,
                oracle_cap: cli.oracle_cap,
                format: cli.format,
            };
            run(&config, out, err)
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn load_model(path: &Path, constants: &[(String, String)]) -> Result<Model, CliError> {
    let src = read(path)?;
    parse_model_with_constants(&src, constants).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn load_properties(spec: &str) -> Result<Vec<String>, CliError> {
    let lines = match spec.strip_prefix('@') {
        Some(path) => property_lines(&read(Path::new(path))?),
        None => property_lines(spec),
    };
    if lines.is_empty() {
        return Err(CliError::Usage("no property given".into()));
    }
    Ok(lines)
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Holds | Verdict::ExactWithinEpsilon => EXIT_OK,
        Verdict::Fails => EXIT_FAILS,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

/// Checks one property, optionally exporting the final graph and running
/// the oracle. Returns the report and the exit code of its verdict.
fn check_one(
    model: &Model,
    model_name: &str,
    property: &str,
    config: &CliConfig,
    err: &mut dyn Write,
) -> Result<(Report, i32), CliError> {
    let query = parse_property(property, model).map_err(|e| CliError::Parse {
        path: "property".into(),
        message: e.to_string(),
    })?;
    let (run, graph) = refine_with(model, &query, &config.params, |_| {})?;
    let mut report = Report::new(model_name, property, &config.params, &run);
    if let Some(path) = &config.export_states {
        export(&graph, path)?;
    }
    if config.oracle {
        match enumerate_full(model, config.oracle_cap) {
            Ok(full) => {
                let exact = exact_until(model, &full, &query.path, config.params.tol)
                    .map_err(|e| CliError::Usage(format!("oracle: {e}")))?;
                let b = run.final_bound;
                if exact < b.pmin - 1e-9 || exact > b.pmax + 1e-9 {
                    let _ = writeln!(err, "warning: oracle value {exact} lies outside [{}, {}]", b.pmin, b.pmax);
                }
                report.oracle = Some(report::sig12(exact));
            }
            Err(e @ OracleError::Cap { .. }) => {
                let _ = writeln!(err, "warning: oracle unavailable: {e}");
            }
            Err(e) => return Err(CliError::Usage(format!("oracle: {e}"))),
        }
    }
    Ok((report, verdict_code(run.verdict)))
}

fn emit(format: Format, entries: &[Entry], corpus: bool, out: &mut dyn Write) -> Result<(), CliError> {
    match format {
        Format::Csv => report::write_csv(out, entries)?,
        Format::Text => report::write_text(out, entries)?,
        Format::Json if corpus => writeln!(out, "{}", to_json(&entries)?)?,
        Format::Json => {
            for e in entries {
                writeln!(out, "{}", to_json(e)?)?;
            }
        }
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.into()))
}

/// Checks every property of a single run. With several properties the
/// exit code is the largest of their codes.
pub fn run(config: &CliConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match run_inner(config, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(config: &CliConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    config.params.validate()?;
    let model = load_model(&config.model_path, &config.constants)?;
    let properties = load_properties(&config.property)?;
    let name = config.model_path.display().to_string();
    let mut entries = Vec::new();
    let mut code = EXIT_OK;
    for p in &properties {
        let (report, c) = check_one(&model, &name, p, config, err)?;
        entries.push(Entry::Report(report));
        code = code.max(c);
    }
    emit(config.format, &entries, false, out)?;
    Ok(code)
}

/// Every `NAME.sm` in `dir` with its `NAME.csl`, in name order.
fn corpus_pairs(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let listing = fs::read_dir(dir).map_err(|source| CliError::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut pairs = Vec::new();
    for entry in listing {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "sm") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            pairs.push((stem, path));
        }
    }
    pairs.sort();
    Ok(pairs)
}

/// Entries for one corpus model; failures become [`Failure`] entries.
fn corpus_entries(name: &str, model_path: &Path, config: &CliConfig, err: &mut dyn Write) -> Vec<Entry> {
    let failure = |property: Option<&str>, e: CliError| {
        Entry::Failure(Failure {
            model: name.to_string(),
            property: property.map(str::to_string),
            error: e.to_string(),
        })
    };
    let model = match load_model(model_path, &config.constants) {
        Ok(m) => m,
        Err(e) => return vec![failure(None, e)],
    };
    let properties = match read(&model_path.with_extension("csl")) {
        Ok(text) => property_lines(&text),
        Err(e) => return vec![failure(None, e)],
    };
    if properties.is_empty() {
        return vec![failure(None, CliError::Usage("property file is empty".into()))];
    }
    properties
        .iter()
        .map(|p| match check_one(&model, name, p, config, err) {
            Ok((report, _)) => Entry::Report(report),
            Err(e) => failure(Some(p), e),
        })
        .collect()
}

/// Runs every model of a corpus directory. Per-model failures are reported
/// as error rows and do not stop the run; the exit code is 3 if any
/// occurred and 0 otherwise.
pub fn run_corpus(dir: &Path, config: &CliConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = (|| -> Result<i32, CliError> {
        config.params.validate()?;
        let mut entries = Vec::new();
        for (name, path) in corpus_pairs(dir)? {
            entries.extend(corpus_entries(&name, &path, config, err));
        }
        emit(config.format, &entries, true, out)?;
        let failed = entries.iter().any(|e| matches!(e, Entry::Failure(_)));
        Ok(if failed { EXIT_USAGE } else { EXIT_OK })
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Parses a corpus JSON report.
pub fn parse_corpus_json(text: &str) -> serde_json::Result<Vec<Entry>> {
    serde_json::from_str(text)
}
