//! The `smc` command line.
//!
//! Exit codes: 0 success, 1 bad input or I/O failure, 2 timeout, 3 stability
//! class refused for redundant masters, 4 master mismatch, 5 the accepted
//! answer failed verification.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::granularity;
use crate::par::ExecMode;
use crate::reliability::{self, ReliabilityError, ReliabilityProfile};
use crate::report::{RunStatus, RUN_CSV_HEADER};
use crate::runtime::apps::AppName;
use crate::runtime::{self, RunError};
use crate::transport::vc_run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_TIMEOUT: i32 = 2;
pub const EXIT_UNSUPPORTED: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;
pub const EXIT_UNVERIFIED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "smc", version, about = "Statistic-multiplexed computing over a simulated tuple space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one application and append a row to the run-report CSV.
    Run(IoArgs),
    /// Sweep grain sizes and write the tuning curve.
    Tune(IoArgs),
    /// Sweep circuit and tuple-space reliability over worker counts.
    Mtbf(IoArgs),
    /// Print the built-in applications and their stability classes.
    ListApps {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct IoArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output file; defaults to the config's `output_path`, then stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: invalid config at `{field}`: {message}")]
    Parse { path: PathBuf, field: String, message: String },
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid profile: {0}")]
    Profile(#[from] ReliabilityError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(RunError::UnsupportedStability { .. })
            | CliError::Config(ConfigError::Run(RunError::UnsupportedStability { .. })) => EXIT_UNSUPPORTED,
            _ => EXIT_INPUT,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<i32, CliError> {
    match command {
        Command::Run(io) => cmd_run(io),
        Command::Tune(io) => cmd_tune(io),
        Command::Mtbf(io) => cmd_mtbf(io),
        Command::ListApps { out } => {
            emit(out.as_deref(), &list_apps_csv(), false)?;
            Ok(EXIT_OK)
        }
    }
}

pub fn list_apps_csv() -> String {
    let mut out = String::from("app,stability\n");
    for app in AppName::ALL {
        out.push_str(&format!("{},{}\n", app.as_str(), app.stability()));
    }
    out
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Parse {
        path: path.into(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn load_run_config(io: &IoArgs) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = load(&io.config)?;
    if let Some(seed) = io.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// First 16 hex digits of the SHA-256 of the canonical config JSON.
pub fn run_id(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))[..16].to_string()
}

fn cmd_run(io: &IoArgs) -> Result<i32, CliError> {
    let cfg = load_run_config(io)?;
    let app_cfg = cfg.app_config();
    let app = app_cfg.build_app()?;
    let report = runtime::run(
        app.as_ref(),
        &app_cfg.worker_specs(),
        app_cfg.masters(),
        app_cfg.grain_mode,
        &cfg.fault_plan,
        &app_cfg.settings(),
    )?;

    let id = run_id(&cfg);
    let mut rows = format!("{}\n", report.csv_row(&id));
    if cfg.compare_vc {
        rows.push_str(&format!("{}\n", vc_run(&app_cfg, &cfg.fault_plan)?.csv_row(&id)));
    }
    let out = io.out.as_deref().or(cfg.output_path.as_deref());
    emit(out, &rows, true)?;

    Ok(match report.status {
        RunStatus::Timeout => EXIT_TIMEOUT,
        RunStatus::Mismatch => EXIT_MISMATCH,
        RunStatus::Success if !report.verified => EXIT_UNVERIFIED,
        RunStatus::Success => EXIT_OK,
    })
}

fn cmd_tune(io: &IoArgs) -> Result<i32, CliError> {
    let cfg = load_run_config(io)?;
    let app_cfg = cfg.app_config();
    let app = app_cfg.build_app()?;
    let result = granularity::tune(
        app.as_ref(),
        &app_cfg.worker_specs(),
        &cfg.fault_plan,
        &app_cfg.settings(),
        ExecMode::default(),
    );
    let result = match result {
        Ok(r) => r,
        Err(RunError::Unsuccessful(RunStatus::Timeout)) => {
            eprintln!("error: a tuning run timed out");
            return Ok(EXIT_TIMEOUT);
        }
        Err(e) => return Err(e.into()),
    };
    emit(io.out.as_deref().or(cfg.output_path.as_deref()), &result.to_csv(), false)?;
    Ok(EXIT_OK)
}

fn cmd_mtbf(io: &IoArgs) -> Result<i32, CliError> {
    let mut profile: ReliabilityProfile = load(&io.config)?;
    if let Some(seed) = io.seed {
        profile.base_seed = seed;
    }
    let curve = reliability::sweep(&profile, ExecMode::default())?;
    emit(io.out.as_deref(), &curve.to_csv(), false)?;
    Ok(EXIT_OK)
}

/// Writes `text` to stdout, or to `path` through a temporary file renamed
/// into place. With `append`, existing rows are kept and a header is added to
/// a new file.
fn emit(path: Option<&Path>, text: &str, append: bool) -> Result<(), CliError> {
    let Some(path) = path else {
        let body = if append { format!("{RUN_CSV_HEADER}\n{text}") } else { text.to_string() };
        io::stdout()
            .write_all(body.as_bytes())
            .map_err(|source| CliError::Write { path: "<stdout>".into(), source })?;
        return Ok(());
    };
    let write_err = |source| CliError::Write { path: path.into(), source };
    let mut body = String::new();
    if append {
        match fs::read_to_string(path) {
            Ok(existing) if !existing.is_empty() => {
                body.push_str(&existing);
                if !existing.ends_with('\n') {
                    body.push('\n');
                }
            }
            Ok(_) => body.push_str(&format!("{RUN_CSV_HEADER}\n")),
            Err(e) if e.kind() == io::ErrorKind::NotFound => body.push_str(&format!("{RUN_CSV_HEADER}\n")),
            Err(e) => return Err(write_err(e)),
        }
    }
    body.push_str(text);

    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(write_err)?;
    tmp.write_all(body.as_bytes()).map_err(write_err)?;
    tmp.persist(path).map_err(|e| write_err(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_four_apps() {
        let csv = list_apps_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("random_reduce,NonDetInDetOut"));
        assert!(csv.contains("matmul,DetInDetOut"));
    }

    #[test]
    fn append_adds_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        emit(Some(&path), "a\n", true).unwrap();
        emit(Some(&path), "b\n", true).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{RUN_CSV_HEADER}\na\nb\n"));
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(main_with_args(["smc", "--help"]), EXIT_OK);
        assert_eq!(main_with_args(["smc", "bogus"]), EXIT_INPUT);
    }
}
