use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use lorenz_lab::config::{OutputFormat, RunConfig};
use serde_json::{json, Value};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_FAILS: u8 = 3;
pub const EXIT_INCONCLUSIVE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>, exit: u8) -> Self {
        CliError { code: code.into(), message: message.into(), exit }
    }

    /// Maps a library error code to its exit status.
    pub fn from_code(code: &str, message: String) -> Self {
        let exit = match code {
            "BLOW_UP" | "STEP_UNDERFLOW" | "STEP_BUDGET" | "NON_FINITE_START" | "SEED_VALIDATION" | "VALIDATION_FAILED" | "NO_CROSSING"
            | "HORIZON_EXHAUSTED" | "IO" => EXIT_NUMERICAL,
            "CONDITION_A_FAILED" | "NO_COMPLEX_PAIR" | "ANCHOR_NOT_FOUND" | "SAME_CLASS_AT_ENDPOINTS" | "MISSING_CHECKPOINT" => EXIT_FAILS,
            _ => EXIT_USAGE,
        };
        CliError::new(code, message, exit)
    }
}

macro_rules! impl_from_lib_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::from_code(e.code(), e.to_string())
            }
        })*
    };
}

impl_from_lib_error!(
    lorenz_lab::DynamicsError,
    lorenz_lab::IntegrateError,
    lorenz_lab::ManifoldError,
    lorenz_lab::ConditionsError,
    lorenz_lab::SequenceError,
    lorenz_lab::ValidatedError,
    lorenz_lab::ConfigError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("IO", e.to_string(), EXIT_NUMERICAL)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Holds,
    Fails,
    Inconclusive,
}

impl Status {
    pub fn exit(self) -> u8 {
        match self {
            Status::Ok | Status::Holds => 0,
            Status::Fails => EXIT_FAILS,
            Status::Inconclusive => EXIT_INCONCLUSIVE,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::Holds => "HOLDS",
            Status::Fails => "FAILS",
            Status::Inconclusive => "INCONCLUSIVE",
        }
    }
}

pub struct Outcome {
    pub status: Status,
    pub report: Value,
    /// CSV form of the report, for commands that have one.
    pub csv: Option<String>,
    /// Human-readable lines for stderr.
    pub summary: Vec<(String, String)>,
    /// Where the JSON report goes when it is not `output.path`.
    pub report_file: Option<PathBuf>,
}

impl Outcome {
    pub fn new(status: Status, report: Value) -> Self {
        Outcome { status, report, csv: None, summary: Vec::new(), report_file: None }
    }

    pub fn line(mut self, key: &str, value: impl ToString) -> Self {
        self.summary.push((key.to_string(), value.to_string()));
        self
    }
}

/// Report envelope. It holds nothing that varies between runs of the same
/// configuration.
pub fn envelope(command: &str, cfg: &RunConfig, status: Status, report: &Value) -> Value {
    json!({
        "command": command,
        "status": status.label(),
        "exit_code": status.exit(),
        "config": cfg,
        "report": report,
        "metadata": { "tool": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
    })
}

fn write_target(path: Option<&PathBuf>, content: &str) -> std::io::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, content)
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())?;
            out.flush()
        }
    }
}

pub fn finish(command: &str, cfg: &RunConfig, outcome: Outcome) -> ExitCode {
    let status = outcome.status;
    let content = match (cfg.output.format, &outcome.csv) {
        (OutputFormat::Csv, Some(csv)) => csv.clone(),
        _ => {
            let mut s = serde_json::to_string_pretty(&envelope(command, cfg, status, &outcome.report)).expect("report serializes");
            s.push('\n');
            s
        }
    };
    let target = outcome.report_file.clone().or_else(|| cfg.output.path.as_ref().map(PathBuf::from));
    if let Err(e) = write_target(target.as_ref(), &content) {
        return fail(Some(command), &CliError::from(e));
    }
    if outcome.report_file.is_some() && cfg.output.format == OutputFormat::Json {
        // The report went into the output directory; echo it as well.
        let _ = write_target(None, &content);
    }
    let mut err = std::io::stderr().lock();
    let width = outcome.summary.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(6);
    let _ = writeln!(err, "{command}: {}", status.label());
    for (k, v) in &outcome.summary {
        let _ = writeln!(err, "  {k:<width$}  {v}");
    }
    ExitCode::from(status.exit())
}

/// Emits the error as JSON on stdout and as a message on stderr.
pub fn fail(command: Option<&str>, e: &CliError) -> ExitCode {
    let doc = json!({
        "command": command,
        "status": "ERROR",
        "exit_code": e.exit,
        "error": { "code": e.code, "message": e.message },
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("error serializes"));
    eprintln!("lorenz-lab: error [{}]: {}", e.code, e.message);
    ExitCode::from(e.exit)
}
