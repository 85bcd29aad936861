use std::fs;
use std::path::Path;
use std::process::ExitCode;

use expconc::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

pub const SEED_ENV: &str = "EXPCONC_SEED";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
    /// `experiment --check` found a failing criterion.
    Check(String, Value),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(Error::Json(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Lib(Error::Csv(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(Error::Numeric { .. } | Error::DykstraNonConvergence { .. }) => 2,
            CliError::Lib(_) => 1,
            CliError::Check(..) => 3,
        }
    }

    fn record(&self, command: &str) -> Value {
        let (code, message, extra) = match self {
            CliError::Usage(m) => ("usage", m.clone(), Value::Null),
            CliError::Lib(e) => {
                let extra = match e {
                    Error::Numeric { iterate, .. } => json!({ "iterate": iterate }),
                    Error::DykstraNonConvergence { last, iters, .. } => json!({ "last": last, "iters": iters }),
                    _ => Value::Null,
                };
                (e.code(), e.to_string(), extra)
            }
            CliError::Check(m, v) => ("check", m.clone(), v.clone()),
        };
        let mut context = json!({ "command": command });
        if let Value::Object(map) = extra {
            context.as_object_mut().unwrap().extend(map);
        }
        json!({ "code": code, "message": message, "context": context })
    }

    /// Writes a one-line JSON record to stderr and returns the exit code.
    pub fn report(&self, command: &str) -> ExitCode {
        eprintln!("{}", self.record(command));
        ExitCode::from(self.exit_code())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn to_pretty<T: Serialize>(v: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn emit<T: Serialize>(v: &T) -> CliResult<()> {
    print!("{}", to_pretty(v)?);
    Ok(())
}

/// Seed from `EXPCONC_SEED` when set.
pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{s}'"))),
        Err(_) => Ok(None),
    }
}

/// Flag, then config file, then environment, then `fallback`.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, fallback: u64) -> CliResult<u64> {
    Ok(match flag.or(file) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(fallback),
    })
}

pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
