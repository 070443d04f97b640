//! `cwt` command-line entry point.
//!
//! Every subcommand that writes a file also writes `<out>.manifest`, a JSON
//! [`RunManifest`] with the fully resolved flags; `cwt replay` re-runs it.

mod args;
mod commands;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use args::*;
pub use commands::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SELFCHECK: i32 = 3;

/// Bad flag values, reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Selfcheck found a failing group.
#[derive(Debug)]
pub struct SelfcheckFailed;

impl fmt::Display for SelfcheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("selfcheck failed")
    }
}

impl std::error::Error for SelfcheckFailed {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Resolved flag values keyed by flag name without dashes.
    pub flags: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn path_for(out: &Path) -> PathBuf {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing manifest {}: {e}", path.display()))
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Command line that reproduces the run, with `out` optionally replaced.
    pub fn argv(&self, out: Option<&Path>) -> Vec<OsString> {
        let mut argv: Vec<OsString> = vec!["cwt".into(), self.subcommand.clone().into()];
        for (key, value) in &self.flags {
            let flag = format!("--{}", key.replace('_', "-"));
            let value = match (key.as_str(), out) {
                ("out", Some(p)) => Value::String(p.to_string_lossy().into_owned()),
                _ => value.clone(),
            };
            match value {
                Value::Null | Value::Bool(false) => {}
                Value::Bool(true) => argv.push(flag.into()),
                Value::Array(items) => {
                    argv.push(flag.into());
                    argv.extend(items.iter().map(|v| OsString::from(scalar(v))));
                }
                v => {
                    argv.push(flag.into());
                    argv.push(scalar(&v).into());
                }
            }
        }
        argv
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub(crate) fn manifest_for(command: &Command, threads: usize, outputs: Vec<PathBuf>) -> anyhow::Result<RunManifest> {
    let Value::Object(map) = serde_json::to_value(command)? else {
        anyhow::bail!("flags did not serialize to a map");
    };
    let seed = map.get("seed").and_then(Value::as_u64);
    Ok(RunManifest {
        subcommand: command.name().to_string(),
        flags: map.into_iter().collect(),
        seed,
        threads,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
    })
}

/// `key = value` lines, `#` comments. Booleans take `true`/`false`; lists
/// are whitespace-separated.
pub fn parse_config(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!("config line {}: expected key=value: '{line}'", n + 1)));
        };
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Appends config entries whose flag is not already on the command line.
fn merge_config(mut argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let path = strs.iter().enumerate().find_map(|(i, a)| {
        a.strip_prefix("--config=")
            .map(str::to_string)
            .or_else(|| (a == "--config").then(|| strs.get(i + 1).cloned()).flatten())
    });
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config {path}: {e}")))?;
    for (key, value) in parse_config(&text)? {
        let flag = format!("--{key}");
        if strs.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        match value.as_str() {
            "false" => {}
            "true" => argv.push(flag.into()),
            _ => {
                argv.push(flag.into());
                argv.extend(value.split_whitespace().map(OsString::from));
            }
        }
    }
    Ok(argv)
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    match parse(argv).and_then(|cli| execute(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                let _ = clap_err.print();
                return match clap_err.kind() {
                    clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                    _ => EXIT_USAGE,
                };
            }
            if e.is::<SelfcheckFailed>() {
                eprintln!("error: {e}");
                return EXIT_SELFCHECK;
            }
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn parse(argv: Vec<OsString>) -> anyhow::Result<Cli> {
    let argv = merge_config(argv)?;
    Ok(Cli::try_parse_from(argv)?)
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a, threads),
        Command::Attack(a) => cmd_attack(a, threads),
        Command::Eval(a) => cmd_eval(a, threads),
        Command::Sweep(a) => cmd_sweep(a, threads),
        Command::Heatmap(a) => cmd_heatmap(a, threads),
        Command::Selfcheck(a) => cmd_selfcheck(a, threads),
        Command::CheckLinf(a) => cmd_check_linf(a),
        Command::Replay(a) => cmd_replay(a, threads),
    }
}
