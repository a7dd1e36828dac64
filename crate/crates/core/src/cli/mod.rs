//! Command implementations behind the `revdistill` binary.
//!
//! Every command writes a [`RunManifest`] next to its primary output and
//! returns an [`Outcome`] whose [`ExitClass`] becomes the process exit code.

mod commands;
pub mod config;
mod exec;
mod score;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use commands::{
    cmd_distill, cmd_eval_generation, cmd_eval_identification, cmd_kto_check, cmd_stats,
    IdentificationSource, KtoCheckArgs, LambdaCounts, TextRecord, ZeroPoint,
};
pub use config::{load_config, LoadedConfig, ToolConfig};
pub use score::{cmd_score, ScoreFailure};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitClass {
    Success,
    Failure,
    Config,
    Input,
    Transport,
    PartialFailure,
    CheckFailed,
}

impl ExitClass {
    pub fn code(self) -> u8 {
        match self {
            ExitClass::Success => 0,
            ExitClass::Failure => 1,
            ExitClass::Config => 3,
            ExitClass::Input => 4,
            ExitClass::Transport => 5,
            ExitClass::PartialFailure => 6,
            ExitClass::CheckFailed => 7,
        }
    }

    pub fn of_error(err: &Error) -> Self {
        match err.root() {
            Error::Config(_) => ExitClass::Config,
            Error::Transport { .. } | Error::Protocol { .. } => ExitClass::Transport,
            Error::Io { .. }
            | Error::Malformed { .. }
            | Error::EmptyFile { .. }
            | Error::DuplicateId(_)
            | Error::InvalidLabel(_)
            | Error::ConflictingLabel(_)
            | Error::UnknownEntry(_)
            | Error::MissingVerdict(_)
            | Error::Unscorable(_)
            | Error::Precondition(_)
            | Error::ContextOverflow { .. } => ExitClass::Input,
            Error::JudgeParse(_) | Error::Entry { .. } => ExitClass::Failure,
        }
    }
}

/// What a command accomplished, beyond the files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit: ExitClass,
    /// Human-readable summary for stdout.
    pub summary: String,
    pub manifest_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub input_digests: BTreeMap<String, String>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub exit_code: u8,
    pub details: serde_json::Value,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// What a command body hands back to [`run_command`].
pub(crate) struct Report {
    pub exit: ExitClass,
    pub summary: String,
    pub details: serde_json::Value,
}

fn digest_inputs(paths: impl IntoIterator<Item = PathBuf>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for p in paths {
        // Missing inputs surface as errors from the command itself.
        if let Ok(d) = config::sha256_file(&p) {
            out.insert(p.display().to_string(), d);
        }
    }
    out
}

/// Loads the configuration, runs `body`, and writes a manifest whatever the
/// result.
pub(crate) fn run_command<F>(
    command: &str,
    config_path: Option<&Path>,
    inputs: &[&Path],
    manifest_path: &Path,
    body: F,
) -> Result<Outcome>
where
    F: FnOnce(&LoadedConfig) -> Result<Report>,
{
    let started = now();
    let loaded = load_config(config_path);
    let config_digest = match (&loaded, config_path) {
        (Ok(l), _) => l.digest.clone(),
        (Err(_), Some(p)) => config::sha256_file(p).unwrap_or_default(),
        (Err(_), None) => String::new(),
    };
    let mut paths: Vec<PathBuf> = match &loaded {
        Ok(l) => l.inputs.clone(),
        Err(_) => config_path.map(Path::to_path_buf).into_iter().collect(),
    };
    paths.extend(inputs.iter().map(|p| p.to_path_buf()));
    let input_digests = digest_inputs(paths);
    if let Ok(l) = &loaded {
        tracing::debug!(config = %l.config.dump(), "effective configuration");
    }

    let result = loaded.and_then(|l| body(&l));
    let (exit, details) = match &result {
        Ok(r) => (r.exit, r.details.clone()),
        Err(e) => (
            ExitClass::of_error(e),
            serde_json::json!({ "error": e.to_string() }),
        ),
    };
    let manifest = RunManifest {
        command: command.to_string(),
        config_digest,
        input_digests,
        tool_version: TOOL_VERSION.to_string(),
        started,
        finished: now(),
        exit_code: exit.code(),
        details,
    };
    let written = write_json(manifest_path, &manifest);
    match result {
        Ok(r) => {
            written?;
            Ok(Outcome {
                exit: r.exit,
                summary: r.summary,
                manifest_path: manifest_path.to_path_buf(),
            })
        }
        Err(e) => {
            if let Err(w) = written {
                tracing::warn!(error = %w, "could not write run manifest");
            }
            Err(e)
        }
    }
}

/// `<path>.manifest.json`
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    crate::jsonl::write_bytes(path, text.as_bytes())
}
