use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::exec::run_ordered;
use super::{manifest_path_for, run_command, ExitClass, Outcome, Report};
use crate::backend::Backend;
use crate::corpus::{load_corpus, Split};
use crate::error::{Error, Result};
use crate::scoring::{desiredness, DesirednessScore, ScoringConfig};

/// One line of `<out>.errors.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub entry_id: String,
    pub backend_id: String,
    pub class: ExitClass,
    pub error: String,
}

fn errors_path(out: &Path) -> std::path::PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".errors.jsonl");
    out.with_file_name(name)
}

/// Loads the finished (entry, backend) pairs from an existing score file,
/// dropping a trailing line cut short by an interrupted run.
fn resume_state(out: &Path) -> Result<HashSet<(String, String)>> {
    let mut bytes = match std::fs::read(out) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
        Err(e) => return Err(Error::io(out, e)),
    };
    if !bytes.is_empty() && !bytes.ends_with(b"\n") {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        tracing::warn!(path = %out.display(), dropped = bytes.len() - keep, "discarding incomplete trailing line");
        bytes.truncate(keep);
        crate::jsonl::write_bytes(out, &bytes)?;
    }
    let mut done = HashSet::new();
    for (line, text) in crate::jsonl::split_lines(out, &bytes)? {
        let s: DesirednessScore = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: out.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        done.insert((s.entry_id, s.backend_id));
    }
    Ok(done)
}

/// Scores every scorable entry with every configured backend, appending to
/// `out`. Pairs already present in `out` are skipped.
pub fn cmd_score(
    corpus_path: &Path,
    split: Split,
    config_path: Option<&Path>,
    out: &Path,
) -> Result<Outcome> {
    run_command(
        "score",
        config_path,
        &[corpus_path],
        &manifest_path_for(out),
        |loaded| {
            let cfg = &loaded.config;
            if cfg.backends.is_empty() {
                return Err(Error::Config(
                    "at least one backend must be configured".into(),
                ));
            }
            let corpus = load_corpus(corpus_path, split)?;
            let backends = cfg
                .backends
                .iter()
                .map(Backend::connect)
                .collect::<Result<Vec<_>>>()?;
            let scoring = ScoringConfig {
                truncation_limit: cfg.scoring.truncation_limit,
            };

            let done = resume_state(out)?;
            let mut unscorable = Vec::new();
            let mut tasks = Vec::new();
            let mut skipped = 0usize;
            for entry in corpus.iter() {
                if !entry.is_scorable() {
                    unscorable.push(entry.entry_id.clone());
                    continue;
                }
                for (b, backend) in backends.iter().enumerate() {
                    if done.contains(&(entry.entry_id.clone(), backend.id().to_string())) {
                        skipped += 1;
                    } else {
                        tasks.push((entry, b));
                    }
                }
            }
            tracing::info!(
                pending = tasks.len(),
                skipped,
                unscorable = unscorable.len(),
                "scoring"
            );

            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(out)
                .map_err(|e| Error::io(out, e))?;
            let mut written = 0usize;
            let mut truncated = Vec::new();
            let mut failures = Vec::new();
            let mut write_error = None;
            let workers: Vec<usize> = backends.iter().map(|b| b.config().max_parallel).collect();
            run_ordered(
                &tasks,
                |t| t.1,
                &workers,
                |&(entry, b)| desiredness(entry, &backends[b], &scoring),
                |i, result| {
                    let (entry, b) = tasks[i];
                    let backend_id = backends[b].id();
                    match result {
                        Ok(scored) => {
                            if write_error.is_some() {
                                return;
                            }
                            let mut line =
                                serde_json::to_string(&scored.score).expect("score serializes");
                            line.push('\n');
                            if let Err(e) =
                                file.write_all(line.as_bytes()).and_then(|_| file.flush())
                            {
                                write_error = Some(Error::io(out, e));
                                return;
                            }
                            written += 1;
                            if scored.truncated {
                                truncated.push(
                                    json!({ "entry_id": entry.entry_id, "backend_id": backend_id }),
                                );
                            }
                        }
                        Err(e) => {
                            tracing::warn!(entry_id = %entry.entry_id, backend_id, error = %e, "scoring failed");
                            failures.push(ScoreFailure {
                                entry_id: entry.entry_id.clone(),
                                backend_id: backend_id.to_string(),
                                class: ExitClass::of_error(&e),
                                error: e.to_string(),
                            });
                        }
                    }
                },
            );
            if let Some(e) = write_error {
                return Err(e);
            }

            let errors = errors_path(out);
            if failures.is_empty() {
                match std::fs::remove_file(&errors) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(Error::io(&errors, e)),
                }
            } else {
                crate::jsonl::write_records(&errors, &failures)?;
            }

            let exit = if failures.is_empty() {
                ExitClass::Success
            } else if written == 0 && failures.iter().all(|f| f.class == ExitClass::Transport) {
                ExitClass::Transport
            } else {
                ExitClass::PartialFailure
            };
            let summary = format!(
            "scored {written} pairs ({skipped} already present, {} failed, {} unscorable entries) -> {}",
            failures.len(),
            unscorable.len(),
            out.display()
        );
            let renderings: Vec<_> = backends
                .iter()
                .map(|b| {
                    let c = b.config();
                    json!({
                        "backend_id": c.backend_id,
                        "kind": c.kind,
                        "model_name": c.model_name,
                        "prompt_prefix": c.prompt_prefix,
                        "prompt_suffix": c.prompt_suffix,
                    })
                })
                .collect();
            let details = json!({
                "output": out.display().to_string(),
                "written": written,
                "skipped_existing": skipped,
                "failed": failures.len(),
                "failures": failures,
                "unscorable": unscorable,
                "truncated": truncated,
                "truncation_limit": scoring.truncation_limit,
                "backends": renderings,
            });
            Ok(Report {
                exit,
                summary,
                details,
            })
        },
    )
}
