use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::exec::run_ordered;
use super::{manifest_path_for, run_command, write_json, ExitClass, Outcome, Report};
use crate::backend::Backend;
use crate::corpus::{load_annotations, load_corpus, Corpus, Label, Split};
use crate::distill::{
    self, render_review_prompt, DesirednessVerdict, KtoRecord, REVIEW_INSTRUCTION,
};
use crate::error::{Error, Result};
use crate::eval::{bleu4, confusion, llm_judge, metrics, ten_line_rule};
use crate::jsonl::{read_records, write_records};
use crate::kto::{check_lambda_constraint, kl_reference_point, kto_loss, KtoExample};
use crate::scoring::{render_refine_prompt, DesirednessScore};

fn records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_records(path)?.into_iter().map(|(_, r)| r).collect())
}

fn read_verdicts(path: &Path) -> Result<Vec<DesirednessVerdict>> {
    let verdicts: Vec<DesirednessVerdict> = records(path)?;
    let mut seen = HashSet::new();
    for v in &verdicts {
        if !seen.insert(v.entry_id.as_str()) {
            return Err(Error::DuplicateId(v.entry_id.clone()));
        }
    }
    Ok(verdicts)
}

/// Builds consensus verdicts and the SFT and KTO datasets under `out_dir`.
pub fn cmd_distill(
    corpus_path: &Path,
    split: Split,
    scores_path: &Path,
    config_path: Option<&Path>,
    out_dir: &Path,
) -> Result<Outcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    run_command(
        "distill",
        config_path,
        &[corpus_path, scores_path],
        &out_dir.join("manifest.json"),
        |loaded| {
            let cfg = &loaded.config;
            let corpus = load_corpus(corpus_path, split)?;
            let scores: Vec<DesirednessScore> = records(scores_path)?;
            let backend_ids = cfg.backend_ids();
            let backends = (!backend_ids.is_empty()).then_some(backend_ids.as_slice());
            let limit = cfg.scoring.truncation_limit;
            let data = distill::distill(
                &corpus,
                &scores,
                backends,
                limit,
                cfg.scoring.token_counter.counter(),
            )?;

            write_records(&out_dir.join("verdicts.jsonl"), &data.verdicts)?;
            write_records(&out_dir.join("sft.jsonl"), &data.sft.records)?;
            write_records(&out_dir.join("kto.jsonl"), &data.kto.records)?;
            write_json(&out_dir.join("stats.json"), &data.stats)?;
            crate::jsonl::write_bytes(
                &out_dir.join("stats.txt"),
                data.stats.to_string().as_bytes(),
            )?;
            let metadata = json!({
                "review_instruction": REVIEW_INSTRUCTION,
                "review_prompt_template": render_review_prompt("{hunk}"),
                "refine_prompt_template": render_refine_prompt("{code}", Some("{comment}"))?,
                "refine_prompt_template_without_comment": render_refine_prompt("{code}", None)?,
                "truncation_limit": limit,
                "token_counter": cfg.scoring.token_counter,
                "sft_truncated": data.sft.truncated,
                "kto_truncated": data.kto.truncated,
                "unscorable": data.unscorable,
                "incomplete": data.incomplete,
            });
            write_json(&out_dir.join("metadata.json"), &metadata)?;

            if data.sft.records.is_empty() {
                tracing::warn!("no desired entries; the SFT dataset is empty");
            }
            if !data.incomplete.is_empty() {
                tracing::warn!(
                    count = data.incomplete.len(),
                    "entries lack scores from some backends and were left out"
                );
            }
            let summary = format!(
                "{}\nwrote {} SFT and {} KTO records to {}",
                data.stats,
                data.sft.records.len(),
                data.kto.records.len(),
                out_dir.display()
            );
            let details = json!({
                "verdicts": data.verdicts.len(),
                "sft_records": data.sft.records.len(),
                "kto_records": data.kto.records.len(),
                "stats": data.stats,
                "incomplete": data.incomplete.len(),
            });
            Ok(Report {
                exit: ExitClass::Success,
                summary,
                details,
            })
        },
    )
}

/// Recomputes corpus statistics from a verdict file. With a corpus, entries
/// lacking a verdict count as unscorable.
pub fn cmd_stats(
    verdicts_path: &Path,
    corpus: Option<(&Path, Split)>,
    out: &Path,
) -> Result<Outcome> {
    let mut inputs = vec![verdicts_path];
    inputs.extend(corpus.map(|c| c.0));
    run_command("stats", None, &inputs, &manifest_path_for(out), |_| {
        let verdicts = read_verdicts(verdicts_path)?;
        let unscorable = match corpus {
            None => 0,
            Some((path, split)) => {
                let corpus = load_corpus(path, split)?;
                distill::partition(&corpus, &verdicts)?.unscorable.len()
            }
        };
        let stats = distill::stats(verdicts.iter().map(|v| &v.verdict), unscorable);
        write_json(out, &stats)?;
        Ok(Report {
            exit: ExitClass::Success,
            summary: stats.to_string(),
            details: json!({ "stats": stats }),
        })
    })
}

/// Where identification predictions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum IdentificationSource {
    Verdicts(PathBuf),
    TenLine {
        corpus: PathBuf,
        split: Split,
    },
    /// Uses the named backend from the config, or the first one.
    LlmJudge {
        corpus: PathBuf,
        split: Split,
        backend: Option<String>,
    },
}

impl IdentificationSource {
    fn method(&self) -> &'static str {
        match self {
            IdentificationSource::Verdicts(_) => "desiredness",
            IdentificationSource::TenLine { .. } => "10-line rule",
            IdentificationSource::LlmJudge { .. } => "LLM judge",
        }
    }

    fn input(&self) -> &Path {
        match self {
            IdentificationSource::Verdicts(p) => p,
            IdentificationSource::TenLine { corpus, .. }
            | IdentificationSource::LlmJudge { corpus, .. } => corpus,
        }
    }
}

fn labeled_entries<'a>(
    corpus: &'a Corpus,
    labels: &BTreeMap<String, Label>,
) -> Result<Vec<&'a crate::corpus::ReviewEntry>> {
    labels
        .keys()
        .map(|id| {
            corpus
                .get(id)
                .ok_or_else(|| Error::UnknownEntry(id.clone()))
        })
        .collect()
}

/// Scores a prediction source against human annotations.
pub fn cmd_eval_identification(
    annotations_path: &Path,
    source: &IdentificationSource,
    config_path: Option<&Path>,
    out: &Path,
) -> Result<Outcome> {
    run_command(
        "eval-identification",
        config_path,
        &[annotations_path, source.input()],
        &manifest_path_for(out),
        |loaded| {
            let labels = load_annotations(annotations_path)?;
            let mut failures = Vec::new();
            let predicted: BTreeMap<String, Label> = match source {
                IdentificationSource::Verdicts(path) => read_verdicts(path)?
                    .into_iter()
                    .map(|v| (v.entry_id, v.verdict))
                    .collect(),
                IdentificationSource::TenLine { corpus, split } => {
                    let corpus = load_corpus(corpus, *split)?;
                    labeled_entries(&corpus, &labels)?
                        .into_iter()
                        .map(|e| (e.entry_id.clone(), ten_line_rule(e)))
                        .collect()
                }
                IdentificationSource::LlmJudge {
                    corpus,
                    split,
                    backend,
                } => {
                    let corpus = load_corpus(corpus, *split)?;
                    let entries = labeled_entries(&corpus, &labels)?;
                    let cfg = match backend {
                        Some(id) => loaded.config.backends.iter().find(|b| &b.backend_id == id),
                        None => loaded.config.backends.first(),
                    }
                    .ok_or_else(|| {
                        Error::Config("no matching backend configured for the judge".into())
                    })?;
                    let judge = Backend::connect(cfg)?;
                    let mut predicted = BTreeMap::new();
                    run_ordered(
                        &entries,
                        |_| 0,
                        &[cfg.max_parallel],
                        |e| llm_judge(e, &judge),
                        |i, r| match r {
                            Ok(label) => {
                                predicted.insert(entries[i].entry_id.clone(), label);
                            }
                            Err(e) => {
                                tracing::warn!(entry_id = %entries[i].entry_id, error = %e, "judge failed");
                                failures.push(json!({ "entry_id": entries[i].entry_id, "error": e.to_string() }));
                            }
                        },
                    );
                    predicted
                }
            };
            // Entries the judge could not answer are reported, not counted.
            let judged: BTreeMap<String, Label> = if failures.is_empty() {
                labels.clone()
            } else {
                labels
                    .iter()
                    .filter(|(id, _)| predicted.contains_key(*id))
                    .map(|(k, v)| (k.clone(), *v))
                    .collect()
            };
            let report = metrics(confusion(&predicted, &judged)?)?;
            let method = source.method();
            write_json(
                out,
                &json!({ "method": method, "metrics": report, "failures": failures }),
            )?;
            let exit = if failures.is_empty() {
                ExitClass::Success
            } else {
                ExitClass::PartialFailure
            };
            let mut summary = report.table(method);
            if !failures.is_empty() {
                summary.push_str(&format!("{} entries could not be judged\n", failures.len()));
            }
            let details =
                json!({ "method": method, "evaluated": judged.len(), "failed": failures.len() });
            Ok(Report {
                exit,
                summary,
                details,
            })
        },
    )
}

/// One side of a generation evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextRecord {
    pub entry_id: String,
    pub text: String,
}

fn text_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for r in records::<TextRecord>(path)? {
        if out.insert(r.entry_id.clone(), r.text).is_some() {
            return Err(Error::DuplicateId(r.entry_id));
        }
    }
    Ok(out)
}

/// Mean sentence BLEU-4 of candidates against references paired by entry_id.
pub fn cmd_eval_generation(
    candidates_path: &Path,
    references_path: &Path,
    out: &Path,
) -> Result<Outcome> {
    run_command(
        "eval-generation",
        None,
        &[candidates_path, references_path],
        &manifest_path_for(out),
        |_| {
            let candidates = text_map(candidates_path)?;
            let references = text_map(references_path)?;
            if let Some(id) = candidates.keys().find(|id| !references.contains_key(*id)) {
                return Err(Error::UnknownEntry(id.clone()));
            }
            if let Some(id) = references.keys().find(|id| !candidates.contains_key(*id)) {
                return Err(Error::precondition(format!(
                    "no candidate for reference {id:?}"
                )));
            }
            let mut per_entry = Vec::with_capacity(candidates.len());
            let mut total = 0.0;
            for (id, cand) in &candidates {
                let b = bleu4(cand, &references[id]).map_err(|e| e.for_entry(id))?;
                total += b;
                per_entry.push(json!({ "entry_id": id, "bleu4": b }));
            }
            if per_entry.is_empty() {
                return Err(Error::precondition("no candidate/reference pairs"));
            }
            let mean = total / per_entry.len() as f64;
            write_json(
                out,
                &json!({ "bleu4": mean, "count": per_entry.len(), "per_entry": per_entry }),
            )?;
            let summary = format!("BLEU-4: {:.2} over {} pairs", mean * 100.0, per_entry.len());
            Ok(Report {
                exit: ExitClass::Success,
                summary,
                details: json!({ "bleu4": mean, "count": per_entry.len() }),
            })
        },
    )
}

/// Class counts given on the command line as `DESIRED,UNDESIRED`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LambdaCounts {
    pub desired: usize,
    pub undesired: usize,
}

impl FromStr for LambdaCounts {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (d, u) = s.split_once(',').ok_or("expected DESIRED,UNDESIRED")?;
        let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
        Ok(LambdaCounts {
            desired: parse(d)?,
            undesired: parse(u)?,
        })
    }
}

/// How the loss audit obtains its reference point.
#[derive(Debug, Clone, PartialEq)]
pub enum ZeroPoint {
    Fixed(f64),
    /// File of `{policy_logprob, ref_logprob}` lines on mismatched pairs.
    Mismatched(PathBuf),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct MismatchedPair {
    policy_logprob: f64,
    ref_logprob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KtoCheckArgs {
    /// A `kto.jsonl` from `distill`; its labels give the class counts.
    pub kto: Option<PathBuf>,
    pub counts: Option<LambdaCounts>,
    /// Logprob file for a loss audit.
    pub audit: Option<PathBuf>,
    pub z0: ZeroPoint,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

/// Checks the class-weight constraint and optionally audits the loss.
pub fn cmd_kto_check(args: &KtoCheckArgs) -> Result<Outcome> {
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(args.kto.as_deref());
    inputs.extend(args.audit.as_deref());
    if let ZeroPoint::Mismatched(p) = &args.z0 {
        inputs.push(p);
    }
    run_command(
        "kto-check",
        args.config.as_deref(),
        &inputs,
        &manifest_path_for(&args.out),
        |loaded| {
            let cfg = &loaded.config.kto;
            let counts = match (&args.kto, args.counts) {
                (Some(path), None) => {
                    let recs: Vec<KtoRecord> = records(path)?;
                    let desired = recs.iter().filter(|r| r.label == Label::Desired).count();
                    Some(LambdaCounts {
                        desired,
                        undesired: recs.len() - desired,
                    })
                }
                (None, c) => c,
                (Some(_), Some(_)) => {
                    return Err(Error::Config(
                        "give either a KTO file or counts, not both".into(),
                    ))
                }
            };
            if counts.is_none() && args.audit.is_none() {
                return Err(Error::Config(
                    "nothing to check: give a KTO file, counts, or an audit file".into(),
                ));
            }
            let check = counts
                .map(|c| check_lambda_constraint(cfg, c.desired, c.undesired))
                .transpose()?;

            let audit = match &args.audit {
                None => None,
                Some(path) => {
                    let batch: Vec<KtoExample> = records(path)?;
                    let z0 = match &args.z0 {
                        ZeroPoint::Fixed(z) => *z,
                        ZeroPoint::Mismatched(p) => {
                            let rewards: Vec<f64> = records::<MismatchedPair>(p)?
                                .iter()
                                .map(|m| m.policy_logprob - m.ref_logprob)
                                .collect();
                            kl_reference_point(&rewards)?
                        }
                    };
                    Some(
                        json!({ "examples": batch.len(), "z0": z0, "loss": kto_loss(&batch, z0, cfg)? }),
                    )
                }
            };

            let report =
                json!({ "kto": cfg, "counts": counts, "lambda_check": check, "audit": audit });
            write_json(&args.out, &report)?;
            let mut summary = String::new();
            if let Some(c) = &check {
                summary.push_str(&format!(
                "lambda ratio {:.4} ({}); lambda_desired in [{:.4}, {:.4}] satisfies the constraint\n",
                c.ratio,
                if c.ok { "ok" } else { "outside [1, 4/3]" },
                c.lambda_desired_range.0,
                c.lambda_desired_range.1
            ));
            }
            if let Some(a) = &audit {
                summary.push_str(&format!(
                    "loss {} over {} examples (z0 = {})\n",
                    a["loss"], a["examples"], a["z0"]
                ));
            }
            let exit = if check.is_some_and(|c| !c.ok) {
                ExitClass::CheckFailed
            } else {
                ExitClass::Success
            };
            Ok(Report {
                exit,
                summary,
                details: report,
            })
        },
    )
}
