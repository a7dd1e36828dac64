//! Consensus verdicts and dataset emission.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{truncate_tokens, Corpus, Label, ReviewEntry, TokenCounter};
use crate::error::{Error, Result};
use crate::scoring::DesirednessScore;

pub const REVIEW_INSTRUCTION: &str =
    "Review the given code and provide a constructive code review comment.";

/// The review-generation prompt used for both fine-tuning and alignment data.
pub fn render_review_prompt(hunk: &str) -> String {
    format!("{REVIEW_INSTRUCTION}\nThe code/(diff hunk) is: '{hunk} '")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesirednessVerdict {
    pub entry_id: String,
    pub per_backend_ds: BTreeMap<String, f64>,
    pub consensus_ds: f64,
    pub verdict: Label,
}

/// Median with the midpoint convention for even lengths. `values` must be
/// non-empty and is sorted in place.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn median_consensus(scores: &[DesirednessScore]) -> Result<DesirednessVerdict> {
    let first = scores
        .first()
        .ok_or_else(|| Error::precondition("consensus needs at least one score"))?;
    let mut per_backend_ds = BTreeMap::new();
    for s in scores {
        if s.entry_id != first.entry_id {
            return Err(Error::precondition(format!(
                "scores for different entries ({:?} and {:?})",
                first.entry_id, s.entry_id
            )));
        }
        if per_backend_ds.insert(s.backend_id.clone(), s.ds).is_some() {
            return Err(Error::precondition(format!(
                "backend {:?} scored entry {:?} twice",
                s.backend_id, s.entry_id
            )));
        }
    }
    let mut values: Vec<f64> = scores.iter().map(|s| s.ds).collect();
    let consensus_ds = median(&mut values);
    Ok(DesirednessVerdict {
        entry_id: first.entry_id.clone(),
        per_backend_ds,
        consensus_ds,
        verdict: Label::from_score(consensus_ds),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Consensus {
    /// Sorted by entry_id.
    pub verdicts: Vec<DesirednessVerdict>,
    /// Entries missing a score from at least one backend.
    pub incomplete: Vec<String>,
}

/// Groups a score file by entry and takes the median per entry. An entry is
/// judged only when every backend in `backends` scored it; when `backends`
/// is `None`, the set of backends appearing anywhere in `scores` is used.
pub fn build_consensus(
    scores: &[DesirednessScore],
    backends: Option<&[String]>,
) -> Result<Consensus> {
    let expected: BTreeSet<&str> = match backends {
        Some(b) => b.iter().map(String::as_str).collect(),
        None => scores.iter().map(|s| s.backend_id.as_str()).collect(),
    };
    let mut by_entry: BTreeMap<&str, Vec<DesirednessScore>> = BTreeMap::new();
    for s in scores {
        if expected.contains(s.backend_id.as_str()) {
            by_entry.entry(&s.entry_id).or_default().push(s.clone());
        }
    }
    let mut out = Consensus::default();
    for (id, group) in by_entry {
        let have: BTreeSet<&str> = group.iter().map(|s| s.backend_id.as_str()).collect();
        if have == expected {
            out.verdicts.push(median_consensus(&group)?);
        } else {
            out.incomplete.push(id.to_string());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition<'a> {
    pub desired: Vec<&'a ReviewEntry>,
    pub undesired: Vec<&'a ReviewEntry>,
    pub unscorable: Vec<&'a ReviewEntry>,
}

pub fn partition<'a>(corpus: &'a Corpus, verdicts: &[DesirednessVerdict]) -> Result<Partition<'a>> {
    let ids: HashSet<&str> = corpus.iter().map(|e| e.entry_id.as_str()).collect();
    let mut by_id = BTreeMap::new();
    for v in verdicts {
        if !ids.contains(v.entry_id.as_str()) {
            return Err(Error::UnknownEntry(v.entry_id.clone()));
        }
        by_id.insert(v.entry_id.as_str(), v.verdict);
    }
    let mut p = Partition::default();
    for entry in corpus.iter() {
        match by_id.get(entry.entry_id.as_str()) {
            Some(Label::Desired) => p.desired.push(entry),
            Some(Label::Undesired) => p.undesired.push(entry),
            None => p.unscorable.push(entry),
        }
    }
    Ok(p)
}

/// Fine-tuning record in instruction/input/output layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl SftRecord {
    /// The full prompt the model sees.
    pub fn instruction_prompt(&self) -> String {
        render_review_prompt(&self.input)
    }

    pub fn target_comment(&self) -> &str {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KtoRecord {
    pub prompt: String,
    pub completion: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emission<T> {
    pub records: Vec<T>,
    /// entry_ids whose hunk was cut to fit the token budget.
    pub truncated: Vec<String>,
}

impl<T> Default for Emission<T> {
    fn default() -> Self {
        Emission {
            records: Vec::new(),
            truncated: Vec::new(),
        }
    }
}

/// Cuts the hunk so the rendered review prompt fits in `limit` tokens.
fn fit_hunk(hunk: &str, limit: usize, counter: &dyn TokenCounter) -> Result<(String, bool)> {
    let frame = counter.count_tokens(&render_review_prompt(""));
    if frame >= limit {
        return Err(Error::ContextOverflow {
            needed: frame + counter.count_tokens(hunk),
            limit,
        });
    }
    let t = truncate_tokens(hunk, limit - frame, counter)?;
    Ok((t.text, t.truncated))
}

pub fn emit_sft(
    desired: &[&ReviewEntry],
    limit: usize,
    counter: &dyn TokenCounter,
) -> Result<Emission<SftRecord>> {
    let mut out = Emission::default();
    for entry in desired {
        let (hunk, cut) = fit_hunk(&entry.old_hunk, limit, counter)?;
        if cut {
            out.truncated.push(entry.entry_id.clone());
        }
        out.records.push(SftRecord {
            instruction: REVIEW_INSTRUCTION.to_string(),
            input: hunk,
            output: entry.comment.clone(),
        });
    }
    Ok(out)
}

pub fn emit_kto(
    scored: &[&ReviewEntry],
    verdicts: &[DesirednessVerdict],
    limit: usize,
    counter: &dyn TokenCounter,
) -> Result<Emission<KtoRecord>> {
    let by_id: BTreeMap<&str, Label> = verdicts
        .iter()
        .map(|v| (v.entry_id.as_str(), v.verdict))
        .collect();
    let mut out = Emission::default();
    for entry in scored {
        let label = *by_id
            .get(entry.entry_id.as_str())
            .ok_or_else(|| Error::MissingVerdict(entry.entry_id.clone()))?;
        let (hunk, cut) = fit_hunk(&entry.old_hunk, limit, counter)?;
        if cut {
            out.truncated.push(entry.entry_id.clone());
        }
        out.records.push(KtoRecord {
            prompt: render_review_prompt(&hunk),
            completion: entry.comment.clone(),
            label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub desired: usize,
    pub undesired: usize,
    /// `None` when nothing was scored.
    pub desired_pct: Option<f64>,
    pub undesired_pct: Option<f64>,
    pub unscorable: usize,
}

/// `100 · part / whole` rounded half-up to two decimals, in exact integer
/// arithmetic.
pub fn percent_2dp(part: usize, whole: usize) -> Option<f64> {
    if whole == 0 {
        return None;
    }
    let (part, whole) = (part as u128, whole as u128);
    let hundredths = (20_000 * part + whole) / (2 * whole);
    Some(hundredths as f64 / 100.0)
}

pub fn stats<'a>(verdicts: impl IntoIterator<Item = &'a Label>, unscorable: usize) -> CorpusStats {
    let (mut desired, mut undesired) = (0, 0);
    for v in verdicts {
        match v {
            Label::Desired => desired += 1,
            Label::Undesired => undesired += 1,
        }
    }
    let scored = desired + undesired;
    CorpusStats {
        total: scored + unscorable,
        desired,
        undesired,
        desired_pct: percent_2dp(desired, scored),
        undesired_pct: percent_2dp(undesired, scored),
        unscorable,
    }
}

impl CorpusStats {
    pub fn scored(&self) -> usize {
        self.desired + self.undesired
    }
}

fn pct(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}%"))
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let total = if self.scored() > 0 { "100%" } else { "n/a" };
        writeln!(
            f,
            "| {:<10} | {:<16} | {:<16} | {:<16} |",
            "Scored", "Total", "Desired", "Undesired"
        )?;
        writeln!(f, "|{:-<12}|{:-<18}|{:-<18}|{:-<18}|", "", "", "", "")?;
        writeln!(
            f,
            "| {:<10} | {:<16} | {:<16} | {:<16} |",
            "",
            format!("{} ({total})", self.scored()),
            format!("{} ({})", self.desired, pct(self.desired_pct)),
            format!("{} ({})", self.undesired, pct(self.undesired_pct)),
        )?;
        writeln!(
            f,
            "unscorable: {} (of {} entries)",
            self.unscorable, self.total
        )
    }
}

/// Everything produced from one corpus and one score file.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledDataset {
    pub verdicts: Vec<DesirednessVerdict>,
    pub sft: Emission<SftRecord>,
    pub kto: Emission<KtoRecord>,
    pub stats: CorpusStats,
    /// Unscorable entry ids, in corpus order.
    pub unscorable: Vec<String>,
    /// Entries with a fix that lacked a score from some backend.
    pub incomplete: Vec<String>,
}

pub fn distill(
    corpus: &Corpus,
    scores: &[DesirednessScore],
    backends: Option<&[String]>,
    limit: usize,
    counter: &dyn TokenCounter,
) -> Result<DistilledDataset> {
    let ids: HashSet<&str> = corpus.iter().map(|e| e.entry_id.as_str()).collect();
    if let Some(s) = scores.iter().find(|s| !ids.contains(s.entry_id.as_str())) {
        return Err(Error::UnknownEntry(s.entry_id.clone()));
    }
    let consensus = build_consensus(scores, backends)?;
    let part = partition(corpus, &consensus.verdicts)?;

    let mut desired = part.desired.clone();
    desired.sort_by(|a, b| a.entry_id.cmp(&b.entry_id));
    let mut scored: Vec<_> = part
        .desired
        .iter()
        .chain(&part.undesired)
        .copied()
        .collect();
    scored.sort_by(|a, b| a.entry_id.cmp(&b.entry_id));

    let sft = emit_sft(&desired, limit, counter)?;
    let kto = emit_kto(&scored, &consensus.verdicts, limit, counter)?;
    let stats = stats(
        consensus.verdicts.iter().map(|v| &v.verdict),
        part.unscorable.len(),
    );
    Ok(DistilledDataset {
        verdicts: consensus.verdicts,
        sft,
        kto,
        stats,
        unscorable: part.unscorable.iter().map(|e| e.entry_id.clone()).collect(),
        incomplete: consensus.incomplete,
    })
}
