//! Review corpora, annotation files and token-budget truncation.
//!
//! A corpus file holds one JSON object per line with exactly the fields of
//! [`ReviewEntry`]. `new_hunk` and `human_label` may be `null`; entries
//! without a recorded fix load fine but cannot be scored.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Desired,
    Undesired,
}

impl Label {
    /// Desired iff the score is strictly positive; a score of exactly zero
    /// is undesired.
    pub fn from_score(ds: f64) -> Self {
        if ds > 0.0 {
            Label::Desired
        } else {
            Label::Undesired
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Desired => "desired",
            Label::Undesired => "undesired",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desired" => Ok(Label::Desired),
            "undesired" => Ok(Label::Undesired),
            other => Err(Error::InvalidLabel(other.to_string())),
        }
    }
}

/// One review record: the hunk under review, the comment left on it, and
/// the code as it looked after the author reacted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewEntry {
    pub entry_id: String,
    pub language: String,
    pub old_hunk: String,
    pub comment: String,
    #[serde(default)]
    pub new_hunk: Option<String>,
    #[serde(default)]
    pub human_label: Option<Label>,
}

impl ReviewEntry {
    pub fn is_scorable(&self) -> bool {
        self.new_hunk.is_some()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.entry_id.is_empty() {
            return Err("entry_id is empty".into());
        }
        if self.old_hunk.trim().is_empty() {
            return Err("old_hunk is empty".into());
        }
        if self.comment.trim().is_empty() {
            return Err("comment is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Other,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "other" => Ok(Split::Other),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub entries: Vec<ReviewEntry>,
    pub source_path: PathBuf,
    pub split: Split,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReviewEntry> {
        self.entries.iter()
    }

    pub fn get(&self, entry_id: &str) -> Option<&ReviewEntry> {
        self.entries.iter().find(|e| e.entry_id == entry_id)
    }

    /// Canonical line-delimited serialization (fixed field order).
    pub fn to_jsonl(&self) -> String {
        jsonl::to_string(&self.entries)
    }
}

pub fn load_corpus(path: &Path, split: Split) -> Result<Corpus> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(path, &bytes, split)
}

pub(crate) fn parse_corpus(path: &Path, bytes: &[u8], split: Split) -> Result<Corpus> {
    let lines = jsonl::split_lines(path, bytes)?;
    if lines.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(lines.len());
    for (line, text) in lines {
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let entry: ReviewEntry =
            serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        entry.validate().map_err(malformed)?;
        if !seen.insert(entry.entry_id.clone()) {
            return Err(Error::DuplicateId(entry.entry_id));
        }
        entries.push(entry);
    }
    Ok(Corpus {
        entries,
        source_path: path.to_path_buf(),
        split,
    })
}

#[derive(Debug, Deserialize)]
struct AnnotationLine {
    entry_id: String,
    label: String,
}

/// Reads `{"entry_id","label"}` lines. Repeating an id with the same label
/// is harmless; repeating it with a different label is a conflict.
pub fn load_annotations(path: &Path) -> Result<BTreeMap<String, Label>> {
    let mut labels = BTreeMap::new();
    for (_, rec) in jsonl::read_records::<AnnotationLine>(path)? {
        let label: Label = rec.label.parse()?;
        match labels.get(&rec.entry_id) {
            Some(prev) if *prev != label => return Err(Error::ConflictingLabel(rec.entry_id)),
            Some(_) => {}
            None => {
                labels.insert(rec.entry_id, label);
            }
        }
    }
    Ok(labels)
}

/// Counts tokens the way a particular backend would.
///
/// Implementations must be monotone: a prefix or suffix of a text never has
/// more tokens than the text itself.
pub trait TokenCounter: Send + Sync {
    fn count_tokens(&self, text: &str) -> usize;
}

/// One token per UTF-8 byte. An upper bound for any tokenizer whose tokens
/// each cover at least one byte.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteCounter;

impl TokenCounter for ByteCounter {
    fn count_tokens(&self, text: &str) -> usize {
        text.len()
    }
}

/// Whitespace-separated words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub text: String,
    pub truncated: bool,
}

/// Keeps the longest prefix (on a char boundary) that fits in `limit` tokens.
pub fn truncate_tokens(text: &str, limit: usize, counter: &dyn TokenCounter) -> Result<Truncation> {
    truncate(text, limit, counter, Keep::Head)
}

/// Keeps the longest suffix that fits in `limit` tokens, dropping the oldest
/// context first.
pub fn truncate_tokens_left(
    text: &str,
    limit: usize,
    counter: &dyn TokenCounter,
) -> Result<Truncation> {
    truncate(text, limit, counter, Keep::Tail)
}

#[derive(Clone, Copy)]
enum Keep {
    Head,
    Tail,
}

fn truncate(
    text: &str,
    limit: usize,
    counter: &dyn TokenCounter,
    keep: Keep,
) -> Result<Truncation> {
    if limit == 0 {
        return Err(Error::precondition("truncation limit must be positive"));
    }
    if counter.count_tokens(text) <= limit {
        return Ok(Truncation {
            text: text.to_string(),
            truncated: false,
        });
    }
    // Candidate cut points in order of increasing kept length.
    let mut cuts: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    cuts.push(text.len());
    let piece = |k: usize| -> &str {
        match keep {
            Keep::Head => &text[..cuts[k]],
            Keep::Tail => &text[cuts[cuts.len() - 1 - k]..],
        }
    };
    // Largest k with piece(k) fitting; piece(0) is empty and always fits.
    let (mut lo, mut hi) = (0usize, cuts.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if counter.count_tokens(piece(mid)) <= limit {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(Truncation {
        text: piece(lo).to_string(),
        truncated: true,
    })
}
