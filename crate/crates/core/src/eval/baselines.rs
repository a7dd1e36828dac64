use crate::backend::{Backend, GenerationParams};
use crate::corpus::{Label, ReviewEntry};
use crate::error::{Error, Result};

/// The judge only needs to emit a single word.
pub const JUDGE_MAX_TOKENS: usize = 8;

fn normalize_trailing(text: &str) -> String {
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    lines.join("\n").trim_end().to_string()
}

/// Desired iff a fix was recorded and it differs from the original hunk,
/// ignoring trailing whitespace.
pub fn ten_line_rule(entry: &ReviewEntry) -> Label {
    match &entry.new_hunk {
        Some(new) if normalize_trailing(new) != normalize_trailing(&entry.old_hunk) => {
            Label::Desired
        }
        _ => Label::Undesired,
    }
}

pub fn render_judge_prompt(original: &str, modified: &str, comment: &str) -> String {
    format!(
        "Your task is to determine whether the changes in the given original code and the \
         modified code pertain to the provided review comment. If they pertain, output True; \
         if they do not pertain, output False. Only provide True or False, without any \
         additional content.\n\
         ```original code\n{original}\n```\n\
         ```modified code\n{modified}\n```\n\
         ```review comment\n{comment}\n```\n"
    )
}

/// Reads a leading `True`/`False`, ignoring case, surrounding quotes or
/// markup, and trailing punctuation.
pub fn parse_judge_output(output: &str) -> Result<Label> {
    let word: String = output
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect();
    match word.to_ascii_lowercase().as_str() {
        "true" => Ok(Label::Desired),
        "false" => Ok(Label::Undesired),
        _ => Err(Error::JudgeParse(output.to_string())),
    }
}

/// Zero-shot judging at temperature 0.
pub fn llm_judge(entry: &ReviewEntry, backend: &Backend) -> Result<Label> {
    let run = || {
        let modified = entry
            .new_hunk
            .as_deref()
            .ok_or_else(|| Error::Unscorable(entry.entry_id.clone()))?;
        let prompt = render_judge_prompt(&entry.old_hunk, modified, &entry.comment);
        let params = GenerationParams {
            temperature: 0.0,
            max_tokens: JUDGE_MAX_TOKENS,
        };
        let answer = backend.generate(&backend.config().wrap_prompt(&prompt), &params)?;
        parse_judge_output(&answer)
    };
    run().map_err(|e| e.for_entry(&entry.entry_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(old: &str, new: Option<&str>) -> ReviewEntry {
        ReviewEntry {
            entry_id: "e".into(),
            language: "py".into(),
            old_hunk: old.into(),
            comment: "c".into(),
            new_hunk: new.map(str::to_string),
            human_label: None,
        }
    }

    #[test]
    fn ten_line() {
        assert_eq!(
            ten_line_rule(&entry("a = 1", Some("a = 2"))),
            Label::Desired
        );
        assert_eq!(
            ten_line_rule(&entry("a = 1", Some("a = 1"))),
            Label::Undesired
        );
        assert_eq!(
            ten_line_rule(&entry("a = 1\n", Some("a = 1   \n\n"))),
            Label::Undesired
        );
        assert_eq!(ten_line_rule(&entry("a = 1", None)), Label::Undesired);
    }

    #[test]
    fn judge_parsing() {
        assert_eq!(parse_judge_output("True").unwrap(), Label::Desired);
        assert_eq!(parse_judge_output("false.").unwrap(), Label::Undesired);
        assert_eq!(parse_judge_output("  **TRUE**\n").unwrap(), Label::Desired);
        assert!(matches!(
            parse_judge_output("It depends"),
            Err(Error::JudgeParse(_))
        ));
        assert!(parse_judge_output("").is_err());
        assert!(parse_judge_output("Truest").is_err());
    }

    #[test]
    fn judge_prompt_layout() {
        let p = render_judge_prompt("a=1", "a=2", "bump a");
        assert!(p.starts_with(
            "Your task is to determine whether the changes in the given original code"
        ));
        assert!(p.contains("```original code\na=1\n```\n```modified code\na=2\n```\n```review comment\nbump a\n```"));
    }
}
