#![allow(dead_code)]

use std::path::{Path, PathBuf};

use revdistill::backend::mock::{Match, MockRoute, MockServer};
use revdistill::backend::{Backend, BackendConfig};
use revdistill::Error;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn reference_seed() -> String {
    read_fixture("reference_seed.txt")
}

/// Backend config pointed at a mock server, with fast retries.
pub fn http_config(id: &str, url: &str) -> BackendConfig {
    BackendConfig {
        model_name: Some("fixture-model".into()),
        backoff_ms: 1,
        timeout_secs: 5.0,
        ..BackendConfig::http(id, url)
    }
}

/// Outcome of replaying one canned wire case.
#[derive(Debug)]
pub struct WireCase {
    pub sent_body: String,
    pub expected_body: String,
    pub expected: serde_json::Value,
    pub result: Result<revdistill::backend::ScoredCompletion, Error>,
}

pub const WIRE_CASES: [&str; 3] = ["two_logprobs", "escaped_text", "boundary_drift"];

pub fn replay_wire_case(name: &str) -> WireCase {
    let expected: serde_json::Value =
        serde_json::from_str(&read_fixture(&format!("wire/{name}.expected.json"))).unwrap();
    let response = read_fixture(&format!("wire/{name}.response.json"));
    let server = MockServer::start(vec![MockRoute::new(Match::Any, 200, response)]).unwrap();
    let backend = Backend::connect(&http_config("wire", &server.url())).unwrap();
    let result = backend.score_completion(
        expected["prompt"].as_str().unwrap(),
        expected["completion"].as_str().unwrap(),
    );
    let received = server.received();
    WireCase {
        sent_body: received.first().cloned().unwrap_or_default(),
        expected_body: read_fixture(&format!("wire/{name}.request.json")),
        expected,
        result,
    }
}

/// Checks a replayed case against its expectation file; `Err` explains the
/// first mismatch.
pub fn check_wire_case(case: &WireCase) -> Result<(), String> {
    if case.sent_body != case.expected_body {
        return Err(format!(
            "request bytes differ:\n  sent     {}\n  expected {}",
            case.sent_body, case.expected_body
        ));
    }
    match (&case.result, case.expected.get("error")) {
        (Err(Error::Protocol { .. }), Some(kind)) if kind == "protocol" => Ok(()),
        (other, Some(kind)) => Err(format!("expected {kind} error, got {other:?}")),
        (Err(e), None) => Err(format!("unexpected error {e}")),
        (Ok(scored), None) => {
            let want_count = case.expected["prompt_token_count"].as_u64().unwrap() as usize;
            let want_tokens: Vec<&str> = case.expected["tokens"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| t.as_str().unwrap())
                .collect();
            let want_lp: Vec<f64> = case.expected["logprobs"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| t.as_f64().unwrap())
                .collect();
            let got_tokens: Vec<&str> = scored
                .completion_scores
                .iter()
                .map(|t| t.token_text.as_str())
                .collect();
            let got_lp: Vec<f64> = scored.logprobs().collect();
            if scored.prompt_token_count != want_count {
                return Err(format!(
                    "prompt_token_count {} != {want_count}",
                    scored.prompt_token_count
                ));
            }
            if got_tokens != want_tokens || got_lp != want_lp {
                return Err(format!(
                    "span {got_tokens:?} {got_lp:?} != {want_tokens:?} {want_lp:?}"
                ));
            }
            Ok(())
        }
    }
}

/// Writes `text` to `dir/name` and returns the path.
pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Config with one reference backend seeded from the shared seed file.
pub fn reference_config(dir: &Path) -> PathBuf {
    write(dir, "seed.txt", &reference_seed());
    write(
        dir,
        "config.toml",
        "[[backends]]\nbackend_id = \"reference\"\nkind = \"reference\"\nseed_file = \"seed.txt\"\n",
    )
}

/// Deterministic synthetic corpus of `n` entries. Even entries get a comment
/// that spells out the fix; odd entries get a generic remark.
pub fn synthetic_corpus(n: usize) -> (String, String) {
    let names = [
        "total", "count", "index", "value", "result", "buffer", "offset", "limit",
    ];
    let generic = ["LGTM!", "+1", "Why?", "ok", "Nice.", "Hmm"];
    let mut corpus = String::new();
    let mut annotations = String::new();
    for i in 0..n {
        let ai = i % names.len();
        let mut bi = (i / names.len() + 3) % names.len();
        if bi == ai {
            bi = (bi + 1) % names.len();
        }
        let (a, b) = (names[ai], names[bi]);
        let old = format!("def f{i}({a}):\n    return {a} + {i}");
        let new = format!("def f{i}({b}):\n    return {b} + {i}");
        let (comment, label) = if i % 2 == 0 {
            (
                format!("Rename {a} to {b}: def f{i}({b}): return {b} + {i}"),
                "desired",
            )
        } else {
            (generic[i % generic.len()].to_string(), "undesired")
        };
        let entry = serde_json::json!({
            "entry_id": format!("e{i:03}"),
            "language": "py",
            "old_hunk": old,
            "comment": comment,
            "new_hunk": new,
        });
        corpus.push_str(&entry.to_string());
        corpus.push('\n');
        annotations.push_str(
            &serde_json::json!({ "entry_id": format!("e{i:03}"), "label": label }).to_string(),
        );
        annotations.push('\n');
    }
    (corpus, annotations)
}
