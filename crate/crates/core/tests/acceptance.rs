//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stdout
//! (uncaptured) and then asserts.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use revdistill::backend::{build_reference_backend, Backend};
use revdistill::cli::{
    cmd_distill, cmd_eval_identification, cmd_score, ExitClass, IdentificationSource,
};
use revdistill::corpus::{load_corpus, Label, Split};
use revdistill::distill::{median_consensus, stats};
use revdistill::eval::{
    bleu4, chi_squared_2x2, confusion, metrics, ten_line_rule, ConfusionCounts,
};
use revdistill::kto::{check_lambda_constraint, kto_loss, kto_value, KtoConfig, KtoExample};
use revdistill::scoring::{desiredness, perplexity_of, DesirednessScore, ScoringConfig};

use common::{
    check_wire_case, fixture, read_fixture, reference_config, reference_seed, replay_wire_case,
    synthetic_corpus, write, WIRE_CASES,
};

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!(
        "acceptance {n:>2} {}: {name} ({detail})\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {name} ({detail})");
}

fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn criterion_01_perplexity_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=64);
        let lps: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..0.0)).collect();
        let got = perplexity_of(&lps).unwrap().ppl;
        // Geometric mean of inverse probabilities, from the product.
        let product: f64 = lps.iter().map(|l| l.exp()).product();
        let want = product.powf(-1.0 / len as f64);
        worst = worst.max(rel_err(got, want));
    }
    let elapsed = start.elapsed();
    report(
        1,
        "perplexity matches brute force on 10^4 vectors",
        worst < 1e-9 && elapsed < Duration::from_secs(5),
        &format!("max rel err {worst:.2e}, {elapsed:.2?}"),
    );
}

/// `P(full[i] | full[i-1])` recounted from scratch over the seed and the
/// context preceding position `i`.
fn bigram_oracle(seed: &[u8], full: &[u8], i: usize) -> f64 {
    if i == 0 {
        return 1.0 / 256.0;
    }
    let (a, b) = (full[i - 1], full[i]);
    let (mut pair, mut ctx) = (0u64, 0u64);
    for w in seed.windows(2).chain(full[..i].windows(2)) {
        if w[0] == a {
            ctx += 1;
            pair += u64::from(w[1] == b);
        }
    }
    (pair as f64 + 1.0) / (ctx as f64 + 256.0)
}

fn random_ascii(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    (0..len)
        .map(|_| rng.random_range(0x20u8..0x7f) as char)
        .collect()
}

#[test]
fn criterion_02_reference_likelihoods() {
    let start = Instant::now();
    let seed = reference_seed();
    let backend = Backend::connect(&build_reference_backend(&seed).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let prompt = random_ascii(&mut rng, 0, 64);
        let mut completion = random_ascii(&mut rng, 1, 64);
        if completion.trim().is_empty() {
            completion.push('x');
        }
        let scored = backend.score_completion(&prompt, &completion).unwrap();
        let got: f64 = scored.logprobs().sum::<f64>().exp();
        let full = format!("{prompt}{completion}");
        let want: f64 = (prompt.len()..full.len())
            .map(|i| bigram_oracle(seed.as_bytes(), full.as_bytes(), i))
            .product();
        worst = worst.max(rel_err(got, want));
    }
    let elapsed = start.elapsed();
    report(
        2,
        "reference backend matches bigram products on 10^3 pairs",
        worst < 1e-12 && elapsed < Duration::from_secs(10),
        &format!("max rel err {worst:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_03_ds_demonstration() {
    let start = Instant::now();
    let backend = Backend::connect(&build_reference_backend(&reference_seed()).unwrap()).unwrap();
    let corpus = load_corpus(&fixture("ds_demo.jsonl"), Split::Other).unwrap();
    let run = || -> Vec<(String, f64)> {
        corpus
            .iter()
            .map(|e| {
                (
                    e.entry_id.clone(),
                    desiredness(e, &backend, &ScoringConfig::default())
                        .unwrap()
                        .score
                        .ds,
                )
            })
            .collect()
    };
    let first = run();
    let second = run();
    let correct = corpus
        .iter()
        .zip(&first)
        .filter(|(e, (_, ds))| Some(Label::from_score(*ds)) == e.human_label)
        .count();
    let same = first
        .iter()
        .zip(&second)
        .all(|(a, b)| a.1.to_bits() == b.1.to_bits());
    let elapsed = start.elapsed();
    let shown: Vec<String> = first
        .iter()
        .map(|(id, ds)| format!("{id}={ds:+.3}"))
        .collect();
    report(
        3,
        "DS sign separates predictive from unrelated comments",
        correct == 6 && same && elapsed < Duration::from_secs(5),
        &format!(
            "{correct}/6 correct, deterministic={same}, {elapsed:.2?}; {}",
            shown.join(" ")
        ),
    );
}

#[test]
fn criterion_04_median_consensus() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for case in 0..10_000 {
        let n = rng.random_range(1..=9);
        let ds: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let scores: Vec<DesirednessScore> = ds
            .iter()
            .enumerate()
            .map(|(b, &d)| DesirednessScore {
                entry_id: format!("e{case}"),
                backend_id: format!("b{b}"),
                ppl_with_comment: 10.0,
                ppl_without_comment: 10.0 + d,
                ds: d,
            })
            .collect();
        let mut sorted = ds.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let v = median_consensus(&scores).unwrap();
        let want_label = if want > 0.0 {
            Label::Desired
        } else {
            Label::Undesired
        };
        if v.consensus_ds != want || v.verdict != want_label {
            mismatches += 1;
        }
    }
    let at = |values: &[f64]| {
        let scores: Vec<DesirednessScore> = values
            .iter()
            .enumerate()
            .map(|(b, &d)| DesirednessScore {
                ds: d,
                ..DesirednessScore::new("z", format!("b{b}"), 5.0, 5.0)
            })
            .collect();
        median_consensus(&scores).unwrap().verdict
    };
    let boundary = at(&[0.0]) == Label::Undesired
        && at(&[-1.0, 1.0]) == Label::Undesired
        && at(&[-1.0, 0.0, 3.0]) == Label::Undesired
        && at(&[f64::MIN_POSITIVE]) == Label::Desired
        && at(&[-f64::MIN_POSITIVE]) == Label::Undesired;
    report(
        4,
        "median consensus matches sort oracle; DS = 0 is undesired",
        mismatches == 0 && boundary,
        &format!("{mismatches} mismatches over 10^4 vectors, boundary ok={boundary}"),
    );
}

#[test]
fn criterion_05_metrics_and_ten_line_rule() {
    let report_ = metrics(ConfusionCounts {
        tp: 3,
        fp: 1,
        fn_: 2,
        tn: 4,
    })
    .unwrap();
    let cells = report_.percentages();
    let want = ["70.00", "75.00", "60.00", "66.67"];

    let (text, labels_text) = synthetic_corpus(50);
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(&write(dir.path(), "c.jsonl", &text), Split::Other).unwrap();
    let labels: BTreeMap<String, Label> = labels_text
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (
                v["entry_id"].as_str().unwrap().to_string(),
                v["label"].as_str().unwrap().parse().unwrap(),
            )
        })
        .collect();
    let predicted: BTreeMap<String, Label> = corpus
        .iter()
        .map(|e| (e.entry_id.clone(), ten_line_rule(e)))
        .collect();
    let recall = metrics(confusion(&predicted, &labels).unwrap())
        .unwrap()
        .percentages()[2]
        .clone();
    report(
        5,
        "metrics on {3,1,2,4}; 10-line rule recall",
        cells == want && recall == "100.00",
        &format!(
            "acc/prec/rec/f1 = {}, 10-line recall = {recall}",
            cells.join("/")
        ),
    );
}

#[test]
fn criterion_06_stats_reproduction() {
    let train = stats(
        std::iter::repeat_n(&Label::Desired, 64934)
            .chain(std::iter::repeat_n(&Label::Undesired, 85472)),
        0,
    );
    let test = stats(
        std::iter::repeat_n(&Label::Desired, 5727)
            .chain(std::iter::repeat_n(&Label::Undesired, 7376)),
        0,
    );
    let pct = |p: Option<f64>| format!("{:.2}", p.unwrap());
    let got = [
        pct(train.desired_pct),
        pct(train.undesired_pct),
        pct(test.desired_pct),
        pct(test.undesired_pct),
    ];
    let want = ["43.17", "56.83", "43.71", "56.29"];
    let exact = train.desired_pct == Some(43.17)
        && train.undesired_pct == Some(56.83)
        && test.desired_pct == Some(43.71)
        && test.undesired_pct == Some(56.29);
    report(
        6,
        "corpus statistics reproduce the expected split percentages",
        got == want && exact,
        &format!("train {}/{}, test {}/{}", got[0], got[1], got[2], got[3]),
    );
}

#[test]
fn criterion_07_kto() {
    let cfg = KtoConfig::default();
    let check = check_lambda_constraint(&cfg, 64934, 85472).unwrap();
    let ratio_ok = (check.ratio - 1.2915).abs() <= 5e-4 && check.ok;

    let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let z0 = rng.random_range(0.0..3.0);
        let batch: Vec<KtoExample> = (0..rng.random_range(1..30))
            .map(|_| KtoExample {
                policy_logprob: rng.random_range(-60.0..0.0),
                ref_logprob: rng.random_range(-60.0..0.0),
                label: if rng.random_bool(0.5) {
                    Label::Desired
                } else {
                    Label::Undesired
                },
            })
            .collect();
        let mut hand_total = 0.0;
        for ex in &batch {
            let r = ex.policy_logprob - ex.ref_logprob;
            let v = match ex.label {
                Label::Desired => 1.7 * sigma(0.1 * (r - z0)),
                Label::Undesired => 1.0 * sigma(0.1 * (z0 - r)),
            };
            worst = worst.max((kto_value(r, z0, ex.label, &cfg) - v).abs());
            hand_total += 1.0 - v;
        }
        let hand_loss = hand_total / batch.len() as f64;
        worst = worst.max((kto_loss(&batch, z0, &cfg).unwrap() - hand_loss).abs());
    }
    let zero_d = kto_value(2.0, 2.0, Label::Desired, &cfg);
    let zero_u = kto_value(2.0, 2.0, Label::Undesired, &cfg);
    let sigma0 = zero_d == 0.85 && zero_u == 0.5;
    report(
        7,
        "KTO weight constraint, value and loss",
        ratio_ok && worst <= 1e-12 && sigma0,
        &format!(
            "ratio {:.4} ok={}, max abs err {worst:.1e}, sigma(0) values {zero_d}/{zero_u}",
            check.ratio, check.ok
        ),
    );
}

#[test]
fn criterion_08_bleu() {
    let identity = bleu4(
        "add a null check before calling close",
        "add a null check before calling close",
    )
    .unwrap();
    let disjoint = bleu4("looks good to me", "please rename this variable").unwrap();
    let expected: serde_json::Value =
        serde_json::from_str(&read_fixture("bleu/expected.json")).unwrap();
    let refs: BTreeMap<String, String> = read_fixture("bleu/references.jsonl")
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (
                v["entry_id"].as_str().unwrap().into(),
                v["text"].as_str().unwrap().into(),
            )
        })
        .collect();
    let mut worst = 0.0f64;
    for l in read_fixture("bleu/candidates.jsonl").lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let id = v["entry_id"].as_str().unwrap();
        let got = bleu4(v["text"].as_str().unwrap(), &refs[id]).unwrap();
        worst = worst.max((got - expected["per_entry"][id].as_f64().unwrap()).abs());
    }
    report(
        8,
        "BLEU-4 identity, disjoint and golden fixture",
        identity == 1.0 && disjoint == 0.0 && worst < 1e-9,
        &format!("identity {identity}, disjoint {disjoint}, golden max err {worst:.1e}"),
    );
}

#[test]
fn criterion_09_chi_squared() {
    let flat = chi_squared_2x2(&[vec![30, 20], vec![30, 20]]).unwrap();
    let split = chi_squared_2x2(&[vec![10, 0], vec![0, 10]]).unwrap();
    // Survival function of chi-squared with one degree of freedom.
    let want_p = statrs::function::erf::erfc(10f64.sqrt());
    let p_err = (split.p_value - want_p).abs();
    report(
        9,
        "chi-squared 2x2 statistic and p-value",
        flat.statistic == 0.0 && flat.p_value == 1.0 && split.statistic == 20.0 && p_err < 1e-7,
        &format!(
            "flat ({}, {}), diagonal ({}, {:.6e}), p err {p_err:.1e}",
            flat.statistic, flat.p_value, split.statistic, split.p_value
        ),
    );
}

fn pipeline(dir: &Path, corpus: &Path, labels: &Path) -> Vec<(String, Vec<u8>)> {
    let config = reference_config(dir);
    let scores = dir.join("scores.jsonl");
    let out = dir.join("dataset");
    let metrics = dir.join("metrics.json");
    assert_eq!(
        cmd_score(corpus, Split::Other, Some(&config), &scores)
            .unwrap()
            .exit,
        ExitClass::Success
    );
    assert_eq!(
        cmd_distill(corpus, Split::Other, &scores, Some(&config), &out)
            .unwrap()
            .exit,
        ExitClass::Success
    );
    let verdicts = IdentificationSource::Verdicts(out.join("verdicts.jsonl"));
    assert_eq!(
        cmd_eval_identification(labels, &verdicts, None, &metrics)
            .unwrap()
            .exit,
        ExitClass::Success
    );
    let mut files = vec![scores, metrics];
    for f in [
        "verdicts.jsonl",
        "sft.jsonl",
        "kto.jsonl",
        "stats.json",
        "stats.txt",
        "metadata.json",
    ] {
        files.push(out.join(f));
    }
    files
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().display().to_string(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_10_end_to_end() {
    let inputs = tempfile::tempdir().unwrap();
    let (corpus, labels) = synthetic_corpus(100);
    let corpus = write(inputs.path(), "corpus.jsonl", &corpus);
    let labels = write(inputs.path(), "labels.jsonl", &labels);
    let mut runs = Vec::new();
    let mut timings = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        runs.push(pipeline(dir.path(), &corpus, &labels));
        timings.push(start.elapsed());
    }
    let identical = runs[0] == runs[1];
    let fast = timings.iter().all(|t| *t < Duration::from_secs(10));
    report(
        10,
        "score, distill, eval-identification on 100 entries, twice",
        identical && fast,
        &format!(
            "{} files byte-identical={identical}, runs {:.2?} / {:.2?}",
            runs[0].len(),
            timings[0],
            timings[1]
        ),
    );
}

#[test]
fn criterion_11_wire_protocol() {
    let mut failures = Vec::new();
    for name in WIRE_CASES {
        if let Err(msg) = check_wire_case(&replay_wire_case(name)) {
            failures.push(format!("{name}: {msg}"));
        }
    }
    report(
        11,
        "mock-server wire cases including boundary drift",
        failures.is_empty(),
        &if failures.is_empty() {
            format!("{} cases ok", WIRE_CASES.len())
        } else {
            failures.join("; ")
        },
    );
}
