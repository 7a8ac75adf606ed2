//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion; run with `cargo test -p triage-service --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::panic::{catch_unwind, UnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::{fake_completion_server, scripted_triage, TestServer};
use triage_core::backend::{BackendConfig, ChatOptions, ChatMessage, FnBackend, HttpBackend, ScriptedBackend};
use triage_core::domain::{validate_conversation, Conversation, ConversationSource, Department, DialogueTurn, SpeakerRole, TrainingSample};
use triage_core::engine::{FileStore, SessionPhase, SessionStore};
use triage_core::eval::{
    conversation_tokens, evaluate_classifier, gptscore_evaluate, labeled, metrics_from_pairs, split_dataset,
    train_baseline_classifier, Aspect, ClassifierOptions, SplitSpec,
};
use triage_core::history::{approx_tokens, assemble_prompt, prune_window, HistoryError, HistoryManager, TokenBudget};
use triage_core::ingest::{sample_cases, SamplingSpec};
use triage_core::par::Execution;
use triage_core::synthesis::{synthesize_corpus, CorpusInputs, SynthesisConfig};
use triage_core::testkit::{bundled_bank, bundled_cases, bundled_catalog, bundled_mapping, separable_corpus, synthetic_cases};
use triage_service::cli::{run, Cli};

type Outcome = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs one criterion, prints its verdict line and fails the test on FAIL.
fn criterion(id: u8, title: &str, limit: Option<Duration>, body: impl FnOnce() -> Outcome + UnwindSafe) {
    let start = Instant::now();
    let outcome = catch_unwind(body).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed();
    let outcome = outcome.and_then(|()| match limit {
        Some(l) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
        _ => Ok(()),
    });
    let line = match &outcome {
        Ok(()) => format!("PASS criterion {id}: {title} ({elapsed:.2?})"),
        Err(e) => format!("FAIL criterion {id}: {title}: {e}"),
    };
    let _ = writeln!(std::io::stdout().lock(), "{line}");
    if let Err(e) = outcome {
        panic!("criterion {id} failed: {e}");
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn c1_training_format_golden() {
    criterion(1, "training-format golden file", Some(Duration::from_secs(1)), || {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("samples.jsonl");
        let input = fixture("format_fixture.jsonl");
        let cli = Cli::try_parse_from([
            "triage",
            "format",
            "--in",
            input.to_str().unwrap(),
            "--marker",
            "###",
            "--out",
            out.to_str().unwrap(),
        ])
        .map_err(|e| e.to_string())?;
        run(cli, std::io::empty(), &mut Vec::new()).map_err(|e| e.to_string())?;

        let produced = std::fs::read(&out).unwrap();
        let golden = std::fs::read(fixture("format_fixture.golden.jsonl")).unwrap();
        ensure(produced == golden, || format!("output differs from golden:\n{}", String::from_utf8_lossy(&produced)))?;

        let samples: Vec<TrainingSample> =
            produced.split(|b| *b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect();
        let conv: Conversation = serde_json::from_str(std::fs::read_to_string(&input).unwrap().trim()).unwrap();
        let assistant_turns = conv.turns.iter().filter(|t| t.role == SpeakerRole::Assistant).count();
        ensure(samples.len() == assistant_turns, || format!("{} samples for {assistant_turns} assistant turns", samples.len()))?;
        for w in samples.windows(2) {
            ensure(w[1].context.starts_with(&w[0].context) && w[1].context.len() > w[0].context.len(), || {
                "contexts do not form a strict prefix chain".into()
            })?;
        }
        Ok(())
    });
}

fn sized_turn(i: usize, tokens: usize) -> DialogueTurn {
    let role = if i % 2 == 0 { SpeakerRole::Assistant } else { SpeakerRole::Patient };
    DialogueTurn::new(role, vec!["word"; tokens].join(" "), i)
}

#[test]
fn c2_history_budget_suite() {
    criterion(2, "history budget: 1000 randomized histories", Some(Duration::from_secs(10)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB0D6E7);
        let summary_text = vec!["Earlier the patient described a mild cough and no fever."; 30].join(" ");
        let summarizer = ScriptedBackend::new(vec![], summary_text);
        let cue = approx_tokens("[Assistant]");
        let mut violations = Vec::new();
        for case in 0..1000 {
            let n = rng.random_range(1..=40);
            let history: Vec<DialogueTurn> = (0..n).map(|i| sized_turn(i, rng.random_range(1..=200))).collect();
            let max = rng.random_range(64..=2048);
            let reserve = rng.random_range(1..=max / 2);
            let budget = TokenBudget::new(max, reserve).unwrap();
            let limit = max - reserve;
            let n_recent = rng.random_range(2..=30);
            let last_cost = approx_tokens(&history[n - 1].render_tagged()) + cue;

            match prune_window(&history, budget, n_recent) {
                Ok(ctx) => {
                    let prompt = assemble_prompt("", &ctx).map_err(|e| e.to_string())?;
                    if approx_tokens(&prompt) > limit {
                        violations.push(format!("case {case}: prompt {} > {limit}", approx_tokens(&prompt)));
                    }
                    if ctx.retained_turns[..] != history[ctx.dropped_count..] || ctx.retained_turns.is_empty() {
                        violations.push(format!("case {case}: retained turns are not a non-empty suffix"));
                    }
                    let grown = TokenBudget::new(max + rng.random_range(1..=512), reserve).unwrap();
                    let wider = prune_window(&history, grown, n_recent).map_err(|e| e.to_string())?;
                    if wider.retained_turns.len() < ctx.retained_turns.len() {
                        violations.push(format!("case {case}: larger budget kept fewer turns"));
                    }
                }
                Err(HistoryError::BudgetImpossible { .. }) if last_cost > limit => {}
                Err(e) => violations.push(format!("case {case}: unexpected {e}")),
            }

            let mut manager = HistoryManager::new(budget);
            manager.n_recent = n_recent;
            match manager.build("You are a careful triage assistant.", &history, Some(&summarizer)) {
                Ok(built) => {
                    if built.tokens > limit || approx_tokens(&built.text) > limit {
                        violations.push(format!("case {case}: built prompt {} > {limit}", built.tokens));
                    }
                    if built.context.retained_turns[..] != history[built.context.dropped_count..] {
                        violations.push(format!("case {case}: built prompt retained a non-suffix"));
                    }
                }
                Err(HistoryError::BudgetImpossible { .. }) => {}
                Err(e) => violations.push(format!("case {case}: unexpected {e}")),
            }
        }
        ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))
    });
}

#[test]
fn c3_stratified_sampling() {
    criterion(3, "stratified sampling on 10,000 cases", None, || {
        let catalog = bundled_catalog();
        let cases = synthetic_cases(10_000, 5, &[("P1", 0.5), ("P2", 0.3), ("P3", 0.2)], &catalog);
        let spec = SamplingSpec::new(1000, 1234);
        let first = sample_cases(&cases, &spec).map_err(|e| e.to_string())?;
        let second = sample_cases(&cases, &spec).map_err(|e| e.to_string())?;
        ensure(first == second, || "two runs with one seed differ".into())?;
        ensure(first.len() == 1000, || format!("sample size {}", first.len()))?;
        let mut counts: HashMap<&str, i64> = HashMap::new();
        for c in &first {
            *counts.entry(c.pathology.as_str()).or_default() += 1;
        }
        for (p, want) in [("P1", 500), ("P2", 300), ("P3", 200)] {
            let got = counts.get(p).copied().unwrap_or(0);
            ensure((got - want).abs() <= 1, || format!("{p}: {got} sampled, expected {want} ± 1"))?;
        }
        Ok(())
    });
}

#[test]
fn c4_turn_count_preservation() {
    criterion(4, "turn-count preservation over 200 cases", None, || {
        let (catalog, bank, mapping) = (bundled_catalog(), bundled_bank(), bundled_mapping());
        let cases = bundled_cases(200, 2024);
        let inputs = CorpusInputs { catalog: &catalog, mapping: &mapping, bank: Some(&bank), backend: None };
        let cfg = SynthesisConfig { seed: 99, ..SynthesisConfig::default() };
        let raw = synthesize_corpus(&cases, &inputs, ConversationSource::Raw, &cfg, Execution::Parallel).map_err(|e| e.to_string())?;
        let art = synthesize_corpus(&cases, &inputs, ConversationSource::Artificial, &cfg, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        ensure(raw.conversations.len() == 200 && art.conversations.len() == 200, || "corpus size".into())?;
        let mismatched = raw.conversations.iter().zip(&art.conversations).filter(|(r, a)| r.turns.len() != a.turns.len()).count();
        ensure(mismatched == 0, || format!("{mismatched} conversations changed turn count"))?;
        let raw_tokens: usize = raw.conversations.iter().map(conversation_tokens).sum();
        let art_tokens: usize = art.conversations.iter().map(conversation_tokens).sum();
        ensure(art_tokens > raw_tokens, || format!("artificial {art_tokens} tokens vs raw {raw_tokens}"))
    });
}

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn doc(id: &str, text: &str, dept: &str) -> Conversation {
    Conversation::from_pairs(
        id,
        ConversationSource::Artificial,
        [(SpeakerRole::Assistant, "What brings you in?"), (SpeakerRole::Patient, text)],
    )
    .with_department(Department::new(dept))
}

#[test]
fn c5_classifier_oracle_equivalence() {
    criterion(5, "classifier oracle, separable corpus and split sizes", None, || {
        let train = vec![
            doc("d1", "chest pain and a racing heart", "cardiology"),
            doc("d2", "my heart is pounding and my chest feels tight", "cardiology"),
            doc("d3", "an itchy rash on my arm", "dermatology"),
            doc("d4", "red itchy skin with a rash", "dermatology"),
            doc("d5", "a headache and dizziness", "neurology"),
            doc("d6", "numb arm and a headache", "neurology"),
        ];
        let model = train_baseline_classifier(&labeled(&train).unwrap(), ClassifierOptions::default()).map_err(|e| e.to_string())?;
        let probe = doc("p", "itchy chest with a headache and zebra", "neurology");

        let all_words = |c: &Conversation| c.turns.iter().flat_map(|t| words(&t.text)).collect::<Vec<_>>();
        let vocab: BTreeSet<String> = train.iter().flat_map(all_words).collect();
        let mut by_class: BTreeMap<String, Vec<&Conversation>> = BTreeMap::new();
        for c in &train {
            by_class.entry(c.department.as_ref().unwrap().name().to_string()).or_default().push(c);
        }
        let scores = model.log_scores(&probe);
        for (i, dept) in model.departments.iter().enumerate() {
            let docs = &by_class[dept.name()];
            let class_words: Vec<String> = docs.iter().flat_map(|c| all_words(c)).collect();
            let mut expected = (docs.len() as f64 / train.len() as f64).ln();
            for w in all_words(&probe).iter().filter(|w| vocab.contains(*w)) {
                let count = class_words.iter().filter(|x| *x == w).count() as f64;
                expected += ((count + 1.0) / (class_words.len() as f64 + vocab.len() as f64)).ln();
            }
            ensure((scores[i] - expected).abs() < 1e-9, || format!("{dept}: {} vs oracle {expected}", scores[i]))?;
        }

        let corpus = separable_corpus(100, 11);
        ensure(corpus.len() == 300, || "separable corpus size".into())?;
        let split = split_dataset(&corpus, &SplitSpec::with_seed(3)).map_err(|e| e.to_string())?;
        let test = labeled(&split.test).unwrap();
        for (include, floor) in [(true, 1.0), (false, 0.90)] {
            let opts = ClassifierOptions { include_recommendation_turn: include };
            let nb = train_baseline_classifier(&labeled(&split.train).unwrap(), opts).map_err(|e| e.to_string())?;
            let m = evaluate_classifier(&nb, &test, Execution::Parallel).map_err(|e| e.to_string())?;
            ensure(m.macro_f1 >= floor - 1e-12, || format!("macro_f1 {:.4} below {floor} (include={include})", m.macro_f1))?;
        }

        let hundred: Vec<Conversation> = corpus.into_iter().take(100).collect();
        ensure(SplitSpec::default().sizes(100) == [70, 20, 10], || "split sizes for n=100".into())?;
        let s = split_dataset(&hundred, &SplitSpec::with_seed(9)).map_err(|e| e.to_string())?;
        ensure([s.train.len(), s.test.len(), s.validation.len()] == [70, 20, 10], || {
            format!("split {}/{}/{}", s.train.len(), s.test.len(), s.validation.len())
        })
    });
}

fn pairs(spec: &[(&str, &str, usize)]) -> Vec<(Department, Department)> {
    spec.iter()
        .flat_map(|(t, p, n)| std::iter::repeat_n((Department::new(*t), Department::new(*p)), *n))
        .collect()
}

fn close4(got: f64, want: f64) -> bool {
    (got - want).abs() < 5e-5
}

#[test]
fn c6_metric_arithmetic() {
    criterion(6, "metric arithmetic against hand calculations", None, || {
        // A: tp 3, predicted 5, support 4. B: tp 2, predicted 3, support 3. C: tp 1, predicted 2, support 3.
        let m = metrics_from_pairs(&pairs(&[("A", "A", 3), ("A", "B", 1), ("B", "B", 2), ("B", "C", 1), ("C", "C", 1), ("C", "A", 2)]))
            .map_err(|e| e.to_string())?;
        let hand = [("A", 0.6, 0.75, 0.6667), ("B", 0.6667, 0.6667, 0.6667), ("C", 0.5, 0.3333, 0.4)];
        for (d, p, r, f) in hand {
            let got = &m.per_department[&Department::new(d)];
            ensure(close4(got.precision, p) && close4(got.recall, r) && close4(got.f1, f), || format!("{d}: {got:?}"))?;
        }
        ensure(close4(m.accuracy, 0.6) && close4(m.macro_f1, 0.5778), || format!("accuracy {} macro {}", m.accuracy, m.macro_f1))?;

        // Y is never predicted: precision 0/0 counts as 0.
        let m = metrics_from_pairs(&pairs(&[("X", "X", 2), ("Y", "X", 1)])).map_err(|e| e.to_string())?;
        let y = &m.per_department[&Department::new("Y")];
        ensure(y.precision == 0.0 && y.recall == 0.0 && y.f1 == 0.0, || format!("Y: {y:?}"))?;
        ensure(close4(m.per_department[&Department::new("X")].f1, 0.8), || "X f1".into())?;
        ensure(close4(m.accuracy, 0.6667) && close4(m.macro_f1, 0.4), || format!("accuracy {} macro {}", m.accuracy, m.macro_f1))?;

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for set in 0..1000 {
            let k = rng.random_range(2..=6);
            let n = rng.random_range(1..=200);
            let sample: Vec<(Department, Department)> = (0..n)
                .map(|_| {
                    let t = rng.random_range(0..k);
                    let p = if rng.random_bool(0.6) { t } else { rng.random_range(0..k) };
                    (Department::new(format!("d{t}")), Department::new(format!("d{p}")))
                })
                .collect();
            let m = metrics_from_pairs(&sample).map_err(|e| e.to_string())?;
            let correct = sample.iter().filter(|(t, p)| t == p).count();
            ensure((0.0..=1.0).contains(&m.accuracy) && (0.0..=1.0).contains(&m.macro_f1), || format!("set {set}: out of bounds"))?;
            ensure((m.accuracy - correct as f64 / n as f64).abs() < 1e-12, || format!("set {set}: accuracy"))?;
            ensure(m.per_department.values().map(|c| c.support).sum::<usize>() == n, || format!("set {set}: support"))?;
            for c in m.per_department.values() {
                let (lo, hi) = (c.precision.min(c.recall), c.precision.max(c.recall));
                ensure(c.f1 >= lo - 1e-12 && c.f1 <= hi + 1e-12, || format!("set {set}: f1 outside [{lo}, {hi}]"))?;
            }
        }
        Ok(())
    });
}

fn judged_corpus(n: usize) -> Vec<Conversation> {
    (0..n)
        .map(|i| {
            let text = if i == 0 { "negative example".to_string() } else { format!("cough number {i}") };
            Conversation::from_pairs(
                format!("j{i}"),
                ConversationSource::LlmRewritten,
                [(SpeakerRole::Assistant, "What brings you in?".to_string()), (SpeakerRole::Patient, text)],
            )
        })
        .collect()
}

#[test]
fn c7_aspect_score_arithmetic() {
    criterion(7, "aspect score aggregation with a scripted judge", None, || {
        let judge = FnBackend::new(|msgs: &[ChatMessage]| {
            let negative = msgs.iter().any(|m| m.content.contains("negative example"));
            Ok(if negative { "No." } else { "Yes." }.to_string())
        });
        let score = gptscore_evaluate(&judged_corpus(1000), Aspect::Informativeness, &judge, 8, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        ensure(score.formatted() == "99.90" && score.n_yes == 999 && score.n_evaluated == 1000, || format!("{score:?}"))?;

        let never = FnBackend::new(|_: &[ChatMessage]| Ok("No".to_string()));
        let score = gptscore_evaluate(&judged_corpus(250), Aspect::Patience, &never, 8, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        ensure(score.formatted() == "0.00" && score.n_evaluated == 250, || format!("{score:?}"))
    });
}

#[test]
fn c8_end_to_end_http_session() {
    criterion(8, "end-to-end HTTP session with scripted backend", Some(Duration::from_secs(5)), || {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FileStore::open(dir.path()).unwrap());
        let server = TestServer::start(Arc::new(scripted_triage()), store.clone());
        let (status, created) = server.post("/api/sessions", None);
        ensure(status == 201, || format!("create returned {status}"))?;
        let id = created["session_id"].as_str().unwrap().to_string();
        let path = format!("/api/sessions/{id}/messages");
        let mut last = json!(null);
        for text in ["I have had a cough for three days.", "Yes, since yesterday.", "A little when I climb stairs."] {
            let (status, body) = server.post(&path, Some(json!({ "text": text })));
            ensure(status == 200, || format!("message returned {status}: {body}"))?;
            last = body;
        }
        ensure(last["phase"] == "recommended", || format!("phase after 3 messages: {}", last["phase"]))?;
        ensure(last["recommendation"]["department"] == "respiratory medicine", || format!("{last}"))?;
        let (status, summary) = server.get(&format!("/api/sessions/{id}/summary"));
        ensure(status == 200 && summary["recommended_department"] == "respiratory medicine", || format!("{status} {summary}"))?;

        let stored = store.load(&id).map_err(|e| e.to_string())?.ok_or("session not persisted")?;
        ensure(stored.phase == SessionPhase::Summarized, || format!("stored phase {:?}", stored.phase))?;
        let violations = validate_conversation(&stored.conversation());
        ensure(violations.is_empty(), || format!("{violations:?}"))
    });
}

#[test]
fn c9_backend_fault_injection() {
    criterion(9, "backend retries on 5xx, never on 401", None, || {
        let backend = |url: &str| {
            let mut cfg = BackendConfig::new(url, "m", "TRIAGE_ACCEPTANCE_NO_KEY");
            cfg.max_retries = 2;
            cfg.backoff_base = Duration::from_millis(10);
            HttpBackend::new(cfg)
        };
        let msgs = [ChatMessage::user("hello")];

        let (url, hits) = fake_completion_server(vec![503, 503, 200]);
        let (res, report) = backend(&url).chat_with_report(&msgs, &ChatOptions::default());
        ensure(res.as_deref() == Ok("ok"), || format!("{res:?}"))?;
        ensure(report.retries == 2 && report.attempts == 3 && *hits.lock().unwrap() == 3, || format!("{report:?}"))?;

        let (url, hits) = fake_completion_server(vec![401, 200]);
        let (res, report) = backend(&url).chat_with_report(&msgs, &ChatOptions::default());
        let err = res.err().ok_or("401 was not an error")?;
        ensure(err.status() == Some(401) && err.attempts() == 1, || format!("{err:?}"))?;
        ensure(report.retries == 0 && *hits.lock().unwrap() == 1, || format!("{report:?}"))
    });
}
