use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use triage_core::domain::ConversationSource;
use triage_core::eval::{compute_stats, labeled, train_baseline_classifier, ClassifierOptions};
use triage_core::par::Execution;
use triage_core::synthesis::{synthesize_corpus, CorpusInputs, SynthesisConfig};
use triage_core::testkit::{bundled_bank, bundled_cases, bundled_catalog, bundled_mapping, separable_corpus};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn synthesis(c: &mut Criterion) {
    let (catalog, bank, mapping) = (bundled_catalog(), bundled_bank(), bundled_mapping());
    let cases = bundled_cases(2_000, 7);
    let inputs = CorpusInputs { catalog: &catalog, mapping: &mapping, bank: Some(&bank), backend: None };
    let cfg = SynthesisConfig::default();
    let mut group = c.benchmark_group("synthesize_artificial_2000");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| synthesize_corpus(black_box(&cases), &inputs, ConversationSource::Artificial, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn stats(c: &mut Criterion) {
    let (catalog, bank, mapping) = (bundled_catalog(), bundled_bank(), bundled_mapping());
    let inputs = CorpusInputs { catalog: &catalog, mapping: &mapping, bank: Some(&bank), backend: None };
    let convs = synthesize_corpus(
        &bundled_cases(5_000, 3),
        &inputs,
        ConversationSource::Artificial,
        &SynthesisConfig::default(),
        Execution::Parallel,
    )
    .unwrap()
    .conversations;
    let mut group = c.benchmark_group("stats_5000");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| compute_stats(black_box(&convs), exec))
        });
    }
    group.finish();
}

fn classify(c: &mut Criterion) {
    let corpus = separable_corpus(1_000, 5);
    let data = labeled(&corpus).unwrap();
    let model = train_baseline_classifier(&data, ClassifierOptions::default()).unwrap();
    let mut group = c.benchmark_group("predict_3000");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| model.predict_all(black_box(&corpus), exec))
        });
    }
    group.finish();
}

criterion_group!(benches, synthesis, stats, classify);
criterion_main!(benches);
