use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use devagents::agents::{budget_context, extract_artifact, ContextBudget};
use devagents::domain::parse_requirements;
use devagents::llm::{ManualClock, MockBackend};
use devagents::metrics::count_words;
use devagents::pipeline::{run_pipeline, RunConfig};
use devagents::{AgentRole, Stage, TemplateCatalog};
use devagents_bench::{approve_all_script, document, reply_with_files, requirements_document, upstream};

fn counters(c: &mut Criterion) {
    let mut group = c.benchmark_group("count_words");
    for words in [1_000usize, 10_000, 100_000] {
        let doc = document(words);
        group.throughput(Throughput::Bytes(doc.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(words), &doc, |b, doc| {
            b.iter(|| count_words(black_box(&[doc.as_str()])))
        });
    }
    group.finish();
}

fn requirements(c: &mut Criterion) {
    let mut group = c.benchmark_group("parse_requirements");
    for n in [20usize, 200, 2_000] {
        let doc = requirements_document(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &doc, |b, doc| {
            b.iter(|| parse_requirements(black_box(doc)).unwrap())
        });
    }
    group.finish();
}

fn budgeting(c: &mut Criterion) {
    let artifacts = upstream(5, 2_000);
    let mut group = c.benchmark_group("budget_context");
    for budget in [100_000u64, 3_000, 500] {
        group.bench_with_input(BenchmarkId::from_parameter(budget), &budget, |b, budget| {
            b.iter(|| budget_context(black_box(&artifacts), ContextBudget::new(*budget)))
        });
    }
    group.finish();
}

fn extraction(c: &mut Criterion) {
    let role = AgentRole::producer(Stage::Development);
    let mut group = c.benchmark_group("extract_artifact");
    for files in [1usize, 10, 50] {
        let reply = reply_with_files(files, 80);
        group.throughput(Throughput::Bytes(reply.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(files), &reply, |b, reply| {
            b.iter(|| extract_artifact(role, black_box(reply)).unwrap())
        });
    }
    group.finish();
}

fn mock_run(c: &mut Criterion) {
    let backend = MockBackend::new(approve_all_script(400));
    let catalog = TemplateCatalog::defaults();
    let config = RunConfig::mock("Develop a snakegame", "bench");
    let root = tempfile::tempdir().unwrap();
    let mut n = 0u64;
    c.bench_function("run_pipeline/mock", |b| {
        b.iter(|| {
            n += 1;
            let clock = ManualClock::fixed(Duration::ZERO);
            run_pipeline(&config, &backend, &clock, &catalog, root.path(), &format!("b{n}")).unwrap()
        })
    });
}

criterion_group!(benches, counters, requirements, budgeting, extraction, mock_run);
criterion_main!(benches);
