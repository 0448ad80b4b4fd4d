use std::hint::black_box;

use chrono::Utc;
use criterion::{BenchmarkId, Criterion, Throughput, criterion_group, criterion_main};
use factcheck_bench::{claim_corpus, half_rated_table, scripted_agent, sources};
use factcheck_core::agent::NoProgress;
use factcheck_core::analytics::{cluster_rows, tokenize, vectorize_claims};
use factcheck_core::llm::protocol::{parse_agent_directive, parse_verdict};
use factcheck_core::{Claim, UserId, summarize_sources};

fn protocol(c: &mut Criterion) {
    let verdict = "Here is my assessment.\n**SCORE:** 72\nEXPLANATION: Sources [1] and [3] agree;\n[2] is older.\n";
    let directive = "I will look this up.\nSEARCH: [\"eiffel tower height\", \"eiffel tower antenna 2022\", \"tour eiffel hauteur\"]";
    let mut group = c.benchmark_group("protocol");
    group.bench_function("parse_verdict", |b| b.iter(|| parse_verdict(black_box(verdict))));
    group.bench_function("parse_agent_directive", |b| b.iter(|| parse_agent_directive(black_box(directive))));
    group.finish();
}

fn text(c: &mut Criterion) {
    let corpus = claim_corpus(500);
    let mut group = c.benchmark_group("text");
    group.throughput(Throughput::Elements(corpus.len() as u64));
    group.bench_function("tokenize_en", |b| {
        b.iter(|| corpus.iter().map(|t| tokenize(black_box(t), Some("en")).len()).sum::<usize>())
    });
    group.bench_function("vectorize_500", |b| b.iter(|| vectorize_claims(black_box(&corpus)).unwrap()));
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    for n in [100, 1000] {
        let matrix = vectorize_claims(&claim_corpus(n)).unwrap();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("k8", n), &matrix, |b, m| {
            b.iter(|| cluster_rows(black_box(m), 8, 42).unwrap())
        });
    }
    group.finish();
}

fn credibility(c: &mut Criterion) {
    let table = half_rated_table(200);
    let mut group = c.benchmark_group("credibility");
    for n in [10, 1000] {
        let batch = sources(n, 200);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("summarize", n), &batch, |b, s| {
            b.iter(|| summarize_sources(black_box(s), &table))
        });
    }
    group.finish();
}

fn agent_loop(c: &mut Criterion) {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let claim = Claim::new(UserId::new(), "The Eiffel Tower is 330 metres tall.", Some("en"), 2000, Utc::now()).unwrap();
    let mut group = c.benchmark_group("agent");
    for (turns, queries) in [(0, 1), (2, 3), (4, 3)] {
        group.bench_function(BenchmarkId::new("scripted", format!("{turns}x{queries}")), |b| {
            // The transcript is consumed by a run, so each iteration gets a fresh agent.
            b.iter_batched(
                || scripted_agent(turns, queries),
                |agent| rt.block_on(agent.analyze_claim(&claim, &NoProgress)).unwrap(),
                criterion::BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, protocol, text, clustering, credibility, agent_loop);
criterion_main!(benches);
