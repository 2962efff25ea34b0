//! Parallel vs sequential throughput on the example-level loops: batch
//! intervention, corpus foil ranking, and contrastive power.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cx_core::contrastive::ContrastivePair;
use cx_core::interventions::{
    batch_intervene, batch_intervene_seq, Factor, InterventionContext, InterventionKind,
    InterventionPlan,
};
use cx_core::model::train::{train_logistic, TrainConfig};
use cx_core::model::{BowEncoder, Example, LinearHead, Span};
use cx_core::par;
use cx_core::ranking::{
    contrastive_power, rank_foils_corpus, Aggregation, FactorSpec, HighlightExtractor, Metric,
};
use cx_core::staining::{generate_topic_corpus, CorpusConfig};

struct Fixture {
    corpus: Vec<Example>,
    encoder: BowEncoder,
    head: LinearHead,
}

fn fixture() -> Fixture {
    let corpus = generate_topic_corpus(
        &CorpusConfig {
            examples_per_class: 200,
            ..CorpusConfig::default()
        },
        42,
    );
    let encoder = BowEncoder::build(&corpus);
    let head = train_logistic(&corpus, &encoder, &TrainConfig::default()).unwrap();
    Fixture {
        corpus,
        encoder,
        head,
    }
}

fn plans() -> Vec<InterventionPlan> {
    vec![
        InterventionPlan {
            kind: InterventionKind::Mask,
            factor: Some(Factor::Highlight {
                spans: vec![Span::new(0, 1)],
                display: "first".into(),
            }),
            pair: ContrastivePair::new("sports", "finance").unwrap(),
        },
        InterventionPlan {
            kind: InterventionKind::ContrastiveOnly,
            factor: None,
            pair: ContrastivePair::new("finance", "weather").unwrap(),
        },
    ]
}

fn bench_batch_intervene(c: &mut Criterion) {
    let fx = fixture();
    let ctx = InterventionContext::new(&fx.head, &fx.encoder);
    let plans = plans();
    let mut group = c.benchmark_group("batch_intervene");
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(batch_intervene_seq(&ctx, &fx.corpus, &plans)))
    });
    for workers in [2usize, 4] {
        group.bench_with_input(
            BenchmarkId::new("parallel", workers),
            &workers,
            |b, &workers| {
                b.iter(|| {
                    par::with_workers(workers, || {
                        black_box(batch_intervene(&ctx, &fx.corpus, &plans))
                    })
                })
            },
        );
    }
    group.finish();
}

fn bench_rank_foils(c: &mut Criterion) {
    let fx = fixture();
    let ctx = InterventionContext::new(&fx.head, &fx.encoder);
    let factor = FactorSpec::Extractor(HighlightExtractor::FirstToken);
    let mut group = c.benchmark_group("rank_foils_corpus");
    group.sample_size(20);
    group.bench_function("sequential", |b| {
        b.iter(|| {
            par::with_workers(1, || {
                black_box(
                    rank_foils_corpus(
                        &ctx,
                        &fx.corpus,
                        &factor,
                        Metric::Delta,
                        Aggregation::MeanByFact,
                    )
                    .unwrap(),
                )
            })
        })
    });
    group.bench_function("parallel", |b| {
        b.iter(|| {
            black_box(
                rank_foils_corpus(
                    &ctx,
                    &fx.corpus,
                    &factor,
                    Metric::Delta,
                    Aggregation::MeanByFact,
                )
                .unwrap(),
            )
        })
    });
    group.finish();
}

fn bench_contrastive_power(c: &mut Criterion) {
    let fx = fixture();
    let reprs: Vec<_> = fx
        .corpus
        .iter()
        .map(|ex| fx.encoder.encode(ex, &[]).unwrap())
        .collect();
    let mut group = c.benchmark_group("contrastive_power");
    group.bench_function("sequential", |b| {
        b.iter(|| par::with_workers(1, || black_box(contrastive_power(&fx.head, &reprs, 5))))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(contrastive_power(&fx.head, &reprs, 5)))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_batch_intervene,
    bench_rank_foils,
    bench_contrastive_power
);
criterion_main!(benches);
