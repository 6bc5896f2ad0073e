use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use histadapt::corpus::{synth_generate, AttributeSpace, Corpus, SynthConfig};
use histadapt::features::{build_vocabulary, extract_sentence, FeatureVocabulary};
use histadapt::representations::{
    fema_loss, train_brown, train_fema, BrownConfig, FeatureEmbeddingModel, FemaConfig, Negatives,
};
use histadapt::tagger::{train_tagger, TaggerConfig};

fn small_pair() -> (Corpus, Corpus, FeatureVocabulary) {
    let config = SynthConfig {
        sentences_per_domain: 300,
        ..SynthConfig::default()
    };
    let out = synth_generate(&config, 3).unwrap();
    let vocab = build_vocabulary(&[&out.source, &out.target]).unwrap();
    (out.source, out.target, vocab)
}

fn fema(c: &mut Criterion) {
    let (source, target, vocab) = small_pair();
    let space = AttributeSpace::shared_only();
    let model = FeatureEmbeddingModel::random(&vocab, &space, 50, 5, 0.1, 1);
    let inst = &extract_sentence(source.sentences().next().unwrap(), &[true])[1];
    let negs = Negatives::from_fn(5, |_, t2, j| vocab.offset(t2) + j);
    c.bench_function("fema_loss dim50 k5", |b| b.iter(|| fema_loss(black_box(&model), inst, &negs).unwrap()));

    let config = FemaConfig {
        dim: 50,
        negatives: 5,
        epochs: 1,
        ..FemaConfig::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("fema one epoch, 600 sentences", |b| {
        b.iter(|| train_fema(&[&source, &target], &vocab, &space, &config).unwrap())
    });
    group.bench_function("tagger baseline, 300 sentences", |b| {
        b.iter(|| train_tagger(&source, &vocab, &[], &TaggerConfig::default()).unwrap())
    });
    group.bench_function("brown 50 clusters, 600 sentences", |b| {
        let u = Corpus::union([&source, &target]);
        b.iter(|| {
            train_brown(
                &u,
                &BrownConfig {
                    clusters: 50,
                    window: None,
                },
            )
            .unwrap()
        })
    });
    group.finish();
}

fn tagging(c: &mut Criterion) {
    let (source, target, vocab) = small_pair();
    let model = train_tagger(&source, &vocab, &[], &TaggerConfig::default()).unwrap();
    c.bench_function("tag 300 sentences", |b| b.iter(|| model.tag_corpus(&[], black_box(&target)).unwrap()));
}

criterion_group!(benches, fema, tagging);
criterion_main!(benches);
