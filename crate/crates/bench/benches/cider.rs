use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use cnm_bench::random_captions;
use cnm_core::metrics::{corpus_bleu, corpus_cider_d, CiderParams, IdfTable};
use cnm_core::tensor::rng::Rng;

fn bench(c: &mut Criterion) {
    let mut rng = Rng::new(5);
    let refs: Vec<Vec<Vec<usize>>> = (0..100).map(|_| random_captions(&mut rng, 5)).collect();
    let cands = random_captions(&mut rng, 100);
    let idf = IdfTable::build(&refs, 4);
    c.bench_function("idf_build_100_images", |b| b.iter(|| IdfTable::build(black_box(&refs), 4)));
    c.bench_function("cider_d_100_images", |b| {
        b.iter(|| corpus_cider_d(black_box(&cands), &refs, &idf, CiderParams::default()))
    });
    c.bench_function("bleu4_100_images", |b| b.iter(|| corpus_bleu(black_box(&cands), &refs, 4)));
}

criterion_group!(benches, bench);
criterion_main!(benches);
