use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modmoe::model::accumulate_step;
use modmoe::router::TfIdf;
use modmoe::{Rng, Tensor};
use modmoe_bench::{batch, desk_sample, student, tokenizer};

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    let mut rng = Rng::new(0);
    for n in [64usize, 128, 256] {
        let a = Tensor::<f32>::randn(&[n, n], 1.0, &mut rng);
        let b = Tensor::<f32>::randn(&[n, n], 1.0, &mut rng);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| bench.iter(|| a.matmul(&b).unwrap()));
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let docs = desk_sample(20);
    let tok = tokenizer(&docs);
    let mut model = student();
    let b = batch(&docs, &tok, 8);
    c.bench_function("student forward+backward (8x64)", |bench| {
        bench.iter(|| {
            model.params.zero_grad();
            accumulate_step(&mut model, &b, 1.0).unwrap()
        })
    });
}

fn bpe_encode(c: &mut Criterion) {
    let docs = desk_sample(20);
    let tok = tokenizer(&docs);
    let text: String = docs.iter().take(200).map(|d| d.text.as_str()).collect::<Vec<_>>().join("\n");
    c.bench_function("bpe encode (200 docs)", |bench| bench.iter(|| tok.encode(&text)));
}

fn tfidf(c: &mut Criterion) {
    let docs = desk_sample(10);
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let mut g = c.benchmark_group("tfidf");
    g.sample_size(10);
    g.bench_function("fit", |bench| bench.iter(|| TfIdf::fit(texts.iter().copied()).unwrap()));
    let model = TfIdf::fit(texts.iter().copied()).unwrap();
    g.bench_function("vectorize (200 docs)", |bench| {
        bench.iter(|| texts[..200].iter().map(|t| model.vectorize(t)).count())
    });
    g.finish();
}

criterion_group!(benches, matmul, train_step, bpe_encode, tfidf);
criterion_main!(benches);
