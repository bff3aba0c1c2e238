use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use genoseq_bench::{random_sequences, small_model};
use genoseq_core::model::{loss_and_gradients, predict_logits};
use genoseq_core::position::SchemeKind;
use genoseq_core::tokenize::{bpe_train, TokenizerSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn tokenizers(c: &mut Criterion) {
    let seqs = random_sequences(64, 1000, 1);
    let mut g = c.benchmark_group("tokenize_64x1000");
    for k in [1, 3, 6] {
        let tok = TokenizerSpec::kmer(k).unwrap();
        g.bench_with_input(BenchmarkId::new("kmer", k), &tok, |b, tok| {
            b.iter(|| {
                for s in &seqs {
                    black_box(tok.body_ids(s).unwrap());
                }
            })
        });
    }
    let vocab = bpe_train(&seqs, 200).unwrap();
    let tok = TokenizerSpec::bpe(vocab).unwrap();
    g.bench_function("bpe_200", |b| {
        b.iter(|| {
            for s in &seqs {
                black_box(tok.body_ids(s).unwrap());
            }
        })
    });
    g.finish();
}

fn bpe_training(c: &mut Criterion) {
    let seqs = random_sequences(200, 200, 2);
    let mut g = c.benchmark_group("bpe_train_200x200");
    g.sample_size(10);
    for merges in [50, 500] {
        g.bench_with_input(BenchmarkId::from_parameter(merges), &merges, |b, &m| {
            b.iter(|| black_box(bpe_train(&seqs, m).unwrap()))
        });
    }
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let mut g = c.benchmark_group("encoder_len200");
    g.sample_size(10);
    for kind in SchemeKind::ALL {
        let (config, params, batch) = small_model(kind, 200, 8);
        g.bench_function(BenchmarkId::new("predict", kind), |b| {
            b.iter(|| black_box(predict_logits(&params, &config, &batch[0].tokens).unwrap()))
        });
        g.bench_function(BenchmarkId::new("grad_batch8", kind), |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            b.iter(|| black_box(loss_and_gradients(&params, &config, &batch, &mut rng).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, tokenizers, bpe_training, encoder);
criterion_main!(benches);
