//! Shared fixtures for the kernel benchmarks.

use genoseq_core::corpus::{DnaSequence, BASES};
use genoseq_core::model::{Example, ModelConfig, ModelParams};
use genoseq_core::position::{PositionalScheme, SchemeKind};
use genoseq_core::tokenize::TokenizerSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_sequences(count: usize, len: usize, seed: u64) -> Vec<DnaSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let bases: Vec<u8> = (0..len).map(|_| BASES[rng.random_range(0..4)]).collect();
            DnaSequence::new(bases).expect("valid bases")
        })
        .collect()
}

/// A 2-layer d=64 model over 3-mers with `batch` random examples of `len` bases.
pub fn small_model(
    kind: SchemeKind,
    len: usize,
    batch: usize,
) -> (ModelConfig, ModelParams, Vec<Example>) {
    let tok = TokenizerSpec::kmer(3).expect("3-mer tokenizer");
    let max_len = len + 2;
    let config = ModelConfig {
        d_model: 64,
        num_layers: 2,
        num_heads: 2,
        d_ff: 256,
        dropout: 0.1,
        ..ModelConfig::new(
            tok.vocab_size(),
            max_len,
            2,
            PositionalScheme::with_defaults(kind, 2),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = ModelParams::init(&config, &mut rng).expect("valid config");
    let examples = random_sequences(batch, len, 11)
        .iter()
        .enumerate()
        .map(|(i, s)| Example {
            tokens: tok.encode(s, max_len).expect("fits"),
            label: i % 2,
        })
        .collect();
    (config, params, examples)
}
