//! Planted-motif binary classification data for end-to-end checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DnaSequence, LabeledSequence, TaskDataset, BASES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifTaskParams {
    pub motif: String,
    pub length: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for MotifTaskParams {
    fn default() -> Self {
        Self {
            motif: "TATAAT".into(),
            length: 200,
            train: 2000,
            dev: 500,
            test: 500,
            seed: 0,
        }
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn background(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| BASES[rng.random_range(0..4)]).collect()
}

/// Label 1: uniform background with the motif written at a uniform offset.
/// Label 0: uniform background resampled until it does not contain the motif.
/// Labels alternate so every split is balanced.
pub fn planted_motif_task(params: &MotifTaskParams) -> TaskDataset {
    let motif = params.motif.as_bytes();
    assert!(
        !motif.is_empty() && motif.len() <= params.length,
        "motif must fit in the sequence"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut make = |count: usize| -> Vec<LabeledSequence> {
        (0..count)
            .map(|i| {
                let label = i % 2;
                let bases = if label == 1 {
                    let mut s = background(&mut rng, params.length);
                    let at = rng.random_range(0..=params.length - motif.len());
                    s[at..at + motif.len()].copy_from_slice(motif);
                    s
                } else {
                    loop {
                        let s = background(&mut rng, params.length);
                        if !contains(&s, motif) {
                            break s;
                        }
                    }
                };
                LabeledSequence {
                    sequence: DnaSequence::new(bases).expect("generated bases are valid"),
                    label,
                }
            })
            .collect()
    };
    let train = make(params.train);
    let dev = make(params.dev);
    let test = make(params.test);
    TaskDataset {
        name: "motif".into(),
        species: "synthetic".into(),
        num_classes: 2,
        nominal_length: params.length,
        train,
        dev,
        test,
    }
}
