//! Nucleotide-level perturbations used by the robustness protocol.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, DnaSequence, BASES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Perturbation {
    Original,
    /// Replace the first and last `n_per_end` bases with uniform draws from
    /// `{A,C,G,T}`. A draw may reproduce the original base.
    EndSubstitution {
        n_per_end: usize,
    },
    /// Drop the first `n` bases, shift left, and fill the tail with `n`
    /// uniform draws.
    HeadDeleteTailFill {
        n: usize,
    },
}

impl Perturbation {
    /// Short name used as a report column.
    pub fn label(&self) -> &'static str {
        match self {
            Perturbation::Original => "original",
            Perturbation::EndSubstitution { .. } => "end_substitution",
            Perturbation::HeadDeleteTailFill { .. } => "head_delete_tail_fill",
        }
    }
}

fn random_base<R: Rng + ?Sized>(rng: &mut R) -> u8 {
    BASES[rng.random_range(0..4)]
}

pub fn perturb<R: Rng + ?Sized>(
    seq: &DnaSequence,
    kind: Perturbation,
    rng: &mut R,
) -> Result<DnaSequence, CorpusError> {
    let src = seq.as_bytes();
    let len = src.len();
    let out = match kind {
        Perturbation::Original => src.to_vec(),
        Perturbation::EndSubstitution { n_per_end: n } => {
            if n >= len {
                return Err(CorpusError::PerturbationTooLarge { n, len });
            }
            let mut out = src.to_vec();
            for i in 0..n {
                out[i] = random_base(rng);
            }
            for i in len - n..len {
                out[i] = random_base(rng);
            }
            out
        }
        Perturbation::HeadDeleteTailFill { n } => {
            if n >= len {
                return Err(CorpusError::PerturbationTooLarge { n, len });
            }
            let mut out = Vec::with_capacity(len);
            out.extend_from_slice(&src[n..]);
            out.extend((0..n).map(|_| random_base(rng)));
            out
        }
    };
    Ok(DnaSequence::from_valid(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(s: &str) -> DnaSequence {
        s.parse().unwrap()
    }

    #[test]
    fn original_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = seq("ACGTACGT");
        assert_eq!(perturb(&s, Perturbation::Original, &mut rng).unwrap(), s);
    }

    #[test]
    fn head_delete_shifts_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = perturb(
            &seq("ACGTACGT"),
            Perturbation::HeadDeleteTailFill { n: 3 },
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(&out.as_str()[..5], "TACGT");
        assert!(out.as_bytes()[5..].iter().all(|b| BASES.contains(b)));
    }

    #[test]
    fn end_substitution_keeps_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = perturb(
            &seq("ACGTACGT"),
            Perturbation::EndSubstitution { n_per_end: 2 },
            &mut rng,
        )
        .unwrap();
        assert_eq!(&out.as_str()[2..6], "GTAC");
    }

    #[test]
    fn too_large_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = seq("ACG");
        assert!(matches!(
            perturb(&s, Perturbation::HeadDeleteTailFill { n: 3 }, &mut rng),
            Err(CorpusError::PerturbationTooLarge { n: 3, len: 3 })
        ));
        assert!(perturb(&s, Perturbation::EndSubstitution { n_per_end: 3 }, &mut rng).is_err());
    }

    #[test]
    fn n_is_never_generated_but_survives_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = perturb(
            &seq("NNNANNN"),
            Perturbation::EndSubstitution { n_per_end: 3 },
            &mut rng,
        )
        .unwrap();
        let b = out.as_bytes();
        assert_eq!(b[3], b'A');
        assert!(b[..3].iter().chain(&b[4..]).all(|x| *x != b'N'));
    }

    fn dna(max: usize) -> impl Strategy<Value = String> {
        proptest::collection::vec(prop::sample::select(vec!['A', 'C', 'G', 'T', 'N']), 1..max)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn end_substitution_masks_only_the_ends(s in dna(300), n in 0usize..20, seed: u64) {
            let s = seq(&s);
            prop_assume!(n < s.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = perturb(&s, Perturbation::EndSubstitution { n_per_end: n }, &mut rng).unwrap();
            prop_assert_eq!(out.len(), s.len());
            let len = s.len();
            for i in 0..len {
                let touched = i < n || i >= len - n;
                if !touched {
                    prop_assert_eq!(out.as_bytes()[i], s.as_bytes()[i]);
                }
            }
        }

        #[test]
        fn head_delete_prefix_matches_suffix(s in dna(300), n in 0usize..20, seed: u64) {
            let s = seq(&s);
            prop_assume!(n < s.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = perturb(&s, Perturbation::HeadDeleteTailFill { n }, &mut rng).unwrap();
            prop_assert_eq!(out.len(), s.len());
            prop_assert_eq!(&out.as_bytes()[..s.len() - n], &s.as_bytes()[n..]);
        }

        #[test]
        fn same_seed_same_output(s in dna(100), seed: u64) {
            let s = seq(&s);
            let kind = Perturbation::EndSubstitution { n_per_end: s.len().saturating_sub(1).min(3) };
            let a = perturb(&s, kind, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = perturb(&s, kind, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
