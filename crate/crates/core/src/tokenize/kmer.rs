use super::{TokenizerError, Vocabulary, NUM_SPECIALS, UNK_ID, UNK_TOKEN};
use crate::corpus::{DnaSequence, BASES};

/// Largest supported k; 4^8 = 65,536 base tokens.
pub const MAX_K: usize = 8;

fn check_k(k: usize) -> Result<(), TokenizerError> {
    match k {
        0 => Err(TokenizerError::InvalidK),
        k if k > MAX_K => Err(TokenizerError::KTooLarge(k)),
        _ => Ok(()),
    }
}

/// Stride-1 sliding window of width `k`. Windows touching an `N` become UNK.
pub fn kmer_tokenize(seq: &DnaSequence, k: usize) -> Result<Vec<String>, TokenizerError> {
    if k == 0 {
        return Err(TokenizerError::InvalidK);
    }
    let bases = seq.as_bytes();
    if bases.len() < k {
        return Err(TokenizerError::SequenceTooShort {
            len: bases.len(),
            k,
        });
    }
    Ok(bases
        .windows(k)
        .map(|w| {
            if w.contains(&b'N') {
                UNK_TOKEN.to_string()
            } else {
                // windows of an ASCII sequence
                String::from_utf8(w.to_vec()).unwrap()
            }
        })
        .collect())
}

#[inline]
fn base_code(b: u8) -> Option<u32> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

/// Same windows as [`kmer_tokenize`], mapped straight to ids of
/// [`kmer_vocabulary`] with a rolling base-4 code.
pub fn kmer_ids(seq: &DnaSequence, k: usize) -> Result<Vec<u32>, TokenizerError> {
    check_k(k)?;
    let bases = seq.as_bytes();
    if bases.len() < k {
        return Err(TokenizerError::SequenceTooShort {
            len: bases.len(),
            k,
        });
    }
    let mask = (1u32 << (2 * k)) - 1;
    let mut code = 0u32;
    // bases since the last N
    let mut clean = 0usize;
    let mut out = Vec::with_capacity(bases.len() + 1 - k);
    for (i, &b) in bases.iter().enumerate() {
        match base_code(b) {
            Some(c) => {
                code = ((code << 2) | c) & mask;
                clean += 1;
            }
            None => clean = 0,
        }
        if i + 1 >= k {
            out.push(if clean >= k {
                NUM_SPECIALS as u32 + code
            } else {
                UNK_ID
            });
        }
    }
    Ok(out)
}

/// Specials followed by all 4^k strings over `{A,C,G,T}` in lexicographic order.
pub fn kmer_vocabulary(k: usize) -> Result<Vocabulary, TokenizerError> {
    check_k(k)?;
    let n = 1usize << (2 * k);
    let kmers = (0..n).map(|code| {
        (0..k)
            .rev()
            .map(|pos| BASES[(code >> (2 * pos)) & 3] as char)
            .collect::<String>()
    });
    Vocabulary::from_parts(kmers.collect(), None)
}
