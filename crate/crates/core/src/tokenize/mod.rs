//! DNA tokenization: fixed-length k-mers and learned BPE subwords.
//!
//! Every vocabulary reserves ids 0..4 for the special tokens in the order
//! PAD, UNK, CLS, SEP. Model inputs are framed as `CLS tokens... SEP`
//! and right-padded with PAD.

mod bpe;
mod kmer;
mod vocab;

use std::path::Path;

use thiserror::Error;

use crate::corpus::DnaSequence;

pub use bpe::{bpe_encode, bpe_encode_ids, bpe_train};
pub use kmer::{kmer_ids, kmer_tokenize, kmer_vocabulary, MAX_K};
pub use vocab::{load_vocabulary, save_vocabulary, SpecialIds, Vocabulary, VOCAB_FORMAT_VERSION};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("sequence of length {len} is shorter than k = {k}")]
    SequenceTooShort { len: usize, k: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("k = {0} exceeds the supported maximum of {MAX_K}")]
    KTooLarge(usize),
    #[error("BPE training corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary has no merge list")]
    NotBpe,
    #[error("max_len must be at least 3, got {0}")]
    MaxLenTooSmall(usize),
    #[error("vocabulary parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("vocabulary invariant violated: {0}")]
    InvariantViolation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown tokenizer descriptor {0:?} (expected `<k>mer` or `bpe:<vocab file>`)")]
    UnknownDescriptor(String),
}

/// Framed, padded model input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    /// `CLS ... SEP` followed by PAD up to the requested length.
    pub ids: Vec<u32>,
    /// Number of leading non-PAD positions.
    pub valid_len: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn key_mask(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.ids.len()).map(move |i| i < self.valid_len)
    }
}

/// Frames already-mapped ids: truncate to `max_len - 2`, add CLS/SEP, pad.
pub fn frame_ids(body: &[u32], max_len: usize) -> Result<TokenSequence, TokenizerError> {
    if max_len < 3 {
        return Err(TokenizerError::MaxLenTooSmall(max_len));
    }
    let body = &body[..body.len().min(max_len - 2)];
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend_from_slice(body);
    ids.push(SEP_ID);
    let valid_len = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(TokenSequence { ids, valid_len })
}

/// Maps token strings to ids (unknown strings become UNK) and frames them.
pub fn encode_ids<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence, TokenizerError> {
    let body: Vec<u32> = tokens.iter().map(|t| vocab.id_or_unk(t.as_ref())).collect();
    frame_ids(&body, max_len)
}

/// A configured tokenizer together with its vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub enum TokenizerSpec {
    KMer { k: usize, vocab: Vocabulary },
    Bpe { vocab: Vocabulary },
}

impl TokenizerSpec {
    pub fn kmer(k: usize) -> Result<Self, TokenizerError> {
        Ok(Self::KMer {
            k,
            vocab: kmer_vocabulary(k)?,
        })
    }

    pub fn bpe(vocab: Vocabulary) -> Result<Self, TokenizerError> {
        if vocab.merges().is_none() {
            return Err(TokenizerError::NotBpe);
        }
        Ok(Self::Bpe { vocab })
    }

    /// Parses `1mer`..`8mer` or `bpe:<path>`; BPE vocabularies are loaded from disk.
    pub fn from_descriptor(desc: &str) -> Result<Self, TokenizerError> {
        if let Some(path) = desc.strip_prefix("bpe:") {
            return Self::bpe(load_vocabulary(Path::new(path))?);
        }
        let k = desc
            .strip_suffix("mer")
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| TokenizerError::UnknownDescriptor(desc.to_string()))?;
        Self::kmer(k)
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Self::KMer { vocab, .. } | Self::Bpe { vocab } => vocab,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab().len()
    }

    /// `"<k>mer"` or `"bpe"`.
    pub fn name(&self) -> String {
        match self {
            Self::KMer { k, .. } => format!("{k}mer"),
            Self::Bpe { .. } => "bpe".to_string(),
        }
    }

    pub fn tokenize(&self, seq: &DnaSequence) -> Result<Vec<String>, TokenizerError> {
        match self {
            Self::KMer { k, .. } => kmer_tokenize(seq, *k),
            Self::Bpe { vocab } => bpe_encode(seq, vocab),
        }
    }

    /// Token ids without the CLS/SEP frame.
    pub fn body_ids(&self, seq: &DnaSequence) -> Result<Vec<u32>, TokenizerError> {
        match self {
            Self::KMer { k, .. } => kmer_ids(seq, *k),
            Self::Bpe { vocab } => bpe_encode_ids(seq, vocab),
        }
    }

    pub fn encode(
        &self,
        seq: &DnaSequence,
        max_len: usize,
    ) -> Result<TokenSequence, TokenizerError> {
        frame_ids(&self.body_ids(seq)?, max_len)
    }
}
