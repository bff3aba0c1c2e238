use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TokenizerError, NUM_SPECIALS, SPECIAL_TOKENS, UNK_ID};
use crate::corpus::BASES;

pub const VOCAB_FORMAT_VERSION: u32 = 1;

/// Ordered token table. Index = id; ids 0..4 are PAD, UNK, CLS, SEP.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    merges: Option<Vec<(String, String)>>,
    /// `(left id, right id, merged id)` for each merge, in learned order.
    merge_ids: Vec<(u32, u32, u32)>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges
    }
}

impl Vocabulary {
    /// Builds a vocabulary from the non-special tokens and an optional merge list.
    pub fn from_parts(
        body: Vec<String>,
        merges: Option<Vec<(String, String)>>,
    ) -> Result<Self, TokenizerError> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(body);
        Self::from_tokens(tokens, merges)
    }

    fn from_tokens(
        tokens: Vec<String>,
        merges: Option<Vec<(String, String)>>,
    ) -> Result<Self, TokenizerError> {
        let violation = |msg: String| Err(TokenizerError::InvariantViolation(msg));
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return violation(format!("the first four tokens must be {SPECIAL_TOKENS:?}"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return violation(format!("empty token at id {id}"));
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return violation(format!("duplicate token {tok:?}"));
            }
        }

        let mut merge_ids = Vec::new();
        if let Some(merges) = &merges {
            let mut known: HashSet<String> =
                BASES.iter().map(|b| (*b as char).to_string()).collect();
            for (left, right) in merges {
                if !known.contains(left) || !known.contains(right) {
                    return violation(format!(
                        "merge ({left:?}, {right:?}) uses a symbol not produced by earlier merges"
                    ));
                }
                let merged = format!("{left}{right}");
                let Some(&id) = index.get(&merged) else {
                    return violation(format!("merged token {merged:?} missing from tokens"));
                };
                merge_ids.push((index[left], index[right], id));
                known.insert(merged);
            }
            let body: HashSet<&String> = tokens[NUM_SPECIALS..].iter().collect();
            if body.len() != known.len() || !known.iter().all(|t| body.contains(t)) {
                return violation(
                    "merges applied to the base alphabet do not regenerate the token set".into(),
                );
            }
        }

        Ok(Self {
            tokens,
            index,
            merges,
            merge_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn merges(&self) -> Option<&[(String, String)]> {
        self.merges.as_deref()
    }

    pub(crate) fn merge_ids(&self) -> &[(u32, u32, u32)] {
        &self.merge_ids
    }

    /// Number of bases a token stands for; specials (including UNK) count as one.
    pub fn base_len(&self, id: u32) -> usize {
        if (id as usize) < NUM_SPECIALS {
            1
        } else {
            self.tokens[id as usize].len()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
}

const FIXED_SPECIALS: SpecialIds = SpecialIds {
    pad: 0,
    unk: 1,
    cls: 2,
    sep: 3,
};

/// On-disk layout. Token and merge order are significant.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    version: u32,
    specials: SpecialIds,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    merges: Option<Vec<[String; 2]>>,
}

impl Vocabulary {
    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            version: VOCAB_FORMAT_VERSION,
            specials: FIXED_SPECIALS,
            tokens: self.tokens.clone(),
            merges: self
                .merges
                .as_ref()
                .map(|m| m.iter().map(|(l, r)| [l.clone(), r.clone()]).collect()),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: VocabularyFile = serde_json::from_str(text)?;
        if file.version != VOCAB_FORMAT_VERSION {
            return Err(TokenizerError::InvariantViolation(format!(
                "unsupported vocabulary version {}",
                file.version
            )));
        }
        if file.specials != FIXED_SPECIALS {
            return Err(TokenizerError::InvariantViolation(
                "special ids must be pad=0, unk=1, cls=2, sep=3".into(),
            ));
        }
        let merges = file
            .merges
            .map(|m| m.into_iter().map(|[l, r]| (l, r)).collect());
        Self::from_tokens(file.tokens, merges)
    }
}

pub fn save_vocabulary(vocab: &Vocabulary, path: &Path) -> Result<(), TokenizerError> {
    fs::write(path, vocab.to_json()).map_err(|source| TokenizerError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary, TokenizerError> {
    let text = fs::read_to_string(path).map_err(|source| TokenizerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Vocabulary::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::kmer_vocabulary;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn small_bpe() -> Vocabulary {
        Vocabulary::from_parts(
            toks(&["A", "C", "G", "T", "AT", "ATG"]),
            Some(vec![("A".into(), "T".into()), ("AT".into(), "G".into())]),
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip() {
        let v = small_bpe();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.merge_ids(), v.merge_ids());
    }

    #[test]
    fn kmer_round_trip_omits_merges() {
        let v = kmer_vocabulary(2).unwrap();
        let json = v.to_json();
        assert!(!json.contains("merges"));
        assert_eq!(Vocabulary::from_json(&json).unwrap(), v);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let v = small_bpe();
        save_vocabulary(&v, &path).unwrap();
        assert_eq!(load_vocabulary(&path).unwrap(), v);
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let json = r#"{"version":1,"specials":{"pad":0,"unk":1,"cls":2,"sep":3},
            "tokens":["[PAD]","[UNK]","[CLS]","[SEP]","A","A"]}"#;
        assert!(matches!(
            Vocabulary::from_json(json),
            Err(TokenizerError::InvariantViolation(_))
        ));
    }

    #[test]
    fn merges_must_regenerate_tokens() {
        // extra token not produced by any merge
        let err = Vocabulary::from_parts(
            toks(&["A", "C", "G", "T", "AT", "GG"]),
            Some(vec![("A".into(), "T".into())]),
        )
        .unwrap_err();
        assert!(matches!(err, TokenizerError::InvariantViolation(_)));
        // merge referencing a symbol that does not exist yet
        let err = Vocabulary::from_parts(
            toks(&["A", "C", "G", "T", "ATG", "AT"]),
            Some(vec![("AT".into(), "G".into()), ("A".into(), "T".into())]),
        )
        .unwrap_err();
        assert!(matches!(err, TokenizerError::InvariantViolation(_)));
    }

    #[test]
    fn wrong_specials_rejected() {
        let json = r#"{"version":1,"specials":{"pad":3,"unk":1,"cls":2,"sep":0},
            "tokens":["[PAD]","[UNK]","[CLS]","[SEP]","A"]}"#;
        assert!(Vocabulary::from_json(json).is_err());
    }

    #[test]
    fn garbage_is_parse_error() {
        assert!(matches!(
            Vocabulary::from_json("{not json"),
            Err(TokenizerError::Parse(_))
        ));
    }
}
