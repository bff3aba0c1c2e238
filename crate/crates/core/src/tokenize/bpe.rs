//! Byte-pair-encoding over nucleotides.
//!
//! Training repeatedly merges the most frequent adjacent symbol pair.
//! Ties go to the lexicographically smallest `(left, right)` string pair,
//! and training stops early once no pair occurs at least twice. `N` is
//! never part of a symbol: sequences are split at every `N` before
//! counting, and at encode time `N` becomes UNK, which no merge touches.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::rc::Rc;

use super::{TokenizerError, Vocabulary, NUM_SPECIALS, UNK_ID, UNK_TOKEN};
use crate::corpus::{DnaSequence, BASES};

type Pair = (u32, u32);

/// Symbol table used during training. Symbols are identified by their string.
struct Symbols {
    strings: Vec<Rc<str>>,
    index: HashMap<Rc<str>, u32>,
}

impl Symbols {
    fn new() -> Self {
        let mut s = Self {
            strings: Vec::new(),
            index: HashMap::new(),
        };
        for b in BASES {
            s.intern(&(b as char).to_string());
        }
        s
    }

    fn intern(&mut self, text: &str) -> u32 {
        if let Some(&id) = self.index.get(text) {
            return id;
        }
        let id = self.strings.len() as u32;
        let rc: Rc<str> = Rc::from(text);
        self.strings.push(rc.clone());
        self.index.insert(rc, id);
        id
    }
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: Rc<str>,
    right: Rc<str>,
    pair: Pair,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // max count first, then smallest (left, right)
        self.count.cmp(&other.count).then_with(|| {
            Reverse((&*self.left, &*self.right)).cmp(&Reverse((&*other.left, &*other.right)))
        })
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Replaces every non-overlapping `(a, b)` left to right. Returns whether anything changed.
fn merge_in_place(word: &mut Vec<u32>, (a, b): Pair, merged: u32) -> bool {
    let mut out = 0;
    let mut i = 0;
    let mut changed = false;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == a && word[i + 1] == b {
            word[out] = merged;
            i += 2;
            changed = true;
        } else {
            word[out] = word[i];
            i += 1;
        }
        out += 1;
    }
    word.truncate(out);
    changed
}

struct Trainer {
    symbols: Symbols,
    words: Vec<Vec<u32>>,
    freqs: Vec<u64>,
    counts: HashMap<Pair, u64>,
    /// Words that contained the pair at some point; may be stale.
    occurs_in: HashMap<Pair, Vec<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn new(corpus: &[DnaSequence]) -> Self {
        let mut symbols = Symbols::new();
        // identical segments are counted once with a multiplicity
        let mut segments: BTreeMap<&[u8], u64> = BTreeMap::new();
        for seq in corpus {
            for seg in seq
                .as_bytes()
                .split(|&b| b == b'N')
                .filter(|s| s.len() >= 2)
            {
                *segments.entry(seg).or_default() += 1;
            }
        }
        let mut words = Vec::with_capacity(segments.len());
        let mut freqs = Vec::with_capacity(segments.len());
        for (seg, freq) in segments {
            words.push(
                seg.iter()
                    .map(|&b| symbols.intern(&(b as char).to_string()))
                    .collect(),
            );
            freqs.push(freq);
        }
        let mut t = Self {
            symbols,
            words,
            freqs,
            counts: HashMap::new(),
            occurs_in: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        for w in 0..t.words.len() {
            t.add_word_pairs(w, None);
        }
        let pairs: Vec<(Pair, u64)> = t.counts.iter().map(|(p, c)| (*p, *c)).collect();
        for (pair, count) in pairs {
            t.push(pair, count);
        }
        t
    }

    fn push(&mut self, pair: Pair, count: u64) {
        self.heap.push(Candidate {
            count,
            left: self.symbols.strings[pair.0 as usize].clone(),
            right: self.symbols.strings[pair.1 as usize].clone(),
            pair,
        });
    }

    fn add_word_pairs(&mut self, w: usize, mut touched: Option<&mut Vec<Pair>>) {
        let f = self.freqs[w];
        for win in self.words[w].windows(2) {
            let pair = (win[0], win[1]);
            *self.counts.entry(pair).or_default() += f;
            let occ = self.occurs_in.entry(pair).or_default();
            if occ.last() != Some(&w) {
                occ.push(w);
            }
            if let Some(t) = touched.as_deref_mut() {
                t.push(pair);
            }
        }
    }

    fn remove_word_pairs(&mut self, w: usize, touched: &mut Vec<Pair>) {
        let f = self.freqs[w];
        for win in self.words[w].windows(2) {
            let pair = (win[0], win[1]);
            if let Some(c) = self.counts.get_mut(&pair) {
                *c -= f;
            }
            touched.push(pair);
        }
    }

    /// Pops the best pair whose heap entry matches its current count.
    fn best(&mut self) -> Option<Candidate> {
        while let Some(top) = self.heap.pop() {
            // every count change pushes a fresh entry, so a mismatch is stale
            if self.counts.get(&top.pair).copied() == Some(top.count) {
                return Some(top);
            }
        }
        None
    }

    fn merge(&mut self, pair: Pair) -> u32 {
        let merged_text = format!(
            "{}{}",
            self.symbols.strings[pair.0 as usize], self.symbols.strings[pair.1 as usize]
        );
        let merged = self.symbols.intern(&merged_text);
        let mut affected = self.occurs_in.remove(&pair).unwrap_or_default();
        affected.sort_unstable();
        affected.dedup();

        let mut touched = Vec::new();
        for w in affected {
            let word = &self.words[w];
            if !word.windows(2).any(|win| (win[0], win[1]) == pair) {
                continue;
            }
            self.remove_word_pairs(w, &mut touched);
            merge_in_place(&mut self.words[w], pair, merged);
            self.add_word_pairs(w, Some(&mut touched));
        }
        debug_assert_eq!(self.counts.get(&pair).copied().unwrap_or(0), 0);
        self.counts.remove(&pair);

        touched.sort_unstable();
        touched.dedup();
        for p in touched {
            match self.counts.get(&p).copied() {
                Some(0) => {
                    self.counts.remove(&p);
                }
                Some(c) => self.push(p, c),
                None => {}
            }
        }
        merged
    }
}

/// Learns up to `num_merges` merges from `corpus`.
///
/// The resulting vocabulary holds the specials, the four bases, and each
/// distinct merged string in order of first creation.
pub fn bpe_train(corpus: &[DnaSequence], num_merges: usize) -> Result<Vocabulary, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut trainer = Trainer::new(corpus);
    let mut merges = Vec::with_capacity(num_merges);
    let mut body: Vec<String> = BASES.iter().map(|b| (*b as char).to_string()).collect();
    let mut seen: std::collections::HashSet<String> = body.iter().cloned().collect();

    while merges.len() < num_merges {
        let Some(best) = trainer.best() else { break };
        if best.count < 2 {
            break;
        }
        trainer.merge(best.pair);
        let merged = format!("{}{}", best.left, best.right);
        if seen.insert(merged.clone()) {
            body.push(merged);
        }
        merges.push((best.left.to_string(), best.right.to_string()));
    }
    Vocabulary::from_parts(body, Some(merges))
}

/// Encodes to vocabulary ids by replaying the learned merges in order.
pub fn bpe_encode_ids(seq: &DnaSequence, vocab: &Vocabulary) -> Result<Vec<u32>, TokenizerError> {
    if vocab.merges().is_none() {
        return Err(TokenizerError::NotBpe);
    }
    let base_ids: [u32; 4] = BASES.map(|b| vocab.id_or_unk(&(b as char).to_string()));
    let mut word: Vec<u32> = seq
        .as_bytes()
        .iter()
        .map(|&b| match b {
            b'A' => base_ids[0],
            b'C' => base_ids[1],
            b'G' => base_ids[2],
            b'T' => base_ids[3],
            _ => UNK_ID,
        })
        .collect();

    let mut present = vec![false; vocab.len()];
    for &id in &word {
        present[id as usize] = true;
    }
    for &(a, b, merged) in vocab.merge_ids() {
        if word.len() < 2 {
            break;
        }
        if present[a as usize] && present[b as usize] && merge_in_place(&mut word, (a, b), merged) {
            present[merged as usize] = true;
        }
    }
    debug_assert!(word
        .iter()
        .all(|&id| id as usize >= NUM_SPECIALS || id == UNK_ID));
    Ok(word)
}

pub fn bpe_encode(seq: &DnaSequence, vocab: &Vocabulary) -> Result<Vec<String>, TokenizerError> {
    Ok(bpe_encode_ids(seq, vocab)?
        .into_iter()
        .map(|id| {
            if id == UNK_ID {
                UNK_TOKEN.to_string()
            } else {
                vocab.token(id).expect("merge ids are in range").to_string()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(v: &[&str]) -> Vec<DnaSequence> {
        v.iter().map(|s| s.parse().unwrap()).collect()
    }

    fn merges(v: &Vocabulary) -> Vec<(String, String)> {
        v.merges().unwrap().to_vec()
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.into(), r.into())
    }

    #[test]
    fn single_pair_corpus() {
        let v = bpe_train(&seqs(&["AAAA"]), 1).unwrap();
        assert_eq!(merges(&v), vec![pair("A", "A")]);
        assert!(v.id("AA").is_some());
        assert_eq!(v.len(), NUM_SPECIALS + 4 + 1);
    }

    #[test]
    fn picks_most_frequent() {
        let v = bpe_train(&seqs(&["ATATAT", "ATAT"]), 1).unwrap();
        assert_eq!(merges(&v), vec![pair("A", "T")]);
    }

    #[test]
    fn stops_when_all_pairs_are_singletons() {
        let v = bpe_train(&seqs(&["ACGT"]), 3).unwrap();
        assert!(merges(&v).is_empty());
        assert_eq!(v.len(), NUM_SPECIALS + 4);
    }

    #[test]
    fn ties_go_to_smallest_pair() {
        // (C,G) and (G,T) both occur twice
        let v = bpe_train(&seqs(&["CGT", "CGT"]), 1).unwrap();
        assert_eq!(merges(&v), vec![pair("C", "G")]);
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(
            bpe_train(&[], 3),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn n_blocks_merges() {
        // AT occurs twice but only across an N in the second sequence
        let v = bpe_train(&seqs(&["ANT", "ANT", "GC"]), 5).unwrap();
        assert!(merges(&v).is_empty());
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_parts(
            ["A", "C", "G", "T", "AT"].map(String::from).to_vec(),
            Some(vec![pair("A", "T")]),
        )
        .unwrap();
        assert_eq!(
            bpe_encode(&"ATAT".parse().unwrap(), &v).unwrap(),
            ["AT", "AT"]
        );
        assert_eq!(bpe_encode(&"G".parse().unwrap(), &v).unwrap(), ["G"]);
        assert_eq!(
            bpe_encode(&"ANT".parse().unwrap(), &v).unwrap(),
            ["A", UNK_TOKEN, "T"]
        );

        let aa = Vocabulary::from_parts(
            ["A", "C", "G", "T", "AA"].map(String::from).to_vec(),
            Some(vec![pair("A", "A")]),
        )
        .unwrap();
        assert_eq!(
            bpe_encode(&"AAA".parse().unwrap(), &aa).unwrap(),
            ["AA", "A"]
        );
    }

    #[test]
    fn encode_requires_merges() {
        let v = crate::tokenize::kmer_vocabulary(1).unwrap();
        assert!(matches!(
            bpe_encode(&"ACGT".parse().unwrap(), &v),
            Err(TokenizerError::NotBpe)
        ));
    }

    #[test]
    fn repeated_merge_string_is_one_token() {
        // AAT can arise from (AA,T) and (A,AT); the vocabulary keeps one copy
        let corpus = seqs(&["AATAAT", "AATAAT", "ATAT", "AAAT", "AAAT"]);
        let v = bpe_train(&corpus, 20).unwrap();
        let mut toks = v.tokens().to_vec();
        toks.sort();
        toks.dedup();
        assert_eq!(toks.len(), v.len());
    }

    #[test]
    fn training_corpus_encodes_to_trained_segmentation() {
        let corpus = seqs(&["ACGACGACGTT", "ACGTTACG", "TTTACGACG"]);
        let v = bpe_train(&corpus, 6).unwrap();
        for s in &corpus {
            let ids = bpe_encode_ids(s, &v).unwrap();
            let total: usize = ids.iter().map(|&id| v.base_len(id)).sum();
            assert_eq!(total, s.len());
        }
    }
}
