//! Slow, obviously-correct reference implementations used by the
//! integration tests. None of them share code with the library.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;

pub const BASES: [u8; 4] = *b"ACGT";

pub fn random_bases<R: Rng>(rng: &mut R, len: usize) -> Vec<u8> {
    (0..len).map(|_| BASES[rng.random_range(0..4)]).collect()
}

/// BPE by recounting every adjacent pair from scratch on each iteration.
/// Sequences are cut at `N`; ties go to the smallest `(left, right)`;
/// stops when the best pair occurs fewer than two times.
pub struct NaiveBpe {
    pub merges: Vec<(String, String)>,
    /// Merges chosen while another pair had the same count.
    pub tied_steps: usize,
}

pub fn naive_bpe(corpus: &[String], num_merges: usize) -> NaiveBpe {
    let mut words: Vec<Vec<String>> = corpus
        .iter()
        .flat_map(|s| s.split('N').map(str::to_string).collect::<Vec<_>>())
        .filter(|w| !w.is_empty())
        .map(|w| w.chars().map(|c| c.to_string()).collect())
        .collect();
    let mut merges = Vec::new();
    let mut tied_steps = 0;
    for _ in 0..num_merges {
        let mut counts: HashMap<(String, String), u64> = HashMap::new();
        for w in &words {
            for i in 0..w.len().saturating_sub(1) {
                *counts.entry((w[i].clone(), w[i + 1].clone())).or_default() += 1;
            }
        }
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, &c) in &counts {
            best = match best {
                None => Some((pair, c)),
                Some((bp, bc)) if c > bc || (c == bc && pair < bp) => Some((pair, c)),
                keep => keep,
            };
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        if counts.values().filter(|&&c| c == count).count() > 1 {
            tied_steps += 1;
        }
        let pair = pair.clone();
        for w in &mut words {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == pair.0 && w[i + 1] == pair.1 {
                    out.push(format!("{}{}", pair.0, pair.1));
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        merges.push(pair);
    }
    NaiveBpe { merges, tied_steps }
}

/// Multi-class MCC from the triple-sum covariance form over a confusion
/// matrix `c[truth][pred]`. Returns 0 when either variance term is 0.
pub fn mcc_triple_sum(c: &[Vec<u64>]) -> f64 {
    let k = c.len();
    let m = |i: usize, j: usize| c[i][j] as f64;
    let mut num = 0.0;
    for a in 0..k {
        for b in 0..k {
            for d in 0..k {
                num += m(a, a) * m(b, d) - m(a, b) * m(d, a);
            }
        }
    }
    let row = |i: usize| (0..k).map(|j| m(i, j)).sum::<f64>();
    let col = |j: usize| (0..k).map(|i| m(i, j)).sum::<f64>();
    let mut var_t = 0.0;
    let mut var_p = 0.0;
    for a in 0..k {
        let other_rows: f64 = (0..k).filter(|&b| b != a).map(row).sum();
        let other_cols: f64 = (0..k).filter(|&b| b != a).map(col).sum();
        var_t += row(a) * other_rows;
        var_p += col(a) * other_cols;
    }
    if var_t == 0.0 || var_p == 0.0 {
        return 0.0;
    }
    num / (var_t.sqrt() * var_p.sqrt())
}

/// Positional sinusoid evaluated straight from its definition.
pub fn sinusoid(pos: usize, dim: usize, d_model: usize) -> f64 {
    let i = (dim / 2) as f64;
    let angle = pos as f64 / 10000f64.powf(2.0 * i / d_model as f64);
    if dim.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}
