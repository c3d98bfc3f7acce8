use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl RougeScore {
    fn new(recall: f64, precision: f64) -> Self {
        let f1 = if recall + precision > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { recall, precision, f1 }
    }
}

/// Longest common subsequence length, O(|a|·|b|) time and O(min) memory.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<RougeScore> {
    if reference.is_empty() {
        return Err(Error::invalid("ROUGE-L reference is empty"));
    }
    let lcs = lcs_length(candidate, reference) as f64;
    let precision = if candidate.is_empty() { 0.0 } else { lcs / candidate.len() as f64 };
    Ok(RougeScore::new(lcs / reference.len() as f64, precision))
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// ROUGE-N with clipped (multiset) n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::invalid("ROUGE-N order must be positive"));
    }
    if reference.len() < n {
        return Err(Error::invalid(format!("ROUGE-{n} reference has fewer than {n} tokens")));
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    let ref_total = reference.len() + 1 - n;
    let cand_total = (candidate.len() + 1).saturating_sub(n);
    let precision = if cand_total == 0 { 0.0 } else { overlap as f64 / cand_total as f64 };
    Ok(RougeScore::new(overlap as f64 / ref_total as f64, precision))
}

/// Fraction of generated tokens that occur anywhere in the source.
pub fn copy_rate<T: Eq + Hash>(generated: &[T], source: &[T]) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::invalid("copy rate of an empty generation"));
    }
    let src: HashSet<&T> = source.iter().collect();
    let hits = generated.iter().filter(|t| src.contains(t)).count();
    Ok(hits as f64 / generated.len() as f64)
}
