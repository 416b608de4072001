//! ROUGE-N with clipped counts and ROUGE-L over raw tokens.

use alloc::collections::BTreeMap;
use alloc::vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        let precision = if candidate == 0 { 0.0 } else { overlap as f64 / candidate as f64 };
        let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

fn ngrams<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

pub fn rouge_n<T: Ord>(candidate: &[T], reference: &[T], n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::Contract("ROUGE-N needs n >= 1".into()));
    }
    if candidate.len() < n || reference.len() < n {
        return Ok(RougeScore::default());
    }
    let cand = ngrams(candidate, n);
    let refs = ngrams(reference, n);
    let overlap = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    Ok(RougeScore::from_counts(
        overlap,
        candidate.len() + 1 - n,
        reference.len() + 1 - n,
    ))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F1 averaged over pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

pub fn corpus_rouge<T: Ord, S: AsRef<[T]>>(pairs: &[(S, S)]) -> RougeTriple {
    if pairs.is_empty() {
        return RougeTriple::default();
    }
    let mut acc = RougeTriple::default();
    for (c, r) in pairs {
        let (c, r) = (c.as_ref(), r.as_ref());
        acc.rouge1 += rouge_n(c, r, 1).map(|s| s.f1).unwrap_or(0.0);
        acc.rouge2 += rouge_n(c, r, 2).map(|s| s.f1).unwrap_or(0.0);
        acc.rouge_l += rouge_l(c, r).f1;
    }
    let n = pairs.len() as f64;
    RougeTriple {
        rouge1: acc.rouge1 / n,
        rouge2: acc.rouge2 / n,
        rouge_l: acc.rouge_l / n,
    }
}
