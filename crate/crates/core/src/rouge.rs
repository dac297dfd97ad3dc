//! ROUGE-N and summary-level ROUGE-L.
//!
//! Tokens are compared verbatim: no stemming and no stopword removal. When a
//! summary is given as a list of sentences, n-grams are collected per sentence
//! and never span a sentence boundary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub type NgramCounts<'a> = HashMap<&'a [String], usize>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Builds a score from a hit count and the two denominators; zero
    /// denominators yield zero rather than NaN.
    pub fn from_counts(hits: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |den: usize| {
            if den == 0 {
                0.0
            } else {
                hits as f64 / den as f64
            }
        };
        Self::from_pr(ratio(candidate_total), ratio(reference_total))
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// ROUGE-1, ROUGE-2 and ROUGE-L together.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeSet {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

impl RougeSet {
    pub fn compute(candidate: &[&[String]], reference: &[&[String]]) -> Self {
        Self {
            r1: rouge_n_summary(candidate, reference, 1),
            r2: rouge_n_summary(candidate, reference, 2),
            rl: rouge_l(candidate, reference),
        }
    }

    /// Field-wise arithmetic mean; the empty mean is all zeros.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a RougeSet>) -> Self {
        let mut acc = [0.0f64; 9];
        let mut count = 0usize;
        for s in items {
            for (a, v) in acc.iter_mut().zip(s.flatten()) {
                *a += v;
            }
            count += 1;
        }
        if count == 0 {
            return Self::default();
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        Self::unflatten(acc)
    }

    /// `[r1.f1, r1.p, r1.r, r2.f1, r2.p, r2.r, rl.f1, rl.p, rl.r]`
    pub fn flatten(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (i, s) in [self.r1, self.r2, self.rl].iter().enumerate() {
            out[3 * i] = s.f1;
            out[3 * i + 1] = s.precision;
            out[3 * i + 2] = s.recall;
        }
        out
    }

    pub fn unflatten(v: [f64; 9]) -> Self {
        let s = |i: usize| RougeScore {
            f1: v[3 * i],
            precision: v[3 * i + 1],
            recall: v[3 * i + 2],
        };
        Self {
            r1: s(0),
            r2: s(1),
            rl: s(2),
        }
    }
}

/// Multiset of the contiguous `n`-grams of `tokens`.
pub fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts<'_> {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn sentence_ngram_counts<'a>(sents: &[&'a [String]], n: usize) -> NgramCounts<'a> {
    let mut counts = HashMap::new();
    for s in sents {
        for gram in s.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub(crate) fn clipped_overlap(cand: &NgramCounts<'_>, reference: &NgramCounts<'_>) -> usize {
    cand.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// ROUGE-N between two flat token sequences.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    rouge_n_summary(&[candidate], &[reference], n)
}

/// ROUGE-N between two sentence lists, pooling per-sentence n-grams.
pub fn rouge_n_summary(candidate: &[&[String]], reference: &[&[String]], n: usize) -> RougeScore {
    let cand = sentence_ngram_counts(candidate, n);
    let refc = sentence_ngram_counts(reference, n);
    let hits = clipped_overlap(&cand, &refc);
    RougeScore::from_counts(hits, cand.values().sum(), refc.values().sum())
}

fn lcs_table(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

/// Length of the longest common subsequence.
pub fn lcs_length(a: &[String], b: &[String]) -> usize {
    lcs_table(a, b)[a.len()][b.len()]
}

/// Positions in `reference` covered by one longest common subsequence with `candidate`.
fn lcs_positions(reference: &[String], candidate: &[String]) -> Vec<usize> {
    let t = lcs_table(reference, candidate);
    let (mut i, mut j) = (reference.len(), candidate.len());
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1] == candidate[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j - 1] > t[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    out.reverse();
    out
}

/// Summary-level ROUGE-L with union-LCS.
///
/// For each reference sentence the LCS positions against every candidate
/// sentence are unioned. Hits are clipped by the token counts of both
/// summaries, so a candidate token is never credited more often than it occurs.
pub fn rouge_l(candidate: &[&[String]], reference: &[&[String]]) -> RougeScore {
    let cand_total: usize = candidate.iter().map(|s| s.len()).sum();
    let ref_total: usize = reference.iter().map(|s| s.len()).sum();
    if cand_total == 0 || ref_total == 0 {
        return RougeScore::default();
    }
    let mut cand_budget: HashMap<&String, usize> = HashMap::new();
    for t in candidate.iter().flat_map(|s| s.iter()) {
        *cand_budget.entry(t).or_insert(0) += 1;
    }
    let mut ref_budget: HashMap<&String, usize> = HashMap::new();
    for t in reference.iter().flat_map(|s| s.iter()) {
        *ref_budget.entry(t).or_insert(0) += 1;
    }

    let mut hits = 0usize;
    for r in reference {
        let mut union: Vec<usize> = candidate.iter().flat_map(|c| lcs_positions(r, c)).collect();
        union.sort_unstable();
        union.dedup();
        for pos in union {
            let tok = &r[pos];
            let (Some(cb), Some(rb)) = (cand_budget.get_mut(tok), ref_budget.get_mut(tok)) else {
                continue;
            };
            if *cb > 0 && *rb > 0 {
                *cb -= 1;
                *rb -= 1;
                hits += 1;
            }
        }
    }
    RougeScore::from_counts(hits, cand_total, ref_total)
}
