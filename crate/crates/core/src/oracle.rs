//! Greedy ROUGE-oracle labels and the per-document class-imbalance ratio.

use std::collections::HashMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::rouge::RougeScore;

pub const DEFAULT_MAX_SENTS: usize = 10;
const IMPROVEMENT_TOL: f64 = 1e-12;

/// Quantity the greedy oracle maximizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleObjective {
    /// Mean of ROUGE-1 and ROUGE-2 F1.
    #[default]
    MeanR1R2,
}

impl FromStr for OracleObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_r1_r2" => Ok(Self::MeanR1R2),
            other => Err(Error::Config(format!("unknown oracle objective {other:?}"))),
        }
    }
}

/// Incremental clipped-overlap bookkeeping for one n-gram order.
struct OrderState<'a> {
    reference: HashMap<&'a [String], usize>,
    ref_total: usize,
    per_sentence: Vec<HashMap<&'a [String], usize>>,
    selected: HashMap<&'a [String], usize>,
    hits: usize,
    cand_total: usize,
}

impl<'a> OrderState<'a> {
    fn new(doc: &'a Document, n: usize) -> Self {
        let mut reference = HashMap::new();
        for s in &doc.abstract_sents {
            for g in s.tokens.windows(n) {
                *reference.entry(g).or_insert(0) += 1;
            }
        }
        let ref_total = reference.values().sum();
        let per_sentence = doc
            .sentences
            .iter()
            .map(|s| {
                let mut c = HashMap::new();
                for g in s.tokens.windows(n) {
                    *c.entry(g).or_insert(0) += 1;
                }
                c
            })
            .collect();
        Self {
            reference,
            ref_total,
            per_sentence,
            selected: HashMap::new(),
            hits: 0,
            cand_total: 0,
        }
    }

    /// (hits, candidate total) if sentence `i` were added.
    fn with(&self, i: usize) -> (usize, usize) {
        let mut hits = self.hits;
        let mut added = 0;
        for (g, &c) in &self.per_sentence[i] {
            added += c;
            let r = self.reference.get(g).copied().unwrap_or(0);
            if r == 0 {
                continue;
            }
            let have = self.selected.get(g).copied().unwrap_or(0);
            hits += (have + c).min(r) - have.min(r);
        }
        (hits, self.cand_total + added)
    }

    fn add(&mut self, i: usize) {
        let (hits, total) = self.with(i);
        self.hits = hits;
        self.cand_total = total;
        for (g, &c) in &self.per_sentence[i] {
            *self.selected.entry(*g).or_insert(0) += c;
        }
    }

    fn f1(&self, (hits, cand_total): (usize, usize)) -> f64 {
        RougeScore::from_counts(hits, cand_total, self.ref_total).f1
    }
}

/// The sentences chosen by the greedy oracle and the objective after each pick.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    /// Selected global sentence indices in pick order.
    pub picks: Vec<usize>,
    pub objective_trace: Vec<f64>,
}

/// Greedily selects sentences maximizing the objective against the abstract.
pub fn greedy_select(
    doc: &Document,
    max_sents: usize,
    objective: OracleObjective,
) -> Result<OracleSelection> {
    if doc.abstract_sents.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::MissingAbstract(doc.id.clone()));
    }
    if max_sents == 0 {
        return Err(Error::Config("max_sents must be at least 1".into()));
    }
    let OracleObjective::MeanR1R2 = objective;
    let mut uni = OrderState::new(doc, 1);
    let mut bi = OrderState::new(doc, 2);
    let mut chosen = vec![false; doc.n()];
    let mut current = 0.0;
    let mut out = OracleSelection {
        picks: Vec::new(),
        objective_trace: Vec::new(),
    };
    while out.picks.len() < max_sents {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..doc.n()).filter(|&i| !chosen[i]) {
            let score = 0.5 * (uni.f1(uni.with(i)) + bi.f1(bi.with(i)));
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        match best {
            Some((i, score)) if score > current + IMPROVEMENT_TOL => {
                chosen[i] = true;
                uni.add(i);
                bi.add(i);
                current = score;
                out.picks.push(i);
                out.objective_trace.push(score);
            }
            _ => break,
        }
    }
    Ok(out)
}

/// Binary extractive labels, 1 exactly at the greedily selected sentences.
pub fn greedy_oracle(
    doc: &Document,
    max_sents: usize,
    objective: OracleObjective,
) -> Result<Vec<u8>> {
    let sel = greedy_select(doc, max_sents, objective)?;
    let mut labels = vec![0u8; doc.n()];
    for i in sel.picks {
        labels[i] = 1;
    }
    Ok(labels)
}

/// Labels every document of a corpus in parallel, preserving order.
pub fn label_corpus(
    docs: Vec<Document>,
    max_sents: usize,
    objective: OracleObjective,
) -> Result<Vec<Document>> {
    docs.into_par_iter()
        .map(|doc| {
            let labels = greedy_oracle(&doc, max_sents, objective)?;
            doc.with_labels(labels)
        })
        .collect()
}

/// Ratio of negative to positive labels.
pub fn imbalance_ratio(labels: &[u8]) -> Result<f64> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    Ok((labels.len() - pos) as f64 / pos as f64)
}
