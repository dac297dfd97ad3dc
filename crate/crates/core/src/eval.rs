//! Top-k extraction, the LEAD baseline, and corpus evaluation reports with
//! section-count and document-length breakdowns.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_json_line, read_jsonl, tokenize, Document};
use crate::error::{Error, Result};
use crate::graph::EmbeddingProvider;
use crate::model::{predict, DocInput, ModelConfig, ModelParams};
use crate::oracle::{greedy_select, OracleObjective, DEFAULT_MAX_SENTS};
use crate::rouge::RougeSet;

/// Indices of the `min(k, n)` highest scores in ascending document order.
/// Ties go to the lower index. `k = 0` selects nothing.
pub fn extract_topk(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps lower indices first among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// The first `min(k, n)` sentence indices.
pub fn lead(n: usize, k: usize) -> Vec<usize> {
    (0..k.min(n)).collect()
}

/// How sentences are chosen for evaluation.
pub enum Scorer<'a> {
    Model {
        params: &'a ModelParams,
        cfg: &'a ModelConfig,
        provider: &'a dyn EmbeddingProvider,
    },
    Lead,
    /// Greedy oracle selection; the number of sentences is the oracle's own.
    Oracle {
        max_sents: usize,
    },
}

impl Scorer<'_> {
    pub fn oracle() -> Self {
        Scorer::Oracle {
            max_sents: DEFAULT_MAX_SENTS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Model { .. } => "model",
            Scorer::Lead => "lead",
            Scorer::Oracle { .. } => "oracle",
        }
    }

    /// Selected sentence indices for one document, ascending.
    pub fn select(&self, doc: &Document, k: usize) -> Result<Vec<usize>> {
        match self {
            Scorer::Model {
                params,
                cfg,
                provider,
            } => {
                let input = DocInput::prepare(doc, *provider, cfg)?;
                Ok(extract_topk(&predict(params, &input, cfg)?, k))
            }
            Scorer::Lead => Ok(lead(doc.n(), k)),
            Scorer::Oracle { max_sents } => {
                let mut picks = greedy_select(doc, *max_sents, OracleObjective::MeanR1R2)?.picks;
                picks.sort_unstable();
                Ok(picks)
            }
        }
    }
}

fn require_abstract(doc: &Document) -> Result<()> {
    if doc.abstract_sents.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::MissingAbstract(doc.id.clone()));
    }
    Ok(())
}

/// ROUGE of the selected sentences against the document's abstract.
pub fn score_selection(doc: &Document, selected: &[usize]) -> RougeSet {
    let cand: Vec<&[String]> = selected
        .iter()
        .map(|&i| doc.sentences[i].tokens.as_slice())
        .collect();
    RougeSet::compute(&cand, &doc.abstract_tokens())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocEval {
    pub id: String,
    pub selected: Vec<usize>,
    pub rouge: RougeSet,
    pub n_sections: usize,
    pub words: usize,
}

/// One row of a breakdown table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `macro`, `sections` or `length`.
    pub table: String,
    pub bucket: String,
    pub count: usize,
    pub rouge: RougeSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scorer: String,
    pub k: usize,
    pub per_doc: Vec<DocEval>,
    pub macro_avg: RougeSet,
    pub by_sections: Vec<ReportRow>,
    pub by_length: Vec<ReportRow>,
}

/// Section-count bucket label.
pub fn section_bucket(m: usize) -> &'static str {
    match m {
        0..=3 => "1-3",
        4..=6 => "4-6",
        _ => "7+",
    }
}

/// Quartile cut points `[q1, q2, q3]` of `values` (nearest-rank on the
/// sorted sample, index `floor(p·(n-1))`).
pub fn quartile_cuts(values: &[usize]) -> [usize; 3] {
    let mut v = values.to_vec();
    v.sort_unstable();
    if v.is_empty() {
        return [0; 3];
    }
    let at = |p: f64| v[((v.len() - 1) as f64 * p).floor() as usize];
    [at(0.25), at(0.5), at(0.75)]
}

/// Quartile index `0..4` of `w`; each bucket is upper-inclusive.
pub fn length_bucket(w: usize, cuts: &[usize; 3]) -> usize {
    cuts.iter().position(|&c| w <= c).unwrap_or(3)
}

/// Macro ROUGE over the corpus plus section-count and length breakdowns.
/// The selections are computed in parallel; aggregation is sequential and
/// in corpus order.
pub fn evaluate(docs: &[Document], scorer: &Scorer<'_>, k: usize) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let per_doc = docs
        .par_iter()
        .map(|doc| {
            require_abstract(doc)?;
            let selected = scorer.select(doc, k)?;
            Ok(DocEval {
                id: doc.id.clone(),
                rouge: score_selection(doc, &selected),
                selected,
                n_sections: doc.m(),
                words: doc.word_count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from(scorer.name(), k, per_doc))
}

fn report_from(scorer: &str, k: usize, per_doc: Vec<DocEval>) -> EvalReport {
    let macro_avg = RougeSet::mean(per_doc.iter().map(|d| &d.rouge));
    let row = |table: &str, bucket: String, members: Vec<&DocEval>| ReportRow {
        table: table.into(),
        bucket,
        count: members.len(),
        rouge: RougeSet::mean(members.iter().map(|d| &d.rouge)),
    };
    let by_sections = ["1-3", "4-6", "7+"]
        .iter()
        .map(|&b| {
            let m = per_doc
                .iter()
                .filter(|d| section_bucket(d.n_sections) == b)
                .collect();
            row("sections", b.to_owned(), m)
        })
        .collect();
    let words: Vec<usize> = per_doc.iter().map(|d| d.words).collect();
    let cuts = quartile_cuts(&words);
    let by_length = (0..4)
        .map(|q| {
            let label = match q {
                0 => format!("Q1(<={})", cuts[0]),
                1 => format!("Q2(<={})", cuts[1]),
                2 => format!("Q3(<={})", cuts[2]),
                _ => format!("Q4(>{})", cuts[2]),
            };
            let m = per_doc
                .iter()
                .filter(|d| length_bucket(d.words, &cuts) == q)
                .collect();
            row("length", label, m)
        })
        .collect();
    EvalReport {
        scorer: scorer.into(),
        k,
        per_doc,
        macro_avg,
        by_sections,
        by_length,
    }
}

const TSV_HEADER: &str =
    "table\tbucket\tcount\tr1_f\tr1_p\tr1_r\tr2_f\tr2_p\tr2_r\trl_f\trl_p\trl_r";

impl EvalReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = vec![ReportRow {
            table: "macro".into(),
            bucket: "all".into(),
            count: self.per_doc.len(),
            rouge: self.macro_avg,
        }];
        rows.extend(self.by_sections.iter().cloned());
        rows.extend(self.by_length.iter().cloned());
        rows
    }

    pub fn to_tsv(&self) -> String {
        rows_to_tsv(&self.rows())
    }
}

/// Tab-separated rows with a header line. Floats use the shortest
/// representation that parses back to the same value.
pub fn rows_to_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{}\t{}\t{}", r.table, r.bucket, r.count).unwrap();
        for v in r.rouge.flatten() {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_tsv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing report header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 12 {
                return Err(bad(format!("expected 12 fields, got {}", f.len())));
            }
            let count = f[2].parse().map_err(|e| bad(format!("count: {e}")))?;
            let mut v = [0.0; 9];
            for (slot, s) in v.iter_mut().zip(&f[3..]) {
                *slot = s.parse().map_err(|e| bad(format!("{s:?}: {e}")))?;
            }
            Ok(ReportRow {
                table: f[0].into(),
                bucket: f[1].into(),
                count,
                rouge: RougeSet::unflatten(v),
            })
        })
        .collect()
}

/// A summary as a list of sentences, keyed by document id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub sentences: Vec<String>,
}

pub fn load_summaries(path: impl AsRef<Path>) -> Result<Vec<SummaryRecord>> {
    read_jsonl(path.as_ref(), parse_json_line)
}

/// Per-id ROUGE of candidate summaries against references, matched by id
/// in candidate order, followed by a macro row.
pub fn rouge_summaries(
    candidates: &[SummaryRecord],
    references: &[SummaryRecord],
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::with_capacity(candidates.len() + 1);
    for c in candidates {
        let r = references
            .iter()
            .find(|r| r.id == c.id)
            .ok_or_else(|| Error::MissingAbstract(c.id.clone()))?;
        let toks = |s: &[String]| s.iter().map(|t| tokenize(t)).collect::<Vec<_>>();
        let (ct, rt) = (toks(&c.sentences), toks(&r.sentences));
        let cs: Vec<&[String]> = ct.iter().map(Vec::as_slice).collect();
        let rs: Vec<&[String]> = rt.iter().map(Vec::as_slice).collect();
        rows.push(ReportRow {
            table: "doc".into(),
            bucket: c.id.clone(),
            count: 1,
            rouge: RougeSet::compute(&cs, &rs),
        });
    }
    let macro_avg = RougeSet::mean(rows.iter().map(|r| &r.rouge));
    rows.push(ReportRow {
        table: "macro".into(),
        bucket: "all".into(),
        count: candidates.len(),
        rouge: macro_avg,
    });
    Ok(rows)
}

/// Set F1 between predicted and reference index sets.
pub fn selection_f1(predicted: &[usize], reference: &[usize]) -> f64 {
    if predicted.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let hits = predicted.iter().filter(|i| reference.contains(i)).count();
    2.0 * hits as f64 / (predicted.len() + reference.len()) as f64
}
