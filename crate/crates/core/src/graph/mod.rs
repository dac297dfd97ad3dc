//! Hierarchical document graphs and initial node features.
//!
//! Node index spaces: sentence nodes `0..n_sen`, section-level nodes
//! `0..=n_sec` where index `n_sec` is the document supernode. In the unified
//! numbering used by whole-graph masks, section-level node `p` becomes
//! `n_sen + p`.

mod embed;

pub use embed::{save_embeddings, EmbeddingProvider, FileProvider, HashProvider};

use crate::autodiff::{Mask, Matrix};
use crate::corpus::Document;
use crate::error::{Error, Result};

/// Sentence, section and document-supernode graph with three unweighted edge sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierGraph {
    pub n_sen: usize,
    pub n_sec: usize,
    /// Undirected sentence-sentence edges `(i, j)`, `i < j`, within one section.
    pub e_sen: Vec<(usize, usize)>,
    /// Undirected edges `(p, q)`, `p < q`, between section-level nodes (supernode included).
    pub e_sec: Vec<(usize, usize)>,
    /// `(sentence, section)` membership edges, one per sentence.
    pub e_cross: Vec<(usize, usize)>,
    pub sec_of: Vec<usize>,
    pub doc_node: usize,
}

impl HierGraph {
    /// Builds the graph from the document's section structure alone.
    pub fn build(doc: &Document) -> Self {
        let sec_of: Vec<usize> = doc.sentences.iter().map(|s| s.sec_idx).collect();
        let mut e_sen = Vec::new();
        for sec in &doc.sections {
            for (a, &i) in sec.sentence_ids.iter().enumerate() {
                for &j in &sec.sentence_ids[a + 1..] {
                    e_sen.push((i, j));
                }
            }
        }
        let n_sec = doc.m();
        let mut e_sec = Vec::new();
        for p in 0..=n_sec {
            for q in p + 1..=n_sec {
                e_sec.push((p, q));
            }
        }
        let e_cross = sec_of.iter().copied().enumerate().collect();
        Self {
            n_sen: doc.n(),
            n_sec,
            e_sen,
            e_sec,
            e_cross,
            sec_of,
            doc_node: n_sec,
        }
    }

    /// Section-level nodes including the supernode.
    pub fn n_section_nodes(&self) -> usize {
        self.n_sec + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.n_sen + self.n_sec + 1
    }

    /// Unified index of section-level node `p`.
    pub fn section_node(&self, p: usize) -> usize {
        self.n_sen + p
    }

    /// Unweighted adjacency over all nodes, without self-loops.
    pub fn adjacency(&self) -> Mask {
        let mut m = Mask::new(self.n_nodes(), self.n_nodes());
        for &(i, j) in &self.e_sen {
            m.allow_sym(i, j);
        }
        for &(p, q) in &self.e_sec {
            m.allow_sym(self.section_node(p), self.section_node(q));
        }
        for &(i, p) in &self.e_cross {
            m.allow_sym(i, self.section_node(p));
        }
        m
    }

    /// Whole-graph neighborhoods plus self-loops.
    pub fn full_mask(&self) -> Mask {
        let mut m = self.adjacency();
        m.allow_diagonal();
        m
    }

    /// Sentence-only neighborhoods: same-section siblings plus self.
    pub fn intra_mask(&self) -> Mask {
        let mut m = Mask::new(self.n_sen, self.n_sen);
        for &(i, j) in &self.e_sen {
            m.allow_sym(i, j);
        }
        m.allow_diagonal();
        m
    }

    /// Over the unified node set: each section node attends to its member
    /// sentences and itself; every other node attends only to itself.
    pub fn sen_to_sec_mask(&self) -> Mask {
        let mut m = Mask::new(self.n_nodes(), self.n_nodes());
        m.allow_diagonal();
        for &(i, p) in &self.e_cross {
            m.allow(self.section_node(p), i);
        }
        m
    }

    /// Section-level neighborhoods plus self. With `connected == false` only
    /// self-loops remain, isolating sections from each other.
    pub fn inter_mask(&self, connected: bool) -> Mask {
        let k = self.n_section_nodes();
        let mut m = Mask::new(k, k);
        if connected {
            for &(p, q) in &self.e_sec {
                m.allow_sym(p, q);
            }
        }
        m.allow_diagonal();
        m
    }

    /// `n_sec × n_sen` matrix whose rows average the member sentences of each section.
    pub fn section_mean_matrix(&self) -> Matrix {
        let mut counts = vec![0usize; self.n_sec];
        for &p in &self.sec_of {
            counts[p] += 1;
        }
        let mut m = Matrix::zeros(self.n_sec, self.n_sen);
        for (i, &p) in self.sec_of.iter().enumerate() {
            m.set(p, i, 1.0 / counts[p] as f64);
        }
        m
    }
}

/// Sinusoidal position encoding of `pos` in `d` dimensions.
pub fn sinusoidal_pe(pos: usize, d: usize) -> Result<Vec<f64>> {
    if !d.is_multiple_of(2) {
        return Err(Error::OddDimension(d));
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Hierarchical position embedding: the sum of the section-index and
/// within-section-index encodings.
pub fn hpe(sec_idx: usize, sen_idx: usize, d: usize) -> Result<Vec<f64>> {
    let a = sinusoidal_pe(sec_idx, d)?;
    let b = sinusoidal_pe(sen_idx, d)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect())
}

/// `n × d` matrix of hierarchical position embeddings for every sentence.
pub fn hpe_matrix(doc: &Document, d: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(doc.n() * d);
    for s in &doc.sentences {
        data.extend(hpe(s.sec_idx, s.sen_idx, d)?);
    }
    Ok(Matrix::from_vec(doc.n(), d, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    /// `n_sen × d`.
    pub h_sen: Matrix,
    /// `(n_sec + 1) × d`; the last row is the document supernode.
    pub h_sec: Matrix,
    pub d: usize,
}

/// Sentence rows are embedding plus position encoding; section rows average
/// their sentences; the supernode averages the section rows.
pub fn init_node_features(
    doc: &Document,
    g: &HierGraph,
    embedder: &dyn EmbeddingProvider,
    d: usize,
) -> Result<NodeFeatures> {
    if embedder.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: embedder.dim(),
        });
    }
    let x = embedder.embed(doc)?;
    features_from_embeddings(g, &x, &hpe_matrix(doc, d)?)
}

pub(crate) fn features_from_embeddings(
    g: &HierGraph,
    x: &Matrix,
    hpe: &Matrix,
) -> Result<NodeFeatures> {
    if x.shape() != hpe.shape() {
        return Err(Error::DimensionMismatch {
            expected: hpe.cols(),
            actual: x.cols(),
        });
    }
    let d = x.cols();
    let h_sen = x.zip_map(hpe, |a, b| a + b);
    let sections = g.section_mean_matrix().matmul(&h_sen);
    let mut h_sec = Matrix::zeros(g.n_section_nodes(), d);
    for p in 0..g.n_sec {
        h_sec.row_mut(p).copy_from_slice(sections.row(p));
    }
    let doc_row: Vec<f64> = (0..d)
        .map(|c| (0..g.n_sec).map(|p| sections.get(p, c)).sum::<f64>() / g.n_sec as f64)
        .collect();
    h_sec.row_mut(g.doc_node).copy_from_slice(&doc_row);
    Ok(NodeFeatures { h_sen, h_sec, d })
}
