use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::corpus::{parse_json_line, read_jsonl, Document};
use crate::error::{Error, Result};

/// Frozen sentence encoder producing one row per sentence, in global order.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, doc: &Document) -> Result<Matrix>;
}

/// Averages seeded pseudo-random unit vectors of the sentence tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashProvider {
    dim: usize,
    seed: u64,
}

impl HashProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    /// Unit-norm vector for `token`.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        // FNV-1a keeps the mapping stable across platforms and toolchains.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        loop {
            let v: Vec<f64> = (0..self.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl EmbeddingProvider for HashProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, doc: &Document) -> Result<Matrix> {
        let mut out = Matrix::zeros(doc.n(), self.dim);
        for (i, s) in doc.sentences.iter().enumerate() {
            let row = out.row_mut(i);
            for t in &s.tokens {
                for (o, v) in row.iter_mut().zip(self.token_vector(t)) {
                    *o += v;
                }
            }
            let k = s.tokens.len().max(1) as f64;
            row.iter_mut().for_each(|x| *x /= k);
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vectors: Vec<Vec<f64>>,
}

/// Precomputed vectors keyed by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct FileProvider {
    dim: usize,
    vectors: HashMap<String, Matrix>,
}

impl FileProvider {
    /// Reads a JSON-Lines file of `{"id": str, "vectors": [[f64; d]; n]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let records: Vec<EmbeddingRecord> = read_jsonl(path.as_ref(), parse_json_line)?;
        let mut map = HashMap::new();
        for r in records {
            if r.vectors.is_empty() {
                continue;
            }
            map.insert(r.id, Matrix::from_rows_checked(&r.vectors)?);
        }
        Self::from_map(map)
    }

    pub fn from_map(vectors: HashMap<String, Matrix>) -> Result<Self> {
        let mut dim = None;
        for m in vectors.values() {
            match dim {
                None => dim = Some(m.cols()),
                Some(d) if d != m.cols() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: m.cols(),
                    })
                }
                Some(_) => {}
            }
        }
        let dim = dim.ok_or_else(|| Error::Config("embedding file contains no vectors".into()))?;
        Ok(Self { dim, vectors })
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, doc: &Document) -> Result<Matrix> {
        let m = self
            .vectors
            .get(&doc.id)
            .ok_or_else(|| Error::MissingEmbedding(doc.id.clone(), 0))?;
        if m.rows() < doc.n() {
            return Err(Error::MissingEmbedding(doc.id.clone(), m.rows()));
        }
        if m.rows() > doc.n() {
            return Err(Error::Validation {
                id: doc.id.clone(),
                message: format!("{} embedding vectors for {} sentences", m.rows(), doc.n()),
            });
        }
        Ok(m.clone())
    }
}

/// Writes embeddings in the format read by [`FileProvider::load`].
pub fn save_embeddings<'a>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = (&'a str, &'a Matrix)>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, m) in items {
        let rec = EmbeddingRecord {
            id: id.to_owned(),
            vectors: (0..m.rows()).map(|r| m.row(r).to_vec()).collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
