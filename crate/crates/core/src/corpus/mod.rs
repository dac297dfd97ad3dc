//! Document model, tokenization and JSON-Lines corpus I/O.
//!
//! A corpus file carries one document per line:
//!
//! ```json
//! {"id": "doc-1", "sections": [{"name": "intro", "sentences": ["..."]}], "abstract": ["..."], "labels": [0, 1]}
//! ```
//!
//! Sentences arrive pre-split. Global sentence order is section order, then
//! position within the section.

mod synth;

pub use synth::{generate, generate_with_plan, SynthSpec};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases `text` and splits it on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<String>,
    /// 0-based index of the owning section.
    pub sec_idx: usize,
    /// 0-based position within the owning section.
    pub sen_idx: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    /// Global sentence indices, ascending and contiguous.
    pub sentence_ids: Vec<usize>,
}

/// A sentence of the reference abstract.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSentence {
    pub text: String,
    pub tokens: Vec<String>,
}

impl RefSentence {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { text, tokens }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub sections: Vec<Section>,
    pub sentences: Vec<Sentence>,
    pub abstract_sents: Vec<RefSentence>,
    pub labels: Option<Vec<u8>>,
}

impl Document {
    /// Builds and validates a document from named sections of raw sentence text.
    pub fn from_sections<S, T>(
        id: impl Into<String>,
        sections: impl IntoIterator<Item = (S, Vec<T>)>,
        abstract_sents: impl IntoIterator<Item = T>,
    ) -> Result<Self>
    where
        S: Into<String>,
        T: Into<String>,
    {
        let id = id.into();
        let mut out_sections = Vec::new();
        let mut sentences = Vec::new();
        for (sec_idx, (name, texts)) in sections.into_iter().enumerate() {
            let mut ids = Vec::with_capacity(texts.len());
            for (sen_idx, text) in texts.into_iter().enumerate() {
                let text = text.into();
                let tokens = tokenize(&text);
                ids.push(sentences.len());
                sentences.push(Sentence {
                    text,
                    tokens,
                    sec_idx,
                    sen_idx,
                });
            }
            out_sections.push(Section {
                name: name.into(),
                sentence_ids: ids,
            });
        }
        let doc = Document {
            id,
            sections: out_sections,
            sentences,
            abstract_sents: abstract_sents.into_iter().map(RefSentence::new).collect(),
            labels: None,
        };
        doc.validate()?;
        Ok(doc)
    }

    /// Number of sentences.
    pub fn n(&self) -> usize {
        self.sentences.len()
    }

    /// Number of sections.
    pub fn m(&self) -> usize {
        self.sections.len()
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn sentence_tokens(&self) -> Vec<&[String]> {
        self.sentences.iter().map(|s| s.tokens.as_slice()).collect()
    }

    pub fn abstract_tokens(&self) -> Vec<&[String]> {
        self.abstract_sents
            .iter()
            .map(|s| s.tokens.as_slice())
            .collect()
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    /// Checks every structural invariant of the document model.
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::Validation {
            id: self.id.clone(),
            message,
        };
        if self.sections.is_empty() {
            return Err(invalid("document has no sections".into()));
        }
        let mut next = 0usize;
        for (j, sec) in self.sections.iter().enumerate() {
            if sec.sentence_ids.is_empty() {
                return Err(invalid(format!("section {j} ({:?}) is empty", sec.name)));
            }
            for (k, &gid) in sec.sentence_ids.iter().enumerate() {
                if gid != next {
                    return Err(invalid(format!(
                        "section {j} sentence {k} has global index {gid}, expected {next}"
                    )));
                }
                let s = self
                    .sentences
                    .get(gid)
                    .ok_or_else(|| invalid(format!("sentence index {gid} out of range")))?;
                if s.sec_idx != j || s.sen_idx != k {
                    return Err(invalid(format!(
                        "sentence {gid} carries position ({}, {}), expected ({j}, {k})",
                        s.sec_idx, s.sen_idx
                    )));
                }
                if s.tokens.is_empty() {
                    return Err(invalid(format!(
                        "sentence {gid} has no tokens: {:?}",
                        s.text
                    )));
                }
                next += 1;
            }
        }
        if next != self.sentences.len() {
            return Err(invalid(format!(
                "sections cover {next} sentences but document has {}",
                self.sentences.len()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.n() {
                return Err(invalid(format!(
                    "labels has length {} but document has {} sentences",
                    labels.len(),
                    self.n()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(invalid(format!("label value {bad} is not 0 or 1")));
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> DocRecord {
        DocRecord {
            id: self.id.clone(),
            sections: self
                .sections
                .iter()
                .map(|sec| SectionRecord {
                    name: sec.name.clone(),
                    sentences: sec
                        .sentence_ids
                        .iter()
                        .map(|&i| self.sentences[i].text.clone())
                        .collect(),
                })
                .collect(),
            abstract_sents: self.abstract_sents.iter().map(|s| s.text.clone()).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Wire format of one corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    pub sections: Vec<SectionRecord>,
    #[serde(rename = "abstract", default)]
    pub abstract_sents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRecord {
    pub name: String,
    pub sentences: Vec<String>,
}

impl TryFrom<DocRecord> for Document {
    type Error = Error;

    fn try_from(rec: DocRecord) -> Result<Self> {
        let mut doc = Document::from_sections(
            rec.id,
            rec.sections.into_iter().map(|s| (s.name, s.sentences)),
            rec.abstract_sents,
        )?;
        if rec.labels.is_some() {
            doc.labels = rec.labels;
            doc.validate()?;
        }
        Ok(doc)
    }
}

/// Reads JSON-Lines from `path`, parsing each non-blank line with `parse`.
pub(crate) fn read_jsonl<T, F>(path: &Path, mut parse: F) -> Result<Vec<T>>
where
    F: FnMut(&str, usize) -> Result<T>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line, i + 1)?);
    }
    Ok(out)
}

pub(crate) fn parse_json_line<T: serde::de::DeserializeOwned>(
    line: &str,
    lineno: usize,
) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })
}

pub fn parse_corpus_line(line: &str, lineno: usize) -> Result<Document> {
    let rec: DocRecord = parse_json_line(line, lineno)?;
    Document::try_from(rec)
}

/// Loads and validates a JSON-Lines corpus, preserving file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    read_jsonl(path.as_ref(), parse_corpus_line)
}

pub fn write_corpus<W: Write>(mut w: W, docs: &[Document]) -> std::io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut w, &doc.to_record())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(&mut w, docs)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_section_doc() -> Document {
        Document::from_sections(
            "d",
            vec![
                ("intro", vec!["A b.", "C d."]),
                ("body", vec!["E f.", "G h.", "I j."]),
            ],
            vec!["A b."],
        )
        .unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat, sat."), ["the", "cat", "sat"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A1-b2"), ["a1", "b2"]);
        assert!(tokenize(" ,.;- ").is_empty());
    }

    #[test]
    fn global_index_matches_section_offsets() {
        let doc = two_section_doc();
        assert_eq!(doc.n(), 5);
        assert_eq!(doc.m(), 2);
        let mut offset = 0;
        for (j, sec) in doc.sections.iter().enumerate() {
            for (k, &gid) in sec.sentence_ids.iter().enumerate() {
                assert_eq!(gid, offset + k);
                assert_eq!(
                    (doc.sentences[gid].sec_idx, doc.sentences[gid].sen_idx),
                    (j, k)
                );
            }
            offset += sec.sentence_ids.len();
        }
    }

    #[test]
    fn rejects_empty_section_and_empty_sentence() {
        let err = Document::from_sections("x", vec![("a", Vec::<&str>::new())], vec!["z"]);
        assert!(matches!(err, Err(Error::Validation { .. })));
        let err = Document::from_sections("x", vec![("a", vec!["--"])], vec!["z"]);
        assert!(matches!(err, Err(Error::Validation { .. })));
        let err = Document::from_sections("x", Vec::<(&str, Vec<&str>)>::new(), vec!["z"]);
        assert!(matches!(err, Err(Error::Validation { .. })));
    }

    #[test]
    fn label_length_mismatch_is_rejected() {
        let line = r#"{"id":"x","sections":[{"name":"s","sentences":["a","b"]}],"abstract":["a"],"labels":[1]}"#;
        assert!(matches!(
            parse_corpus_line(line, 1),
            Err(Error::Validation { .. })
        ));
        let line = r#"{"id":"x","sections":[{"name":"s","sentences":["a","b"]}],"abstract":["a"],"labels":[1,2]}"#;
        assert!(matches!(
            parse_corpus_line(line, 1),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let good = serde_json::to_string(&two_section_doc().to_record()).unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        match load_corpus(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_preserves_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut docs = Vec::new();
        for id in ["b", "a", "c"] {
            let mut d = two_section_doc();
            d.id = id.into();
            docs.push(d);
        }
        save_corpus(&path, &docs).unwrap();
        let loaded = load_corpus(&path).unwrap();
        let ids: Vec<_> = loaded.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(loaded[0].n(), 5);
        assert_eq!(loaded[0].m(), 2);
    }

    fn record_strategy() -> impl Strategy<Value = DocRecord> {
        let sentence = "[A-Za-z][A-Za-z0-9 ,.]{0,20}";
        let section = ("[a-z]{1,8}", prop::collection::vec(sentence, 1..4))
            .prop_map(|(name, sentences)| SectionRecord { name, sentences });
        (
            "[a-z0-9]{1,6}",
            prop::collection::vec(section, 1..4),
            prop::collection::vec(sentence, 0..3),
            any::<bool>(),
        )
            .prop_map(|(id, sections, abstract_sents, labelled)| {
                let n: usize = sections.iter().map(|s| s.sentences.len()).sum();
                let labels = labelled.then(|| (0..n).map(|i| (i % 2) as u8).collect());
                DocRecord {
                    id,
                    sections,
                    abstract_sents,
                    labels,
                }
            })
    }

    proptest! {
        #[test]
        fn record_round_trip(rec in record_strategy()) {
            let line = serde_json::to_string(&rec).unwrap();
            let doc = parse_corpus_line(&line, 1).unwrap();
            prop_assert_eq!(doc.to_record(), rec);
        }

        #[test]
        fn tokenize_is_idempotent(text in "\\PC{0,40}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
