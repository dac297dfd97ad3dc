//! Seeded synthetic corpora with planted extractive summaries.
//!
//! Every document draws its summary-worthy sentences from a cue vocabulary
//! mixed with a per-document theme, and its remaining sentences from a
//! disjoint filler vocabulary. The abstract is a verbatim copy of the planted
//! sentences, so greedy ROUGE labeling recovers the planted set exactly.

use rand::seq::index::{sample, sample_weighted};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Document;

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "p", "r", "s", "t", "v", "br", "pl", "st", "tr",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Vocab {
    Filler,
    Cue,
    Theme,
}

impl Vocab {
    // Coda letters are never produced by the syllable table, so the final
    // character identifies the vocabulary and keeps the three disjoint.
    fn coda(self) -> char {
        match self {
            Vocab::Filler => 'n',
            Vocab::Cue => 'x',
            Vocab::Theme => 'z',
        }
    }
}

fn word(vocab: Vocab, index: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut out = String::new();
    let mut rest = index;
    for _ in 0..3 {
        let syl = rest % base;
        rest /= base;
        out.push_str(ONSETS[syl / VOWELS.len()]);
        out.push_str(VOWELS[syl % VOWELS.len()]);
    }
    debug_assert_eq!(rest, 0, "vocabulary index out of range");
    out.push(vocab.coda());
    out
}

/// Size ranges (inclusive) for generated documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sections: (usize, usize),
    pub sentences_per_section: (usize, usize),
    pub sentence_len: (usize, usize),
    pub summary_sents: (usize, usize),
    pub cue_vocab: usize,
    pub theme_vocab: usize,
    pub theme_words: usize,
    /// Probability that a token of a planted sentence comes from the theme.
    pub theme_rate: f64,
    pub filler_vocab: usize,
    /// Relative weight of first- and last-section sentences when planting
    /// the summary; 1 plants uniformly.
    pub section_bias: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            sections: (3, 6),
            sentences_per_section: (4, 8),
            sentence_len: (8, 16),
            summary_sents: (5, 6),
            cue_vocab: 8,
            theme_vocab: 400,
            theme_words: 8,
            theme_rate: 0.25,
            filler_vocab: 3000,
            section_bias: 4.0,
        }
    }
}

impl SynthSpec {
    fn check(&self) {
        for (name, (lo, hi)) in [
            ("sections", self.sections),
            ("sentences_per_section", self.sentences_per_section),
            ("sentence_len", self.sentence_len),
            ("summary_sents", self.summary_sents),
        ] {
            assert!(lo >= 1 && lo <= hi, "invalid {name} range ({lo}, {hi})");
        }
        assert!(self.cue_vocab >= 1 && self.filler_vocab >= 1);
        assert!(self.theme_words >= 1 && self.theme_words <= self.theme_vocab);
        assert!((0.0..=1.0).contains(&self.theme_rate));
        assert!(self.section_bias.is_finite() && self.section_bias > 0.0);
        let cap = (ONSETS.len() * VOWELS.len()).pow(3);
        assert!(self.filler_vocab <= cap && self.cue_vocab <= cap && self.theme_vocab <= cap);
    }
}

/// Generates `n_docs` documents deterministically from `seed`.
pub fn generate(seed: u64, n_docs: usize, spec: &SynthSpec) -> Vec<Document> {
    generate_with_plan(seed, n_docs, spec)
        .into_iter()
        .map(|(doc, _)| doc)
        .collect()
}

/// Like [`generate`], also returning the planted summary indices of each document.
pub fn generate_with_plan(
    seed: u64,
    n_docs: usize,
    spec: &SynthSpec,
) -> Vec<(Document, Vec<usize>)> {
    spec.check();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| one_doc(&mut rng, format!("synth-{seed}-{i:04}"), spec))
        .collect()
}

fn one_doc(rng: &mut ChaCha8Rng, id: String, spec: &SynthSpec) -> (Document, Vec<usize>) {
    let n_sec = rng.random_range(spec.sections.0..=spec.sections.1);
    let sizes: Vec<usize> = (0..n_sec)
        .map(|_| rng.random_range(spec.sentences_per_section.0..=spec.sentences_per_section.1))
        .collect();
    let n: usize = sizes.iter().sum();
    let k = rng
        .random_range(spec.summary_sents.0..=spec.summary_sents.1)
        .min(n);
    let last_start = n - sizes[n_sec - 1];
    let weight = |g: usize| {
        if g < sizes[0] || g >= last_start {
            spec.section_bias
        } else {
            1.0
        }
    };
    let mut planted = sample_weighted(rng, n, weight, k)
        .expect("weights are positive and finite")
        .into_vec();
    planted.sort_unstable();
    let theme: Vec<usize> = sample(rng, spec.theme_vocab, spec.theme_words).into_vec();

    let mut texts = Vec::with_capacity(n);
    for g in 0..n {
        let len = rng.random_range(spec.sentence_len.0..=spec.sentence_len.1);
        let salient = planted.binary_search(&g).is_ok();
        let words: Vec<String> = (0..len)
            .map(|_| {
                if !salient {
                    word(Vocab::Filler, rng.random_range(0..spec.filler_vocab))
                } else if rng.random_bool(spec.theme_rate) {
                    word(Vocab::Theme, theme[rng.random_range(0..theme.len())])
                } else {
                    word(Vocab::Cue, rng.random_range(0..spec.cue_vocab))
                }
            })
            .collect();
        texts.push(sentence_text(&words));
    }

    let abstract_sents: Vec<String> = planted.iter().map(|&g| texts[g].clone()).collect();
    let mut it = texts.into_iter();
    let sections: Vec<(String, Vec<String>)> = sizes
        .iter()
        .enumerate()
        .map(|(j, &size)| {
            (
                format!("section {}", j + 1),
                it.by_ref().take(size).collect(),
            )
        })
        .collect();
    let doc = Document::from_sections(id, sections, abstract_sents)
        .expect("generated documents satisfy the document invariants");
    (doc, planted)
}

fn sentence_text(words: &[String]) -> String {
    let mut text = words.join(" ");
    if let Some(first) = text.get(..1) {
        let upper = first.to_uppercase();
        text.replace_range(..1, &upper);
    }
    text.push('.');
    text
}
