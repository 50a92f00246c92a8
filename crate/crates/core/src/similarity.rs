//! Phrase canonicalization and similarity providers used as matching weights.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::grammar_parser::{lemmatize, Lexicon, DETERMINERS};

/// Lowercases, strips determiners, lemmatizes every token and collapses
/// whitespace.
pub fn canonicalize(phrase: &str, lexicon: &Lexicon) -> String {
    phrase
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty() && !DETERMINERS.contains(&t.as_str()))
        .map(|t| lemmatize(&t, lexicon))
        .filter(|t| !DETERMINERS.contains(&t.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn ngrams(s: &str, n: usize) -> BTreeMap<&str, usize> {
    let bounds: Vec<usize> = s.char_indices().map(|(i, _)| i).chain([s.len()]).collect();
    let mut counts = BTreeMap::new();
    for w in bounds.windows(n + 1) {
        *counts.entry(&s[w[0]..w[n]]).or_insert(0) += 1;
    }
    counts
}

/// Dice coefficient over character n-gram multisets.
pub fn ngram_dice(a: &str, b: &str, n: usize) -> f64 {
    if a == b {
        return 1.0;
    }
    let (ga, gb) = (ngrams(a, n.max(1)), ngrams(b, n.max(1)));
    let total: usize = ga.values().sum::<usize>() + gb.values().sum::<usize>();
    if total == 0 {
        return 0.0;
    }
    let shared: usize = ga.iter().map(|(g, &c)| c.min(gb.get(g).copied().unwrap_or(0))).sum();
    (2 * shared) as f64 / total as f64
}

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("embedding table is missing its `dim=<d>` header")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("TableDimensionMismatch: line {line} has {found} components, expected {expected}")]
    TableDimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: vector for `{phrase}` has norm {norm}, expected 1")]
    NotUnitNorm { line: usize, phrase: String, norm: f64 },
    #[error("reading embedding table: {0}")]
    Io(String),
}

/// File-loaded phrase vectors of one fixed dimension, all unit norm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Parses `dim=<d>` followed by `phrase<TAB>v1 v2 ... vd` records.
    pub fn parse(text: &str) -> Result<EmbeddingTable, TableError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(TableError::MissingHeader)?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.trim().parse().ok())
            .filter(|&d| d > 0)
            .ok_or(TableError::MissingHeader)?;
        let mut vectors = BTreeMap::new();
        for (n, line) in lines {
            let line_no = n + 1;
            let (phrase, values) = line
                .split_once('\t')
                .ok_or_else(|| TableError::Syntax { line: line_no, message: "expected `phrase<TAB>vector`".into() })?;
            let v = values
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TableError::Syntax { line: line_no, message: e.to_string() })?;
            if v.len() != dim {
                return Err(TableError::TableDimensionMismatch { line: line_no, expected: dim, found: v.len() });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                return Err(TableError::NotUnitNorm { line: line_no, phrase: phrase.to_string(), norm });
            }
            vectors.insert(phrase.trim().to_string(), v);
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn load(path: &Path) -> Result<EmbeddingTable, TableError> {
        let text = std::fs::read_to_string(path).map_err(|e| TableError::Io(format!("{}: {e}", path.display())))?;
        EmbeddingTable::parse(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, phrase: &str) -> Option<&[f64]> {
        self.vectors.get(phrase).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderKind {
    /// Character n-gram Dice; `n = 2` is the default.
    Lexical { n: usize },
    /// Table lookup, lexical bigram Dice for phrases not in the table.
    EmbeddingTable(Arc<EmbeddingTable>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityProvider {
    pub kind: ProviderKind,
    /// Vocabulary used to canonicalize raw phrases.
    pub lexicon: Arc<Lexicon>,
}

impl Default for SimilarityProvider {
    fn default() -> Self {
        SimilarityProvider::lexical(Arc::new(Lexicon::builtin()))
    }
}

impl SimilarityProvider {
    pub fn lexical(lexicon: Arc<Lexicon>) -> Self {
        SimilarityProvider { kind: ProviderKind::Lexical { n: 2 }, lexicon }
    }

    pub fn embedding(table: EmbeddingTable, lexicon: Arc<Lexicon>) -> Self {
        SimilarityProvider { kind: ProviderKind::EmbeddingTable(Arc::new(table)), lexicon }
    }

    pub fn canonicalize(&self, phrase: &str) -> String {
        canonicalize(phrase, &self.lexicon)
    }

    /// Similarity of two canonical strings, in [0, 1].
    pub fn score(&self, a: &str, b: &str) -> f64 {
        match &self.kind {
            ProviderKind::Lexical { n } => ngram_dice(a, b, *n),
            ProviderKind::EmbeddingTable(table) => {
                if a == b {
                    return 1.0;
                }
                match (table.get(a), table.get(b)) {
                    (Some(u), Some(v)) => {
                        let cos: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                        ((1.0 + cos) / 2.0).clamp(0.0, 1.0)
                    }
                    _ => ngram_dice(a, b, 2),
                }
            }
        }
    }

    /// Canonicalizes both phrases, then scores them.
    pub fn phrase_score(&self, a: &str, b: &str) -> f64 {
        self.score(&self.canonicalize(a), &self.canonicalize(b))
    }
}

/// Free-function form of [`SimilarityProvider::score`].
pub fn score(provider: &SimilarityProvider, a: &str, b: &str) -> f64 {
    provider.score(a, b)
}
