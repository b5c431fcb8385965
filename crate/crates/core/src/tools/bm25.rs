//! Okapi BM25 inverted index.
//!
//! score(d, q) = Σ_t idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! with idf(t) = ln((N − df + 0.5)/(df + 0.5) + 1), summed over the distinct
//! query terms in sorted order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(IndexError::InvalidParams(format!("k1 = {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::InvalidParams(format!("b = {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate doc_id '{0}'")]
    DuplicateDocId(String),
    #[error("query has no searchable terms")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: f64,
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Immutable after build; `search` takes `&self` and may run concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    documents: Vec<(String, String)>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format_version: u32,
    params: Bm25Params,
    documents: Vec<(String, String)>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build(corpus: Vec<(String, String)>, params: Bm25Params) -> Result<Self, IndexError> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let mut ids = HashSet::new();
        for (id, _) in &corpus {
            if !ids.insert(id.as_str()) {
                return Err(IndexError::DuplicateDocId(id.clone()));
            }
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (i, (_, text)) in corpus.iter().enumerate() {
            let tokens = tokenize(text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: i as u32,
                    tf: count,
                });
            }
        }
        Ok(Self::assemble(params, corpus, doc_lengths, postings))
    }

    fn assemble(
        params: Bm25Params,
        documents: Vec<(String, String)>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / documents.len() as f64;
        Bm25Index {
            params,
            documents,
            doc_lengths,
            avg_doc_length,
            postings,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.documents.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn documents(&self) -> &[(String, String)] {
        &self.documents
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.position(doc_id).map(|i| self.doc_lengths[i])
    }

    pub fn document_text(&self, doc_id: &str) -> Option<&str> {
        self.position(doc_id).map(|i| self.documents[i].1.as_str())
    }

    fn position(&self, doc_id: &str) -> Option<usize> {
        self.documents.iter().position(|(id, _)| id == doc_id)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// `(doc_id, tf)` pairs for a term, in corpus order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| {
                ps.iter()
                    .map(|p| (self.documents[p.doc as usize].0.as_str(), p.tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.documents.len() as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Top `k` documents with positive score, ties broken by ascending doc_id.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        if terms.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let Bm25Params { k1, b } = self.params;
        let mut contributions: Vec<Vec<f64>> = vec![Vec::new(); self.documents.len()];
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for p in list {
                let i = p.doc as usize;
                let tf = p.tf as f64;
                let len = self.doc_lengths[i] as f64;
                let norm = k1 * (1.0 - b + b * len / self.avg_doc_length);
                contributions[i].push(idf * tf * (k1 + 1.0) / (tf + norm));
            }
        }
        // Summing in ascending order makes documents whose per-term
        // contributions are a permutation of each other tie exactly.
        let mut hits: Vec<SearchHit> = contributions
            .iter_mut()
            .enumerate()
            .filter(|(_, c)| !c.is_empty())
            .map(|(i, c)| {
                c.sort_by(f64::total_cmp);
                SearchHit {
                    doc_id: self.documents[i].0.clone(),
                    score: c.iter().sum(),
                }
            })
            .filter(|h| h.score > 0.0)
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        hits.truncate(k);
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let file = IndexFile {
            format_version: INDEX_FORMAT_VERSION,
            params: self.params,
            documents: self.documents.clone(),
            doc_lengths: self.doc_lengths.clone(),
            postings: self.postings.clone(),
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &file)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let file: IndexFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.format_version != INDEX_FORMAT_VERSION {
            return Err(IndexError::UnsupportedVersion(file.format_version));
        }
        file.params.validate()?;
        if file.documents.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        if file.doc_lengths.len() != file.documents.len() {
            return Err(IndexError::Corrupt("doc_lengths do not match documents".into()));
        }
        let mut ids = HashSet::new();
        for (id, _) in &file.documents {
            if !ids.insert(id.as_str()) {
                return Err(IndexError::DuplicateDocId(id.clone()));
            }
        }
        let n = file.documents.len() as u32;
        for (term, list) in &file.postings {
            if list.is_empty() || list.iter().any(|p| p.doc >= n || p.tf == 0) {
                return Err(IndexError::Corrupt(format!("bad postings for term {term:?}")));
            }
        }
        Ok(Self::assemble(
            file.params,
            file.documents,
            file.doc_lengths,
            file.postings,
        ))
    }
}
