//! Per-question BM25 index over a question's private corpus.
//!
//! Okapi BM25 with the canonical defaults k1 = 1.2, b = 0.75 and a
//! non-negative IDF, `ln(1 + (N - df + 0.5) / (df + 0.5))`. Tokenization is
//! lowercase, split on runs of non-alphanumeric characters, no stemming and
//! no stopword removal, so identical inputs always rank identically.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Document;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
}

/// Anything that can return the top-k documents for a query string.
pub trait Retriever: Send + Sync {
    /// Returns up to `k` (doc_id, score) pairs, best first.
    fn retrieve(&self, query: &str, k: usize) -> Vec<(String, f64)>;
}

/// Lowercases and splits on any non-alphanumeric run, dropping empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Immutable BM25 statistics over one corpus.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    doc_term_freqs: Vec<HashMap<String, u64>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
    doc_freqs: HashMap<String, u64>,
    n_docs: usize,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn build(corpus: &[Document], params: Bm25Params) -> Result<Self, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_term_freqs = Vec::with_capacity(corpus.len());
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut doc_freqs: HashMap<String, u64> = HashMap::new();
        for doc in corpus {
            let tokens = tokenize(&doc.text);
            let mut freqs: HashMap<String, u64> = HashMap::new();
            for t in &tokens {
                *freqs.entry(t.clone()).or_insert(0) += 1;
            }
            for t in freqs.keys() {
                *doc_freqs.entry(t.clone()).or_insert(0) += 1;
            }
            doc_ids.push(doc.id.clone());
            doc_lengths.push(tokens.len());
            doc_term_freqs.push(freqs);
        }
        let avg_doc_length = doc_lengths.iter().sum::<usize>() as f64 / doc_lengths.len() as f64;
        Ok(Self {
            doc_ids,
            doc_term_freqs,
            doc_lengths,
            avg_doc_length,
            doc_freqs,
            n_docs: corpus.len(),
            params,
        })
    }

    /// Scores every document against `query` and returns the best
    /// `min(k, N)` as (doc_id, score), sorted by descending score with ties
    /// broken by ascending doc id. Query tokens are scored as a multiset:
    /// a repeated token contributes once per occurrence.
    pub fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let query_tokens = tokenize(query);
        let mut scored: Vec<(String, f64)> = (0..self.n_docs)
            .map(|i| (self.doc_ids[i].clone(), self.score_doc(i, &query_tokens)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k.min(self.n_docs));
        scored
    }

    fn score_doc(&self, doc: usize, query_tokens: &[String]) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let n = self.n_docs as f64;
        let len_norm = self.doc_lengths[doc] as f64 / self.avg_doc_length;
        let mut score = 0.0;
        for t in query_tokens {
            let df = self.doc_freqs.get(t).copied().unwrap_or(0) as f64;
            let tf = self.doc_term_freqs[doc].get(t).copied().unwrap_or(0) as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len_norm));
        }
        score
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc: usize) -> usize {
        self.doc_lengths[doc]
    }

    pub fn doc_freq(&self, term: &str) -> u64 {
        self.doc_freqs.get(term).copied().unwrap_or(0)
    }

    pub fn term_freq(&self, doc: usize, term: &str) -> u64 {
        self.doc_term_freqs[doc].get(term).copied().unwrap_or(0)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }
}

impl Retriever for Bm25Index {
    fn retrieve(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        self.search(query, k)
    }
}
