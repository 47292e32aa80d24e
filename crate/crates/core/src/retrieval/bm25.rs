//! In-memory Okapi BM25 over an inverted index.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

use super::{Document, EnvError};
use crate::protocol::tokenizer;

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

/// Lowercased alphanumeric terms of `text`; punctuation pieces are dropped.
pub fn analyze(text: &str) -> Vec<String> {
    tokenizer::pieces(text)
        .into_iter()
        .map(|p| &text[p.range()])
        .filter(|s| s.chars().next().is_some_and(char::is_alphanumeric))
        .map(str::to_lowercase)
        .collect()
}

/// Text indexed for a document: title followed by body.
pub fn indexed_text(doc: &Document) -> String {
    format!("{} {}", doc.title, doc.text)
}

/// BM25 inverse document frequency, `ln((N - df + 0.5) / (df + 0.5) + 1)`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position of the document in id order.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexStats {
    pub n_docs: usize,
    pub n_terms: usize,
    pub n_postings: usize,
    pub total_length: usize,
    pub avg_doc_len: f64,
}

/// Immutable BM25 index. Documents are held in ascending id order, so the
/// index does not depend on input order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    docs: Vec<Document>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lens: Vec<u32>,
    avg_doc_len: f64,
    params: Bm25Params,
}

impl CorpusIndex {
    pub fn build(docs: Vec<Document>, params: Bm25Params) -> Result<Self, EnvError> {
        if docs.is_empty() {
            return Err(EnvError::EmptyCorpus);
        }
        let mut docs = docs;
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = docs.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(EnvError::DuplicateId(w[0].id.clone()));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let terms = analyze(&indexed_text(doc));
            doc_lens.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: i as u32,
                    tf: n,
                });
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / docs.len() as f64;
        Ok(Self {
            docs,
            postings,
            doc_lens,
            avg_doc_len,
            params,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents in ascending id order.
    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_lens[doc]
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            n_docs: self.docs.len(),
            n_terms: self.postings.len(),
            n_postings: self.postings.values().map(Vec::len).sum(),
            total_length: self.doc_lens.iter().map(|&l| l as usize).sum(),
            avg_doc_len: self.avg_doc_len,
        }
    }

    /// Top `min(k, N)` documents by BM25 score, ties by ascending id.
    /// Every query-term occurrence contributes; documents matching no term
    /// score zero and fill remaining slots in id order. A query with no
    /// terms returns nothing.
    pub fn search(&self, query: &str, k: usize) -> Vec<(&Document, f64)> {
        let terms = analyze(query);
        if terms.is_empty() || k == 0 {
            return Vec::new();
        }
        let n = self.docs.len();
        let Bm25Params { k1, b } = self.params;
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for term in &terms {
            let plist = self.postings(term);
            if plist.is_empty() {
                continue;
            }
            let w = idf(n, plist.len());
            for p in plist {
                let tf = p.tf as f64;
                let norm = 1.0 - b + b * self.doc_lens[p.doc as usize] as f64 / self.avg_doc_len;
                *acc.entry(p.doc).or_default() += w * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let mut ranked: Vec<(u32, f64)> = acc.into_iter().collect();
        // Stable sort keeps ascending doc order (= ascending id) among ties.
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked.truncate(k);
        if ranked.len() < k {
            let seen: HashSet<u32> = ranked.iter().map(|r| r.0).collect();
            ranked.extend(
                (0..n as u32)
                    .filter(|d| !seen.contains(d))
                    .take(k - ranked.len())
                    .map(|d| (d, 0.0)),
            );
        }
        ranked
            .into_iter()
            .map(|(d, s)| (&self.docs[d as usize], s))
            .collect()
    }
}
