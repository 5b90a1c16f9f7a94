//! TF-IDF document index with cosine ranking.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topic_model::tokenize;

use super::corpus::Document;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdfIndex {
    doc_ids: Vec<String>,
    /// Term → document frequency.
    df: BTreeMap<String, usize>,
    /// Per-document raw term counts.
    tf: Vec<BTreeMap<String, usize>>,
    norms: Vec<f64>,
}

fn counts(text: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in tokenize(text) {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

impl TfIdfIndex {
    /// Index `(doc_id, text)` pairs.
    pub fn build<I, S, T>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut doc_ids = Vec::new();
        let mut tf = Vec::new();
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for (id, text) in docs {
            let c = counts(text.as_ref());
            for term in c.keys() {
                *df.entry(term.clone()).or_insert(0) += 1;
            }
            doc_ids.push(id.into());
            tf.push(c);
        }
        let mut sorted = doc_ids.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("document ids must be unique"));
        }
        let mut index = TfIdfIndex {
            doc_ids,
            df,
            tf,
            norms: Vec::new(),
        };
        index.norms = index
            .tf
            .iter()
            .map(|c| c.iter().map(|(t, &n)| (n as f64 * index.idf(t)).powi(2)).sum::<f64>().sqrt())
            .collect();
        Ok(index)
    }

    /// Index documents by the concatenation of their sentences.
    pub fn from_documents(docs: &[Document]) -> Result<Self> {
        Self::build(docs.iter().map(|d| (d.doc_id.clone(), d.sentences.join(" "))))
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// `ln(D / df)`; zero for unseen terms.
    pub fn idf(&self, term: &str) -> f64 {
        match self.df.get(term) {
            Some(&df) if df > 0 => (self.doc_ids.len() as f64 / df as f64).ln(),
            _ => 0.0,
        }
    }

    /// Cosine similarity of `query` against document `i`.
    pub fn score(&self, query: &str, i: usize) -> f64 {
        let q = counts(query);
        self.score_counts(&q, self.query_norm(&q), i)
    }

    fn query_norm(&self, q: &BTreeMap<String, usize>) -> f64 {
        q.iter().map(|(t, &n)| (n as f64 * self.idf(t)).powi(2)).sum::<f64>().sqrt()
    }

    fn score_counts(&self, q: &BTreeMap<String, usize>, q_norm: f64, i: usize) -> f64 {
        if q_norm == 0.0 || self.norms[i] == 0.0 {
            return 0.0;
        }
        let dot: f64 = q
            .iter()
            .filter_map(|(t, &qn)| {
                self.tf[i].get(t).map(|&dn| {
                    let idf = self.idf(t);
                    qn as f64 * idf * dn as f64 * idf
                })
            })
            .sum();
        dot / (q_norm * self.norms[i])
    }

    /// The `top_k` best documents with positive score, by descending score
    /// and then ascending doc id.
    pub fn retrieve(&self, query: &str, top_k: usize) -> Vec<(String, f64)> {
        let q = counts(query);
        let q_norm = self.query_norm(&q);
        if q_norm == 0.0 {
            return Vec::new();
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, self.score_counts(&q, q_norm, i)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0])));
        scored
            .into_iter()
            .take(top_k)
            .map(|(i, s)| (self.doc_ids[i].clone(), s))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TfIdfIndex {
        TfIdfIndex::build([
            ("a", "red apple red fruit"),
            ("b", "green apple"),
            ("c", "blue sky"),
        ])
        .unwrap()
    }

    #[test]
    fn hand_computed_cosine() {
        let idx = toy();
        let ln3 = 3f64.ln();
        let ln15 = 1.5f64.ln();
        // Query "red apple": weights red=ln3, apple=ln1.5.
        // Doc a: red=2ln3, apple=ln1.5, fruit=ln3.
        let qn = (ln3 * ln3 + ln15 * ln15).sqrt();
        let an = (4.0 * ln3 * ln3 + ln15 * ln15 + ln3 * ln3).sqrt();
        let a = (2.0 * ln3 * ln3 + ln15 * ln15) / (qn * an);
        // Doc b: green=ln3, apple=ln1.5.
        let bn = (ln3 * ln3 + ln15 * ln15).sqrt();
        let b = (ln15 * ln15) / (qn * bn);
        let got = idx.retrieve("red apple", 5);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0, "a");
        assert!((got[0].1 - a).abs() < 1e-12);
        assert_eq!(got[1].0, "b");
        assert!((got[1].1 - b).abs() < 1e-12);
    }

    #[test]
    fn self_retrieval_and_disjoint_query() {
        let idx = toy();
        let top = idx.retrieve("blue sky", 1);
        assert_eq!(top[0].0, "c");
        assert!((top[0].1 - 1.0).abs() < 1e-12);
        assert!(idx.retrieve("zebra", 5).is_empty());
        assert!(idx.retrieve("", 5).is_empty());
    }

    #[test]
    fn ties_break_by_doc_id() {
        let idx = TfIdfIndex::build([("z", "cat"), ("m", "cat"), ("q", "dog")]).unwrap();
        let got: Vec<String> = idx.retrieve("cat", 5).into_iter().map(|(d, _)| d).collect();
        assert_eq!(got, ["m", "z"]);
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        assert!(TfIdfIndex::build([("a", "x"), ("a", "y")]).is_err());
    }
}
