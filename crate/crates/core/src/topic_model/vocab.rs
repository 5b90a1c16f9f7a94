use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Lowercase, replace every non-alphanumeric character by a space, split.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "of", "on",
    "or", "that", "the", "to", "was", "were", "with",
];

/// Which tokens make it into the topic vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabPolicy {
    /// Drop tokens occurring in fewer documents than this.
    pub min_df: usize,
    /// Drop tokens occurring in more than this fraction of documents.
    pub max_df_ratio: f64,
    pub stopwords: BTreeSet<String>,
}

impl Default for VocabPolicy {
    fn default() -> Self {
        VocabPolicy {
            min_df: 2,
            max_df_ratio: 0.5,
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl VocabPolicy {
    /// Keeps every token; useful for tiny corpora.
    pub fn permissive() -> Self {
        VocabPolicy {
            min_df: 1,
            max_df_ratio: 1.0,
            stopwords: BTreeSet::new(),
        }
    }

    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = words.into_iter().map(Into::into).collect();
        self
    }
}

/// Dense token ids `0..V` with document frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    num_docs: usize,
}

impl Vocab {
    /// Build from raw sentences, applying `policy`. Tokens are ordered
    /// lexicographically so ids do not depend on corpus order.
    pub fn build<S: AsRef<str>>(sentences: &[S], policy: &VocabPolicy) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for s in sentences {
            let uniq: BTreeSet<String> = tokenize(s.as_ref()).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let num_docs = sentences.len();
        let max_df = policy.max_df_ratio * num_docs as f64;
        let kept: Vec<(String, usize)> = df
            .into_iter()
            .filter(|(t, n)| {
                *n >= policy.min_df && (*n as f64) <= max_df && !policy.stopwords.contains(t)
            })
            .collect();
        Self::from_parts(kept, num_docs)
    }

    pub(crate) fn from_parts(entries: Vec<(String, usize)>, num_docs: usize) -> Self {
        let mut ids = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut doc_freq = Vec::with_capacity(entries.len());
        for (i, (t, n)) in entries.into_iter().enumerate() {
            ids.insert(t.clone(), i);
            tokens.push(t);
            doc_freq.push(n);
        }
        Vocab {
            ids,
            tokens,
            doc_freq,
            num_docs,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    /// Tokenize `text` and keep in-vocabulary ids. May return an empty list.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().filter_map(|t| self.id(t)).collect()
    }
}
