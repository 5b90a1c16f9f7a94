//! Latent Dirichlet allocation by collapsed Gibbs sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, VocabPolicy};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sweeps used for fold-in inference of unseen sentences.
pub const FOLD_IN_SWEEPS: usize = 50;
/// Number of final fold-in sweeps averaged into the returned proportions.
pub const FOLD_IN_AVERAGED: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    /// Defaults to `50 / k` when unset.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub fn new(k: usize, iterations: usize, seed: u64) -> Self {
        LdaConfig {
            k,
            alpha: None,
            beta: 0.01,
            iterations,
            seed,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }
}

/// Sampler state kept after fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    /// Per-document, per-token topic ids.
    pub assignments: Vec<Vec<usize>>,
    pub docs: Vec<Vec<usize>>,
    /// `D×K` row-major.
    pub doc_topic: Vec<u32>,
    /// `K×V` row-major.
    pub topic_word: Vec<u32>,
    pub topic_total: Vec<u32>,
}

impl GibbsState {
    /// Count matrices recomputed from `assignments`.
    pub fn recount(&self, k: usize, v: usize) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
        let mut dt = vec![0u32; self.docs.len() * k];
        let mut tw = vec![0u32; k * v];
        let mut tt = vec![0u32; k];
        for (d, (doc, z)) in self.docs.iter().zip(&self.assignments).enumerate() {
            for (&w, &t) in doc.iter().zip(z) {
                dt[d * k + t] += 1;
                tw[t * v + w] += 1;
                tt[t] += 1;
            }
        }
        (dt, tw, tt)
    }

    pub fn is_consistent(&self, k: usize, v: usize) -> bool {
        let (dt, tw, tt) = self.recount(k, v);
        dt == self.doc_topic && tw == self.topic_word && tt == self.topic_total
    }
}

/// A fitted topic model: vocabulary plus the topic-word matrix `P` (K×V).
#[derive(Clone, Debug, PartialEq)]
pub struct TopicModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub vocab: Vocab,
    /// `K×V` row-major, each row a distribution over the vocabulary.
    pub topic_word: Vec<f64>,
    /// Present on freshly fitted models, absent on models read from disk.
    pub state: Option<GibbsState>,
}

fn sample_discrete<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

/// Collapsed Gibbs sampling over documents of token ids in `0..vocab.len()`.
///
/// Each token is resampled from
/// `p(z = k) ∝ (n_dk + α)(n_kw + β) / (n_k + Vβ)` with its own count removed.
pub fn fit_gibbs(docs: Vec<Vec<usize>>, vocab: Vocab, config: &LdaConfig) -> Result<TopicModel> {
    let k = config.k;
    let v = vocab.len();
    if k < 2 {
        return Err(Error::contract(format!("LDA needs at least 2 topics, got {k}")));
    }
    if config.iterations == 0 {
        return Err(Error::contract("LDA needs at least one Gibbs sweep"));
    }
    if docs.iter().all(Vec::is_empty) {
        return Err(Error::contract("LDA corpus is empty after preprocessing"));
    }
    if let Some(&bad) = docs.iter().flatten().find(|&&w| w >= v) {
        return Err(Error::contract(format!("token id {bad} outside vocabulary of {v}")));
    }
    let alpha = config.alpha();
    let beta = config.beta;
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::contract("Dirichlet hyperparameters must be positive"));
    }
    let vbeta = v as f64 * beta;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut doc_topic = vec![0u32; docs.len() * k];
    let mut topic_word = vec![0u32; k * v];
    let mut topic_total = vec![0u32; k];
    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        let z: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
        for (&w, &t) in doc.iter().zip(&z) {
            doc_topic[d * k + t] += 1;
            topic_word[t * v + w] += 1;
            topic_total[t] += 1;
        }
        assignments.push(z);
    }

    let mut weights = vec![0.0; k];
    for _ in 0..config.iterations {
        for (d, doc) in docs.iter().enumerate() {
            for (pos, &w) in doc.iter().enumerate() {
                let old = assignments[d][pos];
                doc_topic[d * k + old] -= 1;
                topic_word[old * v + w] -= 1;
                topic_total[old] -= 1;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (doc_topic[d * k + t] as f64 + alpha)
                        * (topic_word[t * v + w] as f64 + beta)
                        / (topic_total[t] as f64 + vbeta);
                }
                let new = sample_discrete(&mut rng, &weights);
                assignments[d][pos] = new;
                doc_topic[d * k + new] += 1;
                topic_word[new * v + w] += 1;
                topic_total[new] += 1;
            }
        }
    }

    let mut p = vec![0.0; k * v];
    for t in 0..k {
        let denom = topic_total[t] as f64 + vbeta;
        for w in 0..v {
            p[t * v + w] = (topic_word[t * v + w] as f64 + beta) / denom;
        }
    }

    Ok(TopicModel {
        k,
        alpha,
        beta,
        seed: config.seed,
        vocab,
        topic_word: p,
        state: Some(GibbsState {
            assignments,
            docs,
            doc_topic,
            topic_word,
            topic_total,
        }),
    })
}

impl TopicModel {
    /// Build a vocabulary from `sentences` under `policy`, then fit.
    pub fn fit<S: AsRef<str>>(sentences: &[S], policy: &VocabPolicy, config: &LdaConfig) -> Result<Self> {
        let vocab = Vocab::build(sentences, policy);
        let docs = sentences.iter().map(|s| vocab.encode(s.as_ref())).collect();
        fit_gibbs(docs, vocab, config)
    }

    pub fn num_words(&self) -> usize {
        self.vocab.len()
    }

    /// Row `t` of `P`.
    pub fn topic(&self, t: usize) -> &[f64] {
        let v = self.vocab.len();
        &self.topic_word[t * v..(t + 1) * v]
    }

    /// `P` as a constant `K×V` tensor.
    pub fn topic_word_matrix(&self) -> Tensor {
        Tensor::new(vec![self.k, self.vocab.len()], self.topic_word.clone())
            .expect("K×V buffer")
    }

    /// Topic proportions of a new sentence by fold-in Gibbs sampling with
    /// `P` frozen. The last `min(10, sweeps)` sweeps are averaged. An empty
    /// sentence gets the uniform vector.
    pub fn infer_theta(&self, tokens: &[usize], sweeps: usize, seed: u64) -> Vec<f64> {
        let k = self.k;
        if tokens.is_empty() || sweeps == 0 {
            return vec![1.0 / k as f64; k];
        }
        let v = self.vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u32; k];
        let mut z: Vec<usize> = tokens.iter().map(|_| rng.random_range(0..k)).collect();
        for &t in &z {
            counts[t] += 1;
        }
        let averaged = sweeps.min(FOLD_IN_AVERAGED);
        let denom = tokens.len() as f64 + k as f64 * self.alpha;
        let mut theta = vec![0.0; k];
        let mut weights = vec![0.0; k];
        for sweep in 0..sweeps {
            for (pos, &w) in tokens.iter().enumerate() {
                counts[z[pos]] -= 1;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (counts[t] as f64 + self.alpha) * self.topic_word[t * v + w];
                }
                z[pos] = sample_discrete(&mut rng, &weights);
                counts[z[pos]] += 1;
            }
            if sweep >= sweeps - averaged {
                for t in 0..k {
                    theta[t] += (counts[t] as f64 + self.alpha) / denom;
                }
            }
        }
        let total: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|x| *x /= total);
        theta
    }

    /// Encode `text` with the model vocabulary and infer its topic vector
    /// using the default fold-in schedule.
    pub fn sentence_topics(&self, text: &str, seed: u64) -> Vec<f64> {
        let ids = self.vocab.encode(text);
        self.infer_theta(&ids, FOLD_IN_SWEEPS, seed)
    }
}
