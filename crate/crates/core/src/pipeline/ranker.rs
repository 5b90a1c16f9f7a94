//! Sentence ranker: the semantic encoder on a single claim–sentence node,
//! followed by a linear scoring head, trained with a pairwise hinge loss.

use std::cmp::Ordering;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{build_graph, Encoder, EncoderConfig, TokenVocab};
use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{checkpoint, Adam, Gradients, Graph, ParamStore, Var};

use super::corpus::{Candidate, ClaimInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_pair_length: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Pairs per optimizer step.
    pub accumulate_steps: usize,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            d: 32,
            layers: 1,
            heads: 2,
            max_pair_length: 130,
            learning_rate: 1e-3,
            epochs: 3,
            accumulate_steps: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankPair {
    pub claim: String,
    pub positive: String,
    pub negative: String,
}

/// `max(0, 1 + s_neg − s_pos)`.
pub fn hinge_loss(g: &mut Graph, s_pos: Var, s_neg: Var) -> Result<Var> {
    let diff = g.sub(s_neg, s_pos)?;
    let shape = g.shape(diff).to_vec();
    let one = g.constant(crate::numerics::Tensor::full(&shape, 1.0));
    let margin = g.add(diff, one)?;
    let r = g.relu(margin);
    Ok(g.sum(r))
}

/// Every (gold, non-gold) candidate pair of every instance with gold
/// evidence among its candidates.
pub fn ranking_pairs(instances: &[ClaimInstance]) -> Vec<RankPair> {
    let mut out = Vec::new();
    for inst in instances {
        let (gold, other): (Vec<&Candidate>, Vec<&Candidate>) = inst.candidates.iter().partition(|c| inst.is_gold(c));
        for p in &gold {
            for n in &other {
                out.push(RankPair {
                    claim: inst.claim.clone(),
                    positive: p.text.clone(),
                    negative: n.text.clone(),
                });
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: RankerConfig,
    vocab: TokenVocab,
}

#[derive(Clone, Debug)]
pub struct Ranker {
    pub config: RankerConfig,
    pub vocab: TokenVocab,
    pub params: ParamStore,
    encoder: Encoder,
}

impl Ranker {
    pub fn new(config: RankerConfig, vocab: TokenVocab) -> Result<Self> {
        let encoder = Self::encoder(&config, &vocab)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        encoder.init(&mut params, &mut rng)?;
        nn::init_linear(&mut params, "ranker.head", config.d, 1, &mut rng)?;
        Ok(Ranker {
            config,
            vocab,
            params,
            encoder,
        })
    }

    fn encoder(config: &RankerConfig, vocab: &TokenVocab) -> Result<Encoder> {
        Encoder::new(
            EncoderConfig {
                vocab_size: vocab.len(),
                d: config.d,
                heads: config.heads,
                layers: config.layers,
                ffn_dim: 2 * config.d,
                max_pair_length: config.max_pair_length,
            },
            "ranker.encoder",
        )
    }

    /// Score of one claim–sentence pair as a `1×1` node.
    pub fn score_var(&self, g: &mut Graph, store: &ParamStore, claim: &str, sentence: &str) -> Result<Var> {
        let graph = build_graph(claim, &[sentence], &self.vocab, self.config.max_pair_length)?;
        let enc = self.encoder.encode(g, store, &graph)?;
        nn::linear(g, store, "ranker.head", enc.h)
    }

    pub fn score(&self, claim: &str, sentence: &str) -> Result<f64> {
        let mut g = Graph::new();
        let s = self.score_var(&mut g, &self.params, claim, sentence)?;
        Ok(g.value(s).item())
    }

    pub fn pair_gradients(&self, store: &ParamStore, pair: &RankPair) -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let sp = self.score_var(&mut g, store, &pair.claim, &pair.positive)?;
        let sn = self.score_var(&mut g, store, &pair.claim, &pair.negative)?;
        let loss = hinge_loss(&mut g, sp, sn)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("ranker loss for claim `{}`", pair.claim)));
        }
        g.backward(loss)?;
        Ok((value, store.gradients_of(&g)))
    }

    /// One optimizer step on the summed gradient of `pairs`; returns the
    /// summed loss before the step.
    pub fn step(&mut self, adam: &mut Adam, pairs: &[RankPair]) -> Result<f64> {
        let results: Vec<(f64, Gradients)> = pairs
            .par_iter()
            .map(|p| self.pair_gradients(&self.params, p))
            .collect::<Result<_>>()?;
        self.params.zero_grads();
        let mut total = 0.0;
        for (loss, grads) in &results {
            total += loss;
            self.params.accumulate_grads(grads);
        }
        adam.step(&mut self.params);
        Ok(total)
    }

    /// Score all sentences and return the best `top_k`, ties ordered by
    /// `(doc_id, sent_id)`.
    pub fn rank_evidence(&self, claim: &str, sentences: &[Candidate], top_k: usize) -> Result<Vec<(Candidate, f64)>> {
        let scores: Vec<f64> = sentences
            .par_iter()
            .map(|c| self.score(claim, &c.text))
            .collect::<Result<_>>()?;
        let mut ranked: Vec<(Candidate, f64)> = sentences.iter().cloned().zip(scores).collect();
        ranked.sort_by(|a, b| match b.1.total_cmp(&a.1) {
            Ordering::Equal => (&a.0.doc_id, a.0.sent_id).cmp(&(&b.0.doc_id, b.0.sent_id)),
            o => o,
        });
        ranked.truncate(top_k);
        Ok(ranked)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&Meta {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        })?;
        checkpoint::save(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        let meta: Meta = serde_json::from_str(&meta)?;
        let vocab = meta.vocab.reindex();
        let fresh = Ranker::new(meta.config, vocab)?;
        for p in fresh.params.iter() {
            match params.get(&p.name) {
                Some(q) if q.value.shape() == p.value.shape() => {}
                _ => return Err(Error::format("ranker checkpoint", format!("bad or missing parameter {}", p.name))),
            }
        }
        Ok(Ranker { params, ..fresh })
    }
}

/// Train a ranker on hinge-loss pairs. Returns the ranker and the mean
/// pair loss of every epoch.
pub fn train_ranker(pairs: &[RankPair], vocab: TokenVocab, config: RankerConfig) -> Result<(Ranker, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::contract("ranker training needs at least one pair"));
    }
    if config.accumulate_steps == 0 {
        return Err(Error::contract("accumulate_steps must be positive"));
    }
    let mut ranker = Ranker::new(config.clone(), vocab)?;
    let mut adam = Adam::new(&ranker.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.accumulate_steps) {
            let batch: Vec<RankPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            total += ranker.step(&mut adam, &batch)?;
        }
        history.push(total / pairs.len() as f64);
    }
    Ok((ranker, history))
}
