//! The full verifier: semantic encoder, topic features, coherence layer and
//! capsule aggregation, with parameters and checkpoint I/O.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capsule::{self, CapsuleConfig, CapsuleLayer, CapsuleOutput, Label, Verdict};
use crate::coherence::{Coherence, CoherenceConfig, CoherenceOutput};
use crate::encoder::{build_graph, Encoded, Encoder, EncoderConfig, EvidenceGraph, TokenVocab};
use crate::error::{Error, Result};
use crate::numerics::{checkpoint, Gradients, Graph, ParamStore, Tensor, Var};
use crate::topic_model::TopicModel;

/// Prefix shared by every coherence-layer parameter.
pub const COHERENCE_PREFIX: &str = "coherence";


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub coherence: CoherenceConfig,
    pub capsule: CapsuleConfig,
    pub evidence_loss_weight: f64,
}

/// Sizes needed to assemble a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub topics: usize,
    pub topic_vocab: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub coattention_dim: usize,
    pub class_dim: usize,
    pub max_pair_length: usize,
}

impl ModelConfig {
    pub fn from_shape(s: &ModelShape) -> Self {
        let mut capsule = CapsuleConfig::new(s.topics + s.d);
        capsule.class_dim = s.class_dim;
        ModelConfig {
            encoder: EncoderConfig {
                vocab_size: s.vocab_size,
                d: s.d,
                heads: s.heads,
                layers: s.layers,
                ffn_dim: 2 * s.d,
                max_pair_length: s.max_pair_length,
            },
            coherence: CoherenceConfig {
                topics: s.topics,
                d: s.d,
                l: s.coattention_dim,
                heads: s.heads,
                vocab_size: s.topic_vocab,
            },
            capsule,
            evidence_loss_weight: 1.0,
        }
    }
}

/// One claim ready for the network: graph, topic vectors and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub graph: EvidenceGraph,
    /// `1×K`.
    pub claim_topics: Tensor,
    /// `N×K`.
    pub evidence_topics: Tensor,
    pub label: Option<Label>,
    /// One flag per evidence slot; `None` skips the evidence loss.
    pub gold_mask: Option<Vec<bool>>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    /// The same example with evidence slot `i` of the result taken from
    /// slot `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Example {
        let k = self.evidence_topics.shape()[1];
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| self.evidence_topics.row(i).to_vec()).collect();
        let mut out = self.clone();
        out.graph = self.graph.permuted(order);
        out.evidence_topics = Tensor::from_rows(&rows).expect("N×K");
        debug_assert_eq!(out.evidence_topics.shape()[1], k);
        out.gold_mask = self.gold_mask.as_ref().map(|m| order.iter().map(|&i| m[i]).collect());
        out
    }
}

/// FNV-1a, used to derive a per-sentence fold-in seed from its text so a
/// sentence gets the same topic vector wherever it appears.
pub fn text_seed(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn topic_vector(topics: &TopicModel, text: &str) -> Vec<f64> {
    topics.sentence_topics(text, text_seed(text))
}

/// Everything recorded by one forward pass.
pub struct Forward {
    pub encoded: Encoded,
    /// Hub rows scaled by `1/√d`; the input of the coherence layer. The
    /// pre-norm encoder leaves its residual stream unnormalised, and capsule
    /// lengths saturate if `H` arrives at that scale.
    pub h: Var,
    pub coherence: CoherenceOutput,
    pub capsules: CapsuleOutput,
}

impl Forward {
    pub fn rho(&self, g: &Graph) -> Vec<f64> {
        g.value(self.capsules.routing.rho).data().to_vec()
    }

    /// `logit(gold) − logit(not gold)` per evidence slot.
    pub fn evidence_scores(&self, g: &Graph) -> Vec<f64> {
        let l = g.value(self.capsules.evidence_logits);
        (0..l.shape()[0]).map(|i| l.row(i)[1] - l.row(i)[0]).collect()
    }

    pub fn verdict(&self, g: &Graph) -> Verdict {
        let rho = self.rho(g);
        let label = Label::from_index(capsule::predict_label(&rho)).expect("three classes");
        Verdict {
            label,
            rho,
            evidence_scores: self.evidence_scores(g),
        }
    }
}

/// Parameter-free description of the network; the weights live in a
/// [`ParamStore`] passed to every call.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub coherence: Coherence,
    pub capsule: CapsuleLayer,
}

impl Architecture {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.capsule.evidence_dim != config.coherence.topics + config.encoder.d {
            return Err(Error::contract(format!(
                "evidence capsule width {} must equal K + d = {}",
                config.capsule.evidence_dim,
                config.coherence.topics + config.encoder.d
            )));
        }
        if config.coherence.d != config.encoder.d {
            return Err(Error::contract("coherence and encoder widths differ"));
        }
        if config.capsule.classes != Label::ALL.len() {
            return Err(Error::contract(format!(
                "the verifier needs {} class capsules, got {}",
                Label::ALL.len(),
                config.capsule.classes
            )));
        }
        Ok(Architecture {
            encoder: Encoder::new(config.encoder.clone(), "encoder")?,
            coherence: Coherence::new(config.coherence.clone(), COHERENCE_PREFIX)?,
            capsule: CapsuleLayer::new(config.capsule.clone(), "capsule")?,
            config,
        })
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.encoder.init(store, &mut rng)?;
        self.coherence.init(store, &mut rng)?;
        self.capsule.init(store, &mut rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ex: &Example, p: &Tensor) -> Result<Forward> {
        let k = self.config.coherence.topics;
        let n = ex.len();
        if ex.claim_topics.shape() != [1, k] || ex.evidence_topics.shape() != [n, k] {
            return Err(Error::Shape {
                op: "topic features",
                left: ex.evidence_topics.shape().to_vec(),
                right: vec![n, k],
            });
        }
        let encoded = self.encoder.encode(g, store, &ex.graph)?;
        let h = g.scale(encoded.h, 1.0 / (self.config.encoder.d as f64).sqrt());
        let t_c = g.constant(ex.claim_topics.clone());
        let t_e = g.constant(ex.evidence_topics.clone());
        let p = g.constant(p.clone());
        let coherence = self.coherence.forward(g, store, t_c, t_e, h, p)?;
        let capsules = self.capsule.forward(g, store, coherence.a, coherence.s)?;
        Ok(Forward {
            encoded,
            h,
            coherence,
            capsules,
        })
    }

    /// Margin loss plus the weighted evidence cross-entropy (skipped when
    /// the example has no gold mask).
    pub fn loss(&self, g: &mut Graph, fwd: &Forward, ex: &Example) -> Result<Var> {
        let label = ex
            .label
            .ok_or_else(|| Error::contract(format!("instance {} has no label to train on", ex.id)))?;
        let margin = capsule::capsule_margin_loss(g, fwd.capsules.routing.rho, label.index(), &self.config.capsule)?;
        match &ex.gold_mask {
            Some(mask) if label != Label::NotEnoughInfo => {
                let ce = capsule::evidence_ce_loss(g, fwd.capsules.evidence_logits, mask)?;
                let ce = g.scale(ce, self.config.evidence_loss_weight);
                g.add(margin, ce)
            }
            _ => Ok(margin),
        }
    }

    /// Loss and parameter gradients of one example.
    pub fn example_gradients(&self, store: &ParamStore, ex: &Example, p: &Tensor) -> Result<(f64, Gradients, Verdict)> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, store, ex, p)?;
        let loss = self.loss(&mut g, &fwd, ex)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss of instance {} is {value}", ex.id)));
        }
        // The margin loss clamps through relu, which can hide a NaN in ρ.
        if !g.value(fwd.capsules.routing.rho).is_finite() {
            return Err(Error::NonFinite(format!("class capsule lengths of instance {}", ex.id)));
        }
        g.backward(loss)?;
        let grads = store.gradients_of(&g);
        if let Some((p, _)) = store.iter().zip(&grads.0).find(|(_, t)| !t.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {} for instance {}", p.name, ex.id)));
        }
        Ok((value, grads, fwd.verdict(&g)))
    }

    pub fn predict(&self, store: &ParamStore, ex: &Example, p: &Tensor) -> Result<Verdict> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, store, ex, p)?;
        Ok(fwd.verdict(&g))
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    vocab: TokenVocab,
    coherence_disabled: bool,
}

/// Trained verifier: architecture, embedding vocabulary and weights.
#[derive(Clone, Debug)]
pub struct Verifier {
    pub arch: Architecture,
    pub vocab: TokenVocab,
    pub params: ParamStore,
    coherence_disabled: bool,
}

impl Verifier {
    pub fn new(config: ModelConfig, vocab: TokenVocab, seed: u64) -> Result<Self> {
        if config.encoder.vocab_size != vocab.len() {
            return Err(Error::contract(format!(
                "encoder vocab_size {} does not match vocabulary of {} tokens",
                config.encoder.vocab_size,
                vocab.len()
            )));
        }
        let arch = Architecture::new(config)?;
        let mut params = ParamStore::new();
        arch.init(&mut params, seed)?;
        Ok(Verifier {
            arch,
            vocab,
            params,
            coherence_disabled: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Ablation: zero and freeze the whole coherence layer.
    pub fn disable_coherence(&mut self) -> usize {
        self.coherence_disabled = true;
        self.params.zero_and_freeze(&format!("{COHERENCE_PREFIX}."))
    }

    pub fn coherence_disabled(&self) -> bool {
        self.coherence_disabled
    }

    /// Check that `topics` matches the topic shape this model was built for.
    pub fn check_topics(&self, topics: &TopicModel) -> Result<()> {
        let c = &self.arch.config.coherence;
        if topics.k != c.topics || topics.num_words() != c.vocab_size {
            return Err(Error::contract(format!(
                "topic model has K={} V={}, verifier expects K={} V={}",
                topics.k,
                topics.num_words(),
                c.topics,
                c.vocab_size
            )));
        }
        Ok(())
    }

    /// Build an [`Example`] from raw text.
    pub fn example<S: AsRef<str>>(
        &self,
        topics: &TopicModel,
        id: &str,
        claim: &str,
        evidence: &[S],
        label: Option<Label>,
        gold_mask: Option<Vec<bool>>,
    ) -> Result<Example> {
        let graph = build_graph(claim, evidence, &self.vocab, self.arch.config.encoder.max_pair_length)?;
        let claim_topics = Tensor::from_rows(&[topic_vector(topics, claim)])?;
        let rows: Vec<Vec<f64>> = evidence.iter().map(|e| topic_vector(topics, e.as_ref())).collect();
        Ok(Example {
            id: id.to_string(),
            graph,
            claim_topics,
            evidence_topics: Tensor::from_rows(&rows)?,
            label,
            gold_mask,
        })
    }

    pub fn predict(&self, ex: &Example, p: &Tensor) -> Result<Verdict> {
        self.arch.predict(&self.params, ex, p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&Meta {
            config: self.arch.config.clone(),
            vocab: self.vocab.clone(),
            coherence_disabled: self.coherence_disabled,
        })?;
        checkpoint::save(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        let meta: Meta = serde_json::from_str(&meta)?;
        let arch = Architecture::new(meta.config)?;
        let mut expected = ParamStore::new();
        arch.init(&mut expected, 0)?;
        for p in expected.iter() {
            let got = params.get(&p.name).ok_or_else(|| {
                Error::format("checkpoint", format!("missing parameter {}", p.name))
            })?;
            if got.value.shape() != p.value.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("parameter {} has shape {:?}, expected {:?}", p.name, got.value.shape(), p.value.shape()),
                ));
            }
        }
        if params.len() != expected.len() {
            return Err(Error::format("checkpoint", "unexpected extra parameters"));
        }
        Ok(Verifier {
            arch,
            vocab: meta.vocab.reindex(),
            params,
            coherence_disabled: meta.coherence_disabled,
        })
    }
}
