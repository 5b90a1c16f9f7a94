//! Toy-sized models and the finite-difference gradient suite run by the
//! `grad-check` subcommand and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capsule::{self, CapsuleConfig, CapsuleLayer, Label};
use crate::coherence::{Coherence, CoherenceConfig};
use crate::encoder::{build_graph, Encoder, EncoderConfig, TokenVocab};
use crate::error::Result;
use crate::model::{Architecture, Example, ModelConfig, ModelShape};
use crate::numerics::{grad_check, GradCheckReport, Graph, ParamStore, Tensor, Var};

/// Tolerance on the worst relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ToySizes {
    pub evidence: usize,
    pub d: usize,
    pub heads: usize,
    pub topics: usize,
    pub topic_vocab: usize,
    pub coattention_dim: usize,
    pub class_dim: usize,
    pub words: usize,
}

impl Default for ToySizes {
    fn default() -> Self {
        ToySizes {
            evidence: 3,
            d: 8,
            heads: 2,
            topics: 4,
            topic_vocab: 6,
            coattention_dim: 5,
            class_dim: 4,
            words: 10,
        }
    }
}

impl ToySizes {
    pub fn vocab(&self) -> TokenVocab {
        let words: Vec<String> = (0..self.words).map(|i| format!("w{i}")).collect();
        TokenVocab::build(&[words.join(" ")], 1)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::from_shape(&ModelShape {
            vocab_size: self.vocab().len(),
            topics: self.topics,
            topic_vocab: self.topic_vocab,
            d: self.d,
            layers: 1,
            heads: self.heads,
            coattention_dim: self.coattention_dim,
            class_dim: self.class_dim,
            max_pair_length: 16,
        })
    }
}

/// Rows drawn uniformly then normalised to sum to one.
pub fn simplex_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let mut t = Tensor::uniform(&[rows, cols], 0.05, 1.0, rng);
    for r in t.data_mut().chunks_mut(cols) {
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|x| *x /= s);
    }
    t
}

fn sentence<R: Rng + ?Sized>(words: usize, len: usize, rng: &mut R) -> String {
    (0..len)
        .map(|_| format!("w{}", rng.random_range(0..words)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A random labelled example and topic-word matrix at `sizes`.
pub fn toy_example<R: Rng + ?Sized>(sizes: &ToySizes, rng: &mut R) -> (Example, Tensor) {
    let claim = sentence(sizes.words, 3, rng);
    let evidence: Vec<String> = (0..sizes.evidence)
        .map(|_| {
            let len = rng.random_range(2..5);
            sentence(sizes.words, len, rng)
        })
        .collect();
    let graph = build_graph(&claim, &evidence, &sizes.vocab(), 16).expect("toy nodes fit");
    let label = Label::ALL[rng.random_range(0..3)];
    let gold = rng.random_range(0..sizes.evidence);
    let ex = Example {
        id: "toy".into(),
        graph,
        claim_topics: simplex_rows(1, sizes.topics, rng),
        evidence_topics: simplex_rows(sizes.evidence, sizes.topics, rng),
        label: Some(label),
        gold_mask: Some((0..sizes.evidence).map(|i| i == gold).collect()),
    };
    (ex, simplex_rows(sizes.topics, sizes.topic_vocab, rng))
}

/// `Σ x ⊙ R` for a fixed random `R`, a generic scalar head for checking a
/// matrix-valued fragment. `R` has variance `1/len` so the head stays O(1)
/// and the roundoff of the difference quotient stays small.
fn probe_sum<R: Rng + ?Sized>(g: &mut Graph, x: Var, rng: &mut R) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let len: usize = shape.iter().product();
    let w = Tensor::randn(&shape, 1.0 / (len as f64).sqrt(), rng);
    let w = g.constant(w);
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn encoder_layer(sizes: &ToySizes, seed: u64) -> Result<GradCheckReport> {
    let vocab = sizes.vocab();
    let enc = Encoder::new(
        EncoderConfig {
            vocab_size: vocab.len(),
            d: sizes.d,
            heads: sizes.heads,
            layers: 1,
            ffn_dim: 2 * sizes.d,
            max_pair_length: 16,
        },
        "encoder",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    enc.init(&mut store, &mut rng)?;
    let (ex, _) = toy_example(sizes, &mut rng);
    let head_seed = rng.random();
    grad_check(
        &store,
        |g, s| {
            let out = enc.encode(g, s, &ex.graph)?;
            probe_sum(g, out.h, &mut ChaCha8Rng::seed_from_u64(head_seed))
        },
        GRAD_TOLERANCE,
    )
}

fn coherence_composite(sizes: &ToySizes, seed: u64) -> Result<GradCheckReport> {
    let layer = Coherence::new(
        CoherenceConfig {
            topics: sizes.topics,
            d: sizes.d,
            l: sizes.coattention_dim,
            heads: sizes.heads,
            vocab_size: sizes.topic_vocab,
        },
        "coherence",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    layer.init(&mut store, &mut rng)?;
    let n = sizes.evidence;
    let t_c = simplex_rows(1, sizes.topics, &mut rng);
    let t_e = simplex_rows(n, sizes.topics, &mut rng);
    let h = Tensor::randn(&[n, sizes.d], 1.0, &mut rng);
    let p = simplex_rows(sizes.topics, sizes.topic_vocab, &mut rng);
    let head_seed = rng.random();
    grad_check(
        &store,
        |g, s| {
            let (t_c, t_e, h, p) = (
                g.constant(t_c.clone()),
                g.constant(t_e.clone()),
                g.constant(h.clone()),
                g.constant(p.clone()),
            );
            let out = layer.forward(g, s, t_c, t_e, h, p)?;
            let mut head = ChaCha8Rng::seed_from_u64(head_seed);
            let a = probe_sum(g, out.a, &mut head)?;
            let b = probe_sum(g, out.s, &mut head)?;
            g.add(a, b)
        },
        GRAD_TOLERANCE,
    )
}

fn routing_and_margin(sizes: &ToySizes, seed: u64) -> Result<GradCheckReport> {
    let mut config = CapsuleConfig::new(sizes.topics + sizes.d);
    config.class_dim = sizes.class_dim;
    let layer = CapsuleLayer::new(config.clone(), "capsule")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    layer.init(&mut store, &mut rng)?;
    let n = sizes.evidence;
    let a = Tensor::randn(&[n, sizes.topics], 0.5, &mut rng);
    let s = Tensor::randn(&[n, sizes.d], 0.5, &mut rng);
    let label = rng.random_range(0..config.classes);
    grad_check(
        &store,
        |g, st| {
            let (a, s) = (g.constant(a.clone()), g.constant(s.clone()));
            let out = layer.forward(g, st, a, s)?;
            capsule::capsule_margin_loss(g, out.routing.rho, label, &config)
        },
        GRAD_TOLERANCE,
    )
}

fn full_model(sizes: &ToySizes, seed: u64) -> Result<GradCheckReport> {
    let arch = Architecture::new(sizes.model_config())?;
    let mut store = ParamStore::new();
    arch.init(&mut store, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let (mut ex, p) = toy_example(sizes, &mut rng);
    // A stance label so the evidence loss is part of the objective.
    ex.label = Some(Label::Refutes);
    grad_check(
        &store,
        |g, s| {
            let fwd = arch.forward(g, s, &ex, &p)?;
            arch.loss(g, &fwd, &ex)
        },
        GRAD_TOLERANCE,
    )
}

/// Check every differentiable fragment of the verifier at toy sizes.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let sizes = ToySizes::default();
    Ok(vec![
        SuiteEntry {
            name: "encoder layer with extra-hop attention",
            report: encoder_layer(&sizes, seed)?,
        },
        SuiteEntry {
            name: "coherence layer",
            report: coherence_composite(&sizes, seed)?,
        },
        SuiteEntry {
            name: "routing and margin loss",
            report: routing_and_margin(&sizes, seed)?,
        },
        SuiteEntry {
            name: "full model loss",
            report: full_model(&sizes, seed)?,
        },
    ])
}
