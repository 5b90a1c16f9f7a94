//! Verifier training with gradient accumulation, plus inference over a
//! corpus.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::capsule::Label;
use crate::encoder::TokenVocab;
use crate::error::{Error, Result};
use crate::model::{Architecture, Example, Verifier};
use crate::numerics::{Adam, Gradients, ParamStore, Tensor};
use crate::topic_model::TopicModel;

use super::config::RunConfig;
use super::corpus::{ClaimInstance, EvidenceId};
use super::metrics::{Prediction, MAX_SCORED_EVIDENCE};

/// Text of the slot used to pad claims with too few candidates.
pub const PLACEHOLDER_EVIDENCE: &str = "";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub accumulate_steps: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_run(run: &RunConfig, seed: u64) -> Self {
        TrainOptions {
            epochs: run.epochs,
            learning_rate: run.learning_rate,
            accumulate_steps: run.accumulate_steps,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Running label accuracy over the epoch (predictions made before
    /// each update).
    pub train_accuracy: f64,
}

/// Evidence ids of an example's slots; `None` marks a placeholder.
pub type Slots = Vec<Option<EvidenceId>>;

/// Take the first `n` candidates of `inst`, padding with placeholders.
pub fn prepare_example(
    verifier: &Verifier,
    topics: &TopicModel,
    inst: &ClaimInstance,
    n: usize,
) -> Result<(Example, Slots)> {
    let mut texts: Vec<&str> = Vec::with_capacity(n);
    let mut slots: Slots = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for c in inst.candidates.iter().take(n) {
        texts.push(&c.text);
        slots.push(Some(c.evidence_id()));
        mask.push(inst.is_gold(c));
    }
    while texts.len() < n {
        texts.push(PLACEHOLDER_EVIDENCE);
        slots.push(None);
        mask.push(false);
    }
    let gold_mask = (inst.label != Label::NotEnoughInfo).then_some(mask);
    let ex = verifier.example(topics, &inst.id, &inst.claim, &texts, Some(inst.label), gold_mask)?;
    Ok((ex, slots))
}

pub fn prepare_examples(
    verifier: &Verifier,
    topics: &TopicModel,
    instances: &[ClaimInstance],
    n: usize,
) -> Result<Vec<(Example, Slots)>> {
    instances
        .par_iter()
        .map(|inst| prepare_example(verifier, topics, inst, n))
        .collect()
}

/// Forward/backward every example of `batch` (concurrently), sum the
/// gradients in batch order into `store`, and take one optimizer step.
/// Returns the summed loss and the number of correct predictions.
pub fn accumulation_step(
    arch: &Architecture,
    store: &mut ParamStore,
    adam: &mut Adam,
    batch: &[&Example],
    p: &Tensor,
) -> Result<(f64, usize)> {
    let results: Vec<(f64, Gradients, bool)> = {
        let store: &ParamStore = store;
        batch
            .par_iter()
            .map(|ex| {
                let (loss, grads, verdict) = arch.example_gradients(store, ex, p)?;
                Ok((loss, grads, Some(verdict.label) == ex.label))
            })
            .collect::<Result<_>>()?
    };
    store.zero_grads();
    let mut loss = 0.0;
    let mut correct = 0;
    for (l, grads, ok) in &results {
        loss += l;
        correct += *ok as usize;
        store.accumulate_grads(grads);
    }
    adam.step(store);
    Ok((loss, correct))
}

/// Train `verifier` in place. Example order is reshuffled every epoch from
/// `opts.seed`, so the run is a pure function of its inputs.
pub fn train_verifier(
    verifier: &mut Verifier,
    examples: &[Example],
    p: &Tensor,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if examples.is_empty() {
        return Err(Error::contract("no training examples"));
    }
    if opts.accumulate_steps == 0 {
        return Err(Error::contract("accumulate_steps must be positive"));
    }
    let mut adam = Adam::new(&verifier.params, opts.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut correct) = (0.0, 0);
        for chunk in order.chunks(opts.accumulate_steps) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (l, c) = accumulation_step(&verifier.arch, &mut verifier.params, &mut adam, &batch, p)?;
            loss += l;
            correct += c;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss / examples.len() as f64,
            train_accuracy: correct as f64 / examples.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Build the embedding vocabulary from claims and candidate sentences.
pub fn build_token_vocab(instances: &[ClaimInstance], min_count: usize) -> TokenVocab {
    let mut texts: Vec<&str> = Vec::new();
    for inst in instances {
        texts.push(&inst.claim);
        texts.extend(inst.candidates.iter().map(|c| c.text.as_str()));
    }
    TokenVocab::build(&texts, min_count)
}

/// Build, initialise and train a verifier from a training corpus.
pub fn fit_verifier(
    instances: &[ClaimInstance],
    topics: &TopicModel,
    run: &RunConfig,
    seed: u64,
    disable_coherence: bool,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Verifier, Vec<EpochStats>)> {
    run.validate()?;
    if topics.k != run.k {
        return Err(Error::contract(format!("topic model has K={}, config says K={}", topics.k, run.k)));
    }
    let vocab = build_token_vocab(instances, run.min_token_count);
    let config = run.model_config(vocab.len(), topics.num_words());
    let mut verifier = Verifier::new(config, vocab, seed)?;
    if disable_coherence {
        verifier.disable_coherence();
    }
    let examples: Vec<Example> = prepare_examples(&verifier, topics, instances, run.evidence_per_claim)?
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    let p = topics.topic_word_matrix();
    let history = train_verifier(&mut verifier, &examples, &p, &TrainOptions::from_run(run, seed), on_epoch)?;
    Ok((verifier, history))
}

/// Evidence reported for a verdict: slots whose probe probability exceeds
/// one half, best first, or the single best slot if none does; at most
/// five, placeholders excluded.
pub fn select_evidence(scores: &[f64], slots: &[Option<EvidenceId>]) -> Vec<EvidenceId> {
    let mut ranked: Vec<usize> = (0..scores.len()).filter(|&i| slots[i].is_some()).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let confident: Vec<usize> = ranked.iter().copied().filter(|&i| scores[i] > 0.0).collect();
    let chosen = if confident.is_empty() {
        ranked.into_iter().take(1).collect()
    } else {
        confident
    };
    chosen
        .into_iter()
        .take(MAX_SCORED_EVIDENCE)
        .filter_map(|i| slots[i].clone())
        .collect()
}

pub fn predict_corpus(
    verifier: &Verifier,
    topics: &TopicModel,
    instances: &[ClaimInstance],
    evidence_per_claim: usize,
) -> Result<Vec<Prediction>> {
    verifier.check_topics(topics)?;
    let p = topics.topic_word_matrix();
    instances
        .par_iter()
        .map(|inst| {
            let (ex, slots) = prepare_example(verifier, topics, inst, evidence_per_claim)?;
            let v = verifier.predict(&ex, &p)?;
            Ok(Prediction {
                id: inst.id.clone(),
                label: v.label,
                evidence: select_evidence(&v.evidence_scores, &slots),
                rho: v.rho,
            })
        })
        .collect()
}
