//! Synthetic claim corpus with planted topics and stance markers.
//!
//! Every topic owns a disjoint word set. A claim is drawn from one topic.
//! By default claims use the first half of their topic's words and evidence
//! the second half, so matching a claim to its evidence needs word
//! co-occurrence statistics; a `background` document of sentences over whole
//! topic vocabularies supplies them to the topic model.
//! For SUPPORTS and REFUTES, exactly one candidate is gold: it is on the
//! claim's topic and carries an agreement or contradiction marker. The
//! other candidates are either on-topic without a marker or off-topic with
//! a random marker (or none). A NOT ENOUGH INFO claim only gets off-topic
//! candidates, which carry markers as often as the distractors above. So a
//! marker decides the label only when it sits on an on-topic sentence.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capsule::Label;
use crate::error::{Error, Result};

use super::corpus::{Candidate, ClaimInstance, Document, EvidenceId, CORPUS_VERSION};

pub const AGREE_MARKERS: [&str; 3] = ["confirmed", "verified", "affirmed"];
pub const CONTRADICT_MARKERS: [&str; 3] = ["denied", "refuted", "disputed"];
const STOPWORDS: [&str; 4] = ["the", "of", "and", "a"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub train: usize,
    pub test: usize,
    pub evidence_per_claim: usize,
    pub claim_topic_words: usize,
    pub evidence_topic_words: usize,
    /// Probability that an off-topic candidate carries a marker.
    pub offtopic_marker_rate: f64,
    /// Draw claim words from the first half of each topic's vocabulary and
    /// evidence words from the second half, so claims and their evidence
    /// share no topic word.
    pub split_vocabulary: bool,
    /// Extra single-topic sentences over the whole topic vocabulary, emitted
    /// as a `background` document for topic model fitting.
    pub background_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            topics: 3,
            words_per_topic: 20,
            filler_words: 30,
            train: 600,
            test: 150,
            evidence_per_claim: 5,
            claim_topic_words: 4,
            evidence_topic_words: 5,
            offtopic_marker_rate: 0.5,
            split_vocabulary: true,
            background_sentences: 600,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub documents: Vec<Document>,
    pub train: Vec<ClaimInstance>,
    pub test: Vec<ClaimInstance>,
}

pub fn topic_word(topic: usize, j: usize) -> String {
    format!("t{topic}w{j}")
}

#[derive(Clone, Copy)]
enum Part {
    Claim,
    Evidence,
    Whole,
}

struct Gen<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn sentence(&mut self, topic: usize, part: Part, marker: Option<&str>) -> String {
        let (lo, hi, n) = self.part_range(part);
        let idx = rand::seq::index::sample(&mut self.rng, hi - lo, n);
        let mut words: Vec<String> = idx.into_iter().map(|j| topic_word(topic, lo + j)).collect();
        for _ in 0..2 {
            words.push(format!("f{}", self.rng.random_range(0..self.cfg.filler_words)));
        }
        words.push(STOPWORDS.choose(&mut self.rng).expect("nonempty").to_string());
        if let Some(m) = marker {
            words.push(m.to_string());
        }
        words.shuffle(&mut self.rng);
        words.join(" ")
    }

    fn part_range(&self, part: Part) -> (usize, usize, usize) {
        let cfg = self.cfg;
        let w = cfg.words_per_topic;
        let half = w / 2;
        match (part, cfg.split_vocabulary) {
            (Part::Claim, true) => (0, half, cfg.claim_topic_words),
            (Part::Evidence, true) => (half, w, cfg.evidence_topic_words),
            (Part::Claim, false) => (0, w, cfg.claim_topic_words),
            (Part::Evidence, false) => (0, w, cfg.evidence_topic_words),
            (Part::Whole, _) => (0, w, cfg.evidence_topic_words),
        }
    }

    fn other_topic(&mut self, topic: usize) -> usize {
        let t = self.rng.random_range(0..self.cfg.topics - 1);
        if t >= topic {
            t + 1
        } else {
            t
        }
    }

    fn random_marker(&mut self) -> Option<&'static str> {
        if self.rng.random_bool(self.cfg.offtopic_marker_rate) {
            let set = if self.rng.random_bool(0.5) {
                &AGREE_MARKERS
            } else {
                &CONTRADICT_MARKERS
            };
            Some(set.choose(&mut self.rng).expect("nonempty"))
        } else {
            None
        }
    }

    fn offtopic(&mut self, topic: usize) -> String {
        let other = self.other_topic(topic);
        let marker = self.random_marker();
        self.sentence(other, Part::Evidence, marker)
    }

    fn instance(&mut self, split: &str, i: usize, label: Label) -> (ClaimInstance, Document) {
        let cfg = self.cfg;
        let topic = self.rng.random_range(0..cfg.topics);
        let claim = self.sentence(topic, Part::Claim, None);
        let mut sentences: Vec<(String, bool)> = Vec::with_capacity(cfg.evidence_per_claim);
        match label {
            Label::NotEnoughInfo => {
                for _ in 0..cfg.evidence_per_claim {
                    let s = self.offtopic(topic);
                    sentences.push((s, false));
                }
            }
            Label::Supports | Label::Refutes => {
                let markers = if label == Label::Supports {
                    &AGREE_MARKERS
                } else {
                    &CONTRADICT_MARKERS
                };
                let m = *markers.choose(&mut self.rng).expect("nonempty");
                sentences.push((self.sentence(topic, Part::Evidence, Some(m)), true));
                let on_topic = self.rng.random_range(0..=1.min(cfg.evidence_per_claim - 1));
                for _ in 0..on_topic {
                    sentences.push((self.sentence(topic, Part::Evidence, None), false));
                }
                while sentences.len() < cfg.evidence_per_claim {
                    let s = self.offtopic(topic);
                    sentences.push((s, false));
                }
            }
        }
        sentences.shuffle(&mut self.rng);
        let doc_id = format!("{split}-{i:04}");
        let candidates: Vec<Candidate> = sentences
            .iter()
            .enumerate()
            .map(|(j, (text, _))| Candidate {
                doc_id: doc_id.clone(),
                sent_id: j,
                text: text.clone(),
            })
            .collect();
        let gold_sets = sentences
            .iter()
            .enumerate()
            .filter(|(_, (_, gold))| *gold)
            .map(|(j, _)| vec![EvidenceId(doc_id.clone(), j)])
            .collect();
        let doc = Document {
            doc_id: doc_id.clone(),
            sentences: sentences.into_iter().map(|(t, _)| t).collect(),
        };
        (
            ClaimInstance {
                version: Some(CORPUS_VERSION),
                id: format!("{split}-{i:04}"),
                claim,
                label,
                candidates,
                gold_sets,
            },
            doc,
        )
    }

    fn split(&mut self, name: &str, n: usize, docs: &mut Vec<Document>) -> Vec<ClaimInstance> {
        let mut labels: Vec<Label> = (0..n).map(|i| Label::ALL[i % 3]).collect();
        labels.shuffle(&mut self.rng);
        labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let (inst, doc) = self.instance(name, i, label);
                docs.push(doc);
                inst
            })
            .collect()
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.topics < 2 {
        return Err(Error::contract("the generator needs at least two topics"));
    }
    let room = if cfg.split_vocabulary {
        cfg.words_per_topic / 2
    } else {
        cfg.words_per_topic
    };
    if cfg.evidence_per_claim == 0
        || cfg.claim_topic_words > room
        || cfg.evidence_topic_words > room
        || cfg.filler_words == 0
    {
        return Err(Error::contract(format!("inconsistent generator settings {cfg:?}")));
    }
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut documents = Vec::new();
    let train = g.split("train", cfg.train, &mut documents);
    let test = g.split("test", cfg.test, &mut documents);
    if cfg.background_sentences > 0 {
        let sentences = (0..cfg.background_sentences)
            .map(|i| g.sentence(i % cfg.topics, Part::Whole, None))
            .collect();
        documents.push(Document {
            doc_id: "background".into(),
            sentences,
        });
    }
    Ok(SyntheticData {
        documents,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topic_of(text: &str) -> Option<usize> {
        text.split(' ')
            .find_map(|w| w.strip_prefix('t').and_then(|r| r.split('w').next()).and_then(|t| t.parse().ok()))
    }

    #[test]
    fn planted_structure() {
        let data = generate(&SyntheticConfig {
            train: 60,
            test: 0,
            ..Default::default()
        })
        .unwrap();
        for inst in &data.train {
            assert_eq!(inst.candidates.len(), 5);
            let t = topic_of(&inst.claim).unwrap();
            let on_topic = inst.candidates.iter().filter(|c| topic_of(&c.text) == Some(t)).count();
            match inst.label {
                Label::NotEnoughInfo => {
                    assert_eq!(on_topic, 0);
                    assert!(inst.gold_sets.is_empty());
                }
                _ => {
                    assert!(on_topic >= 1);
                    assert_eq!(inst.gold_sets.len(), 1);
                    let gold = inst.candidates.iter().find(|c| inst.is_gold(c)).unwrap();
                    assert_eq!(topic_of(&gold.text), Some(t));
                    let markers = if inst.label == Label::Supports {
                        &AGREE_MARKERS
                    } else {
                        &CONTRADICT_MARKERS
                    };
                    assert!(gold.text.split(' ').any(|w| markers.contains(&w)));
                }
            }
        }
        let counts: Vec<usize> = Label::ALL
            .iter()
            .map(|l| data.train.iter().filter(|i| i.label == *l).count())
            .collect();
        assert_eq!(counts, [20, 20, 20]);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SyntheticConfig {
            train: 10,
            test: 5,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }
}
