//! Run configuration, read from TOML. Keys mirror the field names below;
//! missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Topic count.
    #[serde(rename = "K")]
    pub k: usize,
    /// Encoder layers.
    #[serde(rename = "L")]
    pub l_layers: usize,
    pub heads: usize,
    pub d: usize,
    /// Co-attention width.
    pub l: usize,
    pub d_o: usize,
    /// Class capsules; the verifier supports exactly 3.
    #[serde(rename = "M")]
    pub m: usize,
    pub max_pair_length: usize,
    pub evidence_per_claim: usize,
    pub batch_size: usize,
    pub accumulate_steps: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: Option<u64>,
    pub evidence_loss_weight: f64,
    pub margin_pos: f64,
    pub margin_neg: f64,
    pub margin_lambda: f64,
    pub routing_iterations: usize,
    pub lda_iterations: usize,
    pub min_token_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 25,
            l_layers: 3,
            heads: 5,
            d: 100,
            l: 100,
            d_o: 10,
            m: 3,
            max_pair_length: 130,
            evidence_per_claim: 5,
            batch_size: 1,
            accumulate_steps: 8,
            learning_rate: 1e-3,
            epochs: 20,
            seed: None,
            evidence_loss_weight: 1.0,
            margin_pos: 0.9,
            margin_neg: 0.1,
            margin_lambda: 0.5,
            routing_iterations: 3,
            lda_iterations: 200,
            min_token_count: 1,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract(msg));
        if self.m != 3 {
            return bad(format!("M = {} but the verifier has exactly 3 classes", self.m));
        }
        if self.batch_size != 1 {
            return bad(format!("batch_size = {} is unsupported; use accumulate_steps", self.batch_size));
        }
        if self.heads == 0 || self.d % self.heads != 0 || self.k % self.heads != 0 {
            return bad(format!("heads = {} must divide both d = {} and K = {}", self.heads, self.d, self.k));
        }
        if self.k < 2 || self.l_layers == 0 || self.evidence_per_claim == 0 || self.accumulate_steps == 0 {
            return bad("K ≥ 2, L ≥ 1, evidence_per_claim ≥ 1 and accumulate_steps ≥ 1 are required".into());
        }
        if self.routing_iterations == 0 {
            return bad("routing_iterations must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }

    /// The model configuration for a given vocabulary and topic model size.
    pub fn model_config(&self, vocab_size: usize, topic_vocab: usize) -> ModelConfig {
        let mut cfg = ModelConfig::from_shape(&ModelShape {
            vocab_size,
            topics: self.k,
            topic_vocab,
            d: self.d,
            layers: self.l_layers,
            heads: self.heads,
            coattention_dim: self.l,
            class_dim: self.d_o,
            max_pair_length: self.max_pair_length,
        });
        cfg.capsule.routing_iterations = self.routing_iterations;
        cfg.capsule.margin_pos = self.margin_pos;
        cfg.capsule.margin_neg = self.margin_neg;
        cfg.capsule.neg_weight = self.margin_lambda;
        cfg.evidence_loss_weight = self.evidence_loss_weight;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig {
            seed: Some(7),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("K = 6\nL = 2\nheads = 2\nd = 32\n").unwrap();
        assert_eq!((cfg.k, cfg.l_layers, cfg.heads, cfg.d), (6, 2, 2, 32));
        assert_eq!(cfg.accumulate_steps, 8);
        assert_eq!(cfg.evidence_per_claim, 5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("M = 4").is_err());
        assert!(RunConfig::from_toml("K = 24").is_err());
        assert!(RunConfig::from_toml("batch_size = 2").is_err());
    }
}
