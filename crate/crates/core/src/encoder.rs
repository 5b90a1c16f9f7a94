//! Semantic encoder over a fully connected evidence graph.
//!
//! Each node is one evidence–claim pair `[CLS] e [SEP] c [SEP]`. A layer runs
//! a pre-norm transformer block inside every node, then lets the `[CLS]` hub
//! of each node attend over the hubs of its neighbours, and finally fuses the
//! local and global hub contexts through a linear map. Non-hub tokens pass
//! through the fusion step unchanged.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Attention};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::topic_model::tokenize;

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Word vocabulary of the encoder's embedding table. Ids 0–3 are reserved
/// for the special tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
}

impl TokenVocab {
    /// Every word seen at least `min_count` times, in lexicographic order.
    pub fn build<S: AsRef<str>>(sentences: &[S], min_count: usize) -> Self {
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        for s in sentences {
            for t in tokenize(s.as_ref()) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let words = counts.into_iter().filter(|(_, n)| *n >= min_count).map(|(t, _)| t);
        Self::from_tokens(SPECIALS.iter().map(|s| s.to_string()).chain(words).collect())
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TokenVocab { tokens, ids }
    }

    /// Rebuild the lookup table after deserialisation.
    pub fn reindex(self) -> Self {
        Self::from_tokens(self.tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= SPECIALS.len()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .map(|t| self.ids.get(t).copied().unwrap_or(UNK))
            .collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Claim–evidence pair nodes with a complete adjacency (self-loops included).
#[derive(Clone, Debug, PartialEq)]
pub struct EvidenceGraph {
    pub nodes: Vec<Vec<usize>>,
    pub adjacency: Vec<Vec<bool>>,
}

impl EvidenceGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().flatten().filter(|&&e| e).count()
    }

    /// Reorder nodes; `order[i]` is the old index of new node `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        EvidenceGraph {
            nodes: order.iter().map(|&i| self.nodes[i].clone()).collect(),
            adjacency: order
                .iter()
                .map(|&i| order.iter().map(|&j| self.adjacency[i][j]).collect())
                .collect(),
        }
    }
}

/// `[CLS] evidence [SEP] claim [SEP]`, truncated to `max_len`.
///
/// Claim tokens are dropped first, down to a quarter of the token budget,
/// then evidence tokens.
pub fn pair_sequence(claim: &[usize], evidence: &[usize], max_len: usize) -> Vec<usize> {
    let budget = max_len.saturating_sub(3);
    let claim_floor = claim.len().min(budget / 4);
    let ev_keep = evidence.len().min(budget - claim_floor);
    let claim_keep = claim.len().min(budget - ev_keep);
    let mut seq = Vec::with_capacity(3 + ev_keep + claim_keep);
    seq.push(CLS);
    seq.extend_from_slice(&evidence[..ev_keep]);
    seq.push(SEP);
    seq.extend_from_slice(&claim[..claim_keep]);
    seq.push(SEP);
    seq
}

pub fn build_graph<S: AsRef<str>>(
    claim: &str,
    evidence: &[S],
    vocab: &TokenVocab,
    max_pair_length: usize,
) -> Result<EvidenceGraph> {
    if evidence.is_empty() {
        return Err(Error::contract("evidence graph needs at least one evidence sentence"));
    }
    if max_pair_length < 4 {
        return Err(Error::contract(format!(
            "max_pair_length {max_pair_length} leaves no room for tokens"
        )));
    }
    let c = vocab.encode(claim);
    let nodes: Vec<Vec<usize>> = evidence
        .iter()
        .map(|e| pair_sequence(&c, &vocab.encode(e.as_ref()), max_pair_length))
        .collect();
    let n = nodes.len();
    Ok(EvidenceGraph {
        nodes,
        adjacency: vec![vec![true; n]; n],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub max_pair_length: usize,
}

/// Attention matrices recorded during one layer.
pub struct LayerTrace {
    /// `[node][head]`.
    pub node_attention: Vec<Vec<Var>>,
    /// `N×N` hub attention.
    pub hop_attention: Var,
}

pub struct Encoded {
    /// `N×d` hub representations after the last layer.
    pub h: Var,
    /// Final per-node token states.
    pub states: Vec<Var>,
    pub layers: Vec<LayerTrace>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    prefix: String,
}

impl Encoder {
    pub fn new(config: EncoderConfig, prefix: impl Into<String>) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::contract("encoder needs at least one layer"));
        }
        if config.heads == 0 || config.d % config.heads != 0 {
            return Err(Error::contract(format!(
                "head count {} must divide d = {}",
                config.heads, config.d
            )));
        }
        Ok(Encoder {
            config,
            prefix: prefix.into(),
        })
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    fn layer_name(&self, layer: usize, rest: &str) -> String {
        format!("{}.layer{layer}.{rest}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let EncoderConfig {
            vocab_size,
            d,
            ffn_dim,
            ..
        } = self.config;
        store.insert(self.name("tok_emb"), Tensor::randn(&[vocab_size, d], 1.0, rng))?;
        for l in 0..self.config.layers {
            nn::init_layer_norm(store, &self.layer_name(l, "ln1"), d)?;
            nn::init_attention(store, &self.layer_name(l, "attn"), d, rng)?;
            nn::init_layer_norm(store, &self.layer_name(l, "ln2"), d)?;
            nn::init_linear(store, &self.layer_name(l, "ffn1"), d, ffn_dim, rng)?;
            nn::init_linear(store, &self.layer_name(l, "ffn2"), ffn_dim, d, rng)?;
            for proj in ["q", "k", "v"] {
                nn::init_linear(store, &self.layer_name(l, &format!("hop.{proj}")), d, d, rng)?;
            }
            // Fusion starts as "keep the local context" plus a random read of
            // the global context.
            let mut fuse = Tensor::randn(&[2 * d, d], 1.0 / (2.0 * d as f64).sqrt(), rng);
            for i in 0..d {
                for j in 0..d {
                    fuse.data_mut()[i * d + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            store.insert(self.layer_name(l, "fuse.w"), fuse)?;
            store.insert(self.layer_name(l, "fuse.b"), Tensor::zeros(&[d]))?;
        }
        Ok(())
    }

    /// Token embeddings plus sinusoidal positions, `[len×d]`.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let table = g.param(store, &self.name("tok_emb"))?;
        let tok = g.gather_rows(table, ids)?;
        let pos = g.constant(nn::sinusoidal_positions(ids.len(), self.config.d));
        g.add(tok, pos)
    }

    /// Pre-norm transformer block applied within one node. Positions at or
    /// beyond `valid_len` are padding and receive no attention.
    pub fn node_transformer(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        layer: usize,
        x: Var,
        valid_len: Option<usize>,
    ) -> Result<(Var, Vec<Var>)> {
        let y = nn::layer_norm(g, store, &self.layer_name(layer, "ln1"), x)?;
        let Attention { out, weights } = nn::multi_head_attention(
            g,
            store,
            &self.layer_name(layer, "attn"),
            y,
            self.config.heads,
            valid_len,
        )?;
        let x1 = g.add(x, out)?;
        let y2 = nn::layer_norm(g, store, &self.layer_name(layer, "ln2"), x1)?;
        let f = nn::linear(g, store, &self.layer_name(layer, "ffn1"), y2)?;
        let f = g.relu(f);
        let f = nn::linear(g, store, &self.layer_name(layer, "ffn2"), f)?;
        Ok((g.add(x1, f)?, weights))
    }

    /// Single-head attention of every hub over the hubs of its neighbours.
    /// `hubs` is `N×d`; returns the `N×d` updates and the `N×N` weights.
    pub fn extra_hop_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        layer: usize,
        hubs: Var,
        adjacency: &[Vec<bool>],
    ) -> Result<(Var, Var)> {
        let n = g.shape(hubs)[0];
        if adjacency.len() != n || adjacency.iter().any(|r| r.len() != n) {
            return Err(Error::Shape {
                op: "extra_hop_attention",
                left: g.shape(hubs).to_vec(),
                right: vec![adjacency.len(), adjacency.first().map_or(0, Vec::len)],
            });
        }
        let q = nn::linear(g, store, &self.layer_name(layer, "hop.q"), hubs)?;
        let k = nn::linear(g, store, &self.layer_name(layer, "hop.k"), hubs)?;
        let v = nn::linear(g, store, &self.layer_name(layer, "hop.v"), hubs)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (self.config.d as f64).sqrt());
        let mask: Vec<bool> = adjacency.iter().flatten().copied().collect();
        let attn = g.softmax_masked(scores, 1, Some(&mask))?;
        Ok((g.matmul(attn, v)?, attn))
    }

    /// Replace each node's hub by `Linear([local; global])`; other tokens
    /// are passed through.
    pub fn fuse_contexts(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        layer: usize,
        states: &[Var],
        hub_updates: Var,
    ) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(states.len());
        for (i, &s) in states.iter().enumerate() {
            let local = g.rows(s, 0, 1)?;
            let global = g.rows(hub_updates, i, i + 1)?;
            let both = g.concat(&[local, global], 1)?;
            let fused = nn::linear(g, store, &self.layer_name(layer, "fuse"), both)?;
            let len = g.shape(s)[0];
            out.push(if len > 1 {
                let rest = g.rows(s, 1, len)?;
                g.concat(&[fused, rest], 0)?
            } else {
                fused
            });
        }
        Ok(out)
    }

    fn hubs(&self, g: &mut Graph, states: &[Var]) -> Result<Var> {
        let rows = states
            .iter()
            .map(|&s| g.rows(s, 0, 1))
            .collect::<Result<Vec<_>>>()?;
        g.concat(&rows, 0)
    }

    /// One full layer over pre-embedded node states.
    pub fn layer(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        layer: usize,
        states: &[Var],
        adjacency: &[Vec<bool>],
    ) -> Result<(Vec<Var>, LayerTrace)> {
        let mut local = Vec::with_capacity(states.len());
        let mut node_attention = Vec::with_capacity(states.len());
        for &x in states {
            let (h, w) = self.node_transformer(g, store, layer, x, None)?;
            local.push(h);
            node_attention.push(w);
        }
        let hubs = self.hubs(g, &local)?;
        let (updates, hop_attention) = self.extra_hop_attention(g, store, layer, hubs, adjacency)?;
        let fused = self.fuse_contexts(g, store, layer, &local, updates)?;
        Ok((
            fused,
            LayerTrace {
                node_attention,
                hop_attention,
            },
        ))
    }

    /// Run all layers and stack the final hub rows into `H [N×d]`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, graph: &EvidenceGraph) -> Result<Encoded> {
        if graph.is_empty() {
            return Err(Error::contract("cannot encode an empty evidence graph"));
        }
        if let Some(node) = graph.nodes.iter().find(|n| n.len() > self.config.max_pair_length) {
            return Err(Error::contract(format!(
                "node of length {} exceeds max_pair_length {}",
                node.len(),
                self.config.max_pair_length
            )));
        }
        let mut states = graph
            .nodes
            .iter()
            .map(|ids| self.embed(g, store, ids))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (next, trace) = self.layer(g, store, l, &states, &graph.adjacency)?;
            states = next;
            layers.push(trace);
        }
        let h = self.hubs(g, &states)?;
        Ok(Encoded { h, states, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> TokenVocab {
        TokenVocab::build(&["the cat sat on the mat", "dogs bark loudly at night"], 1)
    }

    fn toy_encoder(layers: usize, d: usize, heads: usize) -> (Encoder, ParamStore) {
        let v = vocab();
        let enc = Encoder::new(
            EncoderConfig {
                vocab_size: v.len(),
                d,
                heads,
                layers,
                ffn_dim: 2 * d,
                max_pair_length: 130,
            },
            "encoder",
        )
        .unwrap();
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        (enc, store)
    }

    #[test]
    fn complete_graph_with_self_loops() {
        let v = vocab();
        let ev = ["cat", "mat", "dogs", "night", "bark"];
        let g = build_graph("the cat sat", &ev, &v, 130).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.edge_count(), 25);
        assert!((0..5).all(|i| g.adjacency[i][i]));
        assert!(g.nodes.iter().all(|n| n[0] == CLS));

        let single = build_graph("cat", &["mat"], &v, 130).unwrap();
        assert_eq!(single.adjacency, vec![vec![true]]);
        assert!(build_graph::<&str>("cat", &[], &v, 130).is_err());
    }

    #[test]
    fn node_layout_and_unknown_words() {
        let v = vocab();
        let g = build_graph("cat zebra", &["mat"], &v, 130).unwrap();
        let cat = v.encode("cat")[0];
        let mat = v.encode("mat")[0];
        assert_eq!(g.nodes[0], vec![CLS, mat, SEP, cat, UNK, SEP]);
    }

    #[test]
    fn truncation_drops_claim_tokens_first() {
        let claim: Vec<usize> = (100..120).collect();
        let ev: Vec<usize> = (200..210).collect();
        let seq = pair_sequence(&claim, &ev, 23);
        assert_eq!(seq.len(), 23);
        // All 10 evidence tokens kept, claim cut to 10.
        assert_eq!(&seq[1..11], &ev[..]);
        assert_eq!(&seq[12..22], &claim[..10]);

        let long_ev: Vec<usize> = (200..400).collect();
        let seq = pair_sequence(&claim, &long_ev, 130);
        assert_eq!(seq.len(), 130);
        let claim_kept = seq.len() - 3 - seq[1..].iter().position(|&t| t == SEP).unwrap();
        // Claim shorter than the floor (127 / 4) survives whole.
        assert_eq!(claim_kept, 20);
        let long_claim: Vec<usize> = (100..160).collect();
        let seq = pair_sequence(&long_claim, &long_ev, 130);
        let ev_kept = seq[1..].iter().position(|&t| t == SEP).unwrap();
        assert_eq!(seq.len() - 3 - ev_kept, 127 / 4);
    }

    #[test]
    fn max_pair_length_is_enforced() {
        let v = vocab();
        let long = "cat ".repeat(300);
        let g = build_graph(&long, &[long.as_str()], &v, 130).unwrap();
        assert_eq!(g.nodes[0].len(), 130);
    }

    #[test]
    fn default_head_width() {
        let (enc, _) = toy_encoder(1, 100, 5);
        assert_eq!(enc.config.d / enc.config.heads, 20);
        assert!(Encoder::new(
            EncoderConfig {
                heads: 3,
                ..enc.config.clone()
            },
            "e"
        )
        .is_err());
    }

    #[test]
    fn single_token_attention_is_one() {
        let (enc, store) = toy_encoder(1, 8, 2);
        let mut g = Graph::new();
        let x = enc.embed(&mut g, &store, &[CLS]).unwrap();
        let (_, w) = enc.node_transformer(&mut g, &store, 0, x, None).unwrap();
        for head in w {
            assert_eq!(g.value(head).data(), &[1.0]);
        }
    }

    #[test]
    fn single_node_hop_returns_own_value() {
        let (enc, store) = toy_encoder(1, 8, 2);
        let mut g = Graph::new();
        let hubs = g.constant(Tensor::randn(&[1, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(2)));
        let (upd, attn) = enc
            .extra_hop_attention(&mut g, &store, 0, hubs, &[vec![true]])
            .unwrap();
        assert_eq!(g.value(attn).data(), &[1.0]);
        let v = nn::linear(&mut g, &store, "encoder.layer0.hop.v", hubs).unwrap();
        assert!(g.value(upd).max_abs_diff(g.value(v)) < 1e-15);
    }

    #[test]
    fn identical_hubs_attend_uniformly() {
        let (enc, store) = toy_encoder(1, 8, 2);
        let mut g = Graph::new();
        let row = Tensor::randn(&[1, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let hubs = g.constant(Tensor::new(vec![4, 8], row.data().repeat(4)).unwrap());
        let (_, attn) = enc
            .extra_hop_attention(&mut g, &store, 0, hubs, &vec![vec![true; 4]; 4])
            .unwrap();
        for v in g.value(attn).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_fusion_keeps_local_context() {
        let (enc, mut store) = toy_encoder(1, 4, 2);
        let mut w = Tensor::zeros(&[8, 4]);
        for i in 0..4 {
            w.data_mut()[i * 4 + i] = 1.0;
        }
        store.set_value("encoder.layer0.fuse.w", w).unwrap();
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s0 = g.constant(Tensor::randn(&[3, 4], 1.0, &mut rng));
        let s1 = g.constant(Tensor::randn(&[2, 4], 1.0, &mut rng));
        let upd = g.constant(Tensor::randn(&[2, 4], 1.0, &mut rng));
        let out = enc.fuse_contexts(&mut g, &store, 0, &[s0, s1], upd).unwrap();
        for (o, s) in out.iter().zip([s0, s1]) {
            assert_eq!(g.value(*o).data(), g.value(s).data());
        }
    }

    #[test]
    fn output_shape_is_nodes_by_width() {
        let (enc, store) = toy_encoder(2, 8, 2);
        let v = vocab();
        for n in 1..4 {
            let ev: Vec<&str> = ["cat sat", "dogs bark", "mat"][..n].to_vec();
            let graph = build_graph("the cat", &ev, &v, 130).unwrap();
            let mut g = Graph::new();
            let out = enc.encode(&mut g, &store, &graph).unwrap();
            assert_eq!(g.shape(out.h), &[n, 8]);
        }
    }
}
