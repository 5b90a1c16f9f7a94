//! Topic coherence among evidence and topic-aware evidence weighting.
//!
//! Three pieces:
//! - multi-head self-attention over the evidence topic vectors (no positions),
//! - claim–evidence topic co-attention producing weights `α` and `A = α ⊙ t̂_e`,
//! - semantic–topic co-attention between `H` and the topic-word matrix `P`,
//!   producing weights `β` and `S = β ⊙ H`.
//!
//! `⊙` scales evidence row `i` by the scalar weight of evidence `i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Attention};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceConfig {
    /// Topic count `K`.
    pub topics: usize,
    /// Semantic width `d`.
    pub d: usize,
    /// Co-attention width `l`.
    pub l: usize,
    /// Heads of the topic self-attention; must divide `topics`.
    pub heads: usize,
    /// Topic-model vocabulary size `V`.
    pub vocab_size: usize,
}

pub struct CoherenceOutput {
    /// `N×K` evidence topics after self-attention.
    pub t_hat: Var,
    pub topic_attention: Vec<Var>,
    /// `[N]` claim–evidence topic weights.
    pub alpha: Var,
    /// `N×K`.
    pub a: Var,
    /// `[N]` semantic–topic weights.
    pub beta: Var,
    /// `N×d`.
    pub s: Var,
}

#[derive(Clone, Debug)]
pub struct Coherence {
    pub config: CoherenceConfig,
    prefix: String,
}

impl Coherence {
    pub fn new(config: CoherenceConfig, prefix: impl Into<String>) -> Result<Self> {
        if config.heads == 0 || config.topics % config.heads != 0 {
            return Err(Error::contract(format!(
                "topic attention heads {} must divide K = {}",
                config.heads, config.topics
            )));
        }
        Ok(Coherence {
            config,
            prefix: prefix.into(),
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let CoherenceConfig {
            topics: k,
            d,
            l,
            vocab_size: v,
            ..
        } = self.config;
        nn::init_attention(store, &self.name("topic_attn"), k, rng)?;
        let mut mat = |name: &str, rows: usize, cols: usize, store: &mut ParamStore| {
            let std = 1.0 / (cols as f64).sqrt();
            store.insert(self.name(name), Tensor::randn(&[rows, cols], std, rng))
        };
        mat("w_l", k, k, store)?;
        mat("w_e", l, k, store)?;
        mat("w_c", l, k, store)?;
        mat("w", 1, l, store)?;
        mat("sem.w_g", v, d, store)?;
        mat("sem.w_e", l, d, store)?;
        mat("sem.w_c", l, v, store)?;
        mat("sem.w", 1, l, store)?;
        Ok(())
    }

    /// Self-attention over the `N×K` evidence topic vectors.
    pub fn topic_self_attention(&self, g: &mut Graph, store: &ParamStore, t_e: Var) -> Result<(Var, Vec<Var>)> {
        let Attention { out, weights } =
            nn::multi_head_attention(g, store, &self.name("topic_attn"), t_e, self.config.heads, None)?;
        Ok((out, weights))
    }

    /// `F = tanh(t_c W_l t_eᵀ)`, `Hᵉ = tanh(W_e t_eᵀ + (W_c t_cᵀ) F)`,
    /// `α = softmax(w Hᵉ)`. Returns `α` with shape `[N]`.
    pub fn coattention_alpha(&self, g: &mut Graph, store: &ParamStore, t_c: Var, t_e: Var) -> Result<Var> {
        let n = g.shape(t_e)[0];
        let w_l = g.param(store, &self.name("w_l"))?;
        let w_e = g.param(store, &self.name("w_e"))?;
        let w_c = g.param(store, &self.name("w_c"))?;
        let w = g.param(store, &self.name("w"))?;

        let t_e_t = g.transpose(t_e)?;
        let t_c_t = g.transpose(t_c)?;
        let proximity = g.matmul(t_c, w_l)?;
        let proximity = g.matmul(proximity, t_e_t)?;
        let f = g.tanh(proximity);

        let ev = g.matmul(w_e, t_e_t)?;
        let cl = g.matmul(w_c, t_c_t)?;
        let cl = g.matmul(cl, f)?;
        let he = g.add(ev, cl)?;
        let he = g.tanh(he);

        let logits = g.matmul(w, he)?;
        let alpha = g.softmax(logits, 1)?;
        g.reshape(alpha, &[n])
    }

    /// `A = α ⊙ t̂_e`: row `i` of `t̂_e` scaled by `α_i`.
    pub fn weight_topics(&self, g: &mut Graph, alpha: Var, t_hat: Var) -> Result<Var> {
        g.row_scale(t_hat, alpha)
    }

    /// Co-attention between `H [N×d]` and the constant `P [K×V]`:
    /// `F = tanh(P W_g Hᵀ)` (K×N), `Hᵉ = tanh(W'_e Hᵀ + (1/K)(W'_c Pᵀ) F)`,
    /// `β = softmax(w' Hᵉ)`, `S = β ⊙ H`.
    pub fn semantic_topic_coattention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: Var,
        p: Var,
    ) -> Result<(Var, Var)> {
        let n = g.shape(h)[0];
        let k = g.shape(p)[0];
        let w_g = g.param(store, &self.name("sem.w_g"))?;
        let w_e = g.param(store, &self.name("sem.w_e"))?;
        let w_c = g.param(store, &self.name("sem.w_c"))?;
        let w = g.param(store, &self.name("sem.w"))?;

        let h_t = g.transpose(h)?;
        let p_t = g.transpose(p)?;
        let proximity = g.matmul(p, w_g)?;
        let proximity = g.matmul(proximity, h_t)?;
        let f = g.tanh(proximity);

        let ev = g.matmul(w_e, h_t)?;
        let topics = g.matmul(w_c, p_t)?;
        let topics = g.matmul(topics, f)?;
        let topics = g.scale(topics, 1.0 / k as f64);
        let he = g.add(ev, topics)?;
        let he = g.tanh(he);

        let logits = g.matmul(w, he)?;
        let beta = g.softmax(logits, 1)?;
        let beta = g.reshape(beta, &[n])?;
        let s = g.row_scale(h, beta)?;
        Ok((beta, s))
    }

    /// The whole layer for one claim.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        t_c: Var,
        t_e: Var,
        h: Var,
        p: Var,
    ) -> Result<CoherenceOutput> {
        let (t_hat, topic_attention) = self.topic_self_attention(g, store, t_e)?;
        let alpha = self.coattention_alpha(g, store, t_c, t_e)?;
        let a = self.weight_topics(g, alpha, t_hat)?;
        let (beta, s) = self.semantic_topic_coattention(g, store, h, p)?;
        Ok(CoherenceOutput {
            t_hat,
            topic_attention,
            alpha,
            a,
            beta,
            s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(k: usize, d: usize, l: usize, v: usize) -> (Coherence, ParamStore) {
        let c = Coherence::new(
            CoherenceConfig {
                topics: k,
                d,
                l,
                heads: 1,
                vocab_size: v,
            },
            "coherence",
        )
        .unwrap();
        let mut s = ParamStore::new();
        c.init(&mut s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (c, s)
    }

    fn simplex_rows(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::uniform(&[n, k], 0.01, 1.0, rng);
        for r in t.data_mut().chunks_mut(k) {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|x| *x /= s);
        }
        t
    }

    #[test]
    fn heads_must_divide_topics() {
        let cfg = CoherenceConfig {
            topics: 25,
            d: 8,
            l: 100,
            heads: 5,
            vocab_size: 10,
        };
        assert!(Coherence::new(cfg.clone(), "c").is_ok());
        assert!(Coherence::new(CoherenceConfig { topics: 24, ..cfg }, "c").is_err());
    }

    #[test]
    fn alpha_is_a_distribution() {
        let (c, s) = layer(4, 6, 5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let tc = g.constant(simplex_rows(1, 4, &mut rng));
        let te = g.constant(simplex_rows(3, 4, &mut rng));
        let alpha = c.coattention_alpha(&mut g, &s, tc, te).unwrap();
        let a = g.value(alpha).data();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|&x| x > 0.0));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_parameters_give_uniform_weights() {
        let (c, mut s) = layer(4, 6, 5, 7);
        s.zero_and_freeze("coherence.");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let tc = g.constant(simplex_rows(1, 4, &mut rng));
        let te = g.constant(simplex_rows(3, 4, &mut rng));
        let h = g.constant(Tensor::randn(&[3, 6], 1.0, &mut rng));
        let p = g.constant(simplex_rows(4, 7, &mut rng));
        let out = c.forward(&mut g, &s, tc, te, h, p).unwrap();
        for v in g.value(out.alpha).data().iter().chain(g.value(out.beta).data()) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(g.value(out.a).data().iter().all(|&x| x == 0.0));
        let hv = g.value(h).clone();
        for (sv, hv) in g.value(out.s).data().iter().zip(hv.data()) {
            assert!((sv - hv / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_topics_one_hot_and_uniform() {
        let (c, _) = layer(2, 2, 2, 2);
        let mut g = Graph::new();
        let t = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let one_hot = g.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let a = c.weight_topics(&mut g, one_hot, t).unwrap();
        assert_eq!(g.value(a).data(), &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
        let uniform = g.constant(Tensor::vector(vec![1.0 / 3.0; 3]));
        let a = c.weight_topics(&mut g, uniform, t).unwrap();
        for (x, y) in g.value(a).data().iter().zip([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) {
            assert!((x - y / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_evidence_attention_is_one() {
        let (c, s) = layer(4, 2, 2, 2);
        let mut g = Graph::new();
        let te = g.constant(simplex_rows(1, 4, &mut ChaCha8Rng::seed_from_u64(9)));
        let (_, w) = c.topic_self_attention(&mut g, &s, te).unwrap();
        assert_eq!(g.value(w[0]).data(), &[1.0]);
    }
}
