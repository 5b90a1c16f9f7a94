//! Parameterised building blocks shared by the encoder and coherence layers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Register `{name}.w` (`fan_in×fan_out`) and `{name}.b` (`fan_out`).
pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    let std = 1.0 / (fan_in as f64).sqrt();
    store.insert(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))
}

/// `x · W + b` for `x[m×fan_in]`.
pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, dim: usize) -> Result<()> {
    store.insert(format!("{name}.gamma"), Tensor::ones(&[dim]))?;
    store.insert(format!("{name}.beta"), Tensor::zeros(&[dim]))
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &format!("{name}.gamma"))?;
    let beta = g.param(store, &format!("{name}.beta"))?;
    g.layer_norm(x, gamma, beta)
}

pub fn init_attention<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<()> {
    for proj in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{name}.{proj}"), dim, dim, rng)?;
    }
    Ok(())
}

/// Output of [`multi_head_attention`]: the projected result and the
/// per-head attention matrices (`len×len`, rows sum to one).
pub struct Attention {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product self-attention over the rows of `x[len×dim]` with
/// `heads` heads. Keys at positions `>= valid_len` are masked out.
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: Var,
    heads: usize,
    valid_len: Option<usize>,
) -> Result<Attention> {
    let (len, dim) = (g.shape(x)[0], g.shape(x)[1]);
    if heads == 0 || dim % heads != 0 {
        return Err(Error::contract(format!(
            "{name}: head count {heads} must divide width {dim}"
        )));
    }
    let head_dim = dim / heads;
    let q = linear(g, store, &format!("{name}.q"), x)?;
    let k = linear(g, store, &format!("{name}.k"), x)?;
    let v = linear(g, store, &format!("{name}.v"), x)?;
    let mask: Option<Vec<bool>> = valid_len
        .filter(|&n| n < len)
        .map(|n| (0..len * len).map(|idx| idx % len < n).collect());
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = g.cols(q, lo, hi)?;
        let kh = g.cols(k, lo, hi)?;
        let vh = g.cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_masked(scores, 1, mask.as_deref())?;
        outs.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    let out = linear(g, store, &format!("{name}.o"), joined)?;
    Ok(Attention { out, weights })
}

/// Sinusoidal position table `[len×dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("len×dim")
}
