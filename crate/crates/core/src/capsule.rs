//! Evidence capsules routed to class capsules.
//!
//! Evidence capsule `u_i = [a_i; s_i]` has prior `p̂_i = ‖u_i‖`. Each class
//! `j` receives prediction vectors `u_{j|i} = W_j u_i`, and routing-by-agreement
//! couples evidence to classes:
//!
//! ```text
//! b = 0
//! repeat r times:
//!     γ_{ji} = p̂_i · leaky_softmax(b_{·i})_j
//!     o_j    = squash(Σ_i γ_{ji} u_{j|i})
//!     b_{ji} += u_{j|i} · o_j
//! ρ_j = ‖o_j‖
//! ```
//!
//! The leaky softmax appends a zero "orphan" logit to every column and
//! discards its share, so an evidence capsule can withhold mass from all
//! classes. Routing is unrolled on the tape and differentiated through.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Verdict classes. The discriminant is the class-capsule index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Supports = 0,
    Refutes = 1,
    NotEnoughInfo = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Supports, Label::Refutes, Label::NotEnoughInfo];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supports => "SUPPORTS",
            Label::Refutes => "REFUTES",
            Label::NotEnoughInfo => "NOT ENOUGH INFO",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SUPPORTS" => Ok(Label::Supports),
            "REFUTES" => Ok(Label::Refutes),
            "NOT ENOUGH INFO" | "NEI" => Ok(Label::NotEnoughInfo),
            other => Err(Error::contract(format!(
                "unknown label `{other}`; expected one of SUPPORTS, REFUTES, NOT ENOUGH INFO (NEI)"
            ))),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Output of the verifier for one claim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub rho: Vec<f64>,
    /// Per-evidence relevance logit (gold minus non-gold).
    pub evidence_scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapsuleConfig {
    /// Evidence capsule width `d_e = K + d`.
    pub evidence_dim: usize,
    pub classes: usize,
    pub class_dim: usize,
    pub routing_iterations: usize,
    pub margin_pos: f64,
    pub margin_neg: f64,
    pub neg_weight: f64,
}

impl CapsuleConfig {
    pub fn new(evidence_dim: usize) -> Self {
        CapsuleConfig {
            evidence_dim,
            classes: 3,
            class_dim: 10,
            routing_iterations: 3,
            margin_pos: 0.9,
            margin_neg: 0.1,
            neg_weight: 0.5,
        }
    }
}

/// Per-iteration routing state; the last entry is the result.
pub struct Routing {
    /// `M×d_o` class capsules.
    pub o: Var,
    /// `[M]` class lengths.
    pub rho: Var,
    /// `M×N` coupling coefficients of the last iteration.
    pub gamma: Var,
    /// `M×N` logits after the last update.
    pub b: Var,
}

/// `softmax([b; 0])` over classes for every evidence column of `b [M×N]`,
/// with the orphan row dropped.
pub fn leaky_softmax(g: &mut Graph, b: Var) -> Result<Var> {
    let (m, n) = (g.shape(b)[0], g.shape(b)[1]);
    let orphan = g.constant(Tensor::zeros(&[1, n]));
    let ext = g.concat(&[b, orphan], 0)?;
    let sm = g.softmax(ext, 0)?;
    g.rows(sm, 0, m)
}

/// Squash every row of `s`.
pub fn squash(g: &mut Graph, s: Var) -> Result<Var> {
    g.squash_rows(s)
}

/// `u_{j|i} = W_{j,i} u_i` with one matrix per (class, evidence) pair.
/// `u` is `N×d_e`, `w` is `[M, N, d_o, d_e]`; returns `M` tensors of `N×d_o`.
pub fn predict_vectors(g: &mut Graph, u: Var, w: Var) -> Result<Vec<Var>> {
    let (n, de) = (g.shape(u)[0], g.shape(u)[1]);
    let ws = g.shape(w).to_vec();
    if ws.len() != 4 || ws[1] != n || ws[3] != de {
        return Err(Error::Shape {
            op: "predict_vectors",
            left: g.shape(u).to_vec(),
            right: ws,
        });
    }
    let (m, d_o) = (ws[0], ws[2]);
    let flat = g.reshape(w, &[m * n * d_o, de])?;
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let start = (j * n + i) * d_o;
            let wji = g.rows(flat, start, start + d_o)?;
            let ui = g.rows(u, i, i + 1)?;
            let uit = g.transpose(ui)?;
            let pred = g.matmul(wji, uit)?;
            rows.push(g.transpose(pred)?);
        }
        out.push(g.concat(&rows, 0)?);
    }
    Ok(out)
}

/// Routing by agreement over predictions `preds[j]: N×d_o` with priors `[N]`.
pub fn dynamic_routing(g: &mut Graph, preds: &[Var], prior: Var, iterations: usize) -> Result<Routing> {
    if iterations == 0 {
        return Err(Error::contract("routing needs at least one iteration"));
    }
    let m = preds.len();
    let n = g.shape(preds[0])[0];
    let mut b = g.constant(Tensor::zeros(&[m, n]));
    let mut last = None;
    for _ in 0..iterations {
        let c = leaky_softmax(g, b)?;
        let gamma = g.col_scale(c, prior)?;
        let mut sums = Vec::with_capacity(m);
        for (j, &p) in preds.iter().enumerate() {
            let gj = g.rows(gamma, j, j + 1)?;
            sums.push(g.matmul(gj, p)?);
        }
        let s = g.concat(&sums, 0)?;
        let o = g.squash_rows(s)?;
        let mut agree = Vec::with_capacity(m);
        for (j, &p) in preds.iter().enumerate() {
            let oj = g.rows(o, j, j + 1)?;
            let ojt = g.transpose(oj)?;
            let a = g.matmul(p, ojt)?;
            agree.push(g.transpose(a)?);
        }
        let agreement = g.concat(&agree, 0)?;
        b = g.add(b, agreement)?;
        last = Some((o, gamma));
    }
    let (o, gamma) = last.expect("at least one iteration");
    let rho = g.row_norm(o)?;
    Ok(Routing { o, rho, gamma, b })
}

/// Margin loss `Σ_j T_j max(0, m⁺−ρ_j)² + λ(1−T_j) max(0, ρ_j−m⁻)²`.
pub fn capsule_margin_loss(g: &mut Graph, rho: Var, label: usize, config: &CapsuleConfig) -> Result<Var> {
    let m = g.value(rho).len();
    if label >= m {
        return Err(Error::contract(format!("label id {label} out of range for {m} classes")));
    }
    let mut target = vec![0.0; m];
    target[label] = 1.0;
    let pos_w = g.constant(Tensor::vector(target.clone()));
    let neg_w = g.constant(Tensor::vector(
        target.iter().map(|t| config.neg_weight * (1.0 - t)).collect(),
    ));
    let rho = g.reshape(rho, &[m])?;
    let m_pos = g.constant(Tensor::full(&[m], config.margin_pos));
    let m_neg = g.constant(Tensor::full(&[m], config.margin_neg));

    let short = g.sub(m_pos, rho)?;
    let short = g.relu(short);
    let short = g.mul(short, short)?;
    let pos = g.mul(short, pos_w)?;

    let over = g.sub(rho, m_neg)?;
    let over = g.relu(over);
    let over = g.mul(over, over)?;
    let neg = g.mul(over, neg_w)?;

    let total = g.add(pos, neg)?;
    Ok(g.sum(total))
}

/// Mean two-way cross-entropy of `logits [N×2]` against the gold mask.
pub fn evidence_ce_loss(g: &mut Graph, logits: Var, gold_mask: &[bool]) -> Result<Var> {
    let targets: Vec<usize> = gold_mask.iter().map(|&b| b as usize).collect();
    g.cross_entropy(logits, &targets)
}

/// Argmax with ties going to the lowest class index.
pub fn predict_label(rho: &[f64]) -> usize {
    let mut best = 0;
    for (j, &r) in rho.iter().enumerate() {
        if r > rho[best] {
            best = j;
        }
    }
    best
}

pub struct CapsuleOutput {
    /// `N×d_e`.
    pub u: Var,
    pub prior: Var,
    pub preds: Vec<Var>,
    pub routing: Routing,
    /// `N×2` evidence probe logits.
    pub evidence_logits: Var,
}

/// Aggregation layer with class transforms shared across evidence slots.
#[derive(Clone, Debug)]
pub struct CapsuleLayer {
    pub config: CapsuleConfig,
    prefix: String,
}

impl CapsuleLayer {
    pub fn new(config: CapsuleConfig, prefix: impl Into<String>) -> Result<Self> {
        if config.classes < 2 || config.class_dim == 0 || config.routing_iterations == 0 {
            return Err(Error::contract(format!("invalid capsule configuration {config:?}")));
        }
        Ok(CapsuleLayer {
            config,
            prefix: prefix.into(),
        })
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let CapsuleConfig {
            evidence_dim,
            classes,
            class_dim,
            ..
        } = self.config;
        let std = 1.0 / (evidence_dim as f64).sqrt();
        for j in 0..classes {
            store.insert(
                self.name(&format!("w{j}")),
                Tensor::randn(&[evidence_dim, class_dim], std, rng),
            )?;
        }
        nn::init_linear(store, &self.name("probe"), evidence_dim, 2, rng)
    }

    /// `u_{j|i} = W_j u_i` for every class, as `N×d_o` blocks.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Result<Vec<Var>> {
        (0..self.config.classes)
            .map(|j| {
                let w = g.param(store, &self.name(&format!("w{j}")))?;
                g.matmul(u, w)
            })
            .collect()
    }

    /// Build capsules from `A [N×K]` and `S [N×d]`, route, and probe.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, a: Var, s: Var) -> Result<CapsuleOutput> {
        let u = g.concat(&[a, s], 1)?;
        if g.shape(u)[1] != self.config.evidence_dim {
            return Err(Error::Shape {
                op: "evidence capsules",
                left: g.shape(u).to_vec(),
                right: vec![self.config.evidence_dim],
            });
        }
        let prior = g.row_norm(u)?;
        let preds = self.predict(g, store, u)?;
        let routing = dynamic_routing(g, &preds, prior, self.config.routing_iterations)?;
        let evidence_logits = nn::linear(g, store, &self.name("probe"), u)?;
        Ok(CapsuleOutput {
            u,
            prior,
            preds,
            routing,
            evidence_logits,
        })
    }
}
