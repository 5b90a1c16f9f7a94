//! Taped reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every example: each operation appends a node
//! holding its forward value, so node order is already a topological order and
//! [`Graph::backward`] simply walks the tape in reverse.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{gemm, transpose, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    RowScale(Var, Var),
    ColScale(Var, Var),
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    RowNorm(Var),
    SquashRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradient tape for a single forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Parameter store index → bound leaf.
    bound: HashMap<usize, Var>,
    /// Accumulated gradients of leaves that require them.
    leaf_grads: HashMap<usize, Tensor>,
}

/// `(outer, extent, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matrix(op: &'static str, a: &Tensor, other: &Tensor) -> Result<(usize, usize)> {
    a.dims2().ok_or_else(|| Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: other.shape().to_vec(),
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Add a leaf. Leaves with `requires_grad` receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Bind a named parameter from `store`; repeated binds return the same leaf.
    /// Frozen parameters are bound as constants.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if let Some(&v) = self.bound.get(&idx) {
            return Ok(v);
        }
        let p = store.get_index(idx);
        let v = self.leaf(p.value.clone(), !p.frozen);
        self.bound.insert(idx, v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    /// Gradients of bound parameters as `(store index, grad)`; unreached
    /// parameters are omitted.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &Tensor)> + '_ {
        let mut bound: Vec<_> = self.bound.iter().collect();
        bound.sort_unstable();
        bound
            .into_iter()
            .filter_map(|(&idx, v)| self.leaf_grads.get(&v.0).map(|g| (idx, g)))
    }

    // ---- operations -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = matrix("matmul", av, bv)?;
        let (k2, n) = matrix("matmul", bv, av)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let out = gemm(av.data(), bv.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = matrix("transpose", av, av)?;
        let out = transpose(av.data(), m, n);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), &[a]))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect())
            .expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// `a[m×n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (_, n) = matrix("add_row", av, bv)?;
        if bv.len() != n {
            return Err(Error::Shape {
                op: "add_row",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(x, y)| x + y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    /// Softmax along `axis` with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_masked(x, axis, None)
    }

    /// Softmax along `axis` where `mask[k] == false` removes entry `k` (flat
    /// index into `x`) from its slice; removed entries get weight exactly 0.
    /// A fully masked slice yields zeros.
    pub fn softmax_masked(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                xv.shape()
            )));
        }
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(Error::Shape {
                    op: "softmax_masked",
                    left: xv.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let keep = |k: usize| mask.map_or(true, |m| m[k]);
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mx = (0..n)
                    .filter(|&j| keep(at(j)))
                    .map(|j| src[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    continue;
                }
                let mut z = 0.0;
                for j in 0..n {
                    if keep(at(j)) {
                        let e = (src[at(j)] - mx).exp();
                        out[at(j)] = e;
                        z += e;
                    }
                }
                for j in 0..n {
                    out[at(j)] /= z;
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let w = pv.shape()[axis] * inner;
                out.extend_from_slice(&pv.data()[o * w..(o + 1) * w]);
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    /// `x[..., start..end, ...]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || start >= end || end > xv.shape()[axis] {
            return Err(Error::contract(format!(
                "slice {start}..{end} on axis {axis} out of range for {:?}",
                xv.shape()
            )));
        }
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv.data()[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = end - start;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.slice(x, 0, start, end)
    }

    pub fn cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let last = self.value(x).rank().saturating_sub(1);
        self.slice(x, last, start, end)
    }

    /// Scale row `i` of `x[m×n]` by `v[i]`.
    pub fn row_scale(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.value(x), self.value(v));
        let (m, n) = matrix("row_scale", xv, vv)?;
        if vv.len() != m {
            return Err(Error::Shape {
                op: "row_scale",
                left: xv.shape().to_vec(),
                right: vv.shape().to_vec(),
            });
        }
        let data = (0..m * n).map(|k| xv.data()[k] * vv.data()[k / n]).collect();
        let t = Tensor::new(vec![m, n], data)?;
        Ok(self.push(t, Op::RowScale(x, v), &[x, v]))
    }

    /// Scale column `j` of `x[m×n]` by `v[j]`.
    pub fn col_scale(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.value(x), self.value(v));
        let (m, n) = matrix("col_scale", xv, vv)?;
        if vv.len() != n {
            return Err(Error::Shape {
                op: "col_scale",
                left: xv.shape().to_vec(),
                right: vv.shape().to_vec(),
            });
        }
        let data = (0..m * n).map(|k| xv.data()[k] * vv.data()[k % n]).collect();
        let t = Tensor::new(vec![m, n], data)?;
        Ok(self.push(t, Op::ColScale(x, v), &[x, v]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(t, Op::Mean(x), &[x])
    }

    /// Layer normalisation over the last axis of `x[m×n]` with affine
    /// `gamma[n]`, `beta[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = matrix("layer_norm", xv, gv)?;
        if gv.len() != n || bv.len() != n {
            return Err(Error::Shape {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv.data()[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mu) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Euclidean norm of each row of `x[m×n]`, shape `[m]`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, n) = matrix("row_norm", xv, xv)?;
        let data = xv
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::vector(data);
        Ok(self.push(t, Op::RowNorm(x), &[x]))
    }

    /// Capsule squashing `g(s) = ‖s‖²/(1+‖s‖²) · s/‖s‖` applied to every row.
    pub fn squash_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, n) = matrix("squash_rows", xv, xv)?;
        let mut out = Vec::with_capacity(xv.len());
        for r in xv.data().chunks(n) {
            let n2: f64 = r.iter().map(|v| v * v).sum();
            let f = n2.sqrt() / (1.0 + n2);
            out.extend(r.iter().map(|v| v * f));
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(t, Op::SquashRows(x), &[x]))
    }

    /// Mean softmax cross-entropy of `logits[m×c]` against class `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (m, c) = matrix("cross_entropy", lv, lv)?;
        if targets.len() != m || targets.iter().any(|&t| t >= c) {
            return Err(Error::contract(format!(
                "cross_entropy targets {targets:?} invalid for logits {:?}",
                lv.shape()
            )));
        }
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for i in 0..m {
            let row = &lv.data()[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - mx).exp() / z;
            }
            loss += mx + z.ln() - row[targets[i]];
        }
        let t = Tensor::scalar(loss / m as f64);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Rows `ids` of `table[v×d]`, shape `[ids.len()×d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = matrix("gather_rows", tv, tv)?;
        if ids.is_empty() {
            return Err(Error::contract("gather_rows with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::contract(format!("row id {bad} out of range for table of {v} rows")));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulate `∂root/∂leaf` into every reachable leaf that requires grad.
    /// Calling twice without [`Graph::zero_grads`] sums the contributions.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match self.leaf_grads.get_mut(&idx) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        self.leaf_grads.insert(idx, g);
                    }
                }
                continue;
            }
            for (input, contribution) in self.local_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.clear();
    }

    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(val(v).shape().to_vec(), data).expect("gradient shape matches input")
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let n = val(*b).dims2().unwrap().1;
                let bt = transpose(val(*b).data(), k, n);
                let at = transpose(val(*a).data(), m, k);
                vec![
                    (*a, like(*a, gemm(gd, &bt, m, n, k))),
                    (*b, like(*b, gemm(&at, gd, k, m, n))),
                ]
            }
            Op::Transpose(a) => {
                let (m, n) = val(*a).dims2().unwrap();
                vec![(*a, like(*a, transpose(gd, n, m)))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, like(*b, gd.iter().map(|x| -x).collect()))],
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                vec![
                    (*a, like(*a, gd.iter().zip(bv).map(|(g, y)| g * y).collect())),
                    (*b, like(*b, gd.iter().zip(av).map(|(g, x)| g * x).collect())),
                ]
            }
            Op::AddRow(a, b) => {
                let n = val(*b).len();
                let mut gb = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                vec![(*a, g.clone()), (*b, like(*b, gb))]
            }
            Op::Scale(a, c) => vec![(*a, like(*a, gd.iter().map(|x| x * c).collect()))],
            Op::Tanh(a) => {
                let y = node.value.data();
                vec![(*a, like(*a, gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()))]
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                vec![(*a, like(*a, gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect()))]
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let dot: f64 = (0..n).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let w = val(p).shape()[*axis];
                        let mut out = Vec::with_capacity(outer * w * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            out.extend_from_slice(&gd[base..base + w * inner]);
                        }
                        offset += w;
                        (p, like(p, out))
                    })
                    .collect()
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(val(*x).shape(), *axis);
                let w = node.value.shape()[*axis];
                let mut dx = vec![0.0; val(*x).len()];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    dx[dst..dst + w * inner].copy_from_slice(&gd[o * w * inner..(o + 1) * w * inner]);
                }
                vec![(*x, like(*x, dx))]
            }
            Op::RowScale(x, v) => {
                let (xv, vv) = (val(*x).data(), val(*v).data());
                let n = node.value.shape()[1];
                let dx = (0..gd.len()).map(|k| gd[k] * vv[k / n]).collect();
                let mut dv = vec![0.0; vv.len()];
                for k in 0..gd.len() {
                    dv[k / n] += gd[k] * xv[k];
                }
                vec![(*x, like(*x, dx)), (*v, like(*v, dv))]
            }
            Op::ColScale(x, v) => {
                let (xv, vv) = (val(*x).data(), val(*v).data());
                let n = node.value.shape()[1];
                let dx = (0..gd.len()).map(|k| gd[k] * vv[k % n]).collect();
                let mut dv = vec![0.0; vv.len()];
                for k in 0..gd.len() {
                    dv[k % n] += gd[k] * xv[k];
                }
                vec![(*x, like(*x, dx)), (*v, like(*v, dv))]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), gd[0]))],
            Op::Mean(x) => {
                let xv = val(*x);
                vec![(*x, Tensor::full(xv.shape(), gd[0] / xv.len() as f64))]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = val(*gamma).data();
                let n = gam.len();
                let m = xhat.len() / n;
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let (gr, hr) = (&gd[r.clone()], &xhat[r.clone()]);
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..n {
                        let dh = gr[j] * gam[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gam[j];
                        dx[i * n + j] =
                            inv_std[i] / n as f64 * (n as f64 * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                vec![(*x, like(*x, dx)), (*gamma, like(*gamma, dgamma)), (*beta, like(*beta, dbeta))]
            }
            Op::RowNorm(x) => {
                let xv = val(*x);
                let n = xv.shape()[1];
                let norms = node.value.data();
                let dx = (0..xv.len())
                    .map(|k| {
                        let r = norms[k / n];
                        if r > 0.0 {
                            gd[k / n] * xv.data()[k] / r
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(*x, like(*x, dx))]
            }
            Op::SquashRows(x) => {
                let xv = val(*x);
                let n = xv.shape()[1];
                let mut dx = vec![0.0; xv.len()];
                for (i, s) in xv.data().chunks(n).enumerate() {
                    let gr = &gd[i * n..(i + 1) * n];
                    let n2: f64 = s.iter().map(|v| v * v).sum();
                    if n2 == 0.0 {
                        continue;
                    }
                    let r = n2.sqrt();
                    let f = r / (1.0 + n2);
                    let sg: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let c = sg * (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * r);
                    for j in 0..n {
                        dx[i * n + j] = f * gr[j] + c * s[j];
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let m = targets.len();
                let c = probs.len() / m;
                let mut dx = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * c + t] -= 1.0;
                }
                dx.iter_mut().for_each(|v| *v *= gd[0] / m as f64);
                vec![(*logits, like(*logits, dx))]
            }
            Op::Gather { table, ids } => {
                let tv = val(*table);
                let d = tv.shape()[1];
                let mut dt = vec![0.0; tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += gd[r * d + j];
                    }
                }
                vec![(*table, like(*table, dt))]
            }
            Op::Reshape(x) => vec![(*x, like(*x, gd.to_vec()))],
        }
    }
}
