//! Minimal reverse-mode autodiff in f64, sized for desk-scale models: a
//! parameter store, an eagerly-evaluated tape with exactly the ops the
//! encoder and pointer models need, Adagrad, central finite differences for
//! gradient audits, and one shared mini-batch training loop.
//!
//! Values are `Vec<f64>`; matrices live only in [`Params`] and enter the tape
//! through `MatVec`/`EmbedMean`. Scalars are length-1 vectors.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major matrix; vectors are `(n, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub type ParamId = usize;

/// Weight initialization.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform in [-r, r].
    Uniform(f64),
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot,
}

/// Named parameter tensors. Ids are dense and follow creation order, so a
/// fixed creation sequence plus a seeded RNG gives identical models.
#[derive(Debug, Clone, Default)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut ChaCha20Rng) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate param {name}");
        let mut t = Tensor::zeros(rows, cols);
        match init {
            Init::Zeros => {}
            Init::Uniform(r) => {
                for v in &mut t.data {
                    *v = rng.gen_range(-r..=r);
                }
            }
            Init::Glorot => {
                let r = (6.0 / (rows + cols) as f64).sqrt();
                for v in &mut t.data {
                    *v = rng.gen_range(-r..=r);
                }
            }
        }
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.names.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> &Tensor {
        self.tensor(self.id(name).unwrap_or_else(|| panic!("no param {name}")))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn ids(&self) -> std::ops::Range<ParamId> {
        0..self.tensors.len()
    }

    /// All entries finite?
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Serializable snapshot of a parameter store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsData {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl From<&Params> for ParamsData {
    fn from(p: &Params) -> Self {
        ParamsData { names: p.names.clone(), tensors: p.tensors.clone() }
    }
}

impl From<ParamsData> for Params {
    fn from(d: ParamsData) -> Self {
        Params { names: d.names, tensors: d.tensors }
    }
}

/// Per-parameter gradient buffers, allocated on first touch.
#[derive(Debug)]
pub struct Grads {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Grads {
    fn new(n: usize) -> Self {
        Grads { bufs: (0..n).map(|_| None).collect() }
    }

    pub fn zeros_like(params: &Params) -> Self {
        Self::new(params.len())
    }

    fn buf(&mut self, params: &Params, id: ParamId) -> &mut Vec<f64> {
        self.bufs[id].get_or_insert_with(|| vec![0.0; params.tensor(id).len()])
    }

    /// Gradient for one parameter; zeros if it was never touched.
    pub fn get(&self, params: &Params, id: ParamId) -> Vec<f64> {
        self.bufs[id].clone().unwrap_or_else(|| vec![0.0; params.tensor(id).len()])
    }

    /// self += other (used for batch accumulation).
    pub fn accumulate(&mut self, params: &Params, other: &Grads) {
        for id in params.ids() {
            if let Some(src) = &other.bufs[id] {
                let dst = self.buf(params, id);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for b in self.bufs.iter_mut().flatten() {
            for v in b.iter_mut() {
                *v *= c;
            }
        }
    }
}

pub type NodeId = usize;

enum Op {
    Const,
    /// Whole tensor, flattened (row-major). Used for vector parameters.
    ParamVec(ParamId),
    /// W x for a parameter matrix W.
    MatVec(ParamId, NodeId),
    /// Mean of the rows of an embedding table selected by `ids`; empty ids
    /// give a zero vector.
    EmbedMean(ParamId, Vec<usize>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Concat(NodeId, NodeId),
    Dot(NodeId, NodeId),
    /// Scalars stacked into a vector.
    Stack(Vec<NodeId>),
    /// sum_j w[j] * items[j]; all items share a width, w has len items.len().
    WeightedSum(Vec<NodeId>, NodeId),
    /// Softmax over entries where mask[i] is true; masked entries output 0.
    SoftmaxMasked(NodeId, Vec<bool>),
    /// Scalar log softmax(x)[pick] over unmasked entries.
    LogSoftmaxPick(NodeId, Vec<bool>, usize),
    /// Scalar x[i].
    Pick(NodeId, usize),
    /// x[start..start+len].
    Slice(NodeId, usize, usize),
}

struct Node {
    op: Op,
    val: Vec<f64>,
}

/// Eagerly-evaluated computation tape over a parameter store.
pub struct Tape<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
}

fn softmax_stable(x: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for (i, &v) in x.iter().enumerate() {
        if mask[i] && v > max {
            max = v;
        }
    }
    let mut out = vec![0.0; x.len()];
    let mut sum = 0.0;
    for (i, &v) in x.iter().enumerate() {
        if mask[i] {
            let e = (v - max).exp();
            out[i] = e;
            sum += e;
        }
    }
    for v in &mut out {
        *v /= sum;
    }
    out
}

fn log_sum_exp(x: &[f64], mask: &[bool]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (i, &v) in x.iter().enumerate() {
        if mask[i] && v > max {
            max = v;
        }
    }
    let sum: f64 = x
        .iter()
        .enumerate()
        .filter(|(i, _)| mask[*i])
        .map(|(_, &v)| (v - max).exp())
        .sum();
    max + sum.ln()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Tape { params, nodes: Vec::new() }
    }

    pub fn val(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].val
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].val.len(), 1);
        self.nodes[id].val[0]
    }

    fn push(&mut self, op: Op, val: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, val });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Op::Const, v)
    }

    pub fn param_vec(&mut self, id: ParamId) -> NodeId {
        let v = self.params.tensor(id).data.clone();
        self.push(Op::ParamVec(id), v)
    }

    pub fn mat_vec(&mut self, w: ParamId, x: NodeId) -> NodeId {
        let t = self.params.tensor(w);
        let xv = &self.nodes[x].val;
        assert_eq!(t.cols, xv.len(), "matvec shape mismatch for {}", self.params.name(w));
        let mut out = vec![0.0; t.rows];
        for r in 0..t.rows {
            let row = &t.data[r * t.cols..(r + 1) * t.cols];
            out[r] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        self.push(Op::MatVec(w, x), out)
    }

    pub fn embed_mean(&mut self, table: ParamId, ids: Vec<usize>) -> NodeId {
        let t = self.params.tensor(table);
        let mut out = vec![0.0; t.cols];
        if !ids.is_empty() {
            for &i in &ids {
                let row = &t.data[i * t.cols..(i + 1) * t.cols];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            let inv = 1.0 / ids.len() as f64;
            for o in &mut out {
                *o *= inv;
            }
        }
        self.push(Op::EmbedMean(table, ids), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v: Vec<f64> =
            self.nodes[a].val.iter().zip(&self.nodes[b].val).map(|(x, y)| x + y).collect();
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v: Vec<f64> =
            self.nodes[a].val.iter().zip(&self.nodes[b].val).map(|(x, y)| x - y).collect();
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v: Vec<f64> =
            self.nodes[a].val.iter().zip(&self.nodes[b].val).map(|(x, y)| x * y).collect();
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a].val.iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a].val.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a].val.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.nodes[a].val.clone();
        v.extend_from_slice(&self.nodes[b].val);
        self.push(Op::Concat(a, b), v)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v: f64 = self.nodes[a].val.iter().zip(&self.nodes[b].val).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), vec![v])
    }

    pub fn stack(&mut self, items: Vec<NodeId>) -> NodeId {
        let v: Vec<f64> = items.iter().map(|&i| self.scalar(i)).collect();
        self.push(Op::Stack(items), v)
    }

    pub fn weighted_sum(&mut self, items: Vec<NodeId>, weights: NodeId) -> NodeId {
        let w = self.nodes[weights].val.clone();
        assert_eq!(w.len(), items.len());
        let width = self.nodes[items[0]].val.len();
        let mut out = vec![0.0; width];
        for (j, &item) in items.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&self.nodes[item].val) {
                *o += w[j] * v;
            }
        }
        self.push(Op::WeightedSum(items, weights), out)
    }

    pub fn softmax_masked(&mut self, x: NodeId, mask: Vec<bool>) -> NodeId {
        let v = softmax_stable(&self.nodes[x].val, &mask);
        self.push(Op::SoftmaxMasked(x, mask), v)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let mask = vec![true; self.nodes[x].val.len()];
        self.softmax_masked(x, mask)
    }

    pub fn log_softmax_pick(&mut self, x: NodeId, mask: Vec<bool>, pick: usize) -> NodeId {
        assert!(mask[pick], "picked a masked entry");
        let lse = log_sum_exp(&self.nodes[x].val, &mask);
        let v = self.nodes[x].val[pick] - lse;
        self.push(Op::LogSoftmaxPick(x, mask, pick), vec![v])
    }

    pub fn pick(&mut self, x: NodeId, i: usize) -> NodeId {
        let v = self.nodes[x].val[i];
        self.push(Op::Pick(x, i), vec![v])
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[x].val[start..start + len].to_vec();
        self.push(Op::Slice(x, start, len), v)
    }

    /// Reverse pass from a scalar node; returns parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(self.nodes[loss].val.len(), 1, "loss must be scalar");
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.val.len()]).collect();
        adj[loss][0] = 1.0;
        let mut grads = Grads::new(self.params.len());

        for id in (0..=loss).rev() {
            let g = std::mem::take(&mut adj[id]);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            match &self.nodes[id].op {
                Op::Const => {}
                Op::ParamVec(p) => {
                    let buf = grads.buf(self.params, *p);
                    for (b, gv) in buf.iter_mut().zip(&g) {
                        *b += gv;
                    }
                }
                Op::MatVec(w, x) => {
                    let t = self.params.tensor(*w);
                    let xv = self.nodes[*x].val.clone();
                    {
                        let buf = grads.buf(self.params, *w);
                        for r in 0..t.rows {
                            for c in 0..t.cols {
                                buf[r * t.cols + c] += g[r] * xv[c];
                            }
                        }
                    }
                    let gx = &mut adj[*x];
                    for r in 0..t.rows {
                        let row = &t.data[r * t.cols..(r + 1) * t.cols];
                        for (c, w_rc) in row.iter().enumerate() {
                            gx[c] += w_rc * g[r];
                        }
                    }
                }
                Op::EmbedMean(table, ids) => {
                    if !ids.is_empty() {
                        let cols = self.params.tensor(*table).cols;
                        let inv = 1.0 / ids.len() as f64;
                        let buf = grads.buf(self.params, *table);
                        for &i in ids {
                            for (c, gv) in g.iter().enumerate() {
                                buf[i * cols + c] += gv * inv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (x, gv) in adj[*a].iter_mut().zip(&g) {
                        *x += gv;
                    }
                    for (x, gv) in adj[*b].iter_mut().zip(&g) {
                        *x += gv;
                    }
                }
                Op::Sub(a, b) => {
                    for (x, gv) in adj[*a].iter_mut().zip(&g) {
                        *x += gv;
                    }
                    for (x, gv) in adj[*b].iter_mut().zip(&g) {
                        *x -= gv;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv = self.nodes[b].val.clone();
                    for ((x, gv), bvv) in adj[a].iter_mut().zip(&g).zip(&bv) {
                        *x += gv * bvv;
                    }
                    let av = self.nodes[a].val.clone();
                    for ((x, gv), avv) in adj[b].iter_mut().zip(&g).zip(&av) {
                        *x += gv * avv;
                    }
                }
                Op::Scale(a, c) => {
                    for (x, gv) in adj[*a].iter_mut().zip(&g) {
                        *x += gv * c;
                    }
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].val;
                    for ((x, gv), yv) in adj[*a].iter_mut().zip(&g).zip(y) {
                        *x += gv * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].val;
                    for ((x, gv), yv) in adj[*a].iter_mut().zip(&g).zip(y) {
                        *x += gv * yv * (1.0 - yv);
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[*a].val.len();
                    for (x, gv) in adj[*a].iter_mut().zip(&g[..na]) {
                        *x += gv;
                    }
                    for (x, gv) in adj[*b].iter_mut().zip(&g[na..]) {
                        *x += gv;
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let gs = g[0];
                    let bv = self.nodes[b].val.clone();
                    for (x, bvv) in adj[a].iter_mut().zip(&bv) {
                        *x += gs * bvv;
                    }
                    let av = self.nodes[a].val.clone();
                    for (x, avv) in adj[b].iter_mut().zip(&av) {
                        *x += gs * avv;
                    }
                }
                Op::Stack(items) => {
                    for (j, &item) in items.iter().enumerate() {
                        adj[item][0] += g[j];
                    }
                }
                Op::WeightedSum(items, weights) => {
                    let wv = self.nodes[*weights].val.clone();
                    for (j, &item) in items.iter().enumerate() {
                        let iv = self.nodes[item].val.clone();
                        for (x, gv) in adj[item].iter_mut().zip(&g) {
                            *x += wv[j] * gv;
                        }
                        adj[*weights][j] += iv.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                Op::SoftmaxMasked(x, mask) => {
                    let y = &self.nodes[id].val;
                    let dot: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
                    let gx = &mut adj[*x];
                    for i in 0..y.len() {
                        if mask[i] {
                            gx[i] += y[i] * (g[i] - dot);
                        }
                    }
                }
                Op::LogSoftmaxPick(x, mask, pick) => {
                    let gs = g[0];
                    let sm = softmax_stable(&self.nodes[*x].val, mask);
                    let gx = &mut adj[*x];
                    for i in 0..sm.len() {
                        if mask[i] {
                            let delta = if i == *pick { 1.0 } else { 0.0 };
                            gx[i] += gs * (delta - sm[i]);
                        }
                    }
                }
                Op::Pick(x, i) => {
                    adj[*x][*i] += g[0];
                }
                Op::Slice(x, start, len) => {
                    for (i, gv) in g.iter().enumerate().take(*len) {
                        adj[*x][start + i] += gv;
                    }
                }
            }
        }
        grads
    }
}

/// Adagrad: acc += g^2; w -= lr * g / (sqrt(acc) + eps).
#[derive(Debug)]
pub struct Adagrad {
    pub lr: f64,
    eps: f64,
    acc: Vec<Vec<f64>>,
}

impl Adagrad {
    pub fn new(params: &Params, lr: f64) -> Self {
        Adagrad {
            lr,
            eps: 1e-8,
            acc: params.ids().map(|id| vec![0.0; params.tensor(id).len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Grads) {
        for id in 0..self.acc.len() {
            let g = grads.get(params, id);
            let acc = &mut self.acc[id];
            let t = params.tensor_mut(id);
            for i in 0..g.len() {
                acc[i] += g[i] * g[i];
                t.data[i] -= self.lr * g[i] / (acc[i].sqrt() + self.eps);
            }
        }
    }
}

/// Plain (tape-free) matrix-vector product for inference paths.
pub fn matvec(t: &Tensor, x: &[f64]) -> Vec<f64> {
    assert_eq!(t.cols, x.len());
    let mut out = vec![0.0; t.rows];
    for r in 0..t.rows {
        let row = &t.data[r * t.cols..(r + 1) * t.cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    out
}

/// Plain softmax with mask; masked entries get probability 0.
pub fn masked_softmax(x: &[f64], mask: &[bool]) -> Vec<f64> {
    softmax_stable(x, mask)
}

/// Central finite difference of `f` with respect to one parameter scalar,
/// with step 1e-5 * max(1, |w|).
pub fn finite_diff<F: FnMut(&Params) -> f64>(
    params: &mut Params,
    mut f: F,
    id: ParamId,
    idx: usize,
) -> f64 {
    let w0 = params.tensor(id).data[idx];
    let h = 1e-5 * w0.abs().max(1.0);
    params.tensor_mut(id).data[idx] = w0 + h;
    let fp = f(params);
    params.tensor_mut(id).data[idx] = w0 - h;
    let fm = f(params);
    params.tensor_mut(id).data[idx] = w0;
    (fp - fm) / (2.0 * h)
}

/// Relative error with a 1e-4 floor on the denominator so near-zero pairs
/// compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Max relative error between analytic gradients and finite differences over
/// every scalar of every parameter.
pub fn check_gradients<F: FnMut(&Params) -> f64>(
    params: &mut Params,
    mut f: F,
    grads: &Grads,
) -> f64 {
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        let analytic = grads.get(params, id);
        for idx in 0..analytic.len() {
            let numeric = finite_diff(params, &mut f, id, idx);
            worst = worst.max(rel_err(analytic[idx], numeric));
        }
    }
    worst
}

/// Mini-batch trainer configuration.
#[derive(Debug, Clone)]
pub struct TrainCfg {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Early stopping patience in epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
    /// Fraction of instances held out for validation (0 disables early stop).
    pub val_fraction: f64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        TrainCfg { lr: 0.01, batch: 16, max_epochs: 140, patience: 10, seed: 42, val_fraction: 0.1 }
    }
}

/// Loss curves from a training run.
#[derive(Debug, Clone)]
pub struct TrainStats {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stopped_early: bool,
    /// Instance indices held out for validation (empty when val_fraction = 0).
    pub val_indices: Vec<usize>,
}

/// Shared mini-batch Adagrad loop: instances are opaque, `build_loss` lays a
/// scalar loss for one instance on a fresh tape. The instance list is split
/// 90/10 (seeded) for early stopping; with no validation split the training
/// loss itself is monitored. Diverging (non-finite or absurd) losses abort.
pub fn train<I, F>(params: &mut Params, instances: &[I], mut build_loss: F, cfg: &TrainCfg) -> Result<TrainStats>
where
    F: FnMut(&mut Tape, &Params, &I) -> NodeId,
{
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if instances.is_empty() {
        return Err(Error::Validation("no training instances".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((instances.len() as f64) * cfg.val_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(instances.len() - 1));
    let (val_idx, train_idx) = (val_idx.to_vec(), train_idx.to_vec());

    let mut opt = Adagrad::new(params, cfg.lr);
    let mut stats = TrainStats {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        stopped_early: false,
        val_indices: val_idx.clone(),
    };
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;

    let eval = |params: &Params, idx: &[usize], build_loss: &mut F| -> f64 {
        if idx.is_empty() {
            return f64::NAN;
        }
        let mut total = 0.0;
        for &i in idx {
            let mut tape = Tape::new(params);
            let loss = build_loss(&mut tape, params, &instances[i]);
            total += tape.scalar(loss);
        }
        total / idx.len() as f64
    };

    let mut epoch_order = train_idx.clone();
    for epoch in 0..cfg.max_epochs {
        epoch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in epoch_order.chunks(cfg.batch.max(1)) {
            let mut batch_grads = Grads::zeros_like(params);
            for &i in chunk {
                let mut tape = Tape::new(params);
                let loss = build_loss(&mut tape, params, &instances[i]);
                let l = tape.scalar(loss);
                if !l.is_finite() || l.abs() > 1e15 {
                    return Err(Error::Diverged(format!("loss {l} at epoch {epoch}")));
                }
                epoch_loss += l;
                batch_grads.accumulate(params, &tape.backward(loss));
            }
            batch_grads.scale(1.0 / chunk.len() as f64);
            opt.step(params, &batch_grads);
            if !params.is_finite() {
                return Err(Error::Diverged(format!("non-finite weights at epoch {epoch}")));
            }
        }
        stats.train_loss.push(epoch_loss / epoch_order.len() as f64);

        let monitored = if val_idx.is_empty() {
            *stats.train_loss.last().unwrap()
        } else {
            let v = eval(params, &val_idx, &mut build_loss);
            stats.val_loss.push(v);
            v
        };
        if monitored < best_val - 1e-12 {
            best_val = monitored;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stats.stopped_early = true;
                break;
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// A little network exercising every op, with a scalar loss.
    fn every_op_loss(tape: &mut Tape, p: &Params) -> NodeId {
        let w = p.id("w").unwrap();
        let emb = p.id("emb").unwrap();
        let v = p.id("v").unwrap();

        let x = tape.constant(vec![0.3, -0.7, 0.9]);
        let wx = tape.mat_vec(w, x); // 4
        let e = tape.embed_mean(emb, vec![0, 2]); // 4
        let s = tape.add(wx, e);
        let d = tape.sub(s, wx);
        let m = tape.mul(d, e);
        let sc = tape.scale(m, 0.5);
        let t = tape.tanh(sc);
        let sg = tape.sigmoid(t);
        let pv = tape.param_vec(v); // 4
        let cat = tape.concat(sg, pv); // 8
        let sliced = tape.slice(cat, 1, 6);
        let front = tape.constant(vec![0.1; 6]);
        let dot = tape.dot(sliced, front); // scalar
        let s1 = tape.pick(cat, 1);
        let s2 = tape.pick(cat, 5);
        let stacked = tape.stack(vec![dot, s1, s2]); // 3
        let weights = tape.softmax(stacked);
        let items = vec![sg, pv, e];
        let ws = tape.weighted_sum(items, weights); // 4
        let mask = vec![true, false, true, true];
        let sm = tape.softmax_masked(ws, mask.clone());
        let picked = tape.log_softmax_pick(ws, mask, 2);
        let p0 = tape.pick(sm, 0);
        let partial = tape.add(picked, p0);
        let scaled = tape.scale(partial, -1.0);
        let final_dot = tape.dot(scaled, scaled);
        tape.scale(final_dot, 0.25)
    }

    fn build_params(seed: u64) -> Params {
        let mut r = rng(seed);
        let mut p = Params::new();
        p.add("w", 4, 3, Init::Glorot, &mut r);
        p.add("emb", 5, 4, Init::Uniform(0.4), &mut r);
        p.add("v", 4, 1, Init::Uniform(0.8), &mut r);
        p
    }

    #[test]
    fn gradients_match_finite_differences_for_every_op() {
        for seed in 0..5 {
            let mut p = build_params(seed);
            let mut tape = Tape::new(&p);
            let loss = every_op_loss(&mut tape, &p);
            let grads = tape.backward(loss);
            drop(tape);
            let worst = check_gradients(
                &mut p,
                |p| {
                    let mut t = Tape::new(p);
                    let l = every_op_loss(&mut t, p);
                    t.scalar(l)
                },
                &grads,
            );
            assert!(worst < 1e-4, "seed {seed}: worst rel err {worst}");
        }
    }

    #[test]
    fn softmax_sums_to_one_and_masks() {
        let p = Params::new();
        let mut tape = Tape::new(&p);
        let x = tape.constant(vec![1.0, 2.0, 3.0, 4.0]);
        let sm = tape.softmax_masked(x, vec![true, false, true, true]);
        let v = tape.val(sm);
        assert_eq!(v[1], 0.0);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_pick_matches_ln_of_softmax() {
        let p = Params::new();
        let mut tape = Tape::new(&p);
        let x = tape.constant(vec![0.2, -1.0, 3.0]);
        let mask = vec![true, true, true];
        let sm = tape.softmax_masked(x, mask.clone());
        let lp = tape.log_softmax_pick(x, mask, 2);
        assert!((tape.scalar(lp) - tape.val(sm)[2].ln()).abs() < 1e-12);
    }

    #[test]
    fn embed_mean_of_nothing_is_zero() {
        let mut r = rng(0);
        let mut p = Params::new();
        p.add("emb", 3, 4, Init::Uniform(1.0), &mut r);
        let mut tape = Tape::new(&p);
        let e = tape.embed_mean(0, vec![]);
        assert_eq!(tape.val(e), &[0.0; 4]);
    }

    #[test]
    fn adagrad_first_step_is_signed_lr() {
        // With acc starting at 0, the first update is lr * sign(g) (up to eps).
        let mut r = rng(0);
        let mut p = Params::new();
        p.add("w", 1, 1, Init::Zeros, &mut r);
        let mut opt = Adagrad::new(&p, 0.5);
        let mut g = Grads::zeros_like(&p);
        g.buf(&p, 0)[0] = 3.0;
        opt.step(&mut p, &g);
        assert!((p.tensor(0).data[0] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn trainer_reduces_loss_and_is_reproducible() {
        // Fit w to minimize (w.x - y)^2 on two instances.
        let make = || {
            let mut r = rng(7);
            let mut p = Params::new();
            p.add("w", 1, 2, Init::Glorot, &mut r);
            p
        };
        let data = vec![(vec![1.0, 0.0], 2.0), (vec![0.0, 1.0], -1.0)];
        let build = |tape: &mut Tape, _p: &Params, inst: &(Vec<f64>, f64)| {
            let x = tape.constant(inst.0.clone());
            let w = tape.mat_vec(0, x);
            let y = tape.constant(vec![inst.1]);
            let d = tape.sub(w, y);
            tape.dot(d, d)
        };
        let cfg = TrainCfg { lr: 0.5, max_epochs: 200, val_fraction: 0.0, patience: 1000, ..Default::default() };
        let mut p1 = make();
        let s1 = train(&mut p1, &data, build, &cfg).unwrap();
        let mut p2 = make();
        let s2 = train(&mut p2, &data, build, &cfg).unwrap();
        assert!(s1.train_loss.last().unwrap() < &1e-3);
        assert_eq!(s1.train_loss, s2.train_loss);
        assert_eq!(p1.tensor(0).data, p2.tensor(0).data);
    }

    #[test]
    fn trainer_flags_divergence() {
        let data = vec![(vec![1.0, 1.0], 1.0)];
        let build = |tape: &mut Tape, _p: &Params, inst: &(Vec<f64>, f64)| {
            let x = tape.constant(inst.0.clone());
            let w = tape.mat_vec(0, x);
            let y = tape.constant(vec![inst.1]);
            let d = tape.sub(w, y);
            let sq = tape.dot(d, d);
            // Exponential blow-up: square again and scale hugely each call.
            let sq2 = tape.dot(sq, sq);
            tape.scale(sq2, 1e280)
        };
        let mut r = rng(0);
        let mut p = Params::new();
        p.add("w", 1, 2, Init::Uniform(10.0), &mut r);
        let cfg = TrainCfg { lr: 1e30, max_epochs: 50, val_fraction: 0.0, ..Default::default() };
        match train(&mut p, &data, build, &cfg) {
            Err(Error::Diverged(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn early_stopping_respects_patience() {
        // Loss independent of the parameter: no improvement, stops after
        // exactly `patience` epochs.
        let data: Vec<u8> = vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        let build = |tape: &mut Tape, _p: &Params, _i: &u8| tape.constant(vec![1.0]);
        let mut r = rng(0);
        let mut p = Params::new();
        p.add("w", 1, 1, Init::Zeros, &mut r);
        let cfg = TrainCfg { max_epochs: 100, patience: 3, val_fraction: 0.1, ..Default::default() };
        let stats = train(&mut p, &data, build, &cfg).unwrap();
        assert!(stats.stopped_early);
        // First epoch sets the best; the next `patience` fail to improve.
        assert_eq!(stats.train_loss.len(), 1 + 3);
    }
}
