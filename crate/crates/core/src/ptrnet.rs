//! The pointer network shared by document ranking and sentence selection: an
//! LSTM decoder over a memory of pair embeddings, a q-hop glimpse readout,
//! a two-layer selection head, teacher-forced training, and beam-search
//! inference.
//!
//! Two numeric paths exist: tape-based (training, differentiable) and plain
//! f64 (inference). Both implement the same arithmetic; `beam_search` and the
//! exhaustive tests share the plain `select_probs` path so their scores are
//! bit-identical.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{self, Init, NodeId, Params, ParamsData, Tape, TrainCfg, TrainStats};
use crate::{Error, Result};

/// Model widths: memory/input width `e`, decoder & attention width `h`,
/// glimpse hops `q`. The glimpse feeds its own output back as the next hop's
/// state, so the attention width must equal the decoder width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtrDims {
    pub e: usize,
    pub h: usize,
    pub q: usize,
}

/// Decoder recurrent state (LSTM hidden + cell).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Glimpse readout: final vector after q hops plus each hop's attention.
#[derive(Debug, Clone)]
pub struct GlimpseOut {
    pub h: Vec<f64>,
    pub hop_weights: Vec<Vec<f64>>,
}

/// Pointer network parameters plus dimensions.
#[derive(Debug, Clone)]
pub struct PointerModel {
    pub params: Params,
    pub dims: PtrDims,
}

/// Serializable pointer model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointerModelData {
    pub dims: PtrDims,
    pub params: ParamsData,
}

impl PointerModel {
    /// Fixed parameter creation order; a given (dims, seed) pair always
    /// produces the same model.
    pub fn new(dims: PtrDims, seed: u64) -> Self {
        let PtrDims { e, h, q } = dims;
        assert!(e >= 1 && h >= 1 && q >= 1);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut p = Params::new();
        p.add("lstm.wx", 4 * h, e, Init::Glorot, &mut rng);
        p.add("lstm.wh", 4 * h, h, Init::Glorot, &mut rng);
        p.add("lstm.b", 4 * h, 1, Init::Zeros, &mut rng);
        p.add("dec.h0", h, 1, Init::Uniform(0.1), &mut rng);
        p.add("dec.c0", h, 1, Init::Uniform(0.1), &mut rng);
        p.add("dec.start", e, 1, Init::Uniform(0.1), &mut rng);
        p.add("glimpse.wg", h, e, Init::Glorot, &mut rng);
        p.add("glimpse.wa", h, h, Init::Glorot, &mut rng);
        p.add("glimpse.v", h, 1, Init::Glorot, &mut rng);
        p.add("sel.w1", h, e + h, Init::Glorot, &mut rng);
        p.add("sel.b1", h, 1, Init::Zeros, &mut rng);
        p.add("sel.w2", h, 1, Init::Glorot, &mut rng);
        p.add("label.w1", h, h, Init::Glorot, &mut rng);
        p.add("label.w2", 3, h, Init::Glorot, &mut rng);
        PointerModel { params: p, dims }
    }

    pub fn to_data(&self) -> PointerModelData {
        PointerModelData { dims: self.dims, params: (&self.params).into() }
    }

    pub fn from_data(d: PointerModelData) -> Self {
        PointerModel { params: d.params.into(), dims: d.dims }
    }

    /// Learned initial decoder state.
    pub fn initial_state(&self) -> DecoderState {
        initial_state(&self.params)
    }

    /// Learned start-of-sequence input.
    pub fn start_input(&self) -> Vec<f64> {
        start_input(&self.params)
    }

    /// One LSTM step (gates ordered i, f, g, o).
    pub fn decoder_step(&self, state: &DecoderState, input: &[f64]) -> DecoderState {
        decoder_step(&self.params, self.dims, state, input)
    }

    /// W_g m_j for every memory, computed once per claim.
    pub fn project_memories(&self, memories: &[Vec<f64>]) -> Vec<Vec<f64>> {
        project_memories(&self.params, memories)
    }

    /// q-hop glimpse readout over projected memories, starting from z.
    pub fn glimpse_projected(&self, wgm: &[Vec<f64>], z: &[f64]) -> GlimpseOut {
        glimpse_projected(&self.params, self.dims, wgm, z)
    }

    /// Glimpse from raw memories (projects them first).
    pub fn glimpse(&self, memories: &[Vec<f64>], z: &[f64]) -> GlimpseOut {
        self.glimpse_projected(&self.project_memories(memories), z)
    }

    /// Label distribution: softmax(W_l2 tanh(W_l1 h_q)).
    pub fn label_dist(&self, hq: &[f64]) -> [f64; 3] {
        label_dist(&self.params, hq)
    }
}

// ---- Plain (inference) path ------------------------------------------------
//
// Free functions over a borrowed parameter store, so rollout code inside a
// training closure (which only sees &Params) shares the exact arithmetic of
// beam search and the tests.

pub fn initial_state(params: &Params) -> DecoderState {
    DecoderState {
        h: params.by_name("dec.h0").data.clone(),
        c: params.by_name("dec.c0").data.clone(),
    }
}

pub fn start_input(params: &Params) -> Vec<f64> {
    params.by_name("dec.start").data.clone()
}

pub fn decoder_step(
    params: &Params,
    dims: PtrDims,
    state: &DecoderState,
    input: &[f64],
) -> DecoderState {
    let h = dims.h;
    let wx = nn::matvec(params.by_name("lstm.wx"), input);
    let wh = nn::matvec(params.by_name("lstm.wh"), &state.h);
    let b = &params.by_name("lstm.b").data;
    let pre: Vec<f64> = wx.iter().zip(&wh).zip(b).map(|((a, b2), c)| a + b2 + c).collect();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut c = vec![0.0; h];
    let mut hh = vec![0.0; h];
    for j in 0..h {
        let i_g = sig(pre[j]);
        let f_g = sig(pre[h + j]);
        let g_g = pre[2 * h + j].tanh();
        let o_g = sig(pre[3 * h + j]);
        c[j] = f_g * state.c[j] + i_g * g_g;
        hh[j] = o_g * c[j].tanh();
    }
    DecoderState { h: hh, c }
}

pub fn project_memories(params: &Params, memories: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let wg = params.by_name("glimpse.wg");
    memories.iter().map(|m| nn::matvec(wg, m)).collect()
}

pub fn glimpse_projected(params: &Params, dims: PtrDims, wgm: &[Vec<f64>], z: &[f64]) -> GlimpseOut {
    let wa = params.by_name("glimpse.wa");
    let v = &params.by_name("glimpse.v").data;
    let mask = vec![true; wgm.len()];
    let mut h = z.to_vec();
    let mut hop_weights = Vec::with_capacity(dims.q);
    for _ in 0..dims.q {
        let wah = nn::matvec(wa, &h);
        let scores: Vec<f64> = wgm
            .iter()
            .map(|wm| wm.iter().zip(&wah).zip(v).map(|((a, b), vv)| (a + b).tanh() * vv).sum())
            .collect();
        let alpha = nn::masked_softmax(&scores, &mask);
        let mut next = vec![0.0; dims.h];
        for (j, wm) in wgm.iter().enumerate() {
            for (n, w) in next.iter_mut().zip(wm) {
                *n += alpha[j] * w;
            }
        }
        hop_weights.push(alpha);
        h = next;
    }
    GlimpseOut { h, hop_weights }
}

/// Selection scores for every memory: w2 . tanh(W1 [m_p ; h_q] + b1).
fn selection_scores(params: &Params, memories: &[Vec<f64>], hq: &[f64]) -> Vec<f64> {
    let w1 = params.by_name("sel.w1");
    let b1 = &params.by_name("sel.b1").data;
    let w2 = &params.by_name("sel.w2").data;
    memories
        .iter()
        .map(|m| {
            let mut cat = m.clone();
            cat.extend_from_slice(hq);
            let pre = nn::matvec(w1, &cat);
            pre.iter().zip(b1).zip(w2).map(|((p, b), w)| (p + b).tanh() * w).sum()
        })
        .collect()
}

/// Label distribution: softmax(W_l2 tanh(W_l1 h_q)). Index order follows
/// [`crate::corpus::RelationLabel::index`].
pub fn label_dist(params: &Params, hq: &[f64]) -> [f64; 3] {
    let w1 = params.by_name("label.w1");
    let w2 = params.by_name("label.w2");
    let hidden: Vec<f64> = nn::matvec(w1, hq).iter().map(|x| x.tanh()).collect();
    let logits = nn::matvec(w2, &hidden);
    let sm = nn::masked_softmax(&logits, &[true, true, true]);
    [sm[0], sm[1], sm[2]]
}

/// Distribution over unselected memories given the glimpse readout; selected
/// entries get probability 0 and never reappear in the support.
pub fn select_probs(
    params: &Params,
    memories: &[Vec<f64>],
    hq: &[f64],
    selected: &[bool],
) -> Result<Vec<f64>> {
    if selected.iter().all(|&s| s) {
        return Err(Error::Validation("all candidates exhausted".into()));
    }
    let scores = selection_scores(params, memories, hq);
    let mask: Vec<bool> = selected.iter().map(|&s| !s).collect();
    Ok(nn::masked_softmax(&scores, &mask))
}

// ---- Tape (training) path ------------------------------------------------
//
// These builders take the live parameter store (the same one the enclosing
// Tape borrows) so training never copies weights; parameters are addressed
// by name, dimensions by the PtrDims the model was built with.

/// Tape-side LSTM step; returns (h, c).
fn lstm_tape(
    tape: &mut Tape,
    params: &Params,
    hdim: usize,
    input: NodeId,
    h: NodeId,
    c: NodeId,
) -> (NodeId, NodeId) {
    let wx = tape.mat_vec(params.id("lstm.wx").unwrap(), input);
    let wh = tape.mat_vec(params.id("lstm.wh").unwrap(), h);
    let b = tape.param_vec(params.id("lstm.b").unwrap());
    let s = tape.add(wx, wh);
    let pre = tape.add(s, b);
    let i_pre = tape.slice(pre, 0, hdim);
    let f_pre = tape.slice(pre, hdim, hdim);
    let g_pre = tape.slice(pre, 2 * hdim, hdim);
    let o_pre = tape.slice(pre, 3 * hdim, hdim);
    let i_g = tape.sigmoid(i_pre);
    let f_g = tape.sigmoid(f_pre);
    let g_g = tape.tanh(g_pre);
    let o_g = tape.sigmoid(o_pre);
    let fc = tape.mul(f_g, c);
    let ig = tape.mul(i_g, g_g);
    let c_new = tape.add(fc, ig);
    let c_tanh = tape.tanh(c_new);
    let h_new = tape.mul(o_g, c_tanh);
    (h_new, c_new)
}

/// Tape-side glimpse over projected memory nodes.
fn glimpse_tape(tape: &mut Tape, params: &Params, q: usize, wgm: &[NodeId], z: NodeId) -> NodeId {
    let wa = params.id("glimpse.wa").unwrap();
    let v = tape.param_vec(params.id("glimpse.v").unwrap());
    let mut h = z;
    for _ in 0..q {
        let wah = tape.mat_vec(wa, h);
        let scores: Vec<NodeId> = wgm
            .iter()
            .map(|&wm| {
                let s = tape.add(wm, wah);
                let t = tape.tanh(s);
                tape.dot(t, v)
            })
            .collect();
        let stacked = tape.stack(scores);
        let alpha = tape.softmax(stacked);
        h = tape.weighted_sum(wgm.to_vec(), alpha);
    }
    h
}

/// Per-claim tape context: memory nodes and their W_g projections, shared
/// across decode steps and glimpse hops.
pub(crate) struct TapeMemories {
    pub mem: Vec<NodeId>,
    pub wgm: Vec<NodeId>,
}

pub(crate) fn tape_memories(tape: &mut Tape, params: &Params, memories: &[Vec<f64>]) -> TapeMemories {
    let wg = params.id("glimpse.wg").unwrap();
    let mem: Vec<NodeId> = memories.iter().map(|m| tape.constant(m.clone())).collect();
    let wgm: Vec<NodeId> = mem.iter().map(|&m| tape.mat_vec(wg, m)).collect();
    TapeMemories { mem, wgm }
}

pub(crate) fn selection_scores_tape(
    tape: &mut Tape,
    params: &Params,
    mems: &TapeMemories,
    hq: NodeId,
) -> NodeId {
    let w1 = params.id("sel.w1").unwrap();
    let b1 = tape.param_vec(params.id("sel.b1").unwrap());
    let w2 = tape.param_vec(params.id("sel.w2").unwrap());
    let scores: Vec<NodeId> = mems
        .mem
        .iter()
        .map(|&m| {
            let cat = tape.concat(m, hq);
            let pre = tape.mat_vec(w1, cat);
            let pre_b = tape.add(pre, b1);
            let t = tape.tanh(pre_b);
            tape.dot(t, w2)
        })
        .collect();
    tape.stack(scores)
}

pub(crate) fn label_logits_tape(tape: &mut Tape, params: &Params, hq: NodeId) -> NodeId {
    let pre = tape.mat_vec(params.id("label.w1").unwrap(), hq);
    let t = tape.tanh(pre);
    tape.mat_vec(params.id("label.w2").unwrap(), t)
}

/// One decode step on the tape: LSTM advance plus glimpse readout.
pub(crate) struct TapeStep {
    pub h: NodeId,
    pub c: NodeId,
    pub hq: NodeId,
}

pub(crate) fn tape_step(
    tape: &mut Tape,
    params: &Params,
    dims: PtrDims,
    mems: &TapeMemories,
    input: NodeId,
    h: NodeId,
    c: NodeId,
) -> TapeStep {
    let (h2, c2) = lstm_tape(tape, params, dims.h, input, h, c);
    let hq = glimpse_tape(tape, params, dims.q, &mems.wgm, h2);
    TapeStep { h: h2, c: c2, hq }
}

/// Teacher-forced pointer loss: mean negative log-probability of the gold
/// index sequence, normalized by the gold length.
pub fn pointer_loss_tape(
    tape: &mut Tape,
    params: &Params,
    dims: PtrDims,
    memories: &[Vec<f64>],
    gold: &[usize],
) -> NodeId {
    assert!(!gold.is_empty(), "pointer loss needs a gold sequence");
    let mems = tape_memories(tape, params, memories);
    let mut h = tape.param_vec(params.id("dec.h0").unwrap());
    let mut c = tape.param_vec(params.id("dec.c0").unwrap());
    let mut input = tape.param_vec(params.id("dec.start").unwrap());
    let mut selected = vec![false; memories.len()];
    let mut terms: Vec<NodeId> = Vec::with_capacity(gold.len());
    for &g in gold {
        let step = tape_step(tape, params, dims, &mems, input, h, c);
        h = step.h;
        c = step.c;
        let scores = selection_scores_tape(tape, params, &mems, step.hq);
        let mask: Vec<bool> = selected.iter().map(|&s| !s).collect();
        terms.push(tape.log_softmax_pick(scores, mask, g));
        selected[g] = true;
        input = mems.mem[g];
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t);
    }
    tape.scale(total, -1.0 / gold.len() as f64)
}

/// Plain value of the teacher-forced pointer loss.
pub fn pointer_loss(params: &Params, dims: PtrDims, memories: &[Vec<f64>], gold: &[usize]) -> f64 {
    let mut tape = Tape::new(params);
    let loss = pointer_loss_tape(&mut tape, params, dims, memories, gold);
    tape.scalar(loss)
}

// ---- Inference -----------------------------------------------------------

/// One decoded hypothesis: selected memory indices, total pointer
/// log-probability, and the per-step label distributions along the path.
#[derive(Debug, Clone)]
pub struct Beam {
    pub indices: Vec<usize>,
    pub logp: f64,
    pub step_labels: Vec<[f64; 3]>,
}

struct Hypothesis {
    state: DecoderState,
    next_input: Vec<f64>,
    indices: Vec<usize>,
    selected: Vec<bool>,
    logp: f64,
    step_labels: Vec<[f64; 3]>,
}

/// Beam search for k selections. Hypotheses are ordered by descending
/// log-probability with lexicographic index-sequence tie-break; with width at
/// least the number of ordered k-selections nothing is ever pruned, making
/// the result equal to exhaustive enumeration.
pub fn beam_search(
    model: &PointerModel,
    memories: &[Vec<f64>],
    k: usize,
    width: usize,
) -> Result<Vec<Beam>> {
    let n = memories.len();
    if k > n {
        return Err(Error::Validation(format!("cannot select k={k} from {n} candidates")));
    }
    if width == 0 {
        return Err(Error::Validation("beam width must be >= 1".into()));
    }
    if k == 0 {
        return Ok(vec![Beam { indices: vec![], logp: 0.0, step_labels: vec![] }]);
    }
    let wgm = model.project_memories(memories);
    let mut hyps = vec![Hypothesis {
        state: model.initial_state(),
        next_input: model.start_input(),
        indices: Vec::new(),
        selected: vec![false; n],
        logp: 0.0,
        step_labels: Vec::new(),
    }];
    for _ in 0..k {
        let mut children: Vec<Hypothesis> = Vec::new();
        for hyp in &hyps {
            let state = model.decoder_step(&hyp.state, &hyp.next_input);
            let glimpse = model.glimpse_projected(&wgm, &state.h);
            let probs = select_probs(&model.params, memories, &glimpse.h, &hyp.selected)?;
            let label = model.label_dist(&glimpse.h);
            for (j, &pr) in probs.iter().enumerate() {
                if hyp.selected[j] {
                    continue;
                }
                let mut indices = hyp.indices.clone();
                indices.push(j);
                let mut selected = hyp.selected.clone();
                selected[j] = true;
                let mut step_labels = hyp.step_labels.clone();
                step_labels.push(label);
                children.push(Hypothesis {
                    state: state.clone(),
                    next_input: memories[j].clone(),
                    indices,
                    selected,
                    logp: hyp.logp + pr.ln(),
                    step_labels,
                });
            }
        }
        children.sort_by(|a, b| {
            b.logp.total_cmp(&a.logp).then_with(|| a.indices.cmp(&b.indices))
        });
        children.truncate(width);
        hyps = children;
    }
    Ok(hyps
        .into_iter()
        .map(|h| Beam { indices: h.indices, logp: h.logp, step_labels: h.step_labels })
        .collect())
}

/// Rank candidate titles for one claim: embed each candidate into a memory,
/// decode up to `d` of them with beam search, and return the winning beam's
/// titles in selection order.
pub fn rank_documents<F>(
    model: &PointerModel,
    mut embed: F,
    candidates: &[String],
    d: usize,
    width: usize,
) -> Result<Vec<String>>
where
    F: FnMut(&str) -> Vec<f64>,
{
    if candidates.is_empty() {
        warn!("empty candidate set; nothing to rank");
        return Ok(Vec::new());
    }
    let memories: Vec<Vec<f64>> = candidates.iter().map(|t| embed(t)).collect();
    let k = d.min(candidates.len());
    let beams = beam_search(model, &memories, k, width)?;
    let best = &beams[0];
    Ok(best.indices.iter().map(|&i| candidates[i].clone()).collect())
}

/// A (memories, gold sequence) training pair for the pointer stage.
#[derive(Debug, Clone)]
pub struct PointerInstance {
    pub memories: Vec<Vec<f64>>,
    pub gold: Vec<usize>,
}

/// Teacher-forced training of the pointer parameters with Adagrad.
pub fn train_pointer(
    model: &mut PointerModel,
    instances: &[PointerInstance],
    cfg: &TrainCfg,
) -> Result<TrainStats> {
    let dims = model.dims;
    nn::train(
        &mut model.params,
        instances,
        |tape, params, inst| pointer_loss_tape(tape, params, dims, &inst.memories, &inst.gold),
        cfg,
    )
}
