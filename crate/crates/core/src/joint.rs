//! Joint sentence selection and relation-sequence labeling on top of the
//! pointer decoder: gold label sequences, the combined selection+labeling
//! loss, scheduled-sampling training (per-step coin flip between the gold
//! item and the model's own pick), label ensembling, and prediction.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::RelationLabel;
use crate::nn::{self, NodeId, Params, Tape, TrainCfg, TrainStats};
use crate::ptrnet::{
    self, beam_search, label_logits_tape, selection_scores_tape, tape_memories, tape_step,
    PointerModel, PtrDims,
};
use crate::{Error, Result};

/// Label targets along a decode path: the claim's label from the first step
/// whose prefix contains a complete gold group, neutral before that. Neutral
/// claims are neutral at every step; a supported/refuted claim must come with
/// at least one gold group.
pub fn gold_label_sequence<T: PartialEq>(
    label: RelationLabel,
    gold_groups: &[Vec<T>],
    path: &[T],
) -> Result<Vec<RelationLabel>> {
    if label == RelationLabel::NotEnoughInfo {
        return Ok(vec![RelationLabel::NotEnoughInfo; path.len()]);
    }
    if gold_groups.is_empty() {
        return Err(Error::Validation(format!("{label} claim without gold evidence groups")));
    }
    let mut out = Vec::with_capacity(path.len());
    let mut found = false;
    for t in 0..path.len() {
        if !found {
            let prefix = &path[..=t];
            found = gold_groups
                .iter()
                .any(|g| g.iter().all(|item| prefix.contains(item)));
        }
        out.push(if found { label } else { RelationLabel::NotEnoughInfo });
    }
    Ok(out)
}

/// Final label from per-step distributions: argmax of the element-wise mean,
/// ties broken by label declaration order (S before R before NEI).
pub fn ensemble_labels(dists: &[[f64; 3]]) -> RelationLabel {
    assert!(!dists.is_empty(), "ensemble needs at least one distribution");
    let mut mean = [0.0f64; 3];
    for d in dists {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    let inv = 1.0 / dists.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    let mut best = 0;
    for i in 1..3 {
        if mean[i] > mean[best] {
            best = i;
        }
    }
    RelationLabel::ALL[best]
}

/// Combined loss along one realized decode path.
///
/// The selection term averages −log P(target) over the steps that have a
/// pointer target and is weighted by `lambda`; it vanishes when no step is
/// supervised (neutral claims). The labeling term averages −log P(label) over
/// every step. The decoder consumes `path` as-is: a supervised step whose
/// target differs from the path entry still feeds the path entry forward.
pub fn joint_loss_tape(
    tape: &mut Tape,
    params: &Params,
    dims: PtrDims,
    memories: &[Vec<f64>],
    path: &[usize],
    pointer_targets: &[Option<usize>],
    labels: &[RelationLabel],
    lambda: f64,
) -> NodeId {
    let k = path.len();
    assert!(k >= 1, "empty decode path");
    assert_eq!(pointer_targets.len(), k);
    assert_eq!(labels.len(), k);
    assert!(lambda >= 0.0, "negative pointer weight {lambda}");

    let mems = tape_memories(tape, params, memories);
    let mut h = tape.param_vec(params.id("dec.h0").unwrap());
    let mut c = tape.param_vec(params.id("dec.c0").unwrap());
    let mut input = tape.param_vec(params.id("dec.start").unwrap());
    let mut selected = vec![false; memories.len()];
    let mut ptr_terms: Vec<NodeId> = Vec::new();
    let mut label_terms: Vec<NodeId> = Vec::with_capacity(k);

    for t in 0..k {
        let step = tape_step(tape, params, dims, &mems, input, h, c);
        h = step.h;
        c = step.c;
        if let Some(target) = pointer_targets[t] {
            assert!(!selected[target], "pointer target already selected");
            let scores = selection_scores_tape(tape, params, &mems, step.hq);
            let mask: Vec<bool> = selected.iter().map(|&s| !s).collect();
            ptr_terms.push(tape.log_softmax_pick(scores, mask, target));
        }
        let logits = label_logits_tape(tape, params, step.hq);
        label_terms.push(tape.log_softmax_pick(logits, vec![true; 3], labels[t].index()));
        assert!(!selected[path[t]], "path revisits memory {}", path[t]);
        selected[path[t]] = true;
        input = mems.mem[path[t]];
    }

    let sum = |tape: &mut Tape, terms: &[NodeId]| -> NodeId {
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        total
    };
    let label_sum = sum(tape, &label_terms);
    let label_loss = tape.scale(label_sum, -1.0 / k as f64);
    if ptr_terms.is_empty() || lambda == 0.0 {
        return label_loss;
    }
    let ptr_sum = sum(tape, &ptr_terms);
    let ptr_loss = tape.scale(ptr_sum, -lambda / ptr_terms.len() as f64);
    tape.add(ptr_loss, label_loss)
}

/// Plain value of the combined loss on a fully teacher-forced gold path.
pub fn joint_loss(
    params: &Params,
    dims: PtrDims,
    memories: &[Vec<f64>],
    gold: &[usize],
    labels: &[RelationLabel],
    lambda: f64,
) -> f64 {
    let targets: Vec<Option<usize>> = gold.iter().map(|&g| Some(g)).collect();
    let mut tape = Tape::new(params);
    let loss = joint_loss_tape(&mut tape, params, dims, memories, gold, &targets, labels, lambda);
    tape.scalar(loss)
}

/// One claim prepared for joint training: sentence memories, the canonical
/// gold sequence (empty for neutral claims), and every gold group that is
/// fully inside the pool, as memory indices.
#[derive(Debug, Clone)]
pub struct JointExample {
    pub memories: Vec<Vec<f64>>,
    pub gold_path: Vec<usize>,
    pub gold_groups: Vec<Vec<usize>>,
    pub label: RelationLabel,
}

/// Joint training configuration on top of the shared optimizer settings.
#[derive(Debug, Clone)]
pub struct JointTrainCfg {
    /// Selection-loss weight.
    pub lambda: f64,
    /// Per-step probability of feeding the gold item instead of the model's
    /// own pick.
    pub p_tf: f64,
    /// Decode length (capped per instance by the pool size).
    pub k: usize,
    pub train: TrainCfg,
}

/// Decide one training path: at each step a coin picks teacher forcing
/// (the next unused canonical gold item) or the model's greedy choice; the
/// pointer target is always the next unused gold item when one remains, and
/// labels are recomputed from the path actually taken.
fn rollout(
    params: &Params,
    dims: PtrDims,
    ex: &JointExample,
    k: usize,
    p_tf: f64,
    rng: &mut ChaCha20Rng,
) -> (Vec<usize>, Vec<Option<usize>>, Vec<RelationLabel>) {
    let n = ex.memories.len();
    let wgm = ptrnet::project_memories(params, &ex.memories);
    let mut state = ptrnet::initial_state(params);
    let mut input = ptrnet::start_input(params);
    let mut selected = vec![false; n];
    let mut path = Vec::with_capacity(k);
    let mut targets = Vec::with_capacity(k);

    for _ in 0..k {
        let target = ex.gold_path.iter().copied().find(|g| !path.contains(g));
        // Draw the coin every step so the random stream does not depend on
        // how much gold is left.
        let teach = rng.gen_bool(p_tf);
        state = ptrnet::decoder_step(params, dims, &state, &input);
        let glimpse = ptrnet::glimpse_projected(params, dims, &wgm, &state.h);
        let pick = match target {
            Some(g) if teach => g,
            _ => {
                let probs = ptrnet::select_probs(params, &ex.memories, &glimpse.h, &selected)
                    .expect("k is capped by the pool size");
                (0..n)
                    .filter(|&j| !selected[j])
                    .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
                    .unwrap()
            }
        };
        path.push(pick);
        targets.push(target);
        selected[pick] = true;
        input = ex.memories[pick].clone();
    }
    let labels = gold_label_sequence(ex.label, &ex.gold_groups, &path)
        .expect("examples are validated before training");
    (path, targets, labels)
}

/// Train selection and labeling jointly with scheduled sampling.
pub fn train_joint(
    model: &mut PointerModel,
    examples: &[JointExample],
    cfg: &JointTrainCfg,
) -> Result<TrainStats> {
    if !(0.0..=1.0).contains(&cfg.p_tf) {
        return Err(Error::Validation(format!("teacher-forcing rate {} not in [0,1]", cfg.p_tf)));
    }
    if cfg.k == 0 {
        return Err(Error::Validation("decode length must be >= 1".into()));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.memories.is_empty() {
            return Err(Error::Validation(format!("example {i}: empty memory pool")));
        }
        let neutral = ex.label == RelationLabel::NotEnoughInfo;
        if neutral != ex.gold_path.is_empty() || neutral != ex.gold_groups.is_empty() {
            return Err(Error::Validation(format!(
                "example {i}: gold evidence inconsistent with label {}",
                ex.label
            )));
        }
        if ex.gold_path.iter().any(|&g| g >= ex.memories.len()) {
            return Err(Error::Validation(format!("example {i}: gold index out of range")));
        }
    }

    let dims = model.dims;
    let (lambda, p_tf, k) = (cfg.lambda, cfg.p_tf, cfg.k);
    // Separate stream from the trainer's shuffling RNG.
    let mut coin = ChaCha20Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x9e3779b97f4a7c15));
    nn::train(
        &mut model.params,
        examples,
        move |tape, params, ex| {
            let k_eff = k.min(ex.memories.len());
            let (path, targets, labels) = rollout(params, dims, ex, k_eff, p_tf, &mut coin);
            joint_loss_tape(tape, params, dims, &ex.memories, &path, &targets, &labels, lambda)
        },
        &cfg.train,
    )
}

/// One decoded claim: evidence refs in selection order, per-step label
/// distributions from the winning beam, the ensembled final label, and the
/// beam's selection log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrediction {
    pub evidence: Vec<(String, usize)>,
    pub step_labels: Vec<[f64; 3]>,
    pub label: RelationLabel,
    pub logp: f64,
}

/// Decode up to `n` sentences with beam search and ensemble the winning
/// beam's label distributions. An empty pool yields a neutral prediction with
/// no evidence; a pool smaller than `n` yields a shorter sequence.
pub fn predict(
    model: &PointerModel,
    memories: &[Vec<f64>],
    refs: &[(String, usize)],
    n: usize,
    width: usize,
) -> Result<JointPrediction> {
    if memories.len() != refs.len() {
        return Err(Error::Validation(format!(
            "{} memories but {} sentence refs",
            memories.len(),
            refs.len()
        )));
    }
    if memories.is_empty() {
        warn!("empty candidate pool; predicting neutral with no evidence");
        return Ok(JointPrediction {
            evidence: Vec::new(),
            step_labels: Vec::new(),
            label: RelationLabel::NotEnoughInfo,
            logp: 0.0,
        });
    }
    let k = n.min(memories.len());
    let beams = beam_search(model, memories, k, width)?;
    let best = &beams[0];
    Ok(JointPrediction {
        evidence: best.indices.iter().map(|&i| refs[i].clone()).collect(),
        label: ensemble_labels(&best.step_labels),
        step_labels: best.step_labels.clone(),
        logp: best.logp,
    })
}
