//! The pair encoder: maps a (claim, evidence) text pair to a fixed-width
//! vector memory by pooling learned token embeddings over each side,
//! concatenating, and applying one affine + tanh layer to width E. This file
//! also holds the two fine-tuning dataset builders (title pairs
//! and sentence pairs) and the pair-classifier trainer that fits the encoder;
//! the classifier head is kept only as an auxiliary section for downstream
//! scoring and never participates in embedding.

use std::collections::BTreeSet;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClaimRecord, PageStore, RelationLabel};
use crate::nn::{self, Init, Params, ParamsData, Tape, Tensor, TrainCfg, TrainStats};
use crate::retrieval::CandidateSet;
use crate::text::tokenize_lower;
use crate::{Error, Result};

/// Token vocabulary with a reserved unknown id 0. Ids are assigned in sorted
/// token order, so the same token set always yields the same vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    map: std::collections::BTreeMap<String, usize>,
}

impl Vocab {
    pub const UNK: usize = 0;

    /// Build from any collection of texts; every distinct lowercase token
    /// gets an id starting at 1.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Vocab {
        let mut tokens = BTreeSet::new();
        for t in texts {
            tokens.extend(tokenize_lower(t));
        }
        let map = tokens.into_iter().zip(1..).collect();
        Vocab { map }
    }

    /// Number of embedding rows needed (distinct tokens + the unknown row).
    pub fn rows(&self) -> usize {
        self.map.len() + 1
    }

    pub fn ids(&self, text: &str) -> Vec<usize> {
        tokenize_lower(text)
            .into_iter()
            .map(|t| self.map.get(&t).copied().unwrap_or(Self::UNK))
            .collect()
    }
}

/// Trainable pair encoder. Parameters: token table `emb` (rows × E/2),
/// composition `comb.w` (E × E) and `comb.b` (E). `aux_head` carries
/// classifier tensors from the most recent fine-tuning; the embedding path
/// never reads it.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub params: Params,
    pub vocab: Vocab,
    pub e: usize,
    pub aux_head: Vec<(String, Tensor)>,
}

/// Serializable encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderModelData {
    pub e: usize,
    pub vocab: Vocab,
    pub params: ParamsData,
    pub aux_head: Vec<(String, Tensor)>,
}

impl EncoderModel {
    /// `e` must be even: each side of the pair pools to width e/2.
    pub fn new(vocab: Vocab, e: usize, seed: u64) -> Self {
        assert!(e >= 2 && e % 2 == 0, "embedding width must be even, got {e}");
        let t = e / 2;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Params::new();
        params.add("emb", vocab.rows(), t, Init::Uniform(0.1), &mut rng);
        params.add("comb.w", e, 2 * t, Init::Glorot, &mut rng);
        params.add("comb.b", e, 1, Init::Zeros, &mut rng);
        EncoderModel { params, vocab, e, aux_head: Vec::new() }
    }

    pub fn to_data(&self) -> EncoderModelData {
        EncoderModelData {
            e: self.e,
            vocab: self.vocab.clone(),
            params: (&self.params).into(),
            aux_head: self.aux_head.clone(),
        }
    }

    pub fn from_data(d: EncoderModelData) -> Self {
        EncoderModel { params: d.params.into(), vocab: d.vocab, e: d.e, aux_head: d.aux_head }
    }

    /// Mean of the embedding rows for `ids`; empty input pools to zeros.
    fn pool(&self, ids: &[usize]) -> Vec<f64> {
        let t = self.params.by_name("emb");
        let mut out = vec![0.0; t.cols];
        if ids.is_empty() {
            return out;
        }
        for &i in ids {
            let row = &t.data[i * t.cols..(i + 1) * t.cols];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }

    /// The memory vector for a (claim, evidence) pair: width `e`, pure in
    /// (parameters, inputs), total over any text including empty strings.
    pub fn embed_pair(&self, claim: &str, evidence: &str) -> Vec<f64> {
        let mut cat = self.pool(&self.vocab.ids(claim));
        cat.extend(self.pool(&self.vocab.ids(evidence)));
        let pre = nn::matvec(self.params.by_name("comb.w"), &cat);
        let b = &self.params.by_name("comb.b").data;
        pre.iter().zip(b).map(|(p, bb)| (p + bb).tanh()).collect()
    }

    /// Class distribution from the auxiliary head, if one was trained.
    pub fn classify_pair(&self, claim: &str, evidence: &str) -> Result<Vec<f64>> {
        let w = self
            .aux_head
            .iter()
            .find(|(n, _)| n == "aux.cls.w")
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Validation("encoder has no classifier head".into()))?;
        let b = self
            .aux_head
            .iter()
            .find(|(n, _)| n == "aux.cls.b")
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Validation("encoder has no classifier bias".into()))?;
        let m = self.embed_pair(claim, evidence);
        let logits: Vec<f64> =
            nn::matvec(w, &m).iter().zip(&b.data).map(|(l, bb)| l + bb).collect();
        Ok(nn::masked_softmax(&logits, &vec![true; logits.len()]))
    }
}

// ---- Fine-tuning datasets --------------------------------------------------

/// A (claim, title) relevance example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitlePair {
    pub claim: String,
    pub title: String,
    pub positive: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TitlePairDataset {
    pub pairs: Vec<TitlePair>,
}

impl TitlePairDataset {
    /// (positives, negatives)
    pub fn counts(&self) -> (usize, usize) {
        let pos = self.pairs.iter().filter(|p| p.positive).count();
        (pos, self.pairs.len() - pos)
    }

    pub fn examples(&self) -> Vec<PairExample> {
        self.pairs
            .iter()
            .map(|p| PairExample {
                claim: p.claim.clone(),
                evidence: p.title.clone(),
                class: p.positive as usize,
            })
            .collect()
    }
}

/// Title relevance dataset: every gold title of a claim is a positive;
/// `neg_ratio` negatives per positive are drawn without replacement from the
/// claim's candidate set minus its gold titles. Claims without candidates are
/// skipped with a warning; claims without gold titles contribute nothing.
pub fn build_title_pairs(
    claims: &[ClaimRecord],
    candidates: &[CandidateSet],
    neg_ratio: f64,
    seed: u64,
) -> Result<TitlePairDataset> {
    if claims.len() != candidates.len() {
        return Err(Error::Validation(format!(
            "{} claims but {} candidate sets",
            claims.len(),
            candidates.len()
        )));
    }
    if !(neg_ratio >= 0.0) {
        return Err(Error::Validation(format!("negative ratio {neg_ratio} must be >= 0")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = TitlePairDataset::default();
    for (claim, cand) in claims.iter().zip(candidates) {
        if cand.claim_id != claim.id {
            return Err(Error::Validation(format!(
                "candidate set for claim {} paired with claim {}",
                cand.claim_id, claim.id
            )));
        }
        if cand.titles.is_empty() {
            warn!("claim {}: no candidates, skipping title pairs", claim.id);
            continue;
        }
        let golds = claim.gold_titles();
        for title in &golds {
            out.pairs.push(TitlePair {
                claim: claim.text.clone(),
                title: (*title).to_string(),
                positive: true,
            });
        }
        let gold_set: BTreeSet<&str> = golds.iter().copied().collect();
        let pool: Vec<&String> =
            cand.titles.iter().filter(|t| !gold_set.contains(t.as_str())).collect();
        let want = (golds.len() as f64 * neg_ratio).round() as usize;
        let take = want.min(pool.len());
        for idx in rand::seq::index::sample(&mut rng, pool.len(), take) {
            out.pairs.push(TitlePair {
                claim: claim.text.clone(),
                title: pool[idx].clone(),
                positive: false,
            });
        }
    }
    Ok(out)
}

/// A (claim, sentence) veracity example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub claim: String,
    pub sentence: String,
    pub label: RelationLabel,
}

#[derive(Debug, Clone, Default)]
pub struct SentencePairDataset {
    pub pairs: Vec<SentencePair>,
}

impl SentencePairDataset {
    /// Counts indexed by [`RelationLabel::index`].
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for p in &self.pairs {
            counts[p.label.index()] += 1;
        }
        counts
    }

    pub fn examples(&self) -> Vec<PairExample> {
        self.pairs
            .iter()
            .map(|p| PairExample {
                claim: p.claim.clone(),
                evidence: p.sentence.clone(),
                class: p.label.index(),
            })
            .collect()
    }
}

/// Veracity dataset: every gold evidence sentence carries its claim's label;
/// neutral pairs are sampled without replacement from candidate-document
/// sentences that are not gold for their claim, and their count matches the
/// mean of the supported and refuted counts (keeping the three classes
/// balanced when the corpus has roughly equal supported/refuted claims).
pub fn build_sentence_pairs(
    claims: &[ClaimRecord],
    candidates: &[CandidateSet],
    pages: &PageStore,
    seed: u64,
) -> Result<SentencePairDataset> {
    if claims.len() != candidates.len() {
        return Err(Error::Validation(format!(
            "{} claims but {} candidate sets",
            claims.len(),
            candidates.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = SentencePairDataset::default();

    let gold_refs = |claim: &ClaimRecord| -> BTreeSet<(String, usize)> {
        claim.evidence_groups.iter().flatten().cloned().collect()
    };

    for claim in claims {
        let label = match claim.label {
            Some(l @ (RelationLabel::Supports | RelationLabel::Refutes)) => l,
            _ => continue,
        };
        for (title, sid) in gold_refs(claim) {
            match pages.get_sentence(&title, sid) {
                Ok(s) => out.pairs.push(SentencePair {
                    claim: claim.text.clone(),
                    sentence: s.to_string(),
                    label,
                }),
                Err(_) => warn!("claim {}: gold sentence {title:?}#{sid} not in store", claim.id),
            }
        }
    }

    let counts = out.class_counts();
    let target = ((counts[RelationLabel::Supports.index()]
        + counts[RelationLabel::Refutes.index()]) as f64
        / 2.0)
        .round() as usize;

    let mut pool: Vec<(usize, &str)> = Vec::new();
    for (ci, (claim, cand)) in claims.iter().zip(candidates).enumerate() {
        if cand.claim_id != claim.id {
            return Err(Error::Validation(format!(
                "candidate set for claim {} paired with claim {}",
                cand.claim_id, claim.id
            )));
        }
        let golds = gold_refs(claim);
        for title in &cand.titles {
            let Some(sents) = pages.sentences(title) else { continue };
            for (sid, sent) in sents.iter().enumerate() {
                if !golds.contains(&(title.clone(), sid)) {
                    pool.push((ci, sent));
                }
            }
        }
    }
    let take = target.min(pool.len());
    if take < target {
        warn!("neutral pool has {} sentences, wanted {target}", pool.len());
    }
    for idx in rand::seq::index::sample(&mut rng, pool.len(), take) {
        let (ci, sent) = pool[idx];
        out.pairs.push(SentencePair {
            claim: claims[ci].text.clone(),
            sentence: sent.to_string(),
            label: RelationLabel::NotEnoughInfo,
        });
    }
    Ok(out)
}

// ---- Classifier training ---------------------------------------------------

/// One training example for the pair classifier: texts plus a class index.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub claim: String,
    pub evidence: String,
    pub class: usize,
}

/// Result of a fine-tuning run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stats: TrainStats,
    /// Accuracy on the held-out split; `None` when there was no split.
    pub val_accuracy: Option<f64>,
}

/// Fit the encoder through a softmax classifier over `n_classes` (2 for title
/// relevance, 3 for veracity). The head is trained jointly with the encoder,
/// then split off into `aux_head`; the returned encoder embeds exactly as
/// before plus the fine-tuned weights.
pub fn train_pair_classifier(
    model: &mut EncoderModel,
    examples: &[PairExample],
    n_classes: usize,
    cfg: &TrainCfg,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::Validation("empty fine-tuning dataset".into()));
    }
    if n_classes < 2 {
        return Err(Error::Validation(format!("need at least 2 classes, got {n_classes}")));
    }
    if let Some(bad) = examples.iter().find(|ex| ex.class >= n_classes) {
        return Err(Error::Validation(format!(
            "class {} out of range for {n_classes}-way head",
            bad.class
        )));
    }

    // Tokenize once; training touches only id lists.
    let instances: Vec<(Vec<usize>, Vec<usize>, usize)> = examples
        .iter()
        .map(|ex| (model.vocab.ids(&ex.claim), model.vocab.ids(&ex.evidence), ex.class))
        .collect();

    // Scratch store: encoder tensors plus a fresh head.
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut scratch = Params::new();
    for name in ["emb", "comb.w", "comb.b"] {
        let src = model.params.by_name(name).clone();
        let id = scratch.add(name, src.rows, src.cols, Init::Zeros, &mut rng);
        *scratch.tensor_mut(id) = src;
    }
    scratch.add("cls.w", n_classes, model.e, Init::Glorot, &mut rng);
    scratch.add("cls.b", n_classes, 1, Init::Zeros, &mut rng);

    let emb = scratch.id("emb").unwrap();
    let comb_w = scratch.id("comb.w").unwrap();
    let comb_b = scratch.id("comb.b").unwrap();
    let cls_w = scratch.id("cls.w").unwrap();
    let cls_b = scratch.id("cls.b").unwrap();

    let build = |tape: &mut Tape, _p: &Params, inst: &(Vec<usize>, Vec<usize>, usize)| {
        let c = tape.embed_mean(emb, inst.0.clone());
        let ev = tape.embed_mean(emb, inst.1.clone());
        let cat = tape.concat(c, ev);
        let pre = tape.mat_vec(comb_w, cat);
        let b = tape.param_vec(comb_b);
        let pre_b = tape.add(pre, b);
        let m = tape.tanh(pre_b);
        let raw = tape.mat_vec(cls_w, m);
        let hb = tape.param_vec(cls_b);
        let logits = tape.add(raw, hb);
        let lp = tape.log_softmax_pick(logits, vec![true; n_classes], inst.2);
        tape.scale(lp, -1.0)
    };

    let stats = nn::train(&mut scratch, &instances, build, cfg)?;

    for name in ["emb", "comb.w", "comb.b"] {
        let id = model.params.id(name).unwrap();
        *model.params.tensor_mut(id) = scratch.by_name(name).clone();
    }
    model.aux_head = vec![
        ("aux.cls.w".to_string(), scratch.by_name("cls.w").clone()),
        ("aux.cls.b".to_string(), scratch.by_name("cls.b").clone()),
    ];

    let val_accuracy = if stats.val_indices.is_empty() {
        None
    } else {
        let correct = stats
            .val_indices
            .iter()
            .filter(|&&i| {
                let ex = &examples[i];
                let probs = model.classify_pair(&ex.claim, &ex.evidence).expect("head just set");
                let argmax =
                    (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
                argmax == ex.class
            })
            .count();
        Some(correct as f64 / stats.val_indices.len() as f64)
    };

    Ok(TrainOutcome { stats, val_accuracy })
}
