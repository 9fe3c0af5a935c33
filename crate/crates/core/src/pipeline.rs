//! Stage orchestration. Each command loads what it needs from the workdir,
//! computes, and writes a versioned artifact back; artifacts are reused
//! unless `force` is set, and a missing prerequisite names the command that
//! produces it. Stages run sequentially; prediction fans out over claims with
//! a deterministic-order parallel map.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{self, AttackClaim, VictimScorer};
use crate::checkpoint::{load_artifact, save_artifact, ArtifactKind};
use crate::config::Config;
use crate::corpus::{load_claims, load_pages, ClaimRecord, PageStore, RelationLabel};
use crate::encoder::{
    build_sentence_pairs, build_title_pairs, train_pair_classifier, EncoderModel,
    EncoderModelData, Vocab,
};
use crate::eval::{
    load_predictions, potency, save_predictions, score, score_by_attack_type, AttackBreakdown,
    PotencyReport, PredictionRecord, ScoreReport,
};
use crate::joint::{train_joint, JointExample, JointTrainCfg};
use crate::ptrnet::{
    rank_documents, train_pointer, PointerInstance, PointerModel, PointerModelData, PtrDims,
};
use crate::retrieval::{build_index, candidates_for, TfIdfIndex};
use crate::temporal::apply_postprocess;
use crate::{Error, Result};

/// Longest sentence pool fed to evidence selection.
const POOL_CAP: usize = 200;
/// Unigrams and bigrams in the document index.
const NGRAM_MAX: usize = 2;

pub const INDEX_FILE: &str = "index.bin";
pub const ENCODER_FILE: &str = "encoder.bin";
pub const DOCRANK_FILE: &str = "docrank.bin";
pub const JOINT_FILE: &str = "joint.bin";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";

fn workpath(cfg: &Config, name: &str) -> PathBuf {
    Path::new(&cfg.workdir).join(name)
}

fn ensure_workdir(cfg: &Config) -> Result<()> {
    std::fs::create_dir_all(&cfg.workdir)?;
    Ok(())
}

/// Load a prerequisite artifact or say which command builds it.
fn require<T: serde::de::DeserializeOwned>(
    cfg: &Config,
    name: &str,
    kind: ArtifactKind,
    command: &str,
) -> Result<T> {
    let path = workpath(cfg, name);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            artifact: path.display().to_string(),
            command: command.to_string(),
        });
    }
    load_artifact(&path, kind, &cfg.hash())
}

fn load_encoder(cfg: &Config) -> Result<EncoderModel> {
    let data: EncoderModelData = require(cfg, ENCODER_FILE, ArtifactKind::Encoder, "train-encoder")?;
    Ok(EncoderModel::from_data(data))
}

fn load_pointer(cfg: &Config, name: &str, kind: ArtifactKind, command: &str) -> Result<PointerModel> {
    let data: PointerModelData = require(cfg, name, kind, command)?;
    Ok(PointerModel::from_data(data))
}

fn ptr_dims(cfg: &Config) -> PtrDims {
    PtrDims { e: cfg.encoder_dim, h: cfg.ptr_hidden, q: cfg.ptr_hops }
}

/// Build (or reuse) the document index.
pub fn cmd_index(cfg: &Config, force: bool) -> Result<PathBuf> {
    ensure_workdir(cfg)?;
    let path = workpath(cfg, INDEX_FILE);
    if path.exists() && !force {
        info!("reusing {}", path.display());
        return Ok(path);
    }
    let pages = load_pages(&cfg.pages)?;
    let index = build_index(&pages, NGRAM_MAX)?;
    save_artifact(&path, ArtifactKind::Index, &cfg.hash(), &index)?;
    info!("indexed {} pages -> {}", pages.len(), path.display());
    Ok(path)
}

/// Fine-tune the pair encoder on title relevance, then on sentence veracity
/// (the veracity head is the one kept for downstream scoring).
pub fn cmd_train_encoder(cfg: &Config, force: bool) -> Result<PathBuf> {
    ensure_workdir(cfg)?;
    let path = workpath(cfg, ENCODER_FILE);
    if path.exists() && !force {
        info!("reusing {}", path.display());
        return Ok(path);
    }
    let index: TfIdfIndex = require(cfg, INDEX_FILE, ArtifactKind::Index, "index")?;
    let pages = load_pages(&cfg.pages)?;
    let claims = load_claims(&cfg.claims)?;

    let candidates: Vec<_> = claims
        .iter()
        .map(|c| candidates_for(&index, &pages, c.id, &c.text, cfg.m))
        .collect();

    let mut texts: Vec<&str> = Vec::new();
    for title in pages.titles() {
        texts.push(title);
        for s in pages.sentences(title).unwrap() {
            texts.push(s);
        }
    }
    texts.extend(claims.iter().map(|c| c.text.as_str()));
    let vocab = Vocab::build(texts);

    let mut model = EncoderModel::new(vocab, cfg.encoder_dim, cfg.seed);
    let train = cfg.encoder_train();

    let titles = build_title_pairs(&claims, &candidates, cfg.encoder_neg_ratio, cfg.seed.wrapping_add(11))?;
    let outcome = train_pair_classifier(&mut model, &titles.examples(), 2, &train)?;
    if let Some(acc) = outcome.val_accuracy {
        info!("title relevance validation accuracy {acc:.4}");
    }

    let sentences = build_sentence_pairs(&claims, &candidates, &pages, cfg.seed.wrapping_add(12))?;
    let outcome = train_pair_classifier(&mut model, &sentences.examples(), 3, &train)?;
    if let Some(acc) = outcome.val_accuracy {
        info!("sentence veracity validation accuracy {acc:.4}");
    }

    save_artifact(&path, ArtifactKind::Encoder, &cfg.hash(), &model.to_data())?;
    Ok(path)
}

/// Train the document-ranking pointer over candidate-title memories.
pub fn cmd_train_docrank(cfg: &Config, force: bool) -> Result<PathBuf> {
    ensure_workdir(cfg)?;
    let path = workpath(cfg, DOCRANK_FILE);
    if path.exists() && !force {
        info!("reusing {}", path.display());
        return Ok(path);
    }
    let index: TfIdfIndex = require(cfg, INDEX_FILE, ArtifactKind::Index, "index")?;
    let encoder = load_encoder(cfg)?;
    let pages = load_pages(&cfg.pages)?;
    let claims = load_claims(&cfg.claims)?;

    let mut instances = Vec::new();
    for claim in &claims {
        let golds = claim.gold_titles();
        if golds.is_empty() {
            continue;
        }
        let cand = candidates_for(&index, &pages, claim.id, &claim.text, cfg.m);
        let gold_idx: Vec<usize> = cand
            .titles
            .iter()
            .enumerate()
            .filter(|(_, t)| golds.contains(&t.as_str()))
            .map(|(i, _)| i)
            .collect();
        if gold_idx.is_empty() {
            warn!("claim {}: no gold title among {} candidates", claim.id, cand.titles.len());
            continue;
        }
        let memories: Vec<Vec<f64>> =
            cand.titles.iter().map(|t| encoder.embed_pair(&claim.text, t)).collect();
        instances.push(PointerInstance { memories, gold: gold_idx });
    }
    if instances.is_empty() {
        return Err(Error::Validation("no claims with retrievable gold titles".into()));
    }

    let mut model = PointerModel::new(ptr_dims(cfg), cfg.seed.wrapping_add(1));
    let stats = train_pointer(&mut model, &instances, &cfg.ptr_train())?;
    info!(
        "document ranker trained for {} epochs on {} claims",
        stats.train_loss.len(),
        instances.len()
    );
    save_artifact(&path, ArtifactKind::DocRank, &cfg.hash(), &model.to_data())?;
    Ok(path)
}

/// Top documents for one claim: learned ranking, or candidate order when the
/// ranker is disabled.
fn top_docs(
    cfg: &Config,
    index: &TfIdfIndex,
    pages: &PageStore,
    encoder: &EncoderModel,
    docrank: Option<&PointerModel>,
    claim: &ClaimRecord,
) -> Result<Vec<String>> {
    let cand = candidates_for(index, pages, claim.id, &claim.text, cfg.m);
    match docrank {
        Some(model) => rank_documents(
            model,
            |title| encoder.embed_pair(&claim.text, title),
            &cand.titles,
            cfg.d,
            cfg.ptr_beam,
        ),
        None => {
            let mut titles = cand.titles;
            titles.truncate(cfg.d);
            Ok(titles)
        }
    }
}

/// Sentences of the top documents in rank order, capped.
fn sentence_pool(pages: &PageStore, docs: &[String]) -> Vec<(String, usize)> {
    let mut refs = Vec::new();
    for title in docs {
        let Some(sentences) = pages.sentences(title) else { continue };
        for i in 0..sentences.len() {
            if refs.len() == POOL_CAP {
                return refs;
            }
            refs.push((title.clone(), i));
        }
    }
    refs
}

/// Train the joint evidence/label decoder over sentence memories.
pub fn cmd_train_joint(cfg: &Config, force: bool) -> Result<PathBuf> {
    ensure_workdir(cfg)?;
    let path = workpath(cfg, JOINT_FILE);
    if path.exists() && !force {
        info!("reusing {}", path.display());
        return Ok(path);
    }
    let index: TfIdfIndex = require(cfg, INDEX_FILE, ArtifactKind::Index, "index")?;
    let encoder = load_encoder(cfg)?;
    let docrank = if cfg.docrank {
        Some(load_pointer(cfg, DOCRANK_FILE, ArtifactKind::DocRank, "train-docrank")?)
    } else {
        None
    };
    let pages = load_pages(&cfg.pages)?;
    let claims = load_claims(&cfg.claims)?;

    let mut examples = Vec::new();
    for claim in &claims {
        let Some(label) = claim.label else {
            warn!("claim {}: unlabeled; not used for training", claim.id);
            continue;
        };
        let docs = top_docs(cfg, &index, &pages, &encoder, docrank.as_ref(), claim)?;
        let refs = sentence_pool(&pages, &docs);
        if refs.is_empty() {
            warn!("claim {}: empty sentence pool; skipping", claim.id);
            continue;
        }
        let pos: std::collections::BTreeMap<&(String, usize), usize> =
            refs.iter().zip(0..).collect();
        let gold_groups: Vec<Vec<usize>> = claim
            .evidence_groups
            .iter()
            .filter(|g| !g.is_empty())
            .filter_map(|g| {
                g.iter().map(|r| pos.get(r).copied()).collect::<Option<Vec<usize>>>().map(
                    |mut idx| {
                        idx.sort_unstable();
                        idx
                    },
                )
            })
            .collect();
        if label != RelationLabel::NotEnoughInfo && gold_groups.is_empty() {
            warn!("claim {}: no gold evidence group in the retrieved pool; skipping", claim.id);
            continue;
        }
        let gold_path =
            if label == RelationLabel::NotEnoughInfo { vec![] } else { gold_groups[0].clone() };
        let memories: Vec<Vec<f64>> = refs
            .iter()
            .map(|(t, i)| encoder.embed_pair(&claim.text, pages.get_sentence(t, *i).unwrap()))
            .collect();
        examples.push(JointExample { memories, gold_path, gold_groups, label });
    }
    if examples.is_empty() {
        return Err(Error::Validation("no trainable claims for the joint stage".into()));
    }

    let mut model = PointerModel::new(ptr_dims(cfg), cfg.seed.wrapping_add(2));
    let joint_cfg = JointTrainCfg {
        lambda: cfg.lambda,
        p_tf: cfg.p_tf,
        k: cfg.n,
        train: cfg.ptr_train(),
    };
    let stats = train_joint(&mut model, &examples, &joint_cfg)?;
    info!(
        "joint model trained for {} epochs on {} claims",
        stats.train_loss.len(),
        examples.len()
    );
    save_artifact(&path, ArtifactKind::Joint, &cfg.hash(), &model.to_data())?;
    Ok(path)
}

/// Predict every claim: retrieve, rank, select evidence, label, and (unless
/// disabled) apply date post-processing. Claims run in parallel but the
/// output order is the input order.
pub fn cmd_predict(cfg: &Config, force: bool) -> Result<PathBuf> {
    ensure_workdir(cfg)?;
    let path = workpath(cfg, PREDICTIONS_FILE);
    if path.exists() && !force {
        info!("reusing {}", path.display());
        return Ok(path);
    }
    let index: TfIdfIndex = require(cfg, INDEX_FILE, ArtifactKind::Index, "index")?;
    let encoder = load_encoder(cfg)?;
    let docrank = if cfg.docrank {
        Some(load_pointer(cfg, DOCRANK_FILE, ArtifactKind::DocRank, "train-docrank")?)
    } else {
        None
    };
    let joint = load_pointer(cfg, JOINT_FILE, ArtifactKind::Joint, "train-joint")?;
    let pages = load_pages(&cfg.pages)?;
    let claims = load_claims(&cfg.claims)?;

    let records: Vec<PredictionRecord> = claims
        .par_iter()
        .map(|claim| -> Result<PredictionRecord> {
            let docs = top_docs(cfg, &index, &pages, &encoder, docrank.as_ref(), claim)?;
            let refs = sentence_pool(&pages, &docs);
            let memories: Vec<Vec<f64>> = refs
                .iter()
                .map(|(t, i)| encoder.embed_pair(&claim.text, pages.get_sentence(t, *i).unwrap()))
                .collect();
            let mut pred = crate::joint::predict(&joint, &memories, &refs, cfg.n, cfg.ptr_beam)?;
            if cfg.dateproc {
                let texts: Vec<String> = pred
                    .evidence
                    .iter()
                    .map(|(t, i)| pages.get_sentence(t, *i).map(str::to_string))
                    .collect::<Result<_>>()?;
                pred = apply_postprocess(pred, &claim.text, &texts);
            }
            Ok(PredictionRecord::new(claim.id, &pred))
        })
        .collect::<Result<_>>()?;

    save_predictions(&records, &path)?;
    info!("wrote {} predictions -> {}", records.len(), path.display());
    Ok(path)
}

/// Scoring output: the headline report plus a per-attack-type breakdown when
/// the gold file carries attack tags.
#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    pub report: ScoreReport,
    pub breakdown: Option<AttackBreakdown>,
}

/// Score a prediction file against gold claims and write `report.json`.
pub fn cmd_evaluate(
    cfg: &Config,
    pred_path: &Path,
    gold_path: &Path,
    k: usize,
) -> Result<EvalOutput> {
    ensure_workdir(cfg)?;
    let preds = load_predictions(pred_path)?;
    let gold = load_claims(gold_path)?;
    let report = score(&preds, &gold, k)?;
    let breakdown = if gold.iter().any(|c| c.attack_type.is_some()) {
        Some(score_by_attack_type(&preds, &gold, k)?)
    } else {
        None
    };
    let out = EvalOutput { report, breakdown };
    let path = workpath(cfg, REPORT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&out).map_err(|e| Error::Validation(e.to_string()))?)?;
    info!("wrote {}", path.display());
    Ok(out)
}

/// Compute attack potency (optionally writing a JSON report).
pub fn cmd_potency(
    fevers: &[f64],
    correct_rate: f64,
    report_path: Option<&Path>,
) -> Result<PotencyReport> {
    let report = potency(fevers, correct_rate)?;
    if let Some(path) = report_path {
        let text =
            serde_json::to_string_pretty(&report).map_err(|e| Error::Validation(e.to_string()))?;
        std::fs::write(path, text)?;
    }
    Ok(report)
}

/// The trained encoder acting as a 3-way veracity scorer for the synonym
/// attack: claim and joined evidence go through the pair embedding, then the
/// fine-tuned veracity head.
struct EncoderVictim {
    model: EncoderModel,
}

impl EncoderVictim {
    fn new(model: EncoderModel) -> Result<Self> {
        let ok = model.aux_head.len() == 2 && model.aux_head[0].1.rows == 3;
        if !ok {
            return Err(Error::Validation(
                "encoder has no 3-way veracity head; rerun train-encoder".into(),
            ));
        }
        Ok(EncoderVictim { model })
    }
}

impl VictimScorer for EncoderVictim {
    fn label_dist(&mut self, claim: &str, evidence: &[String]) -> Result<[f64; 3]> {
        let emb = self.model.embed_pair(claim, &evidence.join(" "));
        let w = &self.model.aux_head[0].1;
        let b = &self.model.aux_head[1].1;
        let mut logits = crate::nn::matvec(w, &emb);
        for (l, bv) in logits.iter_mut().zip(&b.data) {
            *l += bv;
        }
        let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let exp: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
        let z: f64 = exp.iter().sum();
        Ok([exp[0] / z, exp[1] / z, exp[2] / z])
    }
}

/// Options for one attack-generation run.
pub struct AttackArgs<'a> {
    pub kind: &'a str,
    pub input: &'a Path,
    pub output: &'a Path,
    pub seed: u64,
    pub flip: bool,
    pub modifiers: Option<&'a Path>,
    pub synonyms: Option<&'a Path>,
    pub budget: usize,
}

/// Generate one attack set from a claims file. Returns how many claims were
/// written.
pub fn cmd_attack(cfg: &Config, args: &AttackArgs) -> Result<usize> {
    let kind = attacks::parse_attack_kind(args.kind)?;
    let claims = load_claims(args.input)?;
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);

    let mut generated: Vec<AttackClaim> = match kind {
        attacks::CONJUNCTION => attacks::conjunction_batch(&claims, &mut rng),
        attacks::DATE_MANIPULATION => attacks::date_batch(&claims, args.flip, &mut rng),
        attacks::ADDITIONAL_UNVERIFIABLE => {
            let path = args.modifiers.ok_or_else(|| {
                Error::Usage("unverifiable attacks need --modifiers <file>".into())
            })?;
            let modifiers = attacks::load_modifiers(path)?;
            attacks::unverifiable_batch(&claims, &modifiers, &mut rng)?
        }
        attacks::LEXICAL_SUBSTITUTION => {
            let path = args.synonyms.ok_or_else(|| {
                Error::Usage("lexical substitution needs --synonyms <file>".into())
            })?;
            let synonyms = attacks::load_synonyms(path)?;
            let mut victim = EncoderVictim::new(load_encoder(cfg)?)?;
            let pages = load_pages(&cfg.pages)?;
            let evidence_for = |claim: &ClaimRecord| -> Vec<String> {
                let mut seen = std::collections::BTreeSet::new();
                let mut texts = Vec::new();
                for r in claim.evidence_groups.iter().flatten() {
                    if seen.insert(r.clone()) {
                        match pages.get_sentence(&r.0, r.1) {
                            Ok(s) => texts.push(s.to_string()),
                            Err(_) => warn!("claim {}: evidence {r:?} not in page store", claim.id),
                        }
                    }
                }
                texts
            };
            attacks::lexsub_batch(
                &claims,
                &evidence_for,
                &mut victim,
                &synonyms,
                args.budget,
                &mut rng,
            )?
        }
        _ => unreachable!("parse_attack_kind admits only known kinds"),
    };

    let start = claims.iter().map(|c| c.id).max().unwrap_or(0) + 1;
    attacks::renumber(&mut generated, start);
    attacks::emit_attack_file(&generated, args.output)?;
    info!("wrote {} {kind} claims -> {}", generated.len(), args.output.display());
    Ok(generated.len())
}
