//! Scoring: label accuracy, complete-group evidence recall@k, the combined
//! label+evidence score, attack potency, and per-attack-type breakdowns.
//! Matching between predictions and gold claims is strict in both directions
//! so denominators can never silently drift.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ClaimRecord, EvidenceRef, RelationLabel};
use crate::joint::JointPrediction;
use crate::{Error, Result};

/// One predicted claim as stored in prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: i64,
    #[serde(rename = "predicted_label")]
    pub label: RelationLabel,
    #[serde(rename = "predicted_evidence")]
    pub evidence: Vec<EvidenceRef>,
    #[serde(default)]
    pub step_labels: Vec<[f64; 3]>,
}

impl PredictionRecord {
    pub fn new(id: i64, pred: &JointPrediction) -> Self {
        PredictionRecord {
            id,
            label: pred.label,
            evidence: pred.evidence.clone(),
            step_labels: pred.step_labels.clone(),
        }
    }
}

/// Load a prediction file (JSON lines); ids must be unique.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<PredictionRecord> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(rec.id) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("duplicate prediction id {}", rec.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Write predictions as compact JSON lines.
pub fn save_predictions(preds: &[PredictionRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for p in preds {
        serde_json::to_writer(&mut w, p).map_err(|e| Error::Validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Headline metrics for one prediction set. `recall_at_k` is undefined (None)
/// when the gold set has no supported/refuted claims.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub claims: usize,
    pub accuracy: f64,
    pub recall_at_k: Option<f64>,
    pub fever: f64,
    pub k: usize,
}

impl ScoreReport {
    /// Aligned-column rendering, one header and one value row.
    pub fn text(&self) -> String {
        let recall = match self.recall_at_k {
            Some(r) => format!("{r:>9.4}"),
            None => format!("{:>9}", "-"),
        };
        format!(
            "{:>7}  {:>8}  {:>9}  {:>7}\n{:>7}  {:>8.4}  {recall}  {:>7.4}\n",
            "claims",
            "accuracy",
            format!("recall@{}", self.k),
            "fever",
            self.claims,
            self.accuracy,
            self.fever,
        )
    }
}

/// Does any complete gold group sit inside the predicted top-k?
fn covered(gold_groups: &[Vec<EvidenceRef>], topk: &[EvidenceRef]) -> bool {
    gold_groups.iter().any(|g| !g.is_empty() && g.iter().all(|r| topk.contains(r)))
}

/// Score predictions against gold claims at evidence cutoff `k`.
///
/// Accuracy counts label matches. Recall counts supported/refuted claims with
/// some complete gold group inside the predicted top-k. The combined score
/// counts claims whose label is right and — for supported/refuted claims —
/// whose evidence also covers a complete group. Every gold claim must have
/// exactly one prediction and vice versa; gold claims must be labeled.
pub fn score(
    predictions: &[PredictionRecord],
    gold: &[ClaimRecord],
    k: usize,
) -> Result<ScoreReport> {
    if gold.is_empty() {
        return Err(Error::Validation("no claims to score".into()));
    }
    if k == 0 {
        return Err(Error::Validation("evidence cutoff k must be >= 1".into()));
    }
    let mut by_id: BTreeMap<i64, &PredictionRecord> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.id, p).is_some() {
            return Err(Error::Validation(format!("duplicate prediction id {}", p.id)));
        }
    }
    let mut matched = 0usize;
    let (mut label_ok, mut sr_total, mut sr_covered, mut fever_ok) = (0usize, 0usize, 0usize, 0usize);
    for claim in gold {
        let label = claim
            .label
            .ok_or_else(|| Error::Validation(format!("gold claim {} is unlabeled", claim.id)))?;
        let pred = by_id.get(&claim.id).ok_or_else(|| {
            Error::Validation(format!("no prediction for gold claim {}", claim.id))
        })?;
        matched += 1;
        let topk = &pred.evidence[..pred.evidence.len().min(k)];
        let right_label = pred.label == label;
        if right_label {
            label_ok += 1;
        }
        if label == RelationLabel::NotEnoughInfo {
            if right_label {
                fever_ok += 1;
            }
        } else {
            sr_total += 1;
            let cov = covered(&claim.evidence_groups, topk);
            if cov {
                sr_covered += 1;
            }
            if right_label && cov {
                fever_ok += 1;
            }
        }
    }
    if matched < predictions.len() {
        let extra = predictions.iter().find(|p| !gold.iter().any(|c| c.id == p.id)).unwrap();
        return Err(Error::Validation(format!("prediction {} has no gold claim", extra.id)));
    }
    let n = gold.len() as f64;
    Ok(ScoreReport {
        claims: gold.len(),
        accuracy: label_ok as f64 / n,
        recall_at_k: (sr_total > 0).then(|| sr_covered as f64 / sr_total as f64),
        fever: fever_ok as f64 / n,
        k,
    })
}

/// Attack-set potency across victim systems.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotencyReport {
    pub fevers: Vec<f64>,
    pub potency: f64,
    pub correct_rate: f64,
    pub adjusted: f64,
}

impl PotencyReport {
    pub fn text(&self) -> String {
        format!(
            "{:>8}  {:>8}  {:>8}\n{:>8.4}  {:>8.4}  {:>8.4}\n",
            "potency", "correct", "adjusted", self.potency, self.correct_rate, self.adjusted,
        )
    }
}

/// Potency = one minus the mean score the attacks allow victims; adjusting
/// scales by the fraction of attacks that are well-formed. All fractions.
pub fn potency(fevers: &[f64], correct_rate: f64) -> Result<PotencyReport> {
    if fevers.is_empty() {
        return Err(Error::Validation("potency needs at least one system score".into()));
    }
    for &f in fevers {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Validation(format!("system score {f} outside [0, 1]")));
        }
    }
    if !(0.0..=1.0).contains(&correct_rate) {
        return Err(Error::Validation(format!("correct rate {correct_rate} outside [0, 1]")));
    }
    let potency = 1.0 - fevers.iter().sum::<f64>() / fevers.len() as f64;
    Ok(PotencyReport { fevers: fevers.to_vec(), potency, correct_rate, adjusted: potency * correct_rate })
}

/// Per-attack-type reports plus an unweighted macro summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackBreakdown {
    pub per_type: Vec<(String, ScoreReport)>,
    pub summary: ScoreReport,
}

impl AttackBreakdown {
    pub fn text(&self) -> String {
        let mut out = format!(
            "{:<26}  {:>7}  {:>8}  {:>9}  {:>7}\n",
            "type",
            "claims",
            "accuracy",
            format!("recall@{}", self.summary.k),
            "fever"
        );
        let mut row = |name: &str, r: &ScoreReport| {
            let recall = match r.recall_at_k {
                Some(v) => format!("{v:>9.4}"),
                None => format!("{:>9}", "-"),
            };
            out.push_str(&format!(
                "{name:<26}  {:>7}  {:>8.4}  {recall}  {:>7.4}\n",
                r.claims, r.accuracy, r.fever
            ));
        };
        for (name, report) in &self.per_type {
            row(name, report);
        }
        row("macro", &self.summary);
        out
    }
}

/// Group gold claims by attack type (untagged claims fall under "untyped"),
/// score each group separately, and macro-average the groups with equal
/// weight; the macro recall averages only groups where recall is defined.
pub fn score_by_attack_type(
    predictions: &[PredictionRecord],
    gold: &[ClaimRecord],
    k: usize,
) -> Result<AttackBreakdown> {
    let mut groups: BTreeMap<String, Vec<ClaimRecord>> = BTreeMap::new();
    for claim in gold {
        let ty = claim.attack_type.clone().unwrap_or_else(|| "untyped".to_string());
        groups.entry(ty).or_default().push(claim.clone());
    }
    let mut per_type = Vec::new();
    for (ty, claims) in groups {
        let ids: std::collections::BTreeSet<i64> = claims.iter().map(|c| c.id).collect();
        let preds: Vec<PredictionRecord> =
            predictions.iter().filter(|p| ids.contains(&p.id)).cloned().collect();
        per_type.push((ty, score(&preds, &claims, k)?));
    }
    // The per-group scores above ignore stray predictions; a full strict pass
    // catches predictions that match no gold claim at all.
    score(predictions, gold, k)?;

    let n = per_type.len() as f64;
    let recalls: Vec<f64> = per_type.iter().filter_map(|(_, r)| r.recall_at_k).collect();
    let summary = ScoreReport {
        claims: gold.len(),
        accuracy: per_type.iter().map(|(_, r)| r.accuracy).sum::<f64>() / n,
        recall_at_k: (!recalls.is_empty())
            .then(|| recalls.iter().sum::<f64>() / recalls.len() as f64),
        fever: per_type.iter().map(|(_, r)| r.fever).sum::<f64>() / n,
        k,
    };
    Ok(AttackBreakdown { per_type, summary })
}
