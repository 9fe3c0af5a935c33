//! Claims and pages: the two JSON-lines inputs everything else consumes.
//!
//! Claims: `{"id": int, "claim": str, "label": "SUPPORTS"|"REFUTES"|"NOT ENOUGH
//! INFO"|null, "evidence": [[[title, idx], ...], ...], "attack_type": str|null}`.
//! Pages: `{"title": str, "sentences": [str, ...]}` with list position as the
//! sentence index. Validation is strict: unknown labels, duplicate ids, and
//! label/evidence mismatches are errors, not warnings — attack files must stay
//! label-audited.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Veracity relation. The declaration order fixes the tie-break total order
/// used everywhere: S < R < NEI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationLabel {
    Supports,
    Refutes,
    NotEnoughInfo,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 3] =
        [RelationLabel::Supports, RelationLabel::Refutes, RelationLabel::NotEnoughInfo];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::Supports => "SUPPORTS",
            RelationLabel::Refutes => "REFUTES",
            RelationLabel::NotEnoughInfo => "NOT ENOUGH INFO",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "SUPPORTS" => Ok(RelationLabel::Supports),
            "REFUTES" => Ok(RelationLabel::Refutes),
            "NOT ENOUGH INFO" => Ok(RelationLabel::NotEnoughInfo),
            other => Err(Error::Validation(format!("unknown label {other:?}"))),
        }
    }

    /// Index into distribution vectors: S=0, R=1, NEI=2.
    pub fn index(self) -> usize {
        match self {
            RelationLabel::Supports => 0,
            RelationLabel::Refutes => 1,
            RelationLabel::NotEnoughInfo => 2,
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for RelationLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RelationLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        RelationLabel::parse(&s).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// One (page title, sentence index) evidence coordinate.
pub type EvidenceRef = (String, usize);

/// A claim with optional gold label and gold evidence groups. Each group is a
/// set of sentences that jointly suffices; groups are alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: i64,
    #[serde(rename = "claim")]
    pub text: String,
    pub label: Option<RelationLabel>,
    #[serde(rename = "evidence")]
    pub evidence_groups: Vec<Vec<EvidenceRef>>,
    #[serde(default)]
    pub attack_type: Option<String>,
}

impl ClaimRecord {
    /// Enforce the label/evidence invariants on a single record.
    pub fn validate(&self) -> Result<()> {
        if self.evidence_groups.iter().any(|g| g.is_empty()) {
            return Err(Error::Validation(format!("claim {}: empty evidence group", self.id)));
        }
        match self.label {
            Some(RelationLabel::NotEnoughInfo) if !self.evidence_groups.is_empty() => {
                Err(Error::Validation(format!("claim {}: NEI with evidence", self.id)))
            }
            Some(RelationLabel::Supports) | Some(RelationLabel::Refutes)
                if self.evidence_groups.is_empty() =>
            {
                Err(Error::Validation(format!("claim {}: {} without evidence", self.id, self.label.unwrap())))
            }
            _ => Ok(()),
        }
    }

    /// Distinct gold page titles, in first-seen order.
    pub fn gold_titles(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for g in &self.evidence_groups {
            for (t, _) in g {
                if !out.contains(&t.as_str()) {
                    out.push(t);
                }
            }
        }
        out
    }
}

/// A titled document with index-addressable sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WikiPage {
    pub title: String,
    pub sentences: Vec<String>,
}

/// Read-only page store; lookups are deterministic and independent of the
/// order pages were loaded in.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PageStore {
    pages: BTreeMap<String, Vec<String>>,
}

impl PageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, page: WikiPage) -> Result<()> {
        if page.title.is_empty() {
            return Err(Error::Validation("empty page title".into()));
        }
        if self.pages.contains_key(&page.title) {
            return Err(Error::Validation(format!("duplicate page title {:?}", page.title)));
        }
        self.pages.insert(page.title, page.sentences);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn contains(&self, title: &str) -> bool {
        self.pages.contains_key(title)
    }

    pub fn sentences(&self, title: &str) -> Option<&[String]> {
        self.pages.get(title).map(|v| v.as_slice())
    }

    pub fn get_sentence(&self, title: &str, index: usize) -> Result<&str> {
        let sents = self
            .pages
            .get(title)
            .ok_or_else(|| Error::NotFound(format!("page {title:?}")))?;
        sents
            .get(index)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::NotFound(format!("sentence {index} of page {title:?}")))
    }

    /// Titles in lexicographic order.
    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.pages.keys().map(|s| s.as_str())
    }
}

fn parse_err(path: &Path, line: usize, msg: impl fmt::Display) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.to_string() }
}

/// Load and validate a claims file. Ids must be unique; records keep file order.
pub fn load_claims(path: impl AsRef<Path>) -> Result<Vec<ClaimRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClaimRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        rec.validate().map_err(|e| parse_err(path, lineno, e))?;
        if let Some(first) = seen.insert(rec.id, lineno) {
            return Err(parse_err(path, lineno, format!("duplicate id {} (first at line {first})", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Write claims as JSON-lines, one compact object per line.
pub fn save_claims(claims: &[ClaimRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in claims {
        serde_json::to_writer(&mut w, c).map_err(|e| Error::Validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Load pages into a store; duplicate or empty titles are errors.
pub fn load_pages(path: impl AsRef<Path>) -> Result<PageStore> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut store = PageStore::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let page: WikiPage =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        store.insert(page).map_err(|e| parse_err(path, lineno, e))?;
    }
    Ok(store)
}

/// Write a page store back out, one page per line in title order.
pub fn save_pages(store: &PageStore, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for title in store.titles() {
        let page = WikiPage {
            title: title.to_string(),
            sentences: store.sentences(title).unwrap_or(&[]).to_vec(),
        };
        serde_json::to_writer(&mut w, &page).map_err(|e| Error::Validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Per-label claim counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LabelCounts {
    pub supports: usize,
    pub refutes: usize,
    pub nei: usize,
    pub unlabeled: usize,
    pub total: usize,
}

pub fn dataset_stats(claims: &[ClaimRecord]) -> LabelCounts {
    let mut c = LabelCounts::default();
    for claim in claims {
        match claim.label {
            Some(RelationLabel::Supports) => c.supports += 1,
            Some(RelationLabel::Refutes) => c.refutes += 1,
            Some(RelationLabel::NotEnoughInfo) => c.nei += 1,
            None => c.unlabeled += 1,
        }
        c.total += 1;
    }
    c
}
