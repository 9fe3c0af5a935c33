//! Rule-based temporal post-processing: extract a date assertion from the
//! claim and a date from the predicted evidence, resolve their consistency
//! with simple calendar arithmetic, and override the relation label.
//!
//! Extraction is deliberately pattern-based and limited to five phrase kinds:
//! "in/during <year>", "before/after <year>", "between <y1> and <y2>",
//! decade/century verbalizations, and "<n> years/days before/after <year>".
//! Everything works at year granularity; finer precisions are treated as
//! incomparable rather than guessed at.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};

use crate::corpus::RelationLabel;
use crate::joint::JointPrediction;

/// Offset unit in "<n> years/days before/after <year>".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetUnit {
    Years,
    Days,
}

/// Shape of a temporal phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateKind {
    In,
    Between,
    Offset,
    Before,
    After,
}

/// One extracted temporal assertion: the span before the phrase, the phrase
/// kind, one anchor year (two for a range), and the signed offset for
/// "<n> years/days before/after" phrases (negative = before).
#[derive(Debug, Clone, PartialEq)]
pub struct DateTuple {
    pub subject: String,
    pub kind: DateKind,
    pub dates: Vec<i64>,
    pub offset: Option<(i64, OffsetUnit)>,
}

impl DateTuple {
    pub fn in_year(year: i64) -> DateTuple {
        DateTuple { subject: String::new(), kind: DateKind::In, dates: vec![year], offset: None }
    }

    pub fn between(lo: i64, hi: i64) -> DateTuple {
        DateTuple {
            subject: String::new(),
            kind: DateKind::Between,
            dates: vec![lo.min(hi), lo.max(hi)],
            offset: None,
        }
    }

    pub fn offset(anchor: i64, amount: i64, unit: OffsetUnit) -> DateTuple {
        DateTuple {
            subject: String::new(),
            kind: DateKind::Offset,
            dates: vec![anchor],
            offset: Some((amount, unit)),
        }
    }

    /// The single year this tuple pins down when read as an evidence date:
    /// the anchor year as mentioned, with year-offsets resolved. Ranges and
    /// day-offsets pin down nothing at year granularity.
    pub fn determinate_year(&self) -> Option<i64> {
        match self.kind {
            DateKind::In | DateKind::Before | DateKind::After => Some(self.dates[0]),
            DateKind::Offset => match self.offset {
                Some((n, OffsetUnit::Years)) => Some(self.dates[0] + n),
                _ => None,
            },
            DateKind::Between => None,
        }
    }
}

/// Which of the three resolution rules applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// Range membership ("between/during/in").
    Containment,
    /// Anchor plus offset, then equality ("x years before/after").
    OffsetArithmetic,
    /// Plain ordering ("before/after").
    DirectComparison,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Containment => "containment",
            RuleKind::OffsetArithmetic => "offset",
            RuleKind::DirectComparison => "direct",
        }
    }
}

/// Outcome of resolving a claim assertion against an evidence date. The
/// override is absent when either side fails to pin down a comparable year
/// (range-only evidence, day offsets against year-only dates).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalVerdict {
    pub override_label: Option<RelationLabel>,
    pub rule: RuleKind,
    pub claim_date: String,
    pub evidence_year: Option<i64>,
}

impl TemporalVerdict {
    /// One audit line per resolution.
    pub fn trace(&self) -> Value {
        json!({
            "rule": self.rule.as_str(),
            "claim_date": self.claim_date,
            "evidence_date": self.evidence_year.map(|y| y.to_string()).unwrap_or_default(),
            "verdict": self.override_label.map(|l| l.as_str().to_string()).unwrap_or_default(),
        })
    }
}

const ORDINAL_WORDS: [&str; 10] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
];

/// Ordinal word for 1–10 ("first" … "tenth"), the decade vocabulary both
/// the extractor and the date-attack generator agree on.
pub fn ordinal_word(n: i64) -> Option<&'static str> {
    ORDINAL_WORDS.get(usize::try_from(n - 1).ok()?).copied()
}

/// "21" → "21st" with the teens all taking "th".
pub fn ordinal_suffix(n: i64) -> &'static str {
    match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    }
}

fn ordinal_value(word: &str) -> Option<i64> {
    let lower = word.to_ascii_lowercase();
    if let Some(i) = ORDINAL_WORDS.iter().position(|&w| w == lower) {
        return Some(i as i64 + 1);
    }
    lower.trim_end_matches(['s', 't', 'n', 'd', 'r', 'h']).parse().ok()
}

/// First year of century `c` under the colloquial convention
/// (21st century = 2000–2099).
fn century_start(c: i64) -> i64 {
    (c - 1) * 100
}

struct Patterns {
    offset: Regex,
    between: Regex,
    decade: Regex,
    century: Regex,
    direct: Regex,
    in_year: Regex,
    bare_year: Regex,
}

fn patterns() -> &'static Patterns {
    static CELL: OnceLock<Patterns> = OnceLock::new();
    CELL.get_or_init(|| Patterns {
        offset: Regex::new(r"(?i)\b(\d{1,3})\s+(years?|days?)\s+(before|after)\s+(\d{4})\b")
            .unwrap(),
        between: Regex::new(r"(?i)\bbetween\s+(\d{4})\s+and\s+(\d{4})\b").unwrap(),
        decade: Regex::new(
            r"(?i)\b(?:in|during)\s+the\s+(first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth|\d{1,2}(?:st|nd|rd|th))\s+decade\s+of\s+the\s+(\d{1,3})(?:st|nd|rd|th)\s+century\b",
        )
        .unwrap(),
        century: Regex::new(r"(?i)\b(?:in|during)\s+the\s+(\d{1,3})(?:st|nd|rd|th)\s+century\b")
            .unwrap(),
        direct: Regex::new(r"(?i)\b(before|after)\s+(\d{4})\b").unwrap(),
        in_year: Regex::new(r"(?i)\b(?:in|during)\s+(\d{4})\b").unwrap(),
        bare_year: Regex::new(r"\b([12]\d{3})\b").unwrap(),
    })
}

/// Extract the first temporal assertion in reading order; ties at the same
/// position go to the more specific pattern (offsets beat bare
/// "before/after", decade verbalizations beat bare centuries).
pub fn extract_date_tuple(text: &str) -> Option<DateTuple> {
    let p = patterns();
    let ordered: [&Regex; 6] =
        [&p.offset, &p.between, &p.decade, &p.century, &p.direct, &p.in_year];
    let (which, m) = ordered
        .iter()
        .enumerate()
        .filter_map(|(i, re)| re.find(text).map(|m| (i, m)))
        .min_by_key(|(i, m)| (m.start(), *i))?;
    let subject = text[..m.start()].trim().to_string();
    let re = ordered[which];
    let caps = re.captures(&text[m.start()..]).unwrap();
    let tuple = match which {
        0 => {
            let n: i64 = caps[1].parse().ok()?;
            let unit = if caps[2].to_ascii_lowercase().starts_with("year") {
                OffsetUnit::Years
            } else {
                OffsetUnit::Days
            };
            let sign = if caps[3].eq_ignore_ascii_case("after") { 1 } else { -1 };
            let anchor: i64 = caps[4].parse().ok()?;
            DateTuple::offset(anchor, sign * n, unit)
        }
        1 => {
            let a: i64 = caps[1].parse().ok()?;
            let b: i64 = caps[2].parse().ok()?;
            DateTuple::between(a, b)
        }
        2 => {
            let m_idx = ordinal_value(&caps[1])?;
            let c: i64 = caps[2].parse().ok()?;
            if !(1..=10).contains(&m_idx) || c < 1 {
                return None;
            }
            let lo = century_start(c) + (m_idx - 1) * 10;
            DateTuple::between(lo, lo + 9)
        }
        3 => {
            let c: i64 = caps[1].parse().ok()?;
            if c < 1 {
                return None;
            }
            let lo = century_start(c);
            DateTuple::between(lo, lo + 99)
        }
        4 => {
            let year: i64 = caps[2].parse().ok()?;
            let kind = if caps[1].eq_ignore_ascii_case("before") {
                DateKind::Before
            } else {
                DateKind::After
            };
            DateTuple { subject: String::new(), kind, dates: vec![year], offset: None }
        }
        _ => DateTuple::in_year(caps[1].parse().ok()?),
    };
    Some(DateTuple { subject, ..tuple })
}

/// First plausible standalone year (1000–2999) in a sentence; the evidence
/// fallback for dates mentioned without one of the five phrase shapes
/// ("Artpop (2013) is …").
pub fn bare_year(text: &str) -> Option<i64> {
    patterns().bare_year.captures(text).and_then(|c| c[1].parse().ok())
}

/// Resolve a claim assertion against an evidence tuple: supported when the
/// evidence year satisfies the claim's temporal constraint, refuted when it
/// does not, no override when either side is indeterminate at year
/// granularity.
pub fn resolve(claim: &DateTuple, evidence: &DateTuple) -> TemporalVerdict {
    let ev = evidence.determinate_year();
    let (rule, claim_date, consistent) = match claim.kind {
        DateKind::In => {
            let y = claim.dates[0];
            (RuleKind::Containment, y.to_string(), ev.map(|e| e == y))
        }
        DateKind::Between => {
            let (a, b) = (claim.dates[0], claim.dates[1]);
            (RuleKind::Containment, format!("{a}..{b}"), ev.map(|e| a <= e && e <= b))
        }
        DateKind::Offset => match claim.offset {
            Some((n, OffsetUnit::Years)) => {
                let resolved = claim.dates[0] + n;
                (RuleKind::OffsetArithmetic, resolved.to_string(), ev.map(|e| e == resolved))
            }
            // Day offsets can cross a year boundary, so a year-only evidence
            // date cannot confirm or refute them.
            _ => (
                RuleKind::OffsetArithmetic,
                format!("{} days from {}", claim.offset.map_or(0, |(n, _)| n), claim.dates[0]),
                None,
            ),
        },
        DateKind::Before => {
            let y = claim.dates[0];
            (RuleKind::DirectComparison, format!("before {y}"), ev.map(|e| e < y))
        }
        DateKind::After => {
            let y = claim.dates[0];
            (RuleKind::DirectComparison, format!("after {y}"), ev.map(|e| e > y))
        }
    };
    TemporalVerdict {
        override_label: consistent.map(|c| {
            if c {
                RelationLabel::Supports
            } else {
                RelationLabel::Refutes
            }
        }),
        rule,
        claim_date,
        evidence_year: ev,
    }
}

/// Post-process one prediction: if the claim carries a temporal assertion,
/// scan its predicted evidence in rank order for the first sentence that
/// pins down a year (phrase extraction first, bare-year fallback second) and
/// replace the final label with the resolved verdict. Evidence selection and
/// step distributions are never touched.
pub fn apply_postprocess(
    prediction: JointPrediction,
    claim_text: &str,
    evidence_texts: &[String],
) -> JointPrediction {
    let Some(claim_tuple) = extract_date_tuple(claim_text) else {
        return prediction;
    };
    for text in evidence_texts {
        let ev_tuple = match extract_date_tuple(text) {
            Some(t) => t,
            None => match bare_year(text) {
                Some(y) => DateTuple::in_year(y),
                None => continue,
            },
        };
        let verdict = resolve(&claim_tuple, &ev_tuple);
        if let Some(label) = verdict.override_label {
            let mut out = prediction;
            out.label = label;
            return out;
        }
    }
    prediction
}
