//! Adversarial claim generators with construction-guaranteed labels:
//! conjunctions of two claims, date rewrites of "in <year>" phrases,
//! unverifiable-modifier insertion, and a genetic search over single-token
//! synonym substitutions against a victim classifier. Everything is seeded
//! and deterministic; outputs are corpus-format claim records tagged with
//! their attack type and source claim ids.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use regex::Regex;
use serde_json::json;

use crate::corpus::{ClaimRecord, EvidenceRef, RelationLabel};
use crate::temporal::{extract_date_tuple, ordinal_suffix, ordinal_word, DateKind};
use crate::text::{subject_span, word_tokens};
use crate::{Error, Result};

pub const CONJUNCTION: &str = "conjunction";
pub const DATE_MANIPULATION: &str = "date_manipulation";
pub const ADDITIONAL_UNVERIFIABLE: &str = "additional_unverifiable";
pub const LEXICAL_SUBSTITUTION: &str = "lexical_substitution";

/// A generated claim: a corpus record (attack_type populated) plus the ids it
/// was built from and whether a human should double-check the rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackClaim {
    pub record: ClaimRecord,
    pub sources: Vec<i64>,
    pub needs_review: bool,
}

/// Truth table for conjoined claims: supported only when both sides are,
/// refuted when either side is (refuting one conjunct refutes the whole),
/// unverifiable otherwise.
pub fn conjunction_label(a: RelationLabel, b: RelationLabel) -> RelationLabel {
    use RelationLabel::*;
    if a == Refutes || b == Refutes {
        Refutes
    } else if a == Supports && b == Supports {
        Supports
    } else {
        NotEnoughInfo
    }
}

/// Byte offset of the text remaining after `n` countable words (words that
/// still contain something alphanumeric, matching the token view the subject
/// heuristic runs on).
fn after_words(text: &str, n: usize) -> usize {
    let mut count = 0;
    let mut chars = text.char_indices().peekable();
    while count < n {
        while chars.next_if(|(_, c)| c.is_whitespace()).is_some() {}
        let Some(&(start, _)) = chars.peek() else {
            return text.len();
        };
        let mut end = text.len();
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() {
                end = i;
                break;
            }
            chars.next();
        }
        if text[start..end].chars().any(|c| c.is_alphanumeric()) {
            count += 1;
        }
    }
    while chars.next_if(|(_, c)| c.is_whitespace()).is_some() {}
    chars.peek().map_or(text.len(), |&(i, _)| i)
}

fn subject_string(text: &str) -> Option<(String, usize)> {
    let tokens = word_tokens(text);
    let (start, end) = subject_span(&tokens)?;
    Some((tokens[start..end].join(" "), end))
}

fn strip_terminal(text: &str) -> &str {
    text.trim().trim_end_matches(['.', '!', '?']).trim_end()
}

fn ensure_terminal(mut text: String) -> String {
    if !text.ends_with(['.', '!', '?']) {
        text.push('.');
    }
    text
}

fn dedup_union(a: &[EvidenceRef], b: &[EvidenceRef]) -> Vec<EvidenceRef> {
    let mut out = a.to_vec();
    for r in b {
        if !out.contains(r) {
            out.push(r.clone());
        }
    }
    out
}

/// Conjoin two labeled claims with "and", dropping the second claim's subject
/// when both claims share one. Evidence follows the label: a supported
/// conjunction needs one group from each side (cross-product of unions), a
/// refuted one is covered by any refuting side's groups, an unverifiable one
/// carries none.
pub fn make_conjunction(a: &ClaimRecord, b: &ClaimRecord) -> Result<AttackClaim> {
    let label_a = a.label.ok_or_else(|| Error::Validation(format!("claim {}: unlabeled", a.id)))?;
    let label_b = b.label.ok_or_else(|| Error::Validation(format!("claim {}: unlabeled", b.id)))?;
    let label = conjunction_label(label_a, label_b);

    let subj_a = subject_string(&a.text);
    let subj_b = subject_string(&b.text);
    let b_trim = b.text.trim();
    let b_fragment = match (&subj_a, &subj_b) {
        (Some((sa, _)), Some((sb, words))) if sa == sb => &b_trim[after_words(b_trim, *words)..],
        _ => b_trim,
    };
    let text = ensure_terminal(format!("{} and {}", strip_terminal(&a.text), b_fragment.trim()));

    use RelationLabel::*;
    let evidence_groups = match label {
        Supports => {
            let mut groups = Vec::new();
            for ga in &a.evidence_groups {
                for gb in &b.evidence_groups {
                    groups.push(dedup_union(ga, gb));
                }
            }
            groups
        }
        Refutes => {
            let mut groups = Vec::new();
            if label_a == Refutes {
                groups.extend(a.evidence_groups.iter().cloned());
            }
            if label_b == Refutes {
                groups.extend(b.evidence_groups.iter().cloned());
            }
            groups
        }
        NotEnoughInfo => Vec::new(),
    };

    Ok(AttackClaim {
        record: ClaimRecord {
            id: a.id,
            text,
            label: Some(label),
            evidence_groups,
            attack_type: Some(CONJUNCTION.to_string()),
        },
        sources: vec![a.id, b.id],
        needs_review: false,
    })
}

/// Years whose rewritten forms stay four digits for every template
/// (shifts reach ±18, century ordinals reach 101).
const DATE_YEAR_RANGE: std::ops::RangeInclusive<i64> = 1020..=9980;

fn in_year_splice() -> &'static Regex {
    static CELL: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    CELL.get_or_init(|| Regex::new(r"(?i)\b(?:in|during)\s+\d{4}\b").unwrap())
}

fn offset_prefix_guard() -> &'static Regex {
    static CELL: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    CELL.get_or_init(|| Regex::new(r"(?i)\b\d{1,3}\s+(?:years?|days?)\s*$").unwrap())
}

/// Rewrite a claim's "in <year>" phrase seven ways: two offset arithmetics,
/// three ranges, and decade/century verbalizations. Plain rewrites keep the
/// year's truth value and the label; `flip` shifts every form off the year
/// and swaps S and R (NEI passes through). Claims whose first temporal phrase
/// is not a plain year are skipped.
pub fn date_manipulations(
    claim: &ClaimRecord,
    flip: bool,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<AttackClaim>> {
    let label =
        claim.label.ok_or_else(|| Error::Validation(format!("claim {}: unlabeled", claim.id)))?;
    let year = match extract_date_tuple(&claim.text) {
        Some(t) if t.kind == DateKind::In => t.dates[0],
        _ => {
            warn!("claim {}: no leading \"in <year>\" phrase; skipping", claim.id);
            return Ok(Vec::new());
        }
    };
    if !DATE_YEAR_RANGE.contains(&year) {
        warn!("claim {}: year {year} out of rewrite range; skipping", claim.id);
        return Ok(Vec::new());
    }
    let span = in_year_splice().find(&claim.text).expect("extractor found the phrase");
    if offset_prefix_guard().is_match(&claim.text[..span.start()]) {
        warn!("claim {}: year phrase follows an offset count; skipping", claim.id);
        return Ok(Vec::new());
    }

    // Draw all randomness up front so flipped and plain runs stay in step.
    let x1 = rng.gen_range(1..=9i64);
    let x2 = rng.gen_range(1..=9i64);
    let d3 = rng.gen_range(1..=9i64);
    let d4 = rng.gen_range(1..=9i64);
    let d5 = rng.gen_range(1..=9i64);
    let century = year / 100 + 1;
    let decade = (year % 100) / 10 + 1;
    let (century, decade) = if flip {
        (century + 1, if decade == 10 { 9 } else { decade + 1 })
    } else {
        (century, decade)
    };
    let decade_word = ordinal_word(decade).expect("decade index is 1-10");
    let phrases = if flip {
        [
            format!("{x1} years before {}", year + x1 + 1),
            format!("{x2} years after {}", year - x2 - 1),
            format!("before {}", year - d3),
            format!("after {}", year + d4),
            format!("between {} and {}", year + d5, year + 2 * d5),
            format!("in the {decade_word} decade of the {}{} century", year / 100 + 1, ordinal_suffix(year / 100 + 1)),
            format!("in the {century}{} century", ordinal_suffix(century)),
        ]
    } else {
        [
            format!("{x1} years before {}", year + x1),
            format!("{x2} years after {}", year - x2),
            format!("before {}", year + d3),
            format!("after {}", year - d4),
            format!("between {} and {}", year - d5, year + d5),
            format!("in the {decade_word} decade of the {century}{} century", ordinal_suffix(century)),
            format!("in the {century}{} century", ordinal_suffix(century)),
        ]
    };

    use RelationLabel::*;
    let new_label = match (flip, label) {
        (true, Supports) => Refutes,
        (true, Refutes) => Supports,
        _ => label,
    };
    Ok(phrases
        .into_iter()
        .map(|phrase| {
            let mut text = claim.text.clone();
            text.replace_range(span.range(), &phrase);
            AttackClaim {
                record: ClaimRecord {
                    id: claim.id,
                    text,
                    label: Some(new_label),
                    evidence_groups: claim.evidence_groups.clone(),
                    attack_type: Some(DATE_MANIPULATION.to_string()),
                },
                sources: vec![claim.id],
                needs_review: false,
            }
        })
        .collect())
}

const PREPOSITIONS: [&str; 10] =
    ["with", "of", "in", "for", "from", "at", "on", "by", "about", "near"];

/// Insert an unverifiable modifier: a single-word phrase goes before the head
/// noun (final word), a preposition-led phrase attaches at the end, anything
/// else becomes a reduced relative clause after the subject (falling back to
/// the end when no subject is found). The result is unverifiable by
/// construction: NEI with no evidence.
pub fn add_unverifiable(claim: &ClaimRecord, phrase: &str) -> Result<Option<AttackClaim>> {
    match claim.label {
        Some(RelationLabel::Supports) | Some(RelationLabel::Refutes) => {}
        _ => {
            return Err(Error::Validation(format!(
                "claim {}: unverifiable insertion needs an S or R source",
                claim.id
            )))
        }
    }
    let phrase = phrase.trim();
    if phrase.is_empty() {
        return Err(Error::Validation("empty modifier phrase".into()));
    }

    let trimmed = claim.text.trim();
    let (body, terminal) = match trimmed.char_indices().last() {
        Some((i, c)) if ['.', '!', '?'].contains(&c) => (&trimmed[..i], &trimmed[i..]),
        _ => (trimmed, ""),
    };
    let single_word = !phrase.contains(char::is_whitespace);
    let first_word = phrase.split_whitespace().next().unwrap().to_lowercase();

    let text = if single_word {
        // "Taran Killam is a (stage) actor."
        let Some(last_start) = body.trim_end().rfind(char::is_whitespace) else {
            warn!("claim {}: no head noun to modify; skipping", claim.id);
            return Ok(None);
        };
        let (head, noun) = body.split_at(last_start + 1);
        format!("{head}{phrase} {noun}{terminal}")
    } else if PREPOSITIONS.contains(&first_word.as_str()) {
        // "Roswell is an American TV series (with 61 episodes)."
        format!("{} {phrase}{terminal}", body.trim_end())
    } else if let Some((_, words)) = subject_string(body) {
        // "Duff McKagan(, born in Seattle,) is an American citizen."
        let rest_at = after_words(body, words);
        format!("{}, {phrase}, {}{terminal}", body[..rest_at].trim_end(), &body[rest_at..])
    } else {
        format!("{} {phrase}{terminal}", body.trim_end())
    };

    Ok(Some(AttackClaim {
        record: ClaimRecord {
            id: claim.id,
            text,
            label: Some(RelationLabel::NotEnoughInfo),
            evidence_groups: Vec::new(),
            attack_type: Some(ADDITIONAL_UNVERIFIABLE.to_string()),
        },
        sources: vec![claim.id],
        needs_review: false,
    }))
}

/// Classifier under attack: label distribution for a claim against a fixed
/// set of evidence sentences.
pub trait VictimScorer {
    fn label_dist(&mut self, claim: &str, evidence: &[String]) -> Result<[f64; 3]>;
}

/// Candidate replacements for a lowercased token.
pub trait SynonymSource {
    fn synonyms(&self, token: &str) -> Vec<String>;
}

impl SynonymSource for BTreeMap<String, Vec<String>> {
    fn synonyms(&self, token: &str) -> Vec<String> {
        self.get(token).cloned().unwrap_or_default()
    }
}

/// One whitespace word split into punctuation shell and alphanumeric core.
fn split_word(word: &str) -> (&str, &str, &str) {
    let start = word.find(|c: char| c.is_alphanumeric()).unwrap_or(word.len());
    let end = word.rfind(|c: char| c.is_alphanumeric()).map_or(start, |i| {
        i + word[i..].chars().next().unwrap().len_utf8()
    });
    (&word[..start], &word[start..end], &word[end..])
}

fn match_case(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(|c| c.is_uppercase()) {
        let mut cs = replacement.chars();
        match cs.next() {
            Some(first) => first.to_uppercase().chain(cs).collect(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}

/// Search over single-token synonym swaps for the rewrite that most lowers
/// the victim's probability of the gold label: population 20, elitist,
/// `budget` mutation generations. Returns the best rewrite unless every
/// candidate scores above the original claim; rewrites keep the source label
/// and evidence but are flagged for manual review.
pub fn lexical_substitution(
    claim: &ClaimRecord,
    evidence: &[String],
    victim: &mut dyn VictimScorer,
    synonyms: &dyn SynonymSource,
    budget: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Option<AttackClaim>> {
    const POPULATION: usize = 20;
    let label =
        claim.label.ok_or_else(|| Error::Validation(format!("claim {}: unlabeled", claim.id)))?;
    let gold = label.index();

    let words: Vec<&str> = claim.text.split_whitespace().collect();
    let sites: Vec<(usize, Vec<String>)> = words
        .iter()
        .enumerate()
        .filter_map(|(i, w)| {
            let (_, core, _) = split_word(w);
            if core.is_empty() {
                return None;
            }
            let lower = core.to_lowercase();
            let options: Vec<String> =
                synonyms.synonyms(&lower).into_iter().filter(|s| *s != lower).collect();
            if options.is_empty() {
                None
            } else {
                Some((i, options))
            }
        })
        .collect();
    if sites.is_empty() {
        return Ok(None);
    }

    let render = |site: usize, syn: usize| -> String {
        let (word_idx, options) = &sites[site];
        let mut out = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if i == *word_idx {
                let (pre, core, post) = split_word(w);
                out.push(format!("{pre}{}{post}", match_case(core, &options[syn])));
            } else {
                out.push((*w).to_string());
            }
        }
        out.join(" ")
    };

    let original = victim.label_dist(&claim.text, evidence)?[gold];
    let mut cache: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut score = |victim: &mut dyn VictimScorer, site: usize, syn: usize| -> Result<f64> {
        if let Some(&p) = cache.get(&(site, syn)) {
            return Ok(p);
        }
        let p = victim.label_dist(&render(site, syn), evidence)?[gold];
        cache.insert((site, syn), p);
        Ok(p)
    };

    let draw = |rng: &mut ChaCha20Rng| {
        let site = rng.gen_range(0..sites.len());
        (site, rng.gen_range(0..sites[site].1.len()))
    };
    let mut population: Vec<(usize, usize)> = (0..POPULATION).map(|_| draw(rng)).collect();
    let mut best = population[0];
    let mut best_score = score(victim, best.0, best.1)?;
    for &(site, syn) in &population[1..] {
        let p = score(victim, site, syn)?;
        if p < best_score {
            (best, best_score) = ((site, syn), p);
        }
    }

    for _ in 0..budget {
        let mut next = vec![best];
        while next.len() < POPULATION {
            let parent = population[rng.gen_range(0..population.len())];
            let child = if rng.gen_bool(0.5) {
                draw(rng)
            } else {
                (parent.0, rng.gen_range(0..sites[parent.0].1.len()))
            };
            next.push(child);
        }
        population = next;
        for &(site, syn) in &population {
            let p = score(victim, site, syn)?;
            if p < best_score {
                (best, best_score) = ((site, syn), p);
            }
        }
    }

    if best_score > original {
        return Ok(None);
    }
    Ok(Some(AttackClaim {
        record: ClaimRecord {
            id: claim.id,
            text: render(best.0, best.1),
            label: Some(label),
            evidence_groups: claim.evidence_groups.clone(),
            attack_type: Some(LEXICAL_SUBSTITUTION.to_string()),
        },
        sources: vec![claim.id],
        needs_review: true,
    }))
}

/// Pair up labeled claims after a seeded shuffle and conjoin each pair.
pub fn conjunction_batch(claims: &[ClaimRecord], rng: &mut ChaCha20Rng) -> Vec<AttackClaim> {
    let mut labeled: Vec<&ClaimRecord> = claims.iter().filter(|c| c.label.is_some()).collect();
    if labeled.len() < claims.len() {
        warn!("{} unlabeled claims skipped", claims.len() - labeled.len());
    }
    labeled.shuffle(rng);
    labeled
        .chunks_exact(2)
        .map(|pair| make_conjunction(pair[0], pair[1]).expect("pairs are labeled"))
        .collect()
}

/// Seven date rewrites per eligible labeled claim.
pub fn date_batch(claims: &[ClaimRecord], flip: bool, rng: &mut ChaCha20Rng) -> Vec<AttackClaim> {
    let mut out = Vec::new();
    for claim in claims {
        if claim.label.is_none() {
            warn!("claim {}: unlabeled; skipping", claim.id);
            continue;
        }
        out.extend(date_manipulations(claim, flip, rng).expect("label checked"));
    }
    out
}

/// One modifier insertion per S/R claim, cycling phrases from the lexicon at
/// seeded random.
pub fn unverifiable_batch(
    claims: &[ClaimRecord],
    modifiers: &[String],
    rng: &mut ChaCha20Rng,
) -> Result<Vec<AttackClaim>> {
    if modifiers.is_empty() {
        return Err(Error::Validation("modifier lexicon is empty".into()));
    }
    let mut out = Vec::new();
    for claim in claims {
        if !matches!(claim.label, Some(RelationLabel::Supports) | Some(RelationLabel::Refutes)) {
            continue;
        }
        let phrase = &modifiers[rng.gen_range(0..modifiers.len())];
        if let Some(attack) = add_unverifiable(claim, phrase)? {
            out.push(attack);
        }
    }
    Ok(out)
}

/// Genetic synonym attack per labeled claim; `evidence_for` supplies each
/// claim's gold evidence sentences for the victim to read.
pub fn lexsub_batch(
    claims: &[ClaimRecord],
    evidence_for: &dyn Fn(&ClaimRecord) -> Vec<String>,
    victim: &mut dyn VictimScorer,
    synonyms: &dyn SynonymSource,
    budget: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<AttackClaim>> {
    let mut out = Vec::new();
    for claim in claims {
        if claim.label.is_none() {
            warn!("claim {}: unlabeled; skipping", claim.id);
            continue;
        }
        let evidence = evidence_for(claim);
        if let Some(attack) =
            lexical_substitution(claim, &evidence, victim, synonyms, budget, rng)?
        {
            out.push(attack);
        }
    }
    Ok(out)
}

/// Reassign sequential ids starting at `start` (generators copy their source
/// claim's id, which collides across outputs).
pub fn renumber(attacks: &mut [AttackClaim], start: i64) {
    for (i, a) in attacks.iter_mut().enumerate() {
        a.record.id = start + i as i64;
    }
}

/// Write attacks as corpus-format JSON lines (loadable by the claim loader)
/// with `source_ids` and `needs_review` carried as extra keys. Ids must be
/// unique and every record labeled and tagged.
pub fn emit_attack_file(attacks: &[AttackClaim], path: impl AsRef<Path>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for a in attacks {
        if a.record.attack_type.is_none() {
            return Err(Error::Validation(format!("claim {}: missing attack type", a.record.id)));
        }
        if a.record.label.is_none() {
            return Err(Error::Validation(format!("claim {}: unlabeled attack", a.record.id)));
        }
        if a.record.label == Some(RelationLabel::NotEnoughInfo)
            && !a.record.evidence_groups.is_empty()
        {
            return Err(Error::Validation(format!(
                "claim {}: unverifiable claims carry no evidence",
                a.record.id
            )));
        }
        if !seen.insert(a.record.id) {
            return Err(Error::Validation(format!("duplicate attack id {}", a.record.id)));
        }
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for a in attacks {
        let mut value = serde_json::to_value(&a.record)
            .map_err(|e| Error::Validation(e.to_string()))?;
        let obj = value.as_object_mut().expect("claim records serialize to objects");
        obj.insert("source_ids".into(), json!(a.sources));
        obj.insert("needs_review".into(), json!(a.needs_review));
        serde_json::to_writer(&mut w, &value).map_err(|e| Error::Validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One unverifiable-modifier phrase per line; blank lines and `#` comments
/// are skipped.
pub fn load_modifiers(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if !line.is_empty() && !line.starts_with('#') {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

/// Synonym lexicon in "token: syn1, syn2" lines, lowercased on load.
pub fn load_synonyms(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (token, rest) = line.split_once(':').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected \"token: syn1, syn2\"".into(),
        })?;
        let syns: Vec<String> = rest
            .split(',')
            .map(|s| s.trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        out.insert(token.trim().to_lowercase(), syns);
    }
    Ok(out)
}

/// Attack-type tag each generated record carries, as accepted by the CLI.
pub fn parse_attack_kind(s: &str) -> Result<&'static str> {
    match s {
        "conjunction" => Ok(CONJUNCTION),
        "date" => Ok(DATE_MANIPULATION),
        "unverifiable" => Ok(ADDITIONAL_UNVERIFIABLE),
        "lexsub" => Ok(LEXICAL_SUBSTITUTION),
        other => Err(Error::Usage(format!(
            "unknown attack type {other:?} (expected conjunction, date, unverifiable, or lexsub)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_claims;
    use crate::temporal::{resolve, DateTuple};
    use rand::SeedableRng;
    use RelationLabel::{NotEnoughInfo as Nei, Refutes as R, Supports as S};

    fn claim(id: i64, text: &str, label: Option<RelationLabel>) -> ClaimRecord {
        let evidence_groups = match label {
            Some(S) | Some(R) => vec![vec![(format!("Page{id}"), 0)]],
            _ => Vec::new(),
        };
        ClaimRecord { id, text: text.into(), label, evidence_groups, attack_type: None }
    }

    #[test]
    fn conjunction_truth_table() {
        let table = [
            (S, S, S),
            (S, R, R),
            (S, Nei, Nei),
            (R, S, R),
            (R, R, R),
            (R, Nei, R),
            (Nei, S, Nei),
            (Nei, R, R),
            (Nei, Nei, Nei),
        ];
        for (a, b, want) in table {
            assert_eq!(conjunction_label(a, b), want, "{a} + {b}");
        }
    }

    #[test]
    fn conjunction_drops_repeated_subject() {
        let a = claim(1, "Blue Jasmine has Sally Hawkins acting in it.", Some(S));
        let b = claim(2, "Blue Jasmine was filmed in San Francisco.", Some(Nei));
        let out = make_conjunction(&a, &b).unwrap();
        assert_eq!(
            out.record.text,
            "Blue Jasmine has Sally Hawkins acting in it and was filmed in San Francisco."
        );
        assert_eq!(out.record.label, Some(Nei));
        assert!(out.record.evidence_groups.is_empty());
        assert_eq!(out.sources, vec![1, 2]);
        assert_eq!(out.record.attack_type.as_deref(), Some(CONJUNCTION));
    }

    #[test]
    fn conjunction_keeps_distinct_subject() {
        let a = claim(1, "Janet Leigh was from New York.", Some(S));
        let b = claim(2, "Tina Fey is an author.", Some(S));
        let out = make_conjunction(&a, &b).unwrap();
        assert_eq!(out.record.text, "Janet Leigh was from New York and Tina Fey is an author.");
    }

    #[test]
    fn conjunction_label_symmetric_via_records() {
        let labels = [S, R, Nei];
        for &la in &labels {
            for &lb in &labels {
                let a = claim(1, "Alpha Bravo is first.", Some(la));
                let b = claim(2, "Charlie Delta is second.", Some(lb));
                let ab = make_conjunction(&a, &b).unwrap().record.label;
                let ba = make_conjunction(&b, &a).unwrap().record.label;
                assert_eq!(ab, ba, "{la} + {lb}");
            }
        }
    }

    #[test]
    fn conjunction_evidence_follows_label() {
        let mut a = claim(1, "Alpha Bravo is first.", Some(S));
        a.evidence_groups =
            vec![vec![("A".into(), 0)], vec![("A".into(), 1), ("B".into(), 0)]];
        let mut b = claim(2, "Charlie Delta is second.", Some(S));
        b.evidence_groups = vec![vec![("C".into(), 2)], vec![("A".into(), 0)]];

        let ss = make_conjunction(&a, &b).unwrap();
        assert_eq!(ss.record.evidence_groups.len(), 4, "cross product of alternatives");
        assert_eq!(ss.record.evidence_groups[0], vec![("A".into(), 0), ("C".into(), 2)]);
        // Shared sentence is not duplicated inside a union.
        assert_eq!(ss.record.evidence_groups[1], vec![("A".into(), 0)]);

        let mut r = claim(3, "Echo Foxtrot is third.", Some(R));
        r.evidence_groups = vec![vec![("R".into(), 5)]];
        let sr = make_conjunction(&a, &r).unwrap();
        assert_eq!(sr.record.label, Some(R));
        assert_eq!(sr.record.evidence_groups, vec![vec![("R".into(), 5)]]);

        let rr = make_conjunction(&r, &r).unwrap();
        assert_eq!(rr.record.evidence_groups.len(), 2, "both refuting sides kept");
    }

    #[test]
    fn conjunction_requires_labels() {
        let a = claim(1, "Alpha is first.", Some(S));
        let b = claim(2, "Bravo is second.", None);
        assert!(make_conjunction(&a, &b).is_err());
    }

    #[test]
    fn date_rewrites_produce_all_seven_forms() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let src = claim(7, "The song charted in 2001 across Europe.", Some(S));
        let out = date_manipulations(&src, false, &mut rng).unwrap();
        assert_eq!(out.len(), 7);
        let kinds: Vec<DateKind> = out
            .iter()
            .map(|a| extract_date_tuple(&a.record.text).expect("rewrite parses").kind)
            .collect();
        assert_eq!(
            kinds,
            vec![
                DateKind::Offset,
                DateKind::Offset,
                DateKind::Before,
                DateKind::After,
                DateKind::Between,
                DateKind::Between,
                DateKind::Between
            ]
        );
        for a in &out {
            assert!(a.record.text.starts_with("The song charted "), "prefix kept");
            assert!(a.record.text.ends_with(" across Europe."), "suffix kept");
            assert_eq!(a.record.label, Some(S));
            assert_eq!(a.record.attack_type.as_deref(), Some(DATE_MANIPULATION));
            assert_eq!(a.record.evidence_groups, src.evidence_groups);
        }
    }

    #[test]
    fn date_rewrites_resolve_to_their_labels() {
        // The construction guarantee, spot-checked here and exhaustively in
        // the acceptance suite: against an evidence date equal to the source
        // year, plain rewrites verify and flipped rewrites refute.
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for flip in [false, true] {
            for seed in 0..20 {
                let year = 1500 + 37 * seed as i64;
                let src = claim(seed, &format!("It happened in {year} quietly."), Some(S));
                for a in date_manipulations(&src, flip, &mut rng).unwrap() {
                    let tuple = extract_date_tuple(&a.record.text).expect("rewrite parses");
                    let verdict = resolve(&tuple, &DateTuple::in_year(year));
                    assert_eq!(
                        verdict.override_label, a.record.label,
                        "flip={flip} year={year} text={:?}",
                        a.record.text
                    );
                }
            }
        }
    }

    #[test]
    fn date_flip_swaps_s_and_r_and_keeps_nei() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let s = claim(1, "It launched in 1984.", Some(S));
        for a in date_manipulations(&s, true, &mut rng).unwrap() {
            assert_eq!(a.record.label, Some(R));
        }
        let n = claim(2, "It launched in 1984.", Some(Nei));
        for a in date_manipulations(&n, true, &mut rng).unwrap() {
            assert_eq!(a.record.label, Some(Nei));
        }
    }

    #[test]
    fn date_rewrites_skip_ineligible_claims() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let no_date = claim(1, "The sky is blue.", Some(S));
        assert!(date_manipulations(&no_date, false, &mut rng).unwrap().is_empty());
        let offset_first = claim(2, "It ran 3 years after 2009.", Some(S));
        assert!(date_manipulations(&offset_first, false, &mut rng).unwrap().is_empty());
        let offset_prefix = claim(3, "It ran 3 years in 2001.", Some(S));
        assert!(date_manipulations(&offset_prefix, false, &mut rng).unwrap().is_empty());
        let unlabeled = claim(4, "It ran in 2001.", None);
        assert!(date_manipulations(&unlabeled, false, &mut rng).is_err());
    }

    #[test]
    fn unverifiable_insertion_sites() {
        let duff = claim(1, "Duff McKagan is an American citizen.", Some(S));
        let out = add_unverifiable(&duff, "born in Seattle").unwrap().unwrap();
        assert_eq!(out.record.text, "Duff McKagan, born in Seattle, is an American citizen.");
        assert_eq!(out.record.label, Some(Nei));
        assert!(out.record.evidence_groups.is_empty());

        let roswell = claim(2, "Roswell is an American TV series.", Some(S));
        let out = add_unverifiable(&roswell, "with 61 episodes").unwrap().unwrap();
        assert_eq!(out.record.text, "Roswell is an American TV series with 61 episodes.");

        let taran = claim(3, "Taran Killam is an actor.", Some(R));
        let out = add_unverifiable(&taran, "stage").unwrap().unwrap();
        assert_eq!(out.record.text, "Taran Killam is an stage actor.");
    }

    #[test]
    fn unverifiable_rejects_nei_and_degenerate_inputs() {
        let nei = claim(1, "Something is unclear.", Some(Nei));
        assert!(add_unverifiable(&nei, "born in Seattle").is_err());
        let unlabeled = claim(2, "Something is here.", None);
        assert!(add_unverifiable(&unlabeled, "stage").is_err());
        let s = claim(3, "Word.", Some(S));
        assert!(add_unverifiable(&s, "stage").unwrap().is_none(), "no head noun site");
        assert!(add_unverifiable(&s, "").is_err());
    }

    struct TokenVictim {
        bad_tokens: Vec<&'static str>,
        calls: usize,
    }

    impl VictimScorer for TokenVictim {
        fn label_dist(&mut self, claim: &str, _evidence: &[String]) -> Result<[f64; 3]> {
            self.calls += 1;
            let lower = claim.to_lowercase();
            if self.bad_tokens.iter().any(|t| lower.contains(t)) {
                Ok([0.2, 0.3, 0.5])
            } else {
                Ok([0.9, 0.05, 0.05])
            }
        }
    }

    fn synonym_map(entries: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        entries
            .iter()
            .map(|(k, vs)| (k.to_string(), vs.iter().map(|v| v.to_string()).collect()))
            .collect()
    }

    #[test]
    fn lexsub_finds_the_weakening_swap() {
        let src = claim(1, "The Last Song began filming in June.", Some(S));
        let synonyms = synonym_map(&[
            ("filming", &["shooting", "recording"] as &[&str]),
            ("began", &["started"]),
        ]);
        let mut victim = TokenVictim { bad_tokens: vec!["shooting"], calls: 0 };
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let out = lexical_substitution(&src, &[], &mut victim, &synonyms, 5, &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(out.record.text, "The Last Song began shooting in June.");
        assert_eq!(out.record.label, Some(S), "label kept");
        assert_eq!(out.record.evidence_groups, src.evidence_groups, "evidence kept");
        assert!(out.needs_review);
    }

    #[test]
    fn lexsub_preserves_case_and_punctuation() {
        let src = claim(1, "Created by Ava, it stayed small.", Some(S));
        let synonyms = synonym_map(&[("created", &["established"] as &[&str])]);
        let mut victim = TokenVictim { bad_tokens: vec!["established"], calls: 0 };
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let out = lexical_substitution(&src, &[], &mut victim, &synonyms, 3, &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(out.record.text, "Established by Ava, it stayed small.");
    }

    #[test]
    fn lexsub_never_returns_a_worse_claim() {
        struct Worsens;
        impl VictimScorer for Worsens {
            fn label_dist(&mut self, claim: &str, _e: &[String]) -> Result<[f64; 3]> {
                // Any rewrite scores higher on the gold label than the original.
                if claim.contains("soon") {
                    Ok([0.9, 0.05, 0.05])
                } else {
                    Ok([0.4, 0.3, 0.3])
                }
            }
        }
        let src = claim(1, "The movie began filming early.", Some(S));
        let synonyms = synonym_map(&[("early", &["soon"] as &[&str])]);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let out =
            lexical_substitution(&src, &[], &mut Worsens, &synonyms, 4, &mut rng).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn lexsub_without_candidates_returns_none() {
        let src = claim(1, "The movie began filming early.", Some(S));
        let empty = synonym_map(&[]);
        let mut victim = TokenVictim { bad_tokens: vec![], calls: 0 };
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let out =
            lexical_substitution(&src, &[], &mut victim, &empty, 4, &mut rng).unwrap();
        assert!(out.is_none());
        assert_eq!(victim.calls, 0, "victim untouched when nothing is substitutable");
    }

    #[test]
    fn lexsub_is_deterministic_per_seed() {
        let src = claim(1, "Alpha began filming and kept creating widely.", Some(S));
        let synonyms = synonym_map(&[
            ("filming", &["shooting", "taping"] as &[&str]),
            ("creating", &["making", "producing"]),
            ("widely", &["broadly"]),
        ]);
        let run = |seed| {
            let mut victim = TokenVictim { bad_tokens: vec!["taping", "producing"], calls: 0 };
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            lexical_substitution(&src, &[], &mut victim, &synonyms, 6, &mut rng)
                .unwrap()
                .unwrap()
                .record
                .text
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn batches_renumber_and_round_trip() {
        let claims = vec![
            claim(10, "Alpha Bravo is a singer.", Some(S)),
            claim(11, "Charlie Delta was a painter.", Some(R)),
            claim(12, "Echo Foxtrot is a dancer.", Some(Nei)),
            claim(13, "Golf Hotel premiered in 1999.", Some(S)),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut attacks = conjunction_batch(&claims, &mut rng);
        attacks.extend(date_batch(&claims, false, &mut rng));
        attacks
            .extend(unverifiable_batch(&claims, &["from the archives".into()], &mut rng).unwrap());
        assert!(!attacks.is_empty());
        renumber(&mut attacks, 1000);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attacks.jsonl");
        emit_attack_file(&attacks, &path).unwrap();
        let loaded = load_claims(&path).unwrap();
        assert_eq!(loaded.len(), attacks.len());
        for (got, want) in loaded.iter().zip(&attacks) {
            assert_eq!(got, &want.record);
            assert!(got.attack_type.is_some());
        }
        assert_eq!(loaded[0].id, 1000);
    }

    #[test]
    fn emit_rejects_duplicates_and_handles_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attacks.jsonl");
        emit_attack_file(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");

        let a = make_conjunction(
            &claim(1, "Alpha is first.", Some(S)),
            &claim(2, "Bravo is second.", Some(S)),
        )
        .unwrap();
        let dup = vec![a.clone(), a];
        assert!(emit_attack_file(&dup, &path).is_err());
    }

    #[test]
    fn lexicon_loaders_parse_their_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mods = dir.path().join("mods.txt");
        std::fs::write(&mods, "born in Seattle\n\n# comment\nwith 61 episodes\n").unwrap();
        assert_eq!(load_modifiers(&mods).unwrap(), vec!["born in Seattle", "with 61 episodes"]);

        let syns = dir.path().join("syns.txt");
        std::fs::write(&syns, "filming: shooting, taping\nCreated: Established\nbad line\n")
            .unwrap();
        let err = load_synonyms(&syns).unwrap_err();
        assert!(err.to_string().contains("syns.txt:3"));
        std::fs::write(&syns, "filming: shooting, taping\nCreated: Established\n").unwrap();
        let map = load_synonyms(&syns).unwrap();
        assert_eq!(map["filming"], vec!["shooting", "taping"]);
        assert_eq!(map["created"], vec!["established"], "lowercased on load");
    }

    #[test]
    fn attack_kind_names_map_to_tags() {
        assert_eq!(parse_attack_kind("conjunction").unwrap(), CONJUNCTION);
        assert_eq!(parse_attack_kind("date").unwrap(), DATE_MANIPULATION);
        assert_eq!(parse_attack_kind("unverifiable").unwrap(), ADDITIONAL_UNVERIFIABLE);
        assert_eq!(parse_attack_kind("lexsub").unwrap(), LEXICAL_SUBSTITUTION);
        assert!(parse_attack_kind("typo").is_err());
    }
}
