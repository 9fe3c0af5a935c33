//! Candidate document retrieval: a TF-IDF search over page text unioned with
//! deterministic title matching against the claim's capitalized spans and
//! subject. Everything here is exactly reproducible: scores are plain f64
//! cosine, and every tie breaks on the lexicographic title.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::PageStore;
use crate::text;
use crate::{Error, Result};

/// TF-IDF index over pages. Term weights use log-scaled term frequency
/// `1 + ln(f)` and smoothed idf `ln(1 + N/df)`; document vectors are
/// L2-normalized so dot products are cosines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfIdfIndex {
    ngram_max: usize,
    n_docs: usize,
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    /// (title, sparse L2-normalized vector sorted by term column).
    doc_vectors: Vec<(String, Vec<(usize, f64)>)>,
}

fn term_counts(terms: &[String]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for t in terms {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Build the index; all page sentences are concatenated as the document text.
pub fn build_index(pages: &PageStore, ngram_max: usize) -> Result<TfIdfIndex> {
    if pages.is_empty() {
        return Err(Error::Validation("cannot index an empty corpus".into()));
    }
    if !(1..=2).contains(&ngram_max) {
        return Err(Error::Validation(format!("ngram_max must be 1 or 2, got {ngram_max}")));
    }

    // Pass 1: document frequencies over titles in lexicographic order.
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut doc_terms: Vec<(String, Vec<String>)> = Vec::new();
    for title in pages.titles() {
        let body = pages.sentences(title).unwrap_or(&[]).join(" ");
        let full = format!("{title} {body}");
        let terms = text::ngram_terms(&text::tokenize_lower(&full), ngram_max);
        for t in term_counts(&terms).keys() {
            *df.entry(t.to_string()).or_insert(0) += 1;
        }
        doc_terms.push((title.to_string(), terms));
    }

    let n_docs = doc_terms.len();
    let vocabulary: BTreeMap<String, usize> =
        df.keys().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    let mut idf = vec![0.0; vocabulary.len()];
    for (term, &col) in &vocabulary {
        idf[col] = (1.0 + n_docs as f64 / df[term] as f64).ln();
    }

    // Pass 2: weighted, normalized document vectors.
    let mut doc_vectors = Vec::with_capacity(n_docs);
    for (title, terms) in doc_terms {
        let mut vec: Vec<(usize, f64)> = term_counts(&terms)
            .into_iter()
            .map(|(t, f)| {
                let col = vocabulary[t];
                (col, (1.0 + (f as f64).ln()) * idf[col])
            })
            .collect();
        let norm = vec.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut vec {
                *w /= norm;
            }
        }
        vec.sort_by_key(|&(c, _)| c);
        doc_vectors.push((title, vec));
    }

    Ok(TfIdfIndex { ngram_max, n_docs, vocabulary, idf, doc_vectors })
}

impl TfIdfIndex {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Query vector in the index's term space, L2-normalized.
    fn query_vector(&self, query: &str) -> BTreeMap<usize, f64> {
        let terms = text::ngram_terms(&text::tokenize_lower(query), self.ngram_max);
        let mut vec: BTreeMap<usize, f64> = BTreeMap::new();
        for (t, f) in term_counts(&terms) {
            if let Some(&col) = self.vocabulary.get(t) {
                vec.insert(col, (1.0 + (f as f64).ln()) * self.idf[col]);
            }
        }
        let norm = vec.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for w in vec.values_mut() {
                *w /= norm;
            }
        }
        vec
    }

    /// Cosine score of one document against a prepared query vector.
    fn score_doc(query: &BTreeMap<usize, f64>, doc: &[(usize, f64)]) -> f64 {
        doc.iter().map(|(c, w)| query.get(c).map_or(0.0, |q| q * w)).sum()
    }
}

/// Top-M titles by cosine, ties broken by lexicographic title. Sorting the
/// full list before truncation gives the prefix property: growing M only
/// appends.
pub fn tfidf_search(index: &TfIdfIndex, claim_text: &str, m: usize) -> Vec<(String, f64)> {
    let query = index.query_vector(claim_text);
    let mut scored: Vec<(String, f64)> = index
        .doc_vectors
        .iter()
        .map(|(title, vec)| (title.clone(), TfIdfIndex::score_doc(&query, vec)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(m);
    scored
}

fn normalize_title(title: &str) -> String {
    // Parenthetical disambiguators do not participate in matching:
    // "Honeymoon (Lana Del Rey album)" matches the span "Honeymoon".
    let base = match title.find('(') {
        Some(i) => &title[..i],
        None => title,
    };
    text::tokenize_lower(base).join(" ")
}

/// Titles whose base name appears verbatim (case-insensitive) as a contiguous
/// token span of the claim. Candidate spans are all contiguous subspans of
/// the claim's capitalized spans and of its subject. Output is ordered by
/// (first match position, lexicographic title), first occurrence kept.
pub fn title_match(claim_text: &str, pages: &PageStore) -> Vec<String> {
    let mut by_base: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for title in pages.titles() {
        by_base.entry(normalize_title(title)).or_default().push(title);
    }

    let tokens = text::word_tokens(claim_text);
    let mut spans = text::capitalized_spans(&tokens);
    if let Some(subj) = text::subject_span(&tokens) {
        spans.push(subj);
    }

    // (claim position, title) pairs for every matching subspan.
    let mut hits: Vec<(usize, &str)> = Vec::new();
    for &(start, end) in &spans {
        for i in start..end {
            for j in (i + 1)..=end {
                let key = tokens[i..j]
                    .iter()
                    .flat_map(|t| text::tokenize_lower(t))
                    .collect::<Vec<_>>()
                    .join(" ");
                if let Some(titles) = by_base.get(&key) {
                    for &t in titles {
                        hits.push((i, t));
                    }
                }
            }
        }
    }
    hits.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));

    let mut out: Vec<String> = Vec::new();
    for (_, t) in hits {
        if !out.iter().any(|x| x == t) {
            out.push(t.to_string());
        }
    }
    out
}

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    TitleMatch,
    Tfidf,
}

/// Ordered candidate documents for one claim: title-match results first, then
/// TF-IDF results, duplicates dropped keeping the first occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub claim_id: i64,
    pub titles: Vec<String>,
    pub provenance: Vec<Provenance>,
}

pub fn candidate_union(claim_id: i64, matched: &[String], tfidf: &[(String, f64)]) -> CandidateSet {
    let mut titles: Vec<String> = Vec::new();
    let mut provenance = Vec::new();
    for t in matched {
        if !titles.contains(t) {
            titles.push(t.clone());
            provenance.push(Provenance::TitleMatch);
        }
    }
    for (t, _) in tfidf {
        if !titles.contains(t) {
            titles.push(t.clone());
            provenance.push(Provenance::Tfidf);
        }
    }
    CandidateSet { claim_id, titles, provenance }
}

/// Full candidate computation for one claim.
pub fn candidates_for(
    index: &TfIdfIndex,
    pages: &PageStore,
    claim_id: i64,
    claim_text: &str,
    m: usize,
) -> CandidateSet {
    let matched = title_match(claim_text, pages);
    let searched = tfidf_search(index, claim_text, m);
    candidate_union(claim_id, &matched, &searched)
}
