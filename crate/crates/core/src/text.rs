//! Tokenization and shallow syntactic heuristics shared by retrieval, the
//! encoder, and the attack generators.
//!
//! Two token views exist on purpose: `tokenize_lower` (lowercased, split on
//! whitespace and punctuation) feeds TF-IDF and the encoder; `word_tokens`
//! keeps case so capitalized-span and subject heuristics can see proper nouns.

/// Lowercased alphanumeric tokens; every punctuation character is a separator.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for l in ch.to_lowercase() {
                cur.push(l);
            }
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Case-preserving word tokens: whitespace-split, outer punctuation stripped,
/// possessive `'s` removed ("Beatz's" -> "Beatz").
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            let w = w.trim_matches(|c: char| !c.is_alphanumeric());
            let w = w.strip_suffix("'s").or_else(|| w.strip_suffix("\u{2019}s")).unwrap_or(w);
            if w.is_empty() {
                None
            } else {
                Some(w.to_string())
            }
        })
        .collect()
}

/// Unigram (and, when `ngram_max == 2`, bigram) terms; bigrams join with a space.
pub fn ngram_terms(tokens: &[String], ngram_max: usize) -> Vec<String> {
    let mut out: Vec<String> = tokens.to_vec();
    if ngram_max >= 2 {
        for w in tokens.windows(2) {
            out.push(format!("{} {}", w[0], w[1]));
        }
    }
    out
}

fn is_capitalized(token: &str) -> bool {
    token.chars().next().is_some_and(|c| c.is_uppercase())
}

/// Lowercase words allowed *inside* a capitalized span when a capitalized
/// token follows ("University of Southern California").
const SPAN_CONNECTORS: [&str; 3] = ["of", "the", "and"];

/// Maximal capitalized token spans as half-open `(start, end)` index ranges
/// over `tokens`. Interior connector words are kept only when bridged by a
/// later capitalized token.
pub fn capitalized_spans(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !is_capitalized(&tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i + 1;
        loop {
            if end < tokens.len() && is_capitalized(&tokens[end]) {
                end += 1;
                continue;
            }
            // Try to bridge a run of connectors to the next capitalized token.
            let mut j = end;
            while j < tokens.len() && SPAN_CONNECTORS.contains(&tokens[j].to_lowercase().as_str()) {
                j += 1;
            }
            if j > end && j < tokens.len() && is_capitalized(&tokens[j]) {
                end = j + 1;
            } else {
                break;
            }
        }
        spans.push((start, end));
        i = end;
    }
    spans
}

/// Copulas, auxiliaries, and verbs common in encyclopedic claims. Lowercase.
const VERB_LEXICON: [&str; 62] = [
    "is", "are", "was", "were", "am", "be", "been", "being", "has", "have", "had", "does", "do",
    "did", "can", "could", "will", "would", "shall", "should", "may", "might", "must", "began",
    "begins", "won", "wins", "stars", "starred", "plays", "played", "sings", "sang", "acts",
    "acted", "airs", "aired", "runs", "ran", "came", "comes", "went", "goes", "takes", "took",
    "makes", "made", "becomes", "became", "serves", "served", "features", "holds", "held",
    "includes", "contains", "exists", "lives", "lived", "works", "wrote", "writes",
];

/// Index of the first finite verb, found by lexicon lookup with a regular
/// past-tense ("-ed", length >= 4, lowercase) fallback. None if no verb found.
pub fn first_verb(tokens: &[String]) -> Option<usize> {
    tokens.iter().position(|t| {
        let lower = t.to_lowercase();
        VERB_LEXICON.contains(&lower.as_str())
            || (t.chars().next().is_some_and(|c| c.is_lowercase()) && lower.ends_with("ed") && lower.len() >= 4)
    })
}

/// The claim's subject: tokens before the first finite verb. None when no
/// verb is found or the subject would be empty.
pub fn subject_span(tokens: &[String]) -> Option<(usize, usize)> {
    match first_verb(tokens) {
        Some(v) if v > 0 => Some((0, v)),
        _ => None,
    }
}
