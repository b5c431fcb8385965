//! Brute-force Okapi BM25: every statistic is recomputed from raw text for
//! every query.

use rand::seq::IndexedRandom;
use rand::Rng;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Maximal runs of alphanumeric characters in the lowercased text.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// `(doc_id, score)` for the top `k` documents with positive score, best
/// first, ties by ascending id.
pub fn rank(corpus: &[(String, String)], query: &str, k: usize, k1: f64, b: f64) -> Vec<(String, f64)> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|(_, t)| words(t)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let mut terms = words(query);
    terms.sort();
    terms.dedup();
    let mut scored = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        let mut parts = Vec::new();
        for term in &terms {
            let tf = doc.iter().filter(|w| *w == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let dl = doc.len() as f64;
            parts.push(idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl)));
        }
        // Smallest first, so mathematically tied documents tie in floating
        // point as well.
        parts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let score: f64 = parts.iter().sum();
        if !parts.is_empty() && score > 0.0 {
            scored.push((corpus[i].0.clone(), score));
        }
    }
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    scored.truncate(k);
    scored
}

const VOCAB: &[&str] = &[
    "brewing", "hops", "boil", "process", "malt", "yeast", "water", "beer", "Ale", "LAGER", "wort",
    "temperature", "the", "a", "of", "is", "in", "x2", "café", "ΣΟΦΙΑ", "42",
];
const SEPARATORS: &[&str] = &[" ", "  ", ", ", ". ", "-", "\n", "!? ", "/"];

pub fn random_text<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let len = rng.random_range(0..=max_words);
    let mut s = String::new();
    for i in 0..len {
        if i > 0 {
            s.push_str(SEPARATORS.choose(rng).unwrap());
        }
        s.push_str(VOCAB.choose(rng).unwrap());
    }
    s
}

/// Up to `max_docs` documents with unique ids in shuffled order.
pub fn random_corpus<R: Rng>(rng: &mut R, max_docs: usize) -> Vec<(String, String)> {
    let n = rng.random_range(1..=max_docs);
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    ids.into_iter()
        .map(|i| (format!("doc-{i:03}"), random_text(rng, 30)))
        .collect()
}

/// A query with at least one word; may include words absent from the corpus.
pub fn random_query<R: Rng>(rng: &mut R) -> String {
    let mut q = random_text(rng, 4);
    if words(&q).is_empty() {
        q = VOCAB.choose(rng).unwrap().to_string();
    }
    if rng.random_bool(0.2) {
        q.push_str(" zymurgy");
    }
    q
}
