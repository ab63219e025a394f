use std::collections::BTreeSet;

pub const DEFAULT_NGRAM: usize = 3;
pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Lowercased word n-grams with punctuation stripped. A text shorter than `n`
/// words yields a single gram made of all its words.
pub fn ngrams(text: &str, n: usize) -> BTreeSet<String> {
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    let n = n.max(1);
    if words.is_empty() {
        return BTreeSet::new();
    }
    if words.len() < n {
        return BTreeSet::from([words.join(" ")]);
    }
    words.windows(n).map(|w| w.join(" ")).collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Keeps candidates (in order) whose n-gram Jaccard similarity to every
/// existing string and every earlier kept candidate stays below `threshold`.
pub fn dedup_ngram(candidates: &[String], existing: &[String], n: usize, threshold: f64) -> Vec<String> {
    let mut seen: Vec<BTreeSet<String>> = existing.iter().map(|e| ngrams(e, n)).collect();
    let mut kept = Vec::new();
    for c in candidates {
        let grams = ngrams(c, n);
        if seen.iter().any(|s| jaccard(&grams, s) >= threshold) {
            continue;
        }
        seen.push(grams);
        kept.push(c.clone());
    }
    kept
}
