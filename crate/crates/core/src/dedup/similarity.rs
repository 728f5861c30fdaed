use std::collections::BTreeSet;

use crate::text::fold_tokens;

/// Token set used for headline comparison.
pub fn headline_tokens(headline: &str) -> BTreeSet<String> {
    fold_tokens(headline).into_iter().collect()
}

/// Jaccard index of two token sets. Two empty sets score 1.0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Token-set Jaccard over case-folded, punctuation-stripped headlines.
pub fn headline_similarity(h1: &str, h2: &str) -> f64 {
    jaccard(&headline_tokens(h1), &headline_tokens(h2))
}
