use std::collections::HashMap;

pub(crate) fn counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut map = HashMap::new();
    if n == 0 || tokens.len() < n {
        return map;
    }
    for w in tokens.windows(n) {
        *map.entry(w).or_insert(0) += 1;
    }
    map
}

/// Clipped overlap: every candidate n-gram counts at most as often as it
/// occurs in the reference.
pub(crate) fn clipped_overlap(candidate: &[String], reference: &[String], n: usize) -> usize {
    let r = counts(reference, n);
    counts(candidate, n)
        .into_iter()
        .map(|(g, c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum()
}

pub(crate) fn total(tokens: &[String], n: usize) -> usize {
    (tokens.len() + 1).saturating_sub(n)
}

pub(crate) fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}
