//! Word-level translation edit rate without block shifts.

use super::{MetricError, TokenSequence};

/// Levenshtein distance over tokens with unit insert/delete/substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = (diag + usize::from(x != y))
                .min(row[j] + 1)
                .min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Edits needed to turn the candidate into the reference, divided by the
/// reference length. Can exceed 1.
pub fn ter(candidate: &TokenSequence, reference: &TokenSequence) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(edit_distance(candidate.tokens(), reference.tokens()) as f64 / reference.len() as f64)
}

/// `max(0, 1 - ter)`: a similarity where 1 is a perfect match.
pub fn ter_score(candidate: &TokenSequence, reference: &TokenSequence) -> Result<f64, MetricError> {
    Ok((1.0 - ter(candidate, reference)?).max(0.0))
}
