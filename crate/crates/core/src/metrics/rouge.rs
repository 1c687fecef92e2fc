use serde::{Deserialize, Serialize};

use super::ngram::{clipped_overlap, f1, total};
use super::{MetricError, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let precision = if cand_total == 0 {
            0.0
        } else {
            overlap as f64 / cand_total as f64
        };
        let recall = overlap as f64 / ref_total as f64;
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

/// ROUGE-N over clipped n-gram overlap.
pub fn rouge_n(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    n: usize,
) -> Result<Prf, MetricError> {
    if n == 0 {
        return Err(MetricError::ZeroOrder);
    }
    if reference.len() < n {
        return Err(MetricError::ReferenceTooShort {
            n,
            len: reference.len(),
        });
    }
    let (c, r) = (candidate.tokens(), reference.tokens());
    Ok(Prf::from_counts(
        clipped_overlap(c, r, n),
        total(c, n),
        total(r, n),
    ))
}

/// ROUGE-L from the longest common subsequence.
pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> Result<Prf, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let l = lcs_len(candidate.tokens(), reference.tokens());
    Ok(Prf::from_counts(l, candidate.len(), reference.len()))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
