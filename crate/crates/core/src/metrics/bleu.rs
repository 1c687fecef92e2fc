//! Sentence- and corpus-level BLEU.
//!
//! Zero-match orders n >= 2 are smoothed by replacing the zero numerator with
//! [`BLEU_EPSILON`], so `p_n = 0.1 / total_n`. A candidate with no unigram
//! match scores exactly 0.

use super::ngram::{clipped_overlap, total};
use super::{MetricError, TokenSequence};

pub const BLEU_EPSILON: f64 = 0.1;
pub const DEFAULT_MAX_ORDER: usize = 4;

/// Geometric mean of modified n-gram precisions for `n = 1..=min(max_n,
/// |candidate|)`, times the brevity penalty `exp(1 - |ref|/|cand|)` when the
/// candidate is shorter than the reference.
pub fn bleu_sentence(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    max_n: usize,
) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let (c, r) = (candidate.tokens(), reference.tokens());
    let orders = max_n.min(c.len());
    if orders == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let matches = clipped_overlap(c, r, n);
        if n == 1 && matches == 0 {
            return Ok(0.0);
        }
        let numerator = if matches == 0 {
            BLEU_EPSILON
        } else {
            matches as f64
        };
        log_sum += (numerator / total(c, n) as f64).ln();
    }
    let bp = brevity_penalty(c.len(), r.len());
    Ok((bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0))
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

/// Corpus BLEU: n-gram matches and totals are pooled over all pairs before
/// the precisions are taken, with one brevity penalty on the summed lengths.
/// Orders with no candidate n-grams anywhere are left out.
pub fn bleu_corpus<'a, I>(pairs: I, max_n: usize) -> Result<f64, MetricError>
where
    I: IntoIterator<Item = (&'a TokenSequence, &'a TokenSequence)>,
{
    let mut matches = vec![0usize; max_n + 1];
    let mut totals = vec![0usize; max_n + 1];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, reference) in pairs {
        if reference.is_empty() {
            return Err(MetricError::EmptyReference);
        }
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=max_n {
            matches[n] += clipped_overlap(cand.tokens(), reference.tokens(), n);
            totals[n] += total(cand.tokens(), n);
        }
    }
    if cand_len == 0 || matches[1] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        if totals[n] == 0 {
            continue;
        }
        orders += 1;
        let numerator = if matches[n] == 0 {
            BLEU_EPSILON
        } else {
            matches[n] as f64
        };
        log_sum += (numerator / totals[n] as f64).ln();
    }
    let bp = brevity_penalty(cand_len, ref_len);
    Ok((bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0))
}
