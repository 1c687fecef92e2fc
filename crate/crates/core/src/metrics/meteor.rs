//! METEOR restricted to exact unigram matches (no stemming, no synonyms).

use std::collections::HashMap;

use super::{MetricError, TokenSequence};

/// Memo entries allowed before the search gives up on exactness and takes
/// the leftmost-match alignment instead. Only reachable with long inputs
/// full of repeated tokens.
const SEARCH_STATE_LIMIT: usize = 500_000;

/// An exact-match alignment summary: `matches` aligned unigrams forming
/// `chunks` runs that are contiguous in both sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Finds the alignment with the most matches and, among those, the fewest
/// chunks.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let mut search = Search {
        c: candidate,
        r: reference,
        memo: HashMap::new(),
        overflow: false,
    };
    let mask = vec![0u64; reference.len().div_ceil(64)];
    let (matches, links) = search.best(0, &mask, None);
    if search.overflow {
        log::warn!(
            "meteor alignment search exceeded {SEARCH_STATE_LIMIT} states; using leftmost matches"
        );
        return leftmost(candidate, reference);
    }
    Alignment {
        matches,
        chunks: matches - links,
    }
}

/// (candidate index, used reference positions, previous aligned position).
type StateKey = (usize, Vec<u64>, Option<usize>);

struct Search<'a> {
    c: &'a [String],
    r: &'a [String],
    memo: HashMap<StateKey, (usize, usize)>,
    overflow: bool,
}

impl Search<'_> {
    /// Best (matches, adjacent links) for candidate[i..], given the used
    /// reference positions and where candidate[i - 1] was aligned.
    fn best(&mut self, i: usize, used: &[u64], prev: Option<usize>) -> (usize, usize) {
        if i == self.c.len() || self.overflow {
            return (0, 0);
        }
        let key = (i, used.to_vec(), prev);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        if self.memo.len() >= SEARCH_STATE_LIMIT {
            self.overflow = true;
            return (0, 0);
        }
        let mut best = self.best(i + 1, used, None);
        let mut next = used.to_vec();
        for j in 0..self.r.len() {
            if self.r[j] != self.c[i] || used[j / 64] & (1 << (j % 64)) != 0 {
                continue;
            }
            next[j / 64] |= 1 << (j % 64);
            let (m, l) = self.best(i + 1, &next, Some(j));
            next[j / 64] &= !(1 << (j % 64));
            let link = usize::from(prev.is_some_and(|p| p + 1 == j));
            best = best.max((m + 1, l + link));
        }
        self.memo.insert(key, best);
        best
    }
}

fn leftmost(candidate: &[String], reference: &[String]) -> Alignment {
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (i, t) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && &reference[j] == t) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    let chunks = pairs
        .iter()
        .enumerate()
        .filter(|(k, &(i, j))| *k == 0 || pairs[k - 1] != (i - 1, j.wrapping_sub(1)))
        .count();
    Alignment {
        matches: pairs.len(),
        chunks,
    }
}

/// `F_mean * (1 - 0.5 * (chunks / m)^3)` with
/// `F_mean = 10PR / (R + 9P)`; 0 when nothing matches.
pub fn meteor_lite(candidate: &TokenSequence, reference: &TokenSequence) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let a = align(candidate.tokens(), reference.tokens());
    Ok(score_alignment(a, candidate.len(), reference.len()))
}

pub(crate) fn score_alignment(a: Alignment, cand_len: usize, ref_len: usize) -> f64 {
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::new(s.split_whitespace())
    }

    #[test]
    fn identity_three_tokens() {
        let s = seq("we are sleeping");
        let got = meteor_lite(&s, &s).unwrap();
        assert!((got - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
        assert!((got - 0.9815).abs() < 1e-4);
    }

    #[test]
    fn zero_overlap() {
        assert_eq!(meteor_lite(&seq("a b"), &seq("c d")).unwrap(), 0.0);
    }

    #[test]
    fn fully_fragmented() {
        let got = meteor_lite(&seq("the cat sleeps"), &seq("cat the sleeps")).unwrap();
        assert!((got - 0.5).abs() < 1e-12);
        let a = align(seq("the cat sleeps").tokens(), seq("cat the sleeps").tokens());
        assert_eq!(a, Alignment { matches: 3, chunks: 3 });
    }

    #[test]
    fn repeated_tokens_pick_contiguous_alignment() {
        // Leftmost matching would align the first "the" to position 0 and
        // split the run; the best alignment keeps "the wood" together.
        let a = align(seq("the wood").tokens(), seq("the bear cooked the wood").tokens());
        assert_eq!(a, Alignment { matches: 2, chunks: 1 });
    }

    #[test]
    fn empty_rejected() {
        assert!(meteor_lite(&seq(""), &seq("a")).is_err());
        assert!(meteor_lite(&seq("a"), &seq("")).is_err());
    }

    #[test]
    fn leftmost_fallback_counts_chunks() {
        let c = seq("a b x c");
        let r = seq("a b c");
        assert_eq!(leftmost(c.tokens(), r.tokens()), Alignment { matches: 3, chunks: 2 });
    }
}
