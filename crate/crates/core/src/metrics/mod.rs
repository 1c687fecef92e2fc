//! Sentence-level MT metrics over lowercased word tokens: BLEU, ROUGE-1/2/L,
//! a shift-free TER similarity and an exact-match METEOR variant.
//!
//! Everything here is a pure function of its inputs.

mod bleu;
mod meteor;
mod ngram;
mod rouge;
mod ter;
mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu_corpus, bleu_sentence, BLEU_EPSILON, DEFAULT_MAX_ORDER};
pub use meteor::{align, meteor_lite, Alignment};
pub use rouge::{lcs_len, rouge_l, rouge_n, Prf};
pub use ter::{edit_distance, ter, ter_score};
pub use tokenize::{tokenize, TokenSequence};

/// Recorded in every result file. Bump on any change to tokenization or to a
/// metric definition.
pub const METRICS_VERSION: &str = "nrt-metrics/1 (tok=lower+strip+slash; bleu4 eps=0.1; ter=no-shift; meteor=exact)";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("reference has {len} tokens, fewer than n = {n}")]
    ReferenceTooShort { n: usize, len: usize },
}

/// The six scores reported per candidate, each in `[0, 1]`, higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SentenceScores {
    pub bleu: f64,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub ter_score: f64,
    pub meteor: f64,
}

impl SentenceScores {
    /// Column names, in the order of [`SentenceScores::values`].
    pub const NAMES: [&'static str; 6] =
        ["bleu", "rouge1_f", "rouge2_f", "rougeL_f", "ter_score", "meteor"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.bleu,
            self.rouge1_f,
            self.rouge2_f,
            self.rouge_l_f,
            self.ter_score,
            self.meteor,
        ]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        Self {
            bleu: v[0],
            rouge1_f: v[1],
            rouge2_f: v[2],
            rouge_l_f: v[3],
            ter_score: v[4],
            meteor: v[5],
        }
    }

    /// Field-wise arithmetic mean; `None` for an empty input.
    pub fn mean<'a, I: IntoIterator<Item = &'a SentenceScores>>(scores: I) -> Option<Self> {
        let mut sum = [0.0; 6];
        let mut n = 0usize;
        for s in scores {
            for (acc, v) in sum.iter_mut().zip(s.values()) {
                *acc += v;
            }
            n += 1;
        }
        (n > 0).then(|| Self::from_values(sum.map(|x| x / n as f64)))
    }
}

/// Tokenizes both strings and computes every score.
///
/// An empty candidate scores 0 everywhere. For a one-token reference,
/// ROUGE-2 has no bigrams to compare, so it is 1 when the candidate tokens
/// equal the reference tokens and 0 otherwise.
pub fn score_pair(candidate: &str, reference: &str) -> Result<SentenceScores, MetricError> {
    let r = tokenize(reference);
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let c = tokenize(candidate);
    if c.is_empty() {
        return Ok(SentenceScores::default());
    }
    let rouge2_f = if r.len() >= 2 {
        rouge_n(&c, &r, 2)?.f1
    } else if c == r {
        1.0
    } else {
        0.0
    };
    Ok(SentenceScores {
        bleu: bleu_sentence(&c, &r, DEFAULT_MAX_ORDER)?,
        rouge1_f: rouge_n(&c, &r, 1)?.f1,
        rouge2_f,
        rouge_l_f: rouge_l(&c, &r)?.f1,
        ter_score: ter_score(&c, &r)?,
        meteor: meteor_lite(&c, &r)?,
    })
}
