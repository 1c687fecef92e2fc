//! Loading, subsetting and leave-one-out splitting of parallel phrase files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{SplitMix64, GOLDEN_GAMMA};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: malformed CSV: {source}")]
    Csv {
        origin: String,
        #[source]
        source: csv::Error,
    },
    #[error("{origin}: missing required column `{column}` (found: {found})")]
    MissingColumn {
        origin: String,
        column: String,
        found: String,
    },
    #[error("{origin}: line {line}: empty `{column}` cell")]
    EmptyCell {
        origin: String,
        line: u64,
        column: String,
    },
    #[error("{origin}: corpus has no data rows")]
    Empty { origin: String },
    #[error("subset size {size} out of bounds (expected 2..={corpus_size})")]
    SubsetSize { size: usize, corpus_size: usize },
    #[error("phrase id {0} is not in the subset")]
    UnknownTarget(usize),
    #[error("leave-one-out needs at least 2 pairs, subset has {0}")]
    SubsetTooSmall(usize),
}

/// One source-language phrase and its English reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhrasePair {
    pub id: usize,
    pub source_text: String,
    pub reference_translation: String,
}

/// Header names of the two columns read from a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Columns {
    pub source: String,
    pub target: String,
}

impl Default for Columns {
    fn default() -> Self {
        Self {
            source: "source".into(),
            target: "translation".into(),
        }
    }
}

/// An ordered, non-empty set of phrase pairs with distinct ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pairs: Vec<PhrasePair>,
    origin: String,
}

impl Corpus {
    /// Builds a corpus from in-memory `(source, translation)` rows, assigning
    /// ids in order.
    pub fn from_pairs<I, S, T>(origin: impl Into<String>, rows: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let origin = origin.into();
        let mut pairs = Vec::new();
        for (id, (s, t)) in rows.into_iter().enumerate() {
            let (s, t) = (s.into(), t.into());
            for (cell, column) in [(&s, "source"), (&t, "translation")] {
                if cell.trim().is_empty() {
                    return Err(CorpusError::EmptyCell {
                        origin,
                        line: id as u64 + 1,
                        column: column.into(),
                    });
                }
            }
            pairs.push(PhrasePair {
                id,
                source_text: s,
                reference_translation: t,
            });
        }
        if pairs.is_empty() {
            return Err(CorpusError::Empty { origin });
        }
        Ok(Self { pairs, origin })
    }

    /// Parses CSV with a header row. Line numbers in errors are 1-based and
    /// count the header.
    pub fn from_reader<R: Read>(
        reader: R,
        origin: impl Into<String>,
        columns: &Columns,
    ) -> Result<Self, CorpusError> {
        let origin = origin.into();
        let csv_err = |source| CorpusError::Csv {
            origin: origin.clone(),
            source,
        };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| CorpusError::MissingColumn {
                    origin: origin.clone(),
                    column: name.to_string(),
                    found: headers.iter().collect::<Vec<_>>().join(", "),
                })
        };
        let src_idx = find(&columns.source)?;
        let tgt_idx = find(&columns.target)?;

        let mut pairs = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let cell = |idx: usize, column: &str| -> Result<String, CorpusError> {
                match record.get(idx) {
                    Some(v) if !v.trim().is_empty() => Ok(v.to_string()),
                    _ => Err(CorpusError::EmptyCell {
                        origin: origin.clone(),
                        line,
                        column: column.to_string(),
                    }),
                }
            };
            let source_text = cell(src_idx, &columns.source)?;
            let reference_translation = cell(tgt_idx, &columns.target)?;
            pairs.push(PhrasePair {
                id: pairs.len(),
                source_text,
                reference_translation,
            });
        }
        if pairs.is_empty() {
            return Err(CorpusError::Empty { origin });
        }
        let corpus = Self { pairs, origin };
        for (first, dup) in corpus.duplicate_sources() {
            log::warn!(
                "{}: phrase {dup} repeats the source text of phrase {first}",
                corpus.origin
            );
        }
        Ok(corpus)
    }

    pub fn pairs(&self) -> &[PhrasePair] {
        &self.pairs
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&PhrasePair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// `(first_id, later_id)` for every pair whose trimmed source text
    /// repeats an earlier one.
    pub fn duplicate_sources(&self) -> Vec<(usize, usize)> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut out = Vec::new();
        for p in &self.pairs {
            match seen.get(p.source_text.trim()) {
                Some(&first) => out.push((first, p.id)),
                None => {
                    seen.insert(p.source_text.trim(), p.id);
                }
            }
        }
        out
    }

    /// Writes the corpus back out as CSV using the given header names.
    pub fn write_csv<W: Write>(&self, writer: W, columns: &Columns) -> Result<(), CorpusError> {
        let csv_err = |source| CorpusError::Csv {
            origin: self.origin.clone(),
            source,
        };
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([&columns.source, &columns.target])
            .map_err(csv_err)?;
        for p in &self.pairs {
            w.write_record([&p.source_text, &p.reference_translation])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| csv_err(e.into()))?;
        Ok(())
    }
}

/// Loads a corpus file. Duplicate source phrases are kept (with distinct ids)
/// and logged as warnings.
pub fn load_corpus(path: impl AsRef<Path>, columns: &Columns) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Corpus::from_reader(file, path.display().to_string(), columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub size: usize,
    pub seed: u64,
}

/// Draws `spec.size` pairs uniformly without replacement.
///
/// The generator is [`SplitMix64`] seeded with `seed ^ (size * GOLDEN_GAMMA)`,
/// so one master seed gives independent draws for different sizes. A partial
/// Fisher-Yates shuffle over the indices `0..n` picks the members, which are
/// then returned in their original corpus order with their original ids.
pub fn sample_subset(corpus: &Corpus, spec: SubsetSpec) -> Result<Corpus, CorpusError> {
    let n = corpus.len();
    if spec.size < 2 || spec.size > n {
        return Err(CorpusError::SubsetSize {
            size: spec.size,
            corpus_size: n,
        });
    }
    let mut rng = SplitMix64::new(spec.seed ^ (spec.size as u64).wrapping_mul(GOLDEN_GAMMA));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..spec.size {
        let j = i + rng.below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen = idx[..spec.size].to_vec();
    chosen.sort_unstable();
    Ok(Corpus {
        pairs: chosen.into_iter().map(|i| corpus.pairs[i].clone()).collect(),
        origin: format!("{}[size={},seed={}]", corpus.origin, spec.size, spec.seed),
    })
}

/// A held-out target plus every other pair of the subset, in subset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaveOneOutSplit {
    pub target: PhrasePair,
    pub context: Vec<PhrasePair>,
}

pub fn leave_one_out(subset: &Corpus, target_id: usize) -> Result<LeaveOneOutSplit, CorpusError> {
    if subset.len() < 2 {
        return Err(CorpusError::SubsetTooSmall(subset.len()));
    }
    let target = subset
        .get(target_id)
        .cloned()
        .ok_or(CorpusError::UnknownTarget(target_id))?;
    let context = subset
        .pairs
        .iter()
        .filter(|p| p.id != target_id)
        .cloned()
        .collect();
    Ok(LeaveOneOutSplit { target, context })
}
