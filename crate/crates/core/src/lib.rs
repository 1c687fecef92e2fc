//! Leave-one-out in-context translation experiments over tiny parallel
//! corpora, with a self-contained set of sentence-level MT metrics.
//!
//! The pipeline is:
//!
//! 1. [`corpus`] loads a two-column phrase file and draws seeded subsets.
//! 2. [`prompting`] renders each held-out phrase into a chat prompt whose
//!    context is every *other* pair of the subset.
//! 3. [`backend`] sends each prompt as one isolated request, either to an
//!    HTTP chat-completions endpoint or to a deterministic offline mock.
//! 4. [`metrics`] scores candidates against the held-out references.
//! 5. [`experiment`] runs the whole grid of (style, subset size) and
//!    [`report`] turns the result into tables and scaling charts.
//!
//! ```
//! use nrt_core::metrics::score_pair;
//!
//! let s = score_pair("The bear cooked this wood.", "The bear cooked the wood.").unwrap();
//! assert!((s.rouge_l_f - 0.8).abs() < 1e-12);
//! ```

pub mod backend;
pub mod corpus;
pub mod experiment;
pub mod fsutil;
pub mod metrics;
pub mod prompting;
pub mod report;
pub mod rng;

pub use backend::{Backend, BackendConfig, BackendError, BackendKind, TranslationResponse};
pub use corpus::{Corpus, CorpusError, LeaveOneOutSplit, PhrasePair, SubsetSpec};
pub use experiment::{ExperimentConfig, ExperimentError, ExperimentResult, RunRecord};
pub use metrics::{score_pair, SentenceScores, TokenSequence};
pub use prompting::{PromptStyle, RenderedPrompt};
pub use report::{build_scaling_tables, render_report, ReportFormat, ScalingTable};

// The guide's code listings are compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/prompting.md")]
    mod prompting {}
    #[doc = include_str!("../../../book/src/backend.md")]
    mod backend {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiment.md")]
    mod experiment {}
    #[doc = include_str!("../../../book/src/report.md")]
    mod report {}
}
