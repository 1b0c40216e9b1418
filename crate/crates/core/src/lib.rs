//! Ranking evaluation for open-ended question answering.
//!
//! Each sample is first classified as factoid or non-factoid. Factoid
//! responses are scored by NLI against key points extracted from the
//! reference answer ([`akps`]); non-factoid responses are ranked listwise by
//! an LLM judge guided by graded exemplar answers ([`ialr`]). Baseline
//! rankers and agreement metrics live in [`baselines`] and [`rank_metrics`].

pub mod akps;
pub mod backends;
pub mod baselines;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod fact_detection;
pub mod ialr;
pub mod judge;
pub mod prompts;
pub mod rank_metrics;
pub mod report;
pub mod runner;
pub mod simulate;
pub mod types;

pub use diagnostics::{Diagnostics, Flag};
pub use types::{
    CandidateResponse, EvalSample, Provenance, QuestionKind, Ranking, RankingError,
};
