//! Comparison evaluators: LLM pointwise, pairwise and naive listwise
//! ranking, plus BLEU and ROUGE-L against the reference answer.

pub mod overlap;
mod pairwise;

use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

pub use overlap::{bleu, rouge_l, tokenize};
pub use pairwise::{pairwise_rank, parse_winner, PairVerdict, PairwiseOutcome, Winner};

use crate::backends::BackendError;
use crate::diagnostics::{Diagnostics, Flag};
use crate::ialr::{presentation_order, rank_presented, ListwiseOptions, ListwiseOutcome};
use crate::judge::Judge;
use crate::prompts::{self, Task};
use crate::types::{
    sort_scored, EvalSample, Provenance, Ranking, ScoreKind, ScoredList, TieBreakChain,
};

pub fn default_dimensions() -> Vec<String> {
    ["Fluency", "Truthfulness", "Completeness", "Relevance"]
        .into_iter()
        .map(String::from)
        .collect()
}

static SCORE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:(?:overall\s+)?score\s*[:：]?\s*)?(\d+(?:\.\d+)?)(?:\s*/\s*10)?$").unwrap()
});

/// A 0 to 10 score alone on the last non-empty line, rounded to two decimals.
pub fn parse_score(text: &str) -> Option<f64> {
    let last = text.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let value: f64 = SCORE_LINE.captures(last)?[1].parse().ok()?;
    (0.0..=10.0)
        .contains(&value)
        .then(|| (value * 100.0).round() / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointwiseScores {
    pub list: ScoredList,
    /// Responses whose score could not be parsed even after a retry.
    pub defaulted: usize,
    pub raw: Vec<String>,
}

pub fn pointwise_scores(
    sample: &EvalSample,
    judge: &Judge,
    dimensions: &[String],
    diag: &mut Diagnostics,
) -> Result<PointwiseScores, BackendError> {
    let mut list = ScoredList::new(ScoreKind::Pointwise);
    let mut defaulted = 0;
    let mut raw = Vec::new();
    for r in &sample.responses {
        let prompt = prompts::pointwise(sample, dimensions, &r.text);
        let first = judge.ask(Task::Pointwise, prompt.clone())?;
        let (score, text) = match parse_score(&first.text) {
            Some(s) => (s, first.text),
            None => {
                diag.flag(Flag::ScoreRetried, format!("response {}: unparseable score, retrying", r.response_id));
                let second = judge.ask_again(Task::Pointwise, &prompt)?;
                match parse_score(&second.text) {
                    Some(s) => (s, second.text),
                    None => {
                        diag.flag(Flag::ScoreDefaulted, format!("response {}: score defaulted to 0.00", r.response_id));
                        defaulted += 1;
                        (0.0, second.text)
                    }
                }
            }
        };
        list.push(r.response_id.clone(), score);
        raw.push(text);
    }
    Ok(PointwiseScores {
        list,
        defaulted,
        raw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredOutcome {
    pub ranking: Ranking,
    pub scores: ScoredList,
}

/// One two-decimal score per response; equal scores keep input order.
pub fn pointwise_rank(
    sample: &EvalSample,
    judge: &Judge,
    dimensions: &[String],
    diag: &mut Diagnostics,
) -> Result<ScoredOutcome, BackendError> {
    let scores = pointwise_scores(sample, judge, dimensions, diag)?;
    let ranking = sort_scored(&scores.list, sample, &TieBreakChain::input_index(), Provenance::Pointwise)
        .expect("one score per response");
    Ok(ScoredOutcome {
        ranking,
        scores: scores.list,
    })
}

/// Listwise ranking without silver instances. Shares the parsing, retry
/// and fallback behaviour of the instance-aware ranker.
pub fn naive_listwise_rank(
    sample: &EvalSample,
    judge: &Judge,
    options: &ListwiseOptions,
    diag: &mut Diagnostics,
) -> ListwiseOutcome {
    let presented = presentation_order(sample.responses.len(), options.shuffle_seed);
    rank_presented(
        sample,
        None,
        &presented,
        judge,
        &options.dimensions,
        Provenance::NaiveListwise,
        diag,
    )
}

fn overlap_rank(
    sample: &EvalSample,
    metric: fn(&str, &str) -> f64,
    provenance: Provenance,
) -> ScoredOutcome {
    let mut scores = ScoredList::new(ScoreKind::TokenOverlap);
    for r in &sample.responses {
        scores.push(r.response_id.clone(), metric(&r.text, &sample.reference_answer));
    }
    let ranking = sort_scored(&scores, sample, &TieBreakChain::input_index(), provenance)
        .expect("one score per response");
    ScoredOutcome { ranking, scores }
}

pub fn bleu_rank(sample: &EvalSample) -> ScoredOutcome {
    overlap_rank(sample, bleu, Provenance::Bleu)
}

pub fn rouge_l_rank(sample: &EvalSample) -> ScoredOutcome {
    overlap_rank(sample, rouge_l, Provenance::RougeL)
}
