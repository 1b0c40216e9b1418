//! Domain types shared by every stage of the evaluation pipeline.
//!
//! A [`Ranking`] is a strict total order over the response ids of one
//! [`EvalSample`]. It can only be built through [`make_ranking`] or
//! [`sort_scored`], both of which enforce the permutation property, so a
//! tie can never be represented.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Factoid / non-factoid membership of a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionKind {
    #[serde(rename = "factoid")]
    Factoid,
    #[serde(rename = "non-factoid")]
    NonFactoid,
}

impl QuestionKind {
    pub fn label(self) -> &'static str {
        match self {
            QuestionKind::Factoid => "factoid",
            QuestionKind::NonFactoid => "non-factoid",
        }
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub response_id: String,
    pub model_name: String,
    pub text: String,
    /// Must be set for `text` to be legitimately empty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_empty: bool,
}

impl CandidateResponse {
    pub fn new(
        response_id: impl Into<String>,
        model_name: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            response_id: response_id.into(),
            model_name: model_name.into(),
            text: text.into(),
            allow_empty: false,
        }
    }
}

/// One question with its reference answer and the candidate responses to rank.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub question: String,
    pub reference_answer: String,
    /// Additional references beyond the first. The pipeline scores against
    /// `reference_answer` only.
    pub extra_references: Vec<String>,
    pub responses: Vec<CandidateResponse>,
    pub gold_ranking: Option<Vec<String>>,
    pub kind: Option<QuestionKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("sample has no responses")]
    NoResponses,
    #[error("response id is empty")]
    EmptyResponseId,
    #[error("response {0} has empty text without allow_empty")]
    EmptyText(String),
    #[error("duplicate response id {0}")]
    DuplicateResponseId(String),
    #[error("gold ranking: {0}")]
    GoldRanking(RankingError),
}

impl EvalSample {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        reference_answer: impl Into<String>,
        responses: Vec<CandidateResponse>,
    ) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            reference_answer: reference_answer.into(),
            extra_references: Vec::new(),
            responses,
            gold_ranking: None,
            kind: None,
        }
    }

    pub fn with_kind(mut self, kind: QuestionKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn with_gold(mut self, gold: Vec<String>) -> Self {
        self.gold_ranking = Some(gold);
        self
    }

    pub fn response_ids(&self) -> impl Iterator<Item = &str> {
        self.responses.iter().map(|r| r.response_id.as_str())
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.responses.is_empty() {
            return Err(SampleError::NoResponses);
        }
        let mut seen = HashSet::new();
        for r in &self.responses {
            if r.response_id.is_empty() {
                return Err(SampleError::EmptyResponseId);
            }
            if r.text.is_empty() && !r.allow_empty {
                return Err(SampleError::EmptyText(r.response_id.clone()));
            }
            if !seen.insert(r.response_id.as_str()) {
                return Err(SampleError::DuplicateResponseId(r.response_id.clone()));
            }
        }
        if let Some(gold) = &self.gold_ranking {
            check_permutation(gold, self).map_err(SampleError::GoldRanking)?;
        }
        Ok(())
    }

    /// The gold ranking as a validated [`Ranking`], if present.
    pub fn gold(&self) -> Option<Result<Ranking, RankingError>> {
        self.gold_ranking
            .as_ref()
            .map(|g| make_ranking(g.clone(), self, Provenance::Gold))
    }
}

/// Which method produced a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Akps,
    Ialr,
    NaiveListwise,
    Pointwise,
    Pairwise,
    Bleu,
    RougeL,
    /// Input order, emitted only when every ranking strategy failed.
    InputOrder,
    Gold,
}

/// One tie resolved while ordering: the item at `position` (0-based) had
/// the same primary score as its predecessor and was placed by `rule`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieBreakRecord {
    pub position: usize,
    pub rule: String,
}

/// Name of the terminal rule in every tie-break chain.
pub const INPUT_INDEX_RULE: &str = "input-index";

/// A strict total order over the response ids of a sample, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    order: Vec<String>,
    provenance: Provenance,
    tiebreak_trace: Vec<TieBreakRecord>,
}

impl Ranking {
    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn tiebreak_trace(&self) -> &[TieBreakRecord] {
        &self.tiebreak_trace
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 0-based position of every id.
    pub fn positions(&self) -> HashMap<&str, usize> {
        self.order
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Rebuilds a ranking from ids alone, checking only that they are
    /// distinct. Used when comparing stored rankings with no sample at hand.
    pub fn from_ids(order: Vec<String>, provenance: Provenance) -> Result<Self, RankingError> {
        let mut seen = HashSet::new();
        for id in &order {
            if !seen.insert(id.as_str()) {
                return Err(RankingError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            order,
            provenance,
            tiebreak_trace: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankingError {
    #[error("duplicate response id {0}")]
    DuplicateId(String),
    #[error("missing response id {0}")]
    MissingId(String),
    #[error("unknown response id {0}")]
    UnknownId(String),
    #[error("scores do not cover the sample: {0}")]
    IncompleteScores(String),
}

fn check_permutation(order: &[String], sample: &EvalSample) -> Result<(), RankingError> {
    let known: HashSet<&str> = sample.response_ids().collect();
    let mut seen = HashSet::new();
    for id in order {
        if !seen.insert(id.as_str()) {
            return Err(RankingError::DuplicateId(id.clone()));
        }
        if !known.contains(id.as_str()) {
            return Err(RankingError::UnknownId(id.clone()));
        }
    }
    if let Some(missing) = sample.response_ids().find(|id| !seen.contains(id)) {
        return Err(RankingError::MissingId(missing.to_string()));
    }
    Ok(())
}

/// Validates `order` as a permutation of the sample's response ids.
pub fn make_ranking(
    order: Vec<String>,
    sample: &EvalSample,
    provenance: Provenance,
) -> Result<Ranking, RankingError> {
    check_permutation(&order, sample)?;
    Ok(Ranking {
        order,
        provenance,
        tiebreak_trace: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    NliKeyPoint,
    Pointwise,
    WinRate,
    TokenOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredList {
    pub entries: Vec<(String, f64)>,
    pub score_kind: ScoreKind,
}

impl ScoredList {
    pub fn new(score_kind: ScoreKind) -> Self {
        Self {
            entries: Vec::new(),
            score_kind,
        }
    }

    pub fn push(&mut self, id: impl Into<String>, score: f64) {
        self.entries.push((id.into(), score));
    }
}

/// A secondary ordering key consulted when primary scores are exactly equal.
#[derive(Debug, Clone, PartialEq)]
pub struct TieBreakKey {
    pub name: String,
    pub higher_is_better: bool,
    pub values: HashMap<String, f64>,
}

impl TieBreakKey {
    pub fn new(name: impl Into<String>, higher_is_better: bool) -> Self {
        Self {
            name: name.into(),
            higher_is_better,
            values: HashMap::new(),
        }
    }

    pub fn with(mut self, id: impl Into<String>, value: f64) -> Self {
        self.values.insert(id.into(), value);
        self
    }
}

/// Ordered secondary keys. Input index ascending is always the implicit
/// last rule, so the chain always yields a strict order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TieBreakChain {
    pub keys: Vec<TieBreakKey>,
}

impl TieBreakChain {
    /// Chain that falls straight through to input order.
    pub fn input_index() -> Self {
        Self::default()
    }

    pub fn then(mut self, key: TieBreakKey) -> Self {
        self.keys.push(key);
        self
    }
}

struct Item<'a> {
    id: &'a str,
    index: usize,
    score: f64,
}

/// Sorts by descending score, resolving exact ties with `chain`.
pub fn sort_scored(
    scores: &ScoredList,
    sample: &EvalSample,
    chain: &TieBreakChain,
    provenance: Provenance,
) -> Result<Ranking, RankingError> {
    let index: HashMap<&str, usize> = sample
        .response_ids()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let mut seen = HashSet::new();
    let mut items = Vec::with_capacity(scores.entries.len());
    for (id, score) in &scores.entries {
        let Some(&i) = index.get(id.as_str()) else {
            return Err(RankingError::IncompleteScores(format!("unknown id {id}")));
        };
        if !seen.insert(id.as_str()) {
            return Err(RankingError::IncompleteScores(format!("duplicate id {id}")));
        }
        if !score.is_finite() {
            return Err(RankingError::IncompleteScores(format!(
                "non-finite score for {id}"
            )));
        }
        items.push(Item {
            id: id.as_str(),
            index: i,
            score: *score,
        });
    }
    if let Some(missing) = sample.response_ids().find(|id| !seen.contains(id)) {
        return Err(RankingError::IncompleteScores(format!("no score for {missing}")));
    }

    let key_value = |key: &TieBreakKey, id: &str| key.values.get(id).copied().unwrap_or(0.0);
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| {
                for key in &chain.keys {
                    let (va, vb) = (key_value(key, a.id), key_value(key, b.id));
                    let ord = if key.higher_is_better {
                        vb.total_cmp(&va)
                    } else {
                        va.total_cmp(&vb)
                    };
                    if ord.is_ne() {
                        return ord;
                    }
                }
                std::cmp::Ordering::Equal
            })
            .then(a.index.cmp(&b.index))
    });

    let mut trace = Vec::new();
    for (pos, pair) in items.windows(2).enumerate() {
        let (prev, cur) = (&pair[0], &pair[1]);
        if prev.score != cur.score {
            continue;
        }
        let rule = chain
            .keys
            .iter()
            .find(|k| key_value(k, prev.id) != key_value(k, cur.id))
            .map_or(INPUT_INDEX_RULE, |k| k.name.as_str());
        trace.push(TieBreakRecord {
            position: pos + 1,
            rule: rule.to_string(),
        });
    }

    Ok(Ranking {
        order: items.iter().map(|it| it.id.to_string()).collect(),
        provenance,
        tiebreak_trace: trace,
    })
}
