//! Adaptive key-point scoring for factoid questions.
//!
//! Key points are extracted once from the reference answer. Every response
//! is then scored by its mean NLI margin (entailment minus contradiction)
//! over the key points, with the response as premise and the key point as
//! hypothesis, and responses are sorted by that score.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, NliClient, NliVerdict};
use crate::baselines::overlap::tokenize;
use crate::diagnostics::{Diagnostics, Flag};
use crate::judge::Judge;
use crate::prompts::{self, Task};
use crate::types::{
    sort_scored, CandidateResponse, EvalSample, Provenance, Ranking, RankingError, ScoreKind,
    ScoredList, TieBreakChain, TieBreakKey,
};

pub const DEFAULT_KEY_POINT_CAP: usize = 20;
/// Key points longer than this many tokens probably bundle several facts.
pub const LONG_KEY_POINT_TOKENS: usize = 40;

#[derive(Debug, Error)]
pub enum AkpsError {
    #[error("no key points could be parsed from the extraction output")]
    EmptyExtraction { raw_model_text: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPointSet {
    pub key_points: Vec<String>,
    pub source_sample: String,
    pub raw_model_text: String,
}

static LIST_ITEM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:\(?\d+\s*[.)、:：]|[-*•·])\s*(.*?)\s*$").unwrap()
});

/// Items of a numbered or bulleted list, trimmed, exact duplicates removed,
/// in order. The flag reports truncation to `cap`.
pub fn parse_key_points(text: &str, cap: usize) -> (Vec<String>, bool) {
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    for line in text.lines() {
        let Some(caps) = LIST_ITEM.captures(line) else {
            continue;
        };
        let point = caps[1].trim();
        if point.is_empty() || !seen.insert(point.to_string()) {
            continue;
        }
        points.push(point.to_string());
    }
    let truncated = points.len() > cap;
    points.truncate(cap);
    (points, truncated)
}

pub fn extract_key_points(
    sample: &EvalSample,
    judge: &Judge,
    cap: usize,
    diag: &mut Diagnostics,
) -> Result<KeyPointSet, AkpsError> {
    let resp = judge.ask(Task::ExtractKeyPoints, prompts::extract_key_points(sample))?;
    let (key_points, truncated) = parse_key_points(&resp.text, cap);
    if key_points.is_empty() {
        return Err(AkpsError::EmptyExtraction {
            raw_model_text: resp.text,
        });
    }
    if truncated {
        diag.flag(
            Flag::KeyPointsTruncated,
            format!("sample {}: key points truncated to {cap}", sample.id),
        );
    }
    for (i, kp) in key_points.iter().enumerate() {
        if tokenize(kp).len() > LONG_KEY_POINT_TOKENS {
            diag.flag(
                Flag::LongKeyPoint,
                format!("sample {}: key point {i} may hold several statements", sample.id),
            );
        }
    }
    Ok(KeyPointSet {
        key_points,
        source_sample: sample.id.clone(),
        raw_model_text: resp.text,
    })
}

fn verdict(
    response: &CandidateResponse,
    key_point: &str,
    nli: &NliClient,
    diag: &mut Diagnostics,
) -> Result<NliVerdict, BackendError> {
    let out = nli.probabilities(&response.text, key_point)?;
    if out.renormalized {
        diag.flag(
            Flag::NliRenormalized,
            format!("response {}: NLI probabilities renormalized", response.response_id),
        );
    }
    Ok(out.verdict)
}

/// Entailment minus contradiction for one (response, key point) pair.
pub fn nli_margin(
    response: &CandidateResponse,
    key_point: &str,
    nli: &NliClient,
) -> Result<f64, BackendError> {
    Ok(verdict(response, key_point, nli, &mut Diagnostics::default())?.margin())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub key_point_index: usize,
    pub verdict: NliVerdict,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPointScore {
    pub response_id: String,
    pub per_point: Vec<PointScore>,
    pub mean_margin: f64,
    pub entailment_sum: f64,
    pub contradiction_sum: f64,
}

/// Sum in sorted order, so the result does not depend on input order.
fn order_free_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

impl KeyPointScore {
    /// Aggregates verdicts given in key-point index order.
    pub fn from_verdicts(response_id: impl Into<String>, verdicts: &[NliVerdict]) -> Self {
        assert!(!verdicts.is_empty(), "key point set is non-empty");
        let per_point: Vec<PointScore> = verdicts
            .iter()
            .enumerate()
            .map(|(i, v)| PointScore {
                key_point_index: i,
                verdict: *v,
                margin: v.margin(),
            })
            .collect();
        let n = per_point.len() as f64;
        let mean_margin = (order_free_sum(per_point.iter().map(|p| p.margin)) / n).clamp(-1.0, 1.0);
        Self {
            response_id: response_id.into(),
            mean_margin,
            entailment_sum: order_free_sum(verdicts.iter().map(NliVerdict::p_entail)),
            contradiction_sum: order_free_sum(verdicts.iter().map(NliVerdict::p_contradict)),
            per_point,
        }
    }
}

pub fn score_response(
    response: &CandidateResponse,
    kps: &KeyPointSet,
    nli: &NliClient,
    diag: &mut Diagnostics,
) -> Result<KeyPointScore, BackendError> {
    let verdicts = kps
        .key_points
        .iter()
        .map(|kp| verdict(response, kp, nli, diag))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KeyPointScore::from_verdicts(&response.response_id, &verdicts))
}

/// Mean margin first; ties go to the higher entailment sum, then the
/// lower contradiction sum, then input order.
pub fn ranking_from_scores(
    sample: &EvalSample,
    scores: &[KeyPointScore],
) -> Result<Ranking, RankingError> {
    let mut list = ScoredList::new(ScoreKind::NliKeyPoint);
    let mut entail = TieBreakKey::new("entailment-sum", true);
    let mut contra = TieBreakKey::new("contradiction-sum", false);
    for s in scores {
        list.push(s.response_id.clone(), s.mean_margin);
        entail.values.insert(s.response_id.clone(), s.entailment_sum);
        contra.values.insert(s.response_id.clone(), s.contradiction_sum);
    }
    let chain = TieBreakChain::default().then(entail).then(contra);
    sort_scored(&list, sample, &chain, Provenance::Akps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactoidOutcome {
    pub ranking: Ranking,
    pub key_points: KeyPointSet,
    pub scores: Vec<KeyPointScore>,
}

/// Extracts key points once, scores every response, sorts.
pub fn rank_factoid(
    sample: &EvalSample,
    judge: &Judge,
    nli: &NliClient,
    cap: usize,
    diag: &mut Diagnostics,
) -> Result<FactoidOutcome, AkpsError> {
    let key_points = extract_key_points(sample, judge, cap, diag)?;
    let scores = sample
        .responses
        .iter()
        .map(|r| score_response(r, &key_points, nli, diag))
        .collect::<Result<Vec<_>, _>>()?;
    let ranking = ranking_from_scores(sample, &scores)?;
    Ok(FactoidOutcome {
        ranking,
        key_points,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatClient, ChatScript, NliScript, RawNli, ScriptedChat, ScriptedNli};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn v(e: f64, n: f64, c: f64) -> NliVerdict {
        NliVerdict::from_raw(RawNli::new(e, n, c)).unwrap().0
    }

    fn judge(text: &str) -> (Judge, Arc<ScriptedChat>) {
        let mock = Arc::new(ScriptedChat::new(ChatScript::fixed(text)));
        (Judge::new(Arc::new(ChatClient::uncached(mock.clone())), "judge"), mock)
    }

    fn nli(script: NliScript) -> (NliClient, Arc<ScriptedNli>) {
        let mock = Arc::new(ScriptedNli::new(script));
        (NliClient::uncached(mock.clone()), mock)
    }

    fn sample(n: usize) -> EvalSample {
        EvalSample::new(
            "s",
            "q",
            "Li Hua is walking on the street, and his dog Huang is running around",
            (1..=n)
                .map(|i| CandidateResponse::new(format!("r{i}"), "m", format!("response {i}")))
                .collect(),
        )
    }

    #[test]
    fn parses_lists_and_dedups() {
        assert_eq!(parse_key_points("1. A\n2. A\n3. B", 20).0, vec!["A", "B"]);
        assert_eq!(
            parse_key_points("Key points:\n- first\n* second\n(3) third\n4) fourth", 20).0,
            vec!["first", "second", "third", "fourth"]
        );
        assert!(parse_key_points("Just some prose without markers.", 20).0.is_empty());
        let many: String = (1..=25).map(|i| format!("{i}. point {i}\n")).collect();
        let (pts, truncated) = parse_key_points(&many, 20);
        assert_eq!(pts.len(), 20);
        assert!(truncated);
    }

    #[test]
    fn extracts_reference_key_points() {
        let (j, _) = judge("1. Li Hua is walking on the street\n2. Huang is running around");
        let mut diag = Diagnostics::default();
        let kps = extract_key_points(&sample(1), &j, DEFAULT_KEY_POINT_CAP, &mut diag).unwrap();
        assert_eq!(
            kps.key_points,
            vec!["Li Hua is walking on the street", "Huang is running around"]
        );
        assert!(diag.flags.is_empty());
    }

    #[test]
    fn prose_is_empty_extraction() {
        let (j, _) = judge("I cannot find any key points here.");
        let err = extract_key_points(&sample(1), &j, 20, &mut Diagnostics::default()).unwrap_err();
        assert!(matches!(err, AkpsError::EmptyExtraction { .. }));
    }

    #[test]
    fn margin_examples() {
        let r = CandidateResponse::new("r1", "m", "text");
        for (raw, want) in [
            ((1.0, 0.0, 0.0), 1.0),
            ((0.0, 0.0, 1.0), -1.0),
            ((0.9, 0.05, 0.05), 0.85),
        ] {
            let (client, _) = nli(NliScript::fixed(RawNli::new(raw.0, raw.1, raw.2)));
            assert!((nli_margin(&r, "kp", &client).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn premise_is_response_hypothesis_is_key_point() {
        let (client, _) = nli(NliScript::default().pair("the response", "the point", [1.0, 0.0, 0.0]));
        let r = CandidateResponse::new("r1", "m", "the response");
        assert_eq!(nli_margin(&r, "the point", &client).unwrap(), 1.0);
    }

    #[test]
    fn mean_margin_examples() {
        let s = KeyPointScore::from_verdicts("r", &[v(0.9, 0.05, 0.05), v(0.2, 0.2, 0.6)]);
        assert!((s.mean_margin - 0.225).abs() < 1e-12);
        let s = KeyPointScore::from_verdicts("r", &[v(0.5, 0.3, 0.2)]);
        assert!((s.mean_margin - 0.3).abs() < 1e-12);
        let s = KeyPointScore::from_verdicts("r", &[v(0.3, 0.4, 0.3), v(0.0, 1.0, 0.0)]);
        assert_eq!(s.mean_margin, 0.0);
    }

    #[test]
    fn rank_orders_by_mean_margin() {
        // r1 mean (0.85 - 0.40) / 2 = 0.225, r2 mean 0.9.
        let (j, jm) = judge("1. point one\n2. point two");
        let (client, _) = nli(
            NliScript::default()
                .pair("response 1", "point one", [0.9, 0.05, 0.05])
                .pair("response 1", "point two", [0.2, 0.2, 0.6])
                .pair("response 2", "point one", [0.95, 0.05, 0.0])
                .pair("response 2", "point two", [0.9, 0.05, 0.05]),
        );
        let out = rank_factoid(&sample(2), &j, &client, 20, &mut Diagnostics::default()).unwrap();
        assert_eq!(out.ranking.order(), ["r2", "r1"]);
        assert_eq!(out.ranking.provenance(), Provenance::Akps);
        assert!((out.scores[0].mean_margin - 0.225).abs() < 1e-12);
        assert_eq!(jm.calls(), 1);
    }

    #[test]
    fn singleton_and_identical_scores() {
        let (j, _) = judge("1. p");
        let (client, _) = nli(NliScript::fixed(RawNli::new(0.5, 0.5, 0.0)));
        let out = rank_factoid(&sample(1), &j, &client, 20, &mut Diagnostics::default()).unwrap();
        assert_eq!(out.ranking.order(), ["r1"]);

        let out = rank_factoid(&sample(3), &j, &client, 20, &mut Diagnostics::default()).unwrap();
        assert_eq!(out.ranking.order(), ["r1", "r2", "r3"]);
        assert_eq!(out.ranking.tiebreak_trace().len(), 2);
        assert!(out.ranking.tiebreak_trace().iter().all(|t| t.rule == "input-index"));
    }

    #[test]
    fn tie_broken_by_entailment_sum() {
        // Same margin 0.25; r2 has more entailment, r1 and r3 are identical.
        let scores = vec![
            KeyPointScore::from_verdicts("r1", &[v(0.5, 0.25, 0.25)]),
            KeyPointScore::from_verdicts("r2", &[v(0.625, 0.0, 0.375)]),
            KeyPointScore::from_verdicts("r3", &[v(0.5, 0.25, 0.25)]),
        ];
        let r = ranking_from_scores(&sample(3), &scores).unwrap();
        assert_eq!(r.order(), ["r2", "r1", "r3"]);
        assert_eq!(r.tiebreak_trace()[0].rule, "entailment-sum");
        assert_eq!(r.tiebreak_trace()[1].rule, "input-index");

    }

    #[test]
    fn key_points_extracted_once_per_sample() {
        let (j, jm) = judge("1. a\n2. b");
        let (client, nm) = nli(NliScript::fixed(RawNli::new(0.5, 0.5, 0.0)));
        rank_factoid(&sample(5), &j, &client, 20, &mut Diagnostics::default()).unwrap();
        assert_eq!(jm.calls(), 1);
        assert_eq!(nm.calls(), 10);
    }

    fn verdict_strategy() -> impl Strategy<Value = NliVerdict> {
        (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            v(lo, hi - lo, 1.0 - hi)
        })
    }

    proptest! {
        #[test]
        fn mean_in_range_and_order_free(vs in proptest::collection::vec(verdict_strategy(), 1..12), seed in any::<u64>()) {
            let s = KeyPointScore::from_verdicts("r", &vs);
            prop_assert!((-1.0..=1.0).contains(&s.mean_margin));
            let mut shuffled = vs.clone();
            let k = shuffled.len();
            shuffled.rotate_left((seed as usize) % k);
            shuffled.reverse();
            let t = KeyPointScore::from_verdicts("r", &shuffled);
            prop_assert_eq!(s.mean_margin.to_bits(), t.mean_margin.to_bits());
        }

        #[test]
        fn adding_mean_point_keeps_mean(vs in proptest::collection::vec(verdict_strategy(), 1..12)) {
            let s = KeyPointScore::from_verdicts("r", &vs);
            let mu = s.mean_margin;
            let extra = if mu >= 0.0 { v(mu, 1.0 - mu, 0.0) } else { v(0.0, 1.0 + mu, -mu) };
            let mut more = vs.clone();
            more.push(extra);
            let t = KeyPointScore::from_verdicts("r", &more);
            prop_assert!((t.mean_margin - mu).abs() < 1e-12);
        }

        #[test]
        fn higher_entailment_increases_mean(vs in proptest::collection::vec(verdict_strategy(), 1..12), idx in any::<usize>(), bump in 1e-6f64..1.0) {
            let i = idx % vs.len();
            let old = vs[i];
            let room = old.p_neutral();
            prop_assume!(room > 1e-6);
            let delta = bump * room;
            let new = v(old.p_entail() + delta, old.p_neutral() - delta, old.p_contradict());
            prop_assume!(new.p_entail() > old.p_entail() && new.p_contradict() == old.p_contradict());
            let mut changed = vs.clone();
            changed[i] = new;
            let a = KeyPointScore::from_verdicts("r", &vs).mean_margin;
            let b = KeyPointScore::from_verdicts("r", &changed).mean_margin;
            prop_assert!(b > a);
        }
    }
}
