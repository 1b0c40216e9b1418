//! Instance-aware listwise ranking for non-factoid questions.
//!
//! Five silver answers of graded quality are generated once per sample and
//! shown to the LLM ranker next to the candidates. Candidates are presented
//! in a seed-deterministic shuffled order and the ranker's permutation is
//! mapped back to response ids. When the ranker never produces a usable
//! permutation the sample still gets a ranking through the fallback chain:
//! listwise without instances, then pointwise scores, then input order.

use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::BackendError;
use crate::baselines::pointwise_scores;
use crate::diagnostics::{Diagnostics, Flag};
use crate::judge::Judge;
use crate::prompts::{self, Task};
use crate::types::{
    make_ranking, sort_scored, EvalSample, Provenance, Ranking, TieBreakChain,
};

pub const SILVER_LEVELS: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverInstance {
    /// 1 (worst) to 5 (best).
    pub level: u8,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverInstanceSet {
    instances: Vec<SilverInstance>,
    pub raw_model_text: String,
}

impl SilverInstanceSet {
    /// Sorted by level, ascending.
    pub fn instances(&self) -> &[SilverInstance] {
        &self.instances
    }
}

static LEVEL_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?mi)^[ \t]*(?:\*\*)?\[?[ \t]*level[ \t]*([0-9]+)[ \t]*\]?(?:\*\*)?[ \t]*[:：.\-]?[ \t]*")
        .unwrap()
});

/// Exactly five distinct levels 1..=5, each with non-empty text.
pub fn parse_silver_instances(text: &str) -> Option<Vec<SilverInstance>> {
    let tags: Vec<_> = LEVEL_TAG.captures_iter(text).collect();
    let mut out: Vec<SilverInstance> = Vec::new();
    for (i, caps) in tags.iter().enumerate() {
        let level: u8 = caps[1].parse().ok()?;
        let start = caps.get(0).unwrap().end();
        let end = tags
            .get(i + 1)
            .map_or(text.len(), |next| next.get(0).unwrap().start());
        let body = text[start..end].trim();
        if !(1..=SILVER_LEVELS).contains(&level)
            || body.is_empty()
            || out.iter().any(|x| x.level == level)
        {
            return None;
        }
        out.push(SilverInstance {
            level,
            text: body.to_string(),
        });
    }
    if out.len() != SILVER_LEVELS as usize {
        return None;
    }
    out.sort_by_key(|x| x.level);
    Some(out)
}

/// Generates the five silver answers, retrying once on malformed output.
/// `Ok(None)` means ranking proceeds without instances.
pub fn generate_silver_instances(
    sample: &EvalSample,
    judge: &Judge,
    diag: &mut Diagnostics,
) -> Result<Option<SilverInstanceSet>, BackendError> {
    let prompt = prompts::silver_instances(sample);
    let first = judge.ask(Task::SilverInstances, prompt.clone())?;
    if let Some(instances) = parse_silver_instances(&first.text) {
        return Ok(Some(SilverInstanceSet {
            instances,
            raw_model_text: first.text,
        }));
    }
    let second = judge.ask_again(Task::SilverInstances, &prompt)?;
    if let Some(instances) = parse_silver_instances(&second.text) {
        return Ok(Some(SilverInstanceSet {
            instances,
            raw_model_text: second.text,
        }));
    }
    diag.flag(
        Flag::InstancesMissing,
        format!("sample {}: silver instances malformed twice, ranking without them", sample.id),
    );
    Ok(None)
}

/// Per-sample shuffle seed: the global seed XOR a stable hash of the id.
pub fn shuffle_seed(global_seed: u64, sample_id: &str) -> u64 {
    let digest = Sha256::digest(sample_id.as_bytes());
    global_seed ^ u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// `result[k]` is the input index of the response shown at position `k`.
pub fn presentation_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

static STRICT_LIST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\d+(?:\s*,\s*\d+)*$").unwrap());
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

fn as_permutation(values: &[usize], n: usize) -> Option<Vec<usize>> {
    if values.len() != n {
        return None;
    }
    let mut seen = vec![false; n];
    for &v in values {
        if v >= n || std::mem::replace(&mut seen[v], true) {
            return None;
        }
    }
    Some(values.to_vec())
}

fn integers(s: &str) -> Vec<usize> {
    INTEGER
        .find_iter(s)
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

/// Zero-based permutation of `0..n`, best first. The flag is true when the
/// strict one-line form failed and a repair (bracketed list, other line,
/// 1-based indices) was needed.
pub fn parse_permutation(text: &str, n: usize) -> Option<(Vec<usize>, bool)> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if let Some(last) = lines.last() {
        if STRICT_LIST.is_match(last) {
            if let Some(p) = as_permutation(&integers(last), n) {
                return Some((p, false));
            }
        }
    }
    let candidates = lines.iter().rev().copied().chain(std::iter::once(text));
    for cand in candidates {
        let ints = integers(cand);
        if let Some(p) = as_permutation(&ints, n) {
            return Some((p, true));
        }
        if !ints.contains(&0) {
            let shifted: Vec<usize> = ints.iter().map(|v| v.saturating_sub(1)).collect();
            if let Some(p) = as_permutation(&shifted, n) {
                return Some((p, true));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Repair {
    None,
    Reparsed,
    Retry(u32),
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListwiseVerdict {
    /// Presented positions, best first. Empty on `Fallback`.
    pub order: Vec<usize>,
    pub raw_model_text: String,
    pub repair: Repair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListwiseOutcome {
    pub ranking: Ranking,
    /// Response ids in the order shown to the ranker.
    pub presented: Vec<String>,
    pub verdict: Option<ListwiseVerdict>,
    pub fallback_steps: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ListwiseOptions {
    pub shuffle_seed: u64,
    /// Used by the pointwise fallback.
    pub dimensions: Vec<String>,
}

/// One listwise attempt: ask, reparse, retry once. `Ok(None)` when no
/// usable permutation came back.
fn attempt(
    sample: &EvalSample,
    instances: Option<&SilverInstanceSet>,
    presented: &[usize],
    judge: &Judge,
) -> Result<(ListwiseVerdict, bool), BackendError> {
    let task = if instances.is_some() {
        Task::InstanceListwise
    } else {
        Task::Listwise
    };
    let texts: Vec<&str> = presented
        .iter()
        .map(|&i| sample.responses[i].text.as_str())
        .collect();
    let prompt = prompts::listwise(sample, instances, &texts);
    let n = presented.len();
    let first = judge.ask(task, prompt.clone())?;
    if let Some((order, reparsed)) = parse_permutation(&first.text, n) {
        let repair = if reparsed { Repair::Reparsed } else { Repair::None };
        return Ok((
            ListwiseVerdict {
                order,
                raw_model_text: first.text,
                repair,
            },
            true,
        ));
    }
    let second = judge.ask_again(task, &prompt)?;
    if let Some((order, _)) = parse_permutation(&second.text, n) {
        return Ok((
            ListwiseVerdict {
                order,
                raw_model_text: second.text,
                repair: Repair::Retry(1),
            },
            true,
        ));
    }
    Ok((
        ListwiseVerdict {
            order: Vec::new(),
            raw_model_text: second.text,
            repair: Repair::Fallback,
        },
        false,
    ))
}

fn map_back(sample: &EvalSample, presented: &[usize], order: &[usize]) -> Vec<String> {
    order
        .iter()
        .map(|&pos| sample.responses[presented[pos]].response_id.clone())
        .collect()
}

/// Listwise ranking over an explicit presentation order. Never fails: every
/// branch ends in a valid permutation of the sample's response ids.
pub fn rank_presented(
    sample: &EvalSample,
    instances: Option<&SilverInstanceSet>,
    presented: &[usize],
    judge: &Judge,
    dimensions: &[String],
    provenance: Provenance,
    diag: &mut Diagnostics,
) -> ListwiseOutcome {
    let presented_ids: Vec<String> = presented
        .iter()
        .map(|&i| sample.responses[i].response_id.clone())
        .collect();
    let finish = |order: Vec<String>, prov, verdict, steps| ListwiseOutcome {
        ranking: make_ranking(order, sample, prov).expect("listwise output is a permutation"),
        presented: presented_ids.clone(),
        verdict,
        fallback_steps: steps,
    };

    if sample.responses.len() == 1 {
        return finish(
            vec![sample.responses[0].response_id.clone()],
            provenance,
            None,
            Vec::new(),
        );
    }

    let mut steps = Vec::new();
    let mut last_verdict = None;
    let mut plans = vec![instances];
    if instances.is_some() {
        plans.push(None);
    }
    for (i, plan) in plans.into_iter().enumerate() {
        if i > 0 {
            steps.push("listwise-without-instances".to_string());
        }
        match attempt(sample, plan, presented, judge) {
            Ok((verdict, true)) => {
                match verdict.repair {
                    Repair::Reparsed => {
                        diag.flag(Flag::ListwiseReparsed, format!("sample {}: permutation reparsed", sample.id))
                    }
                    Repair::Retry(_) => {
                        diag.flag(Flag::ListwiseRetried, format!("sample {}: permutation needed a retry", sample.id))
                    }
                    _ => {}
                }
                let order = map_back(sample, presented, &verdict.order);
                return finish(order, provenance, Some(verdict), steps);
            }
            Ok((verdict, false)) => {
                diag.flag(
                    Flag::Fallback,
                    format!("sample {}: no valid permutation from listwise ranker", sample.id),
                );
                last_verdict = Some(verdict);
            }
            Err(e) => {
                diag.flag(Flag::Fallback, format!("sample {}: listwise call failed: {e}", sample.id));
            }
        }
    }

    steps.push("pointwise".to_string());
    match pointwise_scores(sample, judge, dimensions, diag) {
        Ok(scores) if scores.defaulted == 0 => {
            let ranking = sort_scored(&scores.list, sample, &TieBreakChain::input_index(), Provenance::Pointwise)
                .expect("pointwise scores cover the sample");
            return ListwiseOutcome {
                ranking,
                presented: presented_ids,
                verdict: last_verdict,
                fallback_steps: steps,
            };
        }
        Ok(_) => diag.flag(Flag::Fallback, format!("sample {}: pointwise fallback had unparseable scores", sample.id)),
        Err(e) => diag.flag(Flag::Fallback, format!("sample {}: pointwise fallback failed: {e}", sample.id)),
    }

    steps.push("input-order".to_string());
    diag.flag(Flag::RankingFailed, format!("sample {}: every ranking strategy failed, using input order", sample.id));
    let order = sample.response_ids().map(str::to_string).collect();
    finish(order, Provenance::InputOrder, last_verdict, steps)
}

pub fn rank_nonfactoid(
    sample: &EvalSample,
    instances: Option<&SilverInstanceSet>,
    judge: &Judge,
    options: &ListwiseOptions,
    diag: &mut Diagnostics,
) -> ListwiseOutcome {
    let presented = presentation_order(sample.responses.len(), options.shuffle_seed);
    rank_presented(
        sample,
        instances,
        &presented,
        judge,
        &options.dimensions,
        Provenance::Ialr,
        diag,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonFactoidOutcome {
    pub instances: Option<SilverInstanceSet>,
    #[serde(flatten)]
    pub listwise: ListwiseOutcome,
}

/// Instance generation followed by listwise ranking. Backend failures while
/// generating instances degrade to ranking without them.
pub fn rank_with_instances(
    sample: &EvalSample,
    judge: &Judge,
    options: &ListwiseOptions,
    diag: &mut Diagnostics,
) -> NonFactoidOutcome {
    let instances = if sample.responses.len() == 1 {
        None
    } else {
        match generate_silver_instances(sample, judge, diag) {
            Ok(set) => set,
            Err(e) => {
                diag.flag(Flag::InstancesMissing, format!("sample {}: instance generation failed: {e}", sample.id));
                None
            }
        }
    };
    let listwise = rank_nonfactoid(sample, instances.as_ref(), judge, options, diag);
    NonFactoidOutcome {
        instances,
        listwise,
    }
}
