use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Diagnostics, Flag};
use crate::judge::Judge;
use crate::prompts::{self, Task};
use crate::types::{
    sort_scored, EvalSample, Provenance, Ranking, ScoreKind, ScoredList, TieBreakChain,
    TieBreakKey,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub a: String,
    pub b: String,
    pub winner: Winner,
    pub raw_model_text: String,
}

/// Reads `A`, `B` or `tie` from the last non-empty line.
pub fn parse_winner(text: &str) -> Option<Winner> {
    let last = text.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let cleaned: String = last
        .chars()
        .filter(|c| !matches!(c, '[' | ']' | '*' | '.' | '"' | '\'' | '`'))
        .collect::<String>()
        .to_lowercase();
    let cleaned = cleaned
        .trim()
        .trim_start_matches("verdict:")
        .trim_start_matches("winner:")
        .trim();
    match cleaned {
        "a" | "response a" => Some(Winner::A),
        "b" | "response b" => Some(Winner::B),
        "tie" | "draw" | "equal" => Some(Winner::Tie),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseOutcome {
    pub ranking: Ranking,
    pub win_rates: ScoredList,
    pub verdicts: Vec<PairVerdict>,
    pub recomparisons: Vec<PairVerdict>,
}

impl PairwiseOutcome {
    pub fn primary_comparisons(&self) -> usize {
        self.verdicts.len()
    }

    pub fn recomparison_count(&self) -> usize {
        self.recomparisons.len()
    }
}

const TIEBREAK_NOTE: &str = "<tiebreak>\nThese two responses have been judged equally good so far. Look again and pick the better one; answer tie only if they are truly indistinguishable.\n</tiebreak>\n";

fn compare(
    sample: &EvalSample,
    judge: &Judge,
    dimensions: &[String],
    a: usize,
    b: usize,
    recompare: bool,
    diag: &mut Diagnostics,
) -> PairVerdict {
    let (ra, rb) = (&sample.responses[a], &sample.responses[b]);
    let mut prompt = prompts::pairwise(sample, dimensions, &ra.text, &rb.text);
    if recompare {
        prompt.push_str(TIEBREAK_NOTE);
    }
    let (winner, raw) = match judge.ask(Task::Pairwise, prompt) {
        Ok(resp) => match parse_winner(&resp.text) {
            Some(w) => (w, resp.text),
            None => {
                diag.flag(
                    Flag::ComparisonFailed,
                    format!("{} vs {}: unparseable verdict counted as tie", ra.response_id, rb.response_id),
                );
                (Winner::Tie, resp.text)
            }
        },
        Err(e) => {
            diag.flag(
                Flag::ComparisonFailed,
                format!("{} vs {}: {e}; counted as tie", ra.response_id, rb.response_id),
            );
            (Winner::Tie, String::new())
        }
    };
    PairVerdict {
        a: ra.response_id.clone(),
        b: rb.response_id.clone(),
        winner,
        raw_model_text: raw,
    }
}

/// Every unordered pair is judged in both presentation orders. Win rate is
/// wins over comparisons, ties counting as no win. Responses with equal win
/// rates are re-compared pairwise; remaining ties go to the head-to-head
/// record among the tied responses, then input order.
pub fn pairwise_rank(
    sample: &EvalSample,
    judge: &Judge,
    dimensions: &[String],
    diag: &mut Diagnostics,
) -> PairwiseOutcome {
    let n = sample.responses.len();
    let ids: Vec<&str> = sample.response_ids().collect();
    // beats[i][j]: primary comparisons in which i beat j.
    let mut beats = vec![vec![0u32; n]; n];
    let mut verdicts = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in (i + 1)..n {
            for (a, b) in [(i, j), (j, i)] {
                let v = compare(sample, judge, dimensions, a, b, false, diag);
                match v.winner {
                    Winner::A => beats[a][b] += 1,
                    Winner::B => beats[b][a] += 1,
                    Winner::Tie => {}
                }
                verdicts.push(v);
            }
        }
    }

    let comparisons_each = (2 * n.saturating_sub(1)) as f64;
    let mut win_rates = ScoredList::new(ScoreKind::WinRate);
    let rate: Vec<f64> = (0..n)
        .map(|i| {
            if comparisons_each == 0.0 {
                0.0
            } else {
                beats[i].iter().sum::<u32>() as f64 / comparisons_each
            }
        })
        .collect();
    for i in 0..n {
        win_rates.push(ids[i], rate[i]);
    }

    let mut recomparisons = Vec::new();
    let mut recompare_wins: HashMap<String, f64> = HashMap::new();
    let mut head_to_head: HashMap<String, f64> = HashMap::new();
    for i in 0..n {
        let group: Vec<usize> = (0..n).filter(|&j| rate[j] == rate[i]).collect();
        if group.len() < 2 {
            continue;
        }
        let h2h: u32 = group.iter().map(|&j| beats[i][j]).sum();
        head_to_head.insert(ids[i].to_string(), h2h as f64);
        for &j in group.iter().filter(|&&j| j > i) {
            let v = compare(sample, judge, dimensions, i, j, true, diag);
            match v.winner {
                Winner::A => *recompare_wins.entry(ids[i].to_string()).or_default() += 1.0,
                Winner::B => *recompare_wins.entry(ids[j].to_string()).or_default() += 1.0,
                Winner::Tie => {}
            }
            recomparisons.push(v);
        }
    }
    if !recomparisons.is_empty() {
        diag.flag(
            Flag::Recompared,
            format!("sample {}: {} tied pairs re-compared", sample.id, recomparisons.len()),
        );
    }

    let mut recompare_key = TieBreakKey::new("re-comparison", true);
    recompare_key.values = recompare_wins;
    let mut h2h_key = TieBreakKey::new("head-to-head", true);
    h2h_key.values = head_to_head;
    let chain = TieBreakChain::default().then(recompare_key).then(h2h_key);
    let ranking = sort_scored(&win_rates, sample, &chain, Provenance::Pairwise)
        .expect("one win rate per response");
    PairwiseOutcome {
        ranking,
        win_rates,
        verdicts,
        recomparisons,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatBackend, ChatClient, ChatRequest, ChatResponse, BackendError};
    use crate::prompts::blocks;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Judges by a fixed strength per response text; equal strength is a tie.
    /// Re-comparison prompts use `recompare` instead.
    struct Strength {
        strength: HashMap<String, i32>,
        recompare: fn(&str, &str) -> &'static str,
        calls: AtomicUsize,
    }

    impl ChatBackend for Strength {
        fn kind(&self) -> &str {
            "strength"
        }
        fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let b = blocks(&req.user_prompt);
            let resp: Vec<&str> = b.iter().filter(|x| x.0 == "response").map(|x| x.2.as_str()).collect();
            if req.user_prompt.contains("<tiebreak>") {
                return Ok(ChatResponse::text((self.recompare)(resp[0], resp[1])));
            }
            let (sa, sb) = (self.strength[resp[0]], self.strength[resp[1]]);
            let w = match sa.cmp(&sb) {
                std::cmp::Ordering::Greater => "A",
                std::cmp::Ordering::Less => "B",
                std::cmp::Ordering::Equal => "tie",
            };
            Ok(ChatResponse::text(w))
        }
    }

    fn run(strengths: &[i32], recompare: fn(&str, &str) -> &'static str) -> (PairwiseOutcome, usize) {
        let texts: Vec<String> = (0..strengths.len()).map(|i| format!("text{i}")).collect();
        let backend = Arc::new(Strength {
            strength: texts.iter().cloned().zip(strengths.iter().copied()).collect(),
            recompare,
            calls: AtomicUsize::new(0),
        });
        let judge = Judge::new(Arc::new(ChatClient::uncached(backend.clone())), "j");
        let sample = EvalSample::new(
            "s",
            "q",
            "a",
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| crate::types::CandidateResponse::new(format!("r{}", i + 1), "m", t.clone()))
                .collect(),
        );
        let out = pairwise_rank(&sample, &judge, &[], &mut Diagnostics::default());
        (out, backend.calls.load(Ordering::Relaxed))
    }

    #[test]
    fn winner_parsing() {
        assert_eq!(parse_winner("A"), Some(Winner::A));
        assert_eq!(parse_winner("thinking\n[[B]]"), Some(Winner::B));
        assert_eq!(parse_winner("Verdict: tie."), Some(Winner::Tie));
        assert_eq!(parse_winner("Response A"), Some(Winner::A));
        assert_eq!(parse_winner("A is better than B"), None);
    }

    #[test]
    fn three_way_dominance() {
        // Win rates 1.0, 0.5, 0.0.
        let (out, calls) = run(&[3, 2, 1], |_, _| "tie");
        assert_eq!(out.ranking.order(), ["r1", "r2", "r3"]);
        let rates: Vec<f64> = out.win_rates.entries.iter().map(|e| e.1).collect();
        assert_eq!(rates, vec![1.0, 0.5, 0.0]);
        assert_eq!(calls, 6);
        assert_eq!(out.recomparison_count(), 0);
    }

    #[test]
    fn two_way_dominance() {
        let (out, _) = run(&[1, 5], |_, _| "tie");
        assert_eq!(out.ranking.order(), ["r2", "r1"]);
    }

    #[test]
    fn tie_recompared_then_input_order() {
        let (out, calls) = run(&[1, 1], |_, _| "B");
        assert_eq!(out.ranking.order(), ["r2", "r1"]);
        assert_eq!(calls, 3);
        assert_eq!(out.ranking.tiebreak_trace()[0].rule, "re-comparison");

        let (out, _) = run(&[1, 1], |_, _| "tie");
        assert_eq!(out.ranking.order(), ["r1", "r2"]);
        assert_eq!(out.ranking.tiebreak_trace()[0].rule, "input-index");
    }

    #[test]
    fn call_budget_for_four() {
        let (out, calls) = run(&[4, 3, 2, 1], |_, _| "tie");
        assert_eq!(out.primary_comparisons(), 12);
        assert_eq!(calls, 12);
        // Two tied at the bottom: one extra re-comparison.
        let (out, calls) = run(&[4, 3, 1, 1], |_, _| "A");
        assert_eq!(out.primary_comparisons(), 12);
        assert_eq!(out.recomparison_count(), 1);
        assert_eq!(calls, 13);
        assert_eq!(out.ranking.order(), ["r1", "r2", "r3", "r4"]);
    }
}
