//! Heuristic stand-ins for the judge LLM and the NLI model.
//!
//! Every reply is a pure function of the request and always well-formed for
//! its template, which makes full offline runs possible. Quality is
//! approximated by token overlap with the reference answer.

use std::collections::HashSet;

use crate::backends::{ChatRequest, RawNli};
use crate::baselines::overlap::{rouge_l, tokenize};
use crate::prompts::{blocks, Task};

/// Tokens with surrounding punctuation removed, so `Paris.` matches `Paris`.
fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn quality(candidate: &str, reference: &str) -> f64 {
    rouge_l(&words(candidate).join(" "), &words(reference).join(" "))
}

fn last_block<'a>(b: &'a [(String, Option<String>, String)], tag: &str) -> Option<&'a str> {
    b.iter().rev().find(|x| x.0 == tag).map(|x| x.2.as_str())
}

/// Reply for a request built from a known template, `None` otherwise.
pub fn chat(req: &ChatRequest) -> Option<String> {
    let task = Task::of(&req.system_prompt)?;
    let b = blocks(&req.user_prompt);
    let question = last_block(&b, "question").unwrap_or("");
    let reference = last_block(&b, "reference").unwrap_or("");
    let reply = match task {
        Task::Classify => classify(question, reference).to_string(),
        Task::ExtractKeyPoints => key_points(reference),
        Task::SilverInstances => silver(reference),
        Task::Listwise | Task::InstanceListwise => {
            let cands: Vec<&str> = b
                .iter()
                .filter(|x| x.0 == "candidate")
                .map(|x| x.2.as_str())
                .collect();
            let mut order: Vec<usize> = (0..cands.len()).collect();
            let scores: Vec<f64> = cands.iter().map(|c| quality(c, reference)).collect();
            order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
            order.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        }
        Task::Pointwise => {
            let resp = last_block(&b, "response").unwrap_or("");
            format!("{:.2}", 10.0 * quality(resp, reference))
        }
        Task::Pairwise => {
            let resp: Vec<&str> = b
                .iter()
                .filter(|x| x.0 == "response")
                .map(|x| x.2.as_str())
                .collect();
            let (a, bb) = (resp.first().copied()?, resp.get(1).copied()?);
            let (sa, sb) = (quality(a, reference), quality(bb, reference));
            if sa > sb {
                "A".into()
            } else if sb > sa {
                "B".into()
            } else {
                "tie".into()
            }
        }
    };
    Some(reply)
}

const FACTOID_OPENERS: [&str; 10] = [
    "what", "who", "when", "where", "which", "how many", "how much", "list", "define", "name",
];

fn classify(question: &str, reference: &str) -> &'static str {
    let q = question.trim().to_lowercase();
    let opener = FACTOID_OPENERS.iter().any(|w| q.starts_with(w));
    let has_digit = reference.chars().any(|c| c.is_ascii_digit());
    if opener || has_digit {
        "factoid"
    } else {
        "non-factoid"
    }
}

fn key_points(reference: &str) -> String {
    let points: Vec<&str> = reference
        .split(['.', '!', '?', ';', '\n', '。', '！', '？', '；'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if points.is_empty() {
        return String::new();
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. {p}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn silver(reference: &str) -> String {
    let words: Vec<&str> = reference.split_whitespace().collect();
    (1..=5)
        .map(|level| {
            let keep = (words.len() * level).div_ceil(5).max(1).min(words.len());
            let text = if words.is_empty() {
                format!("answer at level {level}")
            } else {
                words[..keep].join(" ")
            };
            format!("[Level {level}] {text}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Entailment grows with the share of hypothesis tokens found in the premise.
pub fn nli(premise: &str, hypothesis: &str) -> RawNli {
    let premise: HashSet<String> = words(premise).into_iter().collect();
    let hyp = words(hypothesis);
    let covered = if hyp.is_empty() {
        0.0
    } else {
        hyp.iter().filter(|t| premise.contains(*t)).count() as f64 / hyp.len() as f64
    };
    let entailment = 0.05 + 0.85 * covered;
    let contradiction = 0.05 + 0.45 * (1.0 - covered);
    RawNli::new(entailment, 1.0 - entailment - contradiction, contradiction)
}
