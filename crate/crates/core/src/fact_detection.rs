//! Few-shot LLM classification of questions into factoid and non-factoid.

use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::judge::Judge;
use crate::prompts::{self, Task};
use crate::types::{EvalSample, QuestionKind};

pub const DEFAULT_DEMO_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub reference_answer: String,
    pub label: QuestionKind,
    pub rationale: String,
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("reading demonstrations: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

/// Reads demonstrations from JSONL, one object per line.
pub fn load_demonstrations(path: &Path) -> Result<Vec<Demonstration>, DemoError> {
    let text = fs::read_to_string(path)?;
    let mut demos = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demonstration = serde_json::from_str(line).map_err(|e| DemoError::Invalid {
            line: i + 1,
            message: e.to_string(),
        })?;
        if demo.question.trim().is_empty()
            || demo.reference_answer.trim().is_empty()
            || demo.rationale.trim().is_empty()
        {
            return Err(DemoError::Invalid {
                line: i + 1,
                message: "demonstration texts must be non-empty".into(),
            });
        }
        demos.push(demo);
    }
    Ok(demos)
}

/// Illustrative demonstrations used when no file is configured.
pub fn builtin_demonstrations() -> Vec<Demonstration> {
    let d = |q: &str, a: &str, label, why: &str| Demonstration {
        question: q.into(),
        reference_answer: a.into(),
        label,
        rationale: why.into(),
    };
    vec![
        d(
            "List the three largest oceans by area.",
            "The Pacific, the Atlantic and the Indian Ocean.",
            QuestionKind::Factoid,
            "The answer must name specific entities in a specific order.",
        ),
        d(
            "Write a short poem about autumn rain.",
            "Soft rain on amber leaves, the year exhales and slows.",
            QuestionKind::NonFactoid,
            "Any fitting poem is acceptable; no fact is required.",
        ),
        d(
            "Rewrite this sentence in the passive voice: The committee approved the budget.",
            "The budget was approved by the committee.",
            QuestionKind::Factoid,
            "The question fixes the content of the answer tightly.",
        ),
        d(
            "How can I stay motivated while learning a new language?",
            "Set small goals, practise daily with material you enjoy, and track progress.",
            QuestionKind::NonFactoid,
            "Many different pieces of advice would be good answers.",
        ),
        d(
            "What is the boiling point of water at sea level in Celsius?",
            "100 degrees Celsius.",
            QuestionKind::Factoid,
            "The answer is a single verifiable fact.",
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseStatus {
    Clean,
    Repaired,
    Defaulted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub kind: QuestionKind,
    pub raw_model_text: String,
    pub parse_status: ParseStatus,
}

static LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(non[\s_-]?)?factoid\b").unwrap());

/// Strict match on the last non-empty line, then a case-insensitive scan
/// keeping the last label mentioned, else NonFactoid.
pub fn parse_label(text: &str) -> (QuestionKind, ParseStatus) {
    let last = text.lines().rev().map(str::trim).find(|l| !l.is_empty());
    match last {
        Some("factoid") => return (QuestionKind::Factoid, ParseStatus::Clean),
        Some("non-factoid") => return (QuestionKind::NonFactoid, ParseStatus::Clean),
        _ => {}
    }
    match LABEL.captures_iter(text).last() {
        Some(c) if c.get(1).is_some() => (QuestionKind::NonFactoid, ParseStatus::Repaired),
        Some(_) => (QuestionKind::Factoid, ParseStatus::Repaired),
        None => (QuestionKind::NonFactoid, ParseStatus::Defaulted),
    }
}

/// Classifies with the LLM regardless of any kind preset on the sample.
pub fn classify_with_llm(
    sample: &EvalSample,
    demos: &[Demonstration],
    judge: &Judge,
) -> Result<ClassificationResult, BackendError> {
    let resp = judge.ask(Task::Classify, prompts::classify(sample, demos))?;
    let (kind, parse_status) = parse_label(&resp.text);
    Ok(ClassificationResult {
        kind,
        raw_model_text: resp.text,
        parse_status,
    })
}

/// A kind preset on the sample wins without a backend call.
pub fn classify_question(
    sample: &EvalSample,
    demos: &[Demonstration],
    judge: &Judge,
) -> Result<ClassificationResult, BackendError> {
    if let Some(kind) = sample.kind {
        return Ok(ClassificationResult {
            kind,
            raw_model_text: String::new(),
            parse_status: ParseStatus::Clean,
        });
    }
    classify_with_llm(sample, demos, judge)
}

#[derive(Debug, Error, PartialEq)]
#[error("no classification results")]
pub struct EmptyInput;

/// Percentage of results whose kind matches the gold kind.
pub fn classification_accuracy(
    results: &[(ClassificationResult, QuestionKind)],
) -> Result<f64, EmptyInput> {
    if results.is_empty() {
        return Err(EmptyInput);
    }
    let correct = results.iter().filter(|(r, gold)| r.kind == *gold).count();
    Ok(100.0 * correct as f64 / results.len() as f64)
}
