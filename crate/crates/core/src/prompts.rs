//! Prompt templates for every LLM call the pipeline makes.
//!
//! User prompts are assembled from tagged blocks (`<question>...</question>`)
//! so that the offline simulator can read them back with [`blocks`].

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::fact_detection::Demonstration;
use crate::ialr::SilverInstanceSet;
use crate::types::EvalSample;

/// Identifies which template a request was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classify,
    ExtractKeyPoints,
    SilverInstances,
    InstanceListwise,
    Listwise,
    Pointwise,
    Pairwise,
}

pub const CLASSIFY_SYSTEM: &str = "\
You sort open-ended questions into two groups.
factoid: a good answer must state explicit information such as entities, facts, figures or common knowledge, or the question tightly limits what the answer may contain (for example rewriting a given passage).
non-factoid: the answer is judged on how well it fulfils the request creatively or semantically, and no particular fact is required.
Reasoning or commentary inside an answer does not change the group.
Think briefly if needed, then write the label alone on the last line: factoid or non-factoid.";

pub const EXTRACT_SYSTEM: &str = "\
You extract key points from a reference answer.
A key point is one self-contained statement that a correct answer to the question has to convey. Each key point carries exactly one fact; split statements that join independent facts. Do not add information that is not in the reference answer.
Write the key points as a numbered list, one per line, and nothing else.";

pub const SILVER_SYSTEM: &str = "\
You write example answers of graded quality.
Using the reference answer as a guide to what a strong answer contains, write five answers to the question, one for each quality level from 1 (very poor) to 5 (excellent). Lower levels should omit, distort or contradict more of what matters.
Start each answer on a new line with its tag, [Level 1] through [Level 5].";

pub const INSTANCE_LISTWISE_SYSTEM: &str = "\
You rank candidate responses to a question from best to worst.
You are given the question, a reference answer, and example answers whose quality level is known (5 is best). Use the examples to calibrate what good and poor answers look like, then compare the candidates with each other.
Write one line containing every candidate index exactly once, comma-separated, best first, for example: 2,0,1";

pub const LISTWISE_SYSTEM: &str = "\
You rank candidate responses to a question from best to worst.
You are given the question, a reference answer and the candidates. Compare the candidates with each other.
Write one line containing every candidate index exactly once, comma-separated, best first, for example: 2,0,1";

pub const POINTWISE_SYSTEM: &str = "\
You grade one response to a question against a reference answer.
Consider each listed dimension, then give one overall score from 0 to 10 with exactly two decimal places.
Write the score alone on the last line, for example: 7.25";

pub const PAIRWISE_SYSTEM: &str = "\
You compare two responses to a question against a reference answer on the listed dimensions.
Decide which response is better overall.
Write the verdict alone on the last line: A, B, or tie";

const TASKS: [(Task, &str); 7] = [
    (Task::Classify, CLASSIFY_SYSTEM),
    (Task::ExtractKeyPoints, EXTRACT_SYSTEM),
    (Task::SilverInstances, SILVER_SYSTEM),
    (Task::InstanceListwise, INSTANCE_LISTWISE_SYSTEM),
    (Task::Listwise, LISTWISE_SYSTEM),
    (Task::Pointwise, POINTWISE_SYSTEM),
    (Task::Pairwise, PAIRWISE_SYSTEM),
];

impl Task {
    pub fn of(system_prompt: &str) -> Option<Task> {
        TASKS
            .iter()
            .find(|(_, s)| *s == system_prompt)
            .map(|(t, _)| *t)
    }

    pub fn system_prompt(self) -> &'static str {
        TASKS.iter().find(|(t, _)| *t == self).expect("every task has a template").1
    }

    /// Appended to the user prompt when the first reply could not be parsed.
    pub fn format_reminder(self) -> &'static str {
        match self {
            Task::Classify => "Answer with exactly one label on the last line: factoid or non-factoid.",
            Task::ExtractKeyPoints => "Output only a numbered list of key points, one per line.",
            Task::SilverInstances => {
                "Output exactly five answers, each starting with its tag [Level 1] to [Level 5]."
            }
            Task::InstanceListwise | Task::Listwise => {
                "Output only one line of comma-separated candidate indices, each index exactly once."
            }
            Task::Pointwise => "Output only the score, a number from 0 to 10 with two decimals.",
            Task::Pairwise => "Output only A, B, or tie.",
        }
    }
}

fn block(tag: &str, attr: Option<(&str, String)>, body: &str) -> String {
    match attr {
        Some((k, v)) => format!("<{tag} {k}=\"{v}\">\n{}\n</{tag}>\n", body.trim()),
        None => format!("<{tag}>\n{}\n</{tag}>\n", body.trim()),
    }
}

fn question_and_reference(sample: &EvalSample) -> String {
    let mut s = block("question", None, &sample.question);
    s.push_str(&block("reference", None, &sample.reference_answer));
    s
}

pub fn with_reminder(user_prompt: &str, task: Task) -> String {
    format!("{user_prompt}\n{}", block("format", None, task.format_reminder()))
}

pub fn classify(sample: &EvalSample, demos: &[Demonstration]) -> String {
    let mut s = String::new();
    if !demos.is_empty() {
        let mut examples = String::new();
        for d in demos {
            let mut body = block("question", None, &d.question);
            body.push_str(&block("reference", None, &d.reference_answer));
            body.push_str(&block("rationale", None, &d.rationale));
            body.push_str(&block("label", None, d.label.label()));
            examples.push_str(&block("example", None, &body));
        }
        s.push_str(&block("examples", None, &examples));
    }
    s.push_str(&question_and_reference(sample));
    s
}

pub fn extract_key_points(sample: &EvalSample) -> String {
    question_and_reference(sample)
}

pub fn silver_instances(sample: &EvalSample) -> String {
    question_and_reference(sample)
}

/// `candidates` are the response texts in presentation order.
pub fn listwise(
    sample: &EvalSample,
    instances: Option<&SilverInstanceSet>,
    candidates: &[&str],
) -> String {
    let mut s = question_and_reference(sample);
    if let Some(set) = instances {
        for inst in set.instances().iter().rev() {
            s.push_str(&block("instance", Some(("level", inst.level.to_string())), &inst.text));
        }
    }
    for (i, text) in candidates.iter().enumerate() {
        s.push_str(&block("candidate", Some(("index", i.to_string())), text));
    }
    s
}

pub fn pointwise(sample: &EvalSample, dimensions: &[String], response: &str) -> String {
    let mut s = question_and_reference(sample);
    s.push_str(&block("dimensions", None, &dimensions.join("\n")));
    s.push_str(&block("response", None, response));
    s
}

pub fn pairwise(sample: &EvalSample, dimensions: &[String], a: &str, b: &str) -> String {
    let mut s = question_and_reference(sample);
    s.push_str(&block("dimensions", None, &dimensions.join("\n")));
    s.push_str(&block("response", Some(("label", "A".into())), a));
    s.push_str(&block("response", Some(("label", "B".into())), b));
    s
}

static BLOCK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?s)<([a-z]+)(?: [a-z]+="([^"]*)")?>\n(.*?)\n</([a-z]+)>"#).unwrap()
});

/// Top-level tagged blocks of a prompt as `(tag, attribute, body)`.
/// Blocks nested inside `<examples>` are not returned separately.
pub fn blocks(prompt: &str) -> Vec<(String, Option<String>, String)> {
    let mut out = Vec::new();
    let mut rest = prompt;
    while let Some(caps) = BLOCK.captures(rest) {
        let whole = caps.get(0).unwrap();
        let tag = caps[1].to_string();
        if tag == "examples" {
            // Skip to the matching close tag; nested blocks stay inside.
            match rest.find("</examples>") {
                Some(end) => {
                    rest = &rest[end + "</examples>".len()..];
                    continue;
                }
                None => break,
            }
        }
        if caps[4] == tag {
            out.push((tag, caps.get(2).map(|m| m.as_str().to_string()), caps[3].to_string()));
        }
        rest = &rest[whole.end()..];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CandidateResponse, QuestionKind};

    fn sample() -> EvalSample {
        EvalSample::new(
            "s",
            "Which is the highest mountain?",
            "Mount Everest.",
            vec![CandidateResponse::new("r1", "m", "Everest")],
        )
    }

    #[test]
    fn tasks_identified_by_system_prompt() {
        for (task, sys) in TASKS {
            assert_eq!(Task::of(sys), Some(task));
            assert_eq!(task.system_prompt(), sys);
        }
        assert_eq!(Task::of("something else"), None);
    }

    #[test]
    fn blocks_round_trip_and_skip_examples() {
        let demo = Demonstration {
            question: "demo q".into(),
            reference_answer: "demo a".into(),
            label: QuestionKind::NonFactoid,
            rationale: "why".into(),
        };
        let prompt = classify(&sample(), &[demo]);
        let b = blocks(&prompt);
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].0, "question");
        assert_eq!(b[0].2, "Which is the highest mountain?");
        assert_eq!(b[1].2, "Mount Everest.");
    }

    #[test]
    fn listwise_candidates_are_indexed() {
        let prompt = listwise(&sample(), None, &["first", "second"]);
        let cands: Vec<_> = blocks(&prompt)
            .into_iter()
            .filter(|b| b.0 == "candidate")
            .map(|b| (b.1.unwrap(), b.2))
            .collect();
        assert_eq!(
            cands,
            vec![("0".to_string(), "first".to_string()), ("1".to_string(), "second".to_string())]
        );
    }
}
