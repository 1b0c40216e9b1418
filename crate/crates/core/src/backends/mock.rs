//! Deterministic scripted backends for tests and offline runs.
//!
//! Scripts match on request content only, never on call order, so a
//! scripted run gives the same answers under any concurrency.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, NliBackend, RawNli};
use crate::prompts::Task;
use crate::simulate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Exact [`ChatRequest::digest`].
    Digest(String),
    /// Substring of the user prompt.
    Contains(String),
    /// Requests built from one prompt template.
    Task(Task),
    Any,
}

impl Matcher {
    fn matches(&self, req: &ChatRequest) -> bool {
        match self {
            Matcher::Digest(d) => *d == req.digest(),
            Matcher::Contains(s) => req.user_prompt.contains(s.as_str()),
            Matcher::Task(t) => Task::of(&req.system_prompt) == Some(*t),
            Matcher::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatFallback {
    #[default]
    Error,
    /// Answer every known prompt template with a well-formed heuristic reply.
    Simulate,
    Text(String),
}

/// Ordered rules; the first match wins.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatScript {
    #[serde(default)]
    pub rules: Vec<ChatRule>,
    #[serde(default)]
    pub fallback: ChatFallback,
}

impl ChatScript {
    pub fn fixed(text: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            fallback: ChatFallback::Text(text.into()),
        }
    }

    pub fn simulate() -> Self {
        Self {
            rules: Vec::new(),
            fallback: ChatFallback::Simulate,
        }
    }

    pub fn rule(mut self, matcher: Matcher, response: impl Into<String>) -> Self {
        self.rules.push(ChatRule {
            matcher,
            response: response.into(),
        });
        self
    }
}

pub struct ScriptedChat {
    script: ChatScript,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new(script: ChatScript) -> Self {
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ChatBackend for ScriptedChat {
    fn kind(&self) -> &str {
        "mock-chat"
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(rule) = self.script.rules.iter().find(|r| r.matcher.matches(req)) {
            return Ok(ChatResponse::text(rule.response.clone()));
        }
        match &self.script.fallback {
            ChatFallback::Text(t) => Ok(ChatResponse::text(t.clone())),
            ChatFallback::Simulate => simulate::chat(req)
                .map(ChatResponse::text)
                .ok_or_else(|| BackendError::Unscripted(req.digest())),
            ChatFallback::Error => Err(BackendError::Unscripted(req.digest())),
        }
    }
}

/// Fails with the given HTTP statuses in order, then answers "ok".
pub struct FailingChat {
    statuses: Vec<u16>,
    calls: AtomicUsize,
}

impl FailingChat {
    pub fn new(statuses: Vec<u16>) -> Self {
        Self {
            statuses,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ChatBackend for FailingChat {
    fn kind(&self) -> &str {
        "failing-chat"
    }

    fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::Relaxed);
        match self.statuses.get(n) {
            Some(&status) => Err(BackendError::Transport {
                status: Some(status),
                message: "scripted failure".into(),
            }),
            None => Ok(ChatResponse::text("ok")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NliRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_contains: Option<String>,
    pub verdict: [f64; 3],
}

impl NliRule {
    fn matches(&self, premise: &str, hypothesis: &str) -> bool {
        self.premise_equals.as_deref().is_none_or(|s| s == premise)
            && self.premise_contains.as_deref().is_none_or(|s| premise.contains(s))
            && self.hypothesis_equals.as_deref().is_none_or(|s| s == hypothesis)
            && self
                .hypothesis_contains
                .as_deref()
                .is_none_or(|s| hypothesis.contains(s))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliFallback {
    #[default]
    Error,
    /// Token-overlap heuristic.
    Simulate,
    Verdict([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NliScript {
    #[serde(default)]
    pub rules: Vec<NliRule>,
    #[serde(default)]
    pub fallback: NliFallback,
}

impl NliScript {
    pub fn fixed(raw: RawNli) -> Self {
        Self {
            rules: Vec::new(),
            fallback: NliFallback::Verdict([raw.entailment, raw.neutral, raw.contradiction]),
        }
    }

    pub fn simulate() -> Self {
        Self {
            rules: Vec::new(),
            fallback: NliFallback::Simulate,
        }
    }

    /// Exact (premise, hypothesis) pair.
    pub fn pair(
        mut self,
        premise: impl Into<String>,
        hypothesis: impl Into<String>,
        verdict: [f64; 3],
    ) -> Self {
        self.rules.push(NliRule {
            premise_equals: Some(premise.into()),
            hypothesis_equals: Some(hypothesis.into()),
            verdict,
            ..NliRule::default()
        });
        self
    }
}

pub struct ScriptedNli {
    script: NliScript,
    calls: AtomicUsize,
}

impl ScriptedNli {
    pub fn new(script: NliScript) -> Self {
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl NliBackend for ScriptedNli {
    fn kind(&self) -> &str {
        "mock-nli"
    }

    fn model_id(&self) -> &str {
        "scripted"
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<RawNli, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let as_raw = |v: &[f64; 3]| RawNli::new(v[0], v[1], v[2]);
        if let Some(rule) = self
            .script
            .rules
            .iter()
            .find(|r| r.matches(premise, hypothesis))
        {
            return Ok(as_raw(&rule.verdict));
        }
        match &self.script.fallback {
            NliFallback::Verdict(v) => Ok(as_raw(v)),
            NliFallback::Simulate => Ok(simulate::nli(premise, hypothesis)),
            NliFallback::Error => Err(BackendError::Unscripted(format!(
                "nli({premise:?}, {hypothesis:?})"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_rule_matches_exact_request() {
        let req = ChatRequest::new("m", "sys", "question text");
        let script = ChatScript::default().rule(Matcher::Digest(req.digest()), "factoid");
        let mock = ScriptedChat::new(script);
        assert_eq!(mock.send(&req).unwrap().text, "factoid");
        let other = ChatRequest::new("m", "sys", "something else");
        assert!(matches!(mock.send(&other), Err(BackendError::Unscripted(_))));
    }

    #[test]
    fn first_matching_rule_wins() {
        let script = ChatScript::fixed("default")
            .rule(Matcher::Contains("alpha".into()), "A")
            .rule(Matcher::Contains("al".into()), "B");
        let mock = ScriptedChat::new(script);
        assert_eq!(mock.send(&ChatRequest::new("m", "s", "alpha")).unwrap().text, "A");
        assert_eq!(mock.send(&ChatRequest::new("m", "s", "also")).unwrap().text, "B");
        assert_eq!(mock.send(&ChatRequest::new("m", "s", "zzz")).unwrap().text, "default");
    }

    #[test]
    fn script_file_format() {
        let json = r#"{
            "rules": [
                {"match": {"task": "listwise"}, "response": "0,0,1"},
                {"match": {"contains": "mountains"}, "response": "factoid"},
                {"match": "any", "response": "x"}
            ],
            "fallback": "simulate"
        }"#;
        let script: ChatScript = serde_json::from_str(json).unwrap();
        assert_eq!(script.rules.len(), 3);
        assert_eq!(script.rules[0].matcher, Matcher::Task(Task::Listwise));
        assert_eq!(script.fallback, ChatFallback::Simulate);

        let nli: NliScript = serde_json::from_str(
            r#"{"rules":[{"hypothesis_contains":"Huang","verdict":[0.9,0.05,0.05]}],
                "fallback":{"verdict":[0.0,1.0,0.0]}}"#,
        )
        .unwrap();
        let mock = ScriptedNli::new(nli);
        assert_eq!(mock.classify("p", "Huang runs").unwrap().entailment, 0.9);
        assert_eq!(mock.classify("p", "other").unwrap().neutral, 1.0);
    }
}
