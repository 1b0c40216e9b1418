//! JSONL datasets: loading with per-line validation, statistics, and
//! seeded subset replicates.
//!
//! One sample per line:
//!
//! ```json
//! {"id": "q1", "question": "...", "reference_answer": "...",
//!  "responses": [{"response_id": "r1", "model_name": "m", "text": "..."}],
//!  "gold_ranking": ["r1"], "kind": "factoid"}
//! ```
//!
//! `reference_answer` may also be a non-empty list; the first entry is the
//! one scored against and the rest are kept in `extra_references`.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::baselines::overlap::is_cjk;
use crate::types::{CandidateResponse, EvalSample, QuestionKind, SampleError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: invalid field `{field}`: {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate sample id {id}")]
    DuplicateSampleId { line: usize, id: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("cannot draw {k} samples from {available}")]
    KTooLarge { k: usize, available: usize },
}

fn violation(line: usize, field: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::SchemaViolation {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn string_field(obj: &Map<String, Value>, key: &str, line: usize, field: &str) -> Result<String, DatasetError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(violation(line, field, "expected a string")),
        None => Err(violation(line, field, "missing")),
    }
}

fn parse_references(v: Option<&Value>, line: usize) -> Result<(String, Vec<String>), DatasetError> {
    const F: &str = "reference_answer";
    match v {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok((s.clone(), Vec::new())),
        Some(Value::String(_)) => Err(violation(line, F, "empty")),
        Some(Value::Array(items)) => {
            let mut refs = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::String(s) if !s.trim().is_empty() => refs.push(s.clone()),
                    _ => return Err(violation(line, F, "list entries must be non-empty strings")),
                }
            }
            if refs.is_empty() {
                return Err(violation(line, F, "empty list"));
            }
            let first = refs.remove(0);
            Ok((first, refs))
        }
        Some(_) => Err(violation(line, F, "expected a string or a list of strings")),
        None => Err(violation(line, F, "missing")),
    }
}

fn parse_response(v: &Value, idx: usize, line: usize) -> Result<CandidateResponse, DatasetError> {
    let field = |name: &str| format!("responses[{idx}].{name}");
    let obj = v
        .as_object()
        .ok_or_else(|| violation(line, &format!("responses[{idx}]"), "expected an object"))?;
    let allow_empty = match obj.get("allow_empty") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(violation(line, &field("allow_empty"), "expected a boolean")),
    };
    Ok(CandidateResponse {
        response_id: string_field(obj, "response_id", line, &field("response_id"))?,
        model_name: string_field(obj, "model_name", line, &field("model_name"))?,
        text: string_field(obj, "text", line, &field("text"))?,
        allow_empty,
    })
}

/// Parses one JSONL line into a validated sample.
pub fn parse_sample(text: &str, line: usize) -> Result<EvalSample, DatasetError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DatasetError::MalformedJson {
        line,
        message: e.to_string(),
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| violation(line, "(root)", "expected an object"))?;

    let id = string_field(obj, "id", line, "id")?;
    if id.trim().is_empty() {
        return Err(violation(line, "id", "empty"));
    }
    let question = string_field(obj, "question", line, "question")?;
    if question.trim().is_empty() {
        return Err(violation(line, "question", "empty"));
    }
    let (reference_answer, extra_references) = parse_references(obj.get("reference_answer"), line)?;
    let responses = match obj.get("responses") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_response(v, i, line))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(violation(line, "responses", "expected a list")),
        None => return Err(violation(line, "responses", "missing")),
    };
    let gold_ranking = match obj.get("gold_ranking") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(String::from)
                        .ok_or_else(|| violation(line, "gold_ranking", "entries must be strings"))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err(violation(line, "gold_ranking", "expected a list")),
    };
    let kind = match obj.get("kind") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            QuestionKind::deserialize(v)
                .map_err(|_| violation(line, "kind", "expected \"factoid\" or \"non-factoid\""))?,
        ),
    };

    let sample = EvalSample {
        id,
        question,
        reference_answer,
        extra_references,
        responses,
        gold_ranking,
        kind,
    };
    sample.validate().map_err(|e| {
        let field = match e {
            SampleError::GoldRanking(_) => "gold_ranking",
            _ => "responses",
        };
        violation(line, field, e.to_string())
    })?;
    Ok(sample)
}

/// Parses a whole JSONL document. Blank lines are skipped; any error
/// discards everything.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalSample>, DatasetError> {
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_sample(line, i + 1)?;
        if !ids.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateSampleId {
                line: i + 1,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalSample>, DatasetError> {
    parse_dataset(&fs::read_to_string(path)?)
}

/// The JSON object for one sample, inverse of [`parse_sample`].
pub fn sample_to_json(sample: &EvalSample) -> Value {
    let reference = if sample.extra_references.is_empty() {
        json!(sample.reference_answer)
    } else {
        let mut all = vec![sample.reference_answer.clone()];
        all.extend(sample.extra_references.iter().cloned());
        json!(all)
    };
    let mut obj = Map::new();
    obj.insert("id".into(), json!(sample.id));
    obj.insert("question".into(), json!(sample.question));
    obj.insert("reference_answer".into(), reference);
    obj.insert(
        "responses".into(),
        serde_json::to_value(&sample.responses).expect("responses serialize"),
    );
    if let Some(gold) = &sample.gold_ranking {
        obj.insert("gold_ranking".into(), json!(gold));
    }
    if let Some(kind) = sample.kind {
        obj.insert("kind".into(), json!(kind));
    }
    Value::Object(obj)
}

pub fn dataset_to_jsonl(samples: &[EvalSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&sample_to_json(s).to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// `zh`, `en` or `mixed`, judged per question by CJK share.
    pub language: String,
    pub samples: usize,
    pub factoid_count: usize,
    pub nonfactoid_count: usize,
    pub unknown_kind_count: usize,
    pub responses_per_sample: CountRange,
    pub samples_with_gold: usize,
    pub samples_with_multiple_references: usize,
}

fn mostly_cjk(text: &str) -> bool {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace() && !c.is_ascii_punctuation()).collect();
    !chars.is_empty() && chars.iter().filter(|&&c| is_cjk(c)).count() * 2 >= chars.len()
}

pub fn dataset_stats(name: &str, samples: &[EvalSample]) -> Result<DatasetManifest, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let count_kind = |k: Option<QuestionKind>| samples.iter().filter(|s| s.kind == k).count();
    let sizes = samples.iter().map(|s| s.responses.len());
    let cjk = samples.iter().filter(|s| mostly_cjk(&s.question)).count();
    let language = match cjk {
        0 => "en",
        c if c == samples.len() => "zh",
        _ => "mixed",
    };
    Ok(DatasetManifest {
        name: name.to_string(),
        language: language.to_string(),
        samples: samples.len(),
        factoid_count: count_kind(Some(QuestionKind::Factoid)),
        nonfactoid_count: count_kind(Some(QuestionKind::NonFactoid)),
        unknown_kind_count: count_kind(None),
        responses_per_sample: CountRange {
            min: sizes.clone().min().unwrap_or(0),
            max: sizes.max().unwrap_or(0),
        },
        samples_with_gold: samples.iter().filter(|s| s.gold_ranking.is_some()).count(),
        samples_with_multiple_references: samples.iter().filter(|s| !s.extra_references.is_empty()).count(),
    })
}

/// Index sets for `replicates` subsets of size `k`, each drawn without
/// replacement and returned in ascending index order.
pub fn subset_indices(n: usize, k: usize, replicates: usize, seed: u64) -> Result<Vec<Vec<usize>>, DatasetError> {
    if k > n {
        return Err(DatasetError::KTooLarge { k, available: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..replicates)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

pub fn subset_replicates(
    samples: &[EvalSample],
    k: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<EvalSample>>, DatasetError> {
    Ok(subset_indices(samples.len(), k, replicates, seed)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| samples[i].clone()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"q1","question":"Who?","reference_answer":"Ada","responses":[{"response_id":"r1","model_name":"m","text":"Ada"},{"response_id":"r2","model_name":"m","text":"Bob"}],"gold_ranking":["r1","r2"],"kind":"factoid"}"#;

    fn with_id(id: &str) -> String {
        LINE.replace("\"q1\"", &format!("\"{id}\""))
    }

    #[test]
    fn loads_valid_lines() {
        let text = format!("{}\n\n{}\n{}\n", with_id("a"), with_id("b"), with_id("c"));
        let samples = parse_dataset(&text).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[0].kind, Some(QuestionKind::Factoid));
        assert_eq!(samples[1].gold_ranking.as_deref(), Some(&["r1".to_string(), "r2".to_string()][..]));
    }

    #[test]
    fn unknown_gold_id_is_schema_violation() {
        let text = LINE.replace(r#"["r1","r2"]"#, r#"["r1","r9"]"#);
        match parse_dataset(&text) {
            Err(DatasetError::SchemaViolation { line: 1, field, .. }) => assert_eq!(field, "gold_ranking"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_sample_id() {
        let text = format!("{LINE}\n{LINE}\n");
        assert!(matches!(
            parse_dataset(&text),
            Err(DatasetError::DuplicateSampleId { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{LINE}\n{{not json\n");
        assert!(matches!(parse_dataset(&text), Err(DatasetError::MalformedJson { line: 2, .. })));
    }

    #[test]
    fn field_errors_name_the_field() {
        let cases = [
            (LINE.replace(r#""kind":"factoid""#, r#""kind":"opinion""#), "kind"),
            (LINE.replace(r#""question":"Who?","#, ""), "question"),
            (LINE.replace(r#""model_name":"m","text":"Bob""#, r#""model_name":"m""#), "responses[1].text"),
            (LINE.replace(r#""reference_answer":"Ada""#, r#""reference_answer":[]"#), "reference_answer"),
            (LINE.replace(r#""response_id":"r2""#, r#""response_id":"r1""#), "responses"),
        ];
        for (text, expected) in cases {
            match parse_dataset(&text) {
                Err(DatasetError::SchemaViolation { field, .. }) => assert_eq!(field, expected),
                other => panic!("{expected}: {other:?}"),
            }
        }
    }

    #[test]
    fn multiple_references_round_trip() {
        let text = LINE.replace(r#""reference_answer":"Ada""#, r#""reference_answer":["Ada","Lovelace"]"#);
        let samples = parse_dataset(&text).unwrap();
        assert_eq!(samples[0].reference_answer, "Ada");
        assert_eq!(samples[0].extra_references, vec!["Lovelace"]);
        assert_eq!(parse_dataset(&dataset_to_jsonl(&samples)).unwrap(), samples);
    }

    #[test]
    fn stats_count_kinds() {
        let mut samples: Vec<EvalSample> = (0..10).map(|i| parse_sample(&with_id(&format!("s{i}")), 1).unwrap()).collect();
        for s in samples.iter_mut().skip(6) {
            s.kind = Some(QuestionKind::NonFactoid);
        }
        let m = dataset_stats("toy", &samples).unwrap();
        assert_eq!((m.factoid_count, m.nonfactoid_count, m.unknown_kind_count), (6, 4, 0));
        assert_eq!(m.responses_per_sample, CountRange { min: 2, max: 2 });
        assert_eq!(m.language, "en");

        for s in &mut samples {
            s.kind = None;
        }
        assert_eq!(dataset_stats("toy", &samples).unwrap().unknown_kind_count, 10);
        assert!(matches!(dataset_stats("toy", &[]), Err(DatasetError::EmptyDataset)));
    }

    #[test]
    fn language_detection() {
        let mut s = parse_sample(LINE, 1).unwrap();
        s.question = "北京是哪个国家的首都？".into();
        assert_eq!(dataset_stats("x", std::slice::from_ref(&s)).unwrap().language, "zh");
        let en = parse_sample(LINE, 1).unwrap();
        assert_eq!(dataset_stats("x", &[s, en]).unwrap().language, "mixed");
    }

    #[test]
    fn full_subsets_and_errors() {
        let subsets = subset_indices(4, 4, 3, 7).unwrap();
        assert!(subsets.iter().all(|s| s == &vec![0, 1, 2, 3]));
        assert!(matches!(subset_indices(3, 4, 1, 0), Err(DatasetError::KTooLarge { k: 4, available: 3 })));
        assert_eq!(subset_indices(10, 3, 5, 42).unwrap(), subset_indices(10, 3, 5, 42).unwrap());
    }
}
