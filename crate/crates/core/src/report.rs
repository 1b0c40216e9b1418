//! Agreement tables over one or more rankings files.
//!
//! Files produced by the same method are treated as subset replicates: each
//! file is averaged on its own and the row shows the mean and sample standard
//! deviation across files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::Method;
use crate::dataset::{load_dataset, DatasetError};
use crate::rank_metrics::{agreement, aggregate, percent, AggregateReport, MetricError, MetricSummary};
use crate::runner::RankingLine;
use crate::types::{make_ranking, EvalSample, Ranking};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path} mixes methods {first} and {second}")]
    MixedMethods {
        path: PathBuf,
        first: Method,
        second: Method,
    },
    #[error("rankings do not match the gold dataset: {0}")]
    IdSetMismatch(String),
    #[error("{path}: {source}")]
    Metric { path: PathBuf, source: MetricError },
    #[error("no rankings files given")]
    NoInput,
}

struct RankingsFile {
    path: PathBuf,
    method: Method,
    lines: Vec<RankingLine>,
}

fn read_rankings(path: &Path) -> Result<RankingsFile, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: RankingLine = serde_json::from_str(raw).map_err(|e| ReportError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        lines.push(line);
    }
    let method = lines.first().map(|l| l.method).unwrap_or_default();
    if let Some(other) = lines.iter().find(|l| l.method != method) {
        return Err(ReportError::MixedMethods {
            path: path.to_path_buf(),
            first: method,
            second: other.method,
        });
    }
    Ok(RankingsFile {
        path: path.to_path_buf(),
        method,
        lines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: Method,
    pub files: Vec<PathBuf>,
    /// Samples scored, summed over files.
    pub samples: usize,
    /// Samples with a single response, summed over files.
    pub excluded_single_response: usize,
    /// Samples whose gold entry carries no ranking, summed over files.
    pub without_gold: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rbo_p: Vec<f64>,
    pub rows: Vec<ReportRow>,
}

fn check_ids(line: &RankingLine, gold: &HashMap<&str, &EvalSample>, problems: &mut Vec<String>) {
    let Some(sample) = gold.get(line.id.as_str()) else {
        problems.push(format!("sample {} not in gold dataset", line.id));
        return;
    };
    let expected: HashSet<&str> = sample.response_ids().collect();
    let got: HashSet<&str> = line.order.iter().map(String::as_str).collect();
    let mut missing: Vec<&str> = expected.difference(&got).copied().collect();
    let mut unknown: Vec<&str> = got.difference(&expected).copied().collect();
    missing.sort_unstable();
    unknown.sort_unstable();
    if !missing.is_empty() {
        problems.push(format!("sample {}: missing {}", line.id, missing.join(", ")));
    }
    if !unknown.is_empty() {
        problems.push(format!("sample {}: unknown {}", line.id, unknown.join(", ")));
    }
    if got.len() != line.order.len() {
        problems.push(format!("sample {}: repeated response ids", line.id));
    }
}

/// Builds the report from already-loaded gold samples.
pub fn report_with(files: &[PathBuf], gold_samples: &[EvalSample], rbo_p: &[f64]) -> Result<Report, ReportError> {
    if files.is_empty() {
        return Err(ReportError::NoInput);
    }
    let gold: HashMap<&str, &EvalSample> = gold_samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let parsed = files.iter().map(|f| read_rankings(f)).collect::<Result<Vec<_>, _>>()?;

    let mut problems = Vec::new();
    for file in &parsed {
        for line in &file.lines {
            check_ids(line, &gold, &mut problems);
        }
    }
    if !problems.is_empty() {
        return Err(ReportError::IdSetMismatch(problems.join("; ")));
    }

    let mut by_method: BTreeMap<Method, Vec<&RankingsFile>> = BTreeMap::new();
    for file in &parsed {
        by_method.entry(file.method).or_default().push(file);
    }

    let mut rows = Vec::new();
    for (method, group) in by_method {
        let mut reports = Vec::new();
        let mut subset_ids = Vec::new();
        let (mut excluded, mut without_gold) = (0, 0);
        for (subset, file) in group.iter().enumerate() {
            for line in &file.lines {
                let sample = gold[line.id.as_str()];
                let gold_ranking: Ranking = match sample.gold() {
                    Some(Ok(r)) => r,
                    Some(Err(e)) => {
                        return Err(ReportError::IdSetMismatch(format!("gold ranking of {}: {e}", sample.id)))
                    }
                    None => {
                        without_gold += 1;
                        continue;
                    }
                };
                if gold_ranking.len() < 2 {
                    excluded += 1;
                    continue;
                }
                let produced = make_ranking(line.order.clone(), sample, line.provenance)
                    .map_err(|e| ReportError::IdSetMismatch(format!("sample {}: {e}", line.id)))?;
                let report = agreement(&produced, &gold_ranking, rbo_p).map_err(|source| ReportError::Metric {
                    path: file.path.clone(),
                    source,
                })?;
                reports.push(report);
                subset_ids.push(subset);
            }
        }
        let aggregate = if reports.is_empty() {
            None
        } else {
            Some(aggregate(&reports, Some(&subset_ids)).map_err(|source| ReportError::Metric {
                path: group[0].path.clone(),
                source,
            })?)
        };
        rows.push(ReportRow {
            method,
            files: group.iter().map(|f| f.path.clone()).collect(),
            samples: reports.len(),
            excluded_single_response: excluded,
            without_gold,
            aggregate,
        });
    }
    Ok(Report {
        rbo_p: rbo_p.to_vec(),
        rows,
    })
}

pub fn cmd_report(files: &[PathBuf], gold_path: &Path, rbo_p: &[f64]) -> Result<Report, ReportError> {
    let gold = load_dataset(gold_path)?;
    report_with(files, &gold, rbo_p)
}

fn cell(m: &MetricSummary) -> String {
    match m.std {
        Some(s) => format!("{} ± {}", percent(m.mean), percent(s)),
        None => percent(m.mean),
    }
}

/// Aligned text table, metrics ×100 with two decimals.
pub fn render_table(report: &Report) -> String {
    let mut header = vec!["method".to_string(), "K".into(), "S".into()];
    header.extend(report.rbo_p.iter().map(|p| format!("RBO(p={p})")));
    header.push("n".into());

    let mut rows: Vec<Vec<String>> = Vec::new();
    for row in &report.rows {
        let mut cells = vec![row.method.to_string()];
        match &row.aggregate {
            Some(agg) => {
                cells.push(cell(&agg.kendall_tau));
                cells.push(cell(&agg.spearman_rho));
                for p in &report.rbo_p {
                    let v = agg.rbo.iter().find(|r| r.p == *p).map(|r| cell(&r.summary));
                    cells.push(v.unwrap_or_else(|| "-".into()));
                }
            }
            None => cells.extend(std::iter::repeat_n("-".to_string(), 2 + report.rbo_p.len())),
        }
        cells.push(row.samples.to_string());
        rows.push(cells);
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&rows)
                .map(|r| r[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (v, w))| {
                let pad = w - v.chars().count();
                if i == 0 {
                    format!("{v}{}", " ".repeat(pad))
                } else {
                    format!("{}{v}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::dataset_to_jsonl;
    use crate::types::CandidateResponse;

    fn gold() -> Vec<EvalSample> {
        (0..3)
            .map(|i| {
                EvalSample::new(
                    format!("s{i}"),
                    "q",
                    "a",
                    ["r1", "r2", "r3"].iter().map(|id| CandidateResponse::new(*id, "m", "t")).collect(),
                )
                .with_gold(vec!["r1".into(), "r2".into(), "r3".into()])
            })
            .collect()
    }

    fn write(dir: &Path, name: &str, method: &str, orders: &[(&str, &[&str])]) -> PathBuf {
        let mut text = String::new();
        for (id, order) in orders {
            let line = serde_json::json!({"id": id, "method": method, "provenance": "akps", "order": order});
            text.push_str(&line.to_string());
            text.push('\n');
        }
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    }

    const PERFECT: [&str; 3] = ["r1", "r2", "r3"];
    const SWAP: [&str; 3] = ["r1", "r3", "r2"];

    #[test]
    fn perfect_agreement_table() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "a.jsonl", "minoseval", &[("s0", &PERFECT), ("s1", &PERFECT), ("s2", &PERFECT)]);
        let report = report_with(&[f], &gold(), &[0.5, 0.9]).unwrap();
        let table = render_table(&report);
        assert!(table.contains("RBO(p=0.5)") && table.contains("RBO(p=0.9)"), "{table}");
        let row = table.lines().nth(1).unwrap();
        assert_eq!(row.matches("100.00").count(), 4, "{table}");
        assert!(!row.contains('±'));
    }

    #[test]
    fn subsets_show_spread() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.jsonl", "pairwise", &[("s0", &PERFECT), ("s1", &PERFECT)]);
        let b = write(dir.path(), "b.jsonl", "pairwise", &[("s0", &SWAP), ("s2", &PERFECT)]);
        let c = write(dir.path(), "c.jsonl", "bleu", &[("s0", &SWAP)]);
        let report = report_with(&[a, b, c], &gold(), &[0.5, 0.9]).unwrap();
        assert_eq!(report.rows.len(), 2);
        let pairwise = &report.rows[0];
        assert_eq!(pairwise.method, Method::Pairwise);
        let k = pairwise.aggregate.as_ref().unwrap().kendall_tau;
        // Subset means 1 and 2/3.
        assert!((k.mean - 5.0 / 6.0).abs() < 1e-12);
        assert!((k.std.unwrap() - (1.0f64 / 18.0).sqrt()).abs() < 1e-12);
        let table = render_table(&report);
        assert!(table.contains("83.33 ± 23.57"), "{table}");
        assert!(table.lines().any(|l| l.starts_with("bleu") && l.contains("33.33")), "{table}");
    }

    #[test]
    fn mismatched_ids_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "a.jsonl", "bleu", &[("s0", &["r1", "r2", "r9"]), ("zz", &PERFECT)]);
        let err = report_with(&[f], &gold(), &[0.5]).unwrap_err().to_string();
        assert!(err.contains("r9") && err.contains("r3") && err.contains("zz"), "{err}");
    }

    #[test]
    fn reads_gold_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let gold_path = dir.path().join("gold.jsonl");
        fs::write(&gold_path, dataset_to_jsonl(&gold())).unwrap();
        let f = write(dir.path(), "a.jsonl", "rouge-l", &[("s1", &PERFECT)]);
        let report = cmd_report(&[f], &gold_path, &[0.9]).unwrap();
        assert_eq!(report.rows[0].samples, 1);
    }
}
