//! Batch commands: classify, evaluate and stats over a dataset.
//!
//! Samples are processed on a bounded thread pool; output files are written
//! by a single writer in dataset order, so a run is a pure function of its
//! inputs when the backends are deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::akps::{rank_factoid, AkpsError, KeyPointScore, KeyPointSet};
use crate::baselines::{
    bleu_rank, naive_listwise_rank, pairwise_rank, pointwise_rank, rouge_l_rank, PairVerdict,
};
use crate::config::{Backends, ClassificationMode, ConfigError, Method, RunConfig};
use crate::dataset::{dataset_stats, load_dataset, DatasetError, DatasetManifest};
use crate::diagnostics::{Diagnostics, Flag};
use crate::fact_detection::{
    builtin_demonstrations, classification_accuracy, classify_with_llm, load_demonstrations,
    ClassificationResult, DemoError, Demonstration, ParseStatus,
};
use crate::ialr::{
    rank_with_instances, shuffle_seed, ListwiseOptions, ListwiseOutcome, ListwiseVerdict,
    SilverInstanceSet,
};
use crate::rank_metrics::{agreement, aggregate, AggregateReport, AgreementReport};
use crate::types::{make_ranking, EvalSample, Provenance, QuestionKind, Ranking, ScoredList, TieBreakRecord};

pub const RANKINGS_FILE: &str = "rankings.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const KINDS_FILE: &str = "kinds.jsonl";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Demos(#[from] DemoError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{0}")]
    Other(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Where a kind came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindSource {
    Dataset,
    Llm,
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindRecord {
    pub kind: QuestionKind,
    pub source: KindSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_status: Option<ParseStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_model_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Akps,
    Ialr,
    Baseline,
}

/// Method-specific details kept alongside each ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Interpretability {
    KeyPoints {
        key_points: KeyPointSet,
        scores: Vec<KeyPointScore>,
    },
    Listwise {
        #[serde(skip_serializing_if = "Option::is_none")]
        instances: Option<SilverInstanceSet>,
        presented: Vec<String>,
        verdict: Option<ListwiseVerdict>,
        fallback_steps: Vec<String>,
    },
    Scores {
        scores: ScoredList,
    },
    Pairwise {
        win_rates: ScoredList,
        verdicts: Vec<PairVerdict>,
        recomparisons: Vec<PairVerdict>,
    },
    None,
}

/// One line of the rankings file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub id: String,
    pub method: Method,
    pub route: Route,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<KindRecord>,
    #[serde(flatten)]
    pub ranking: Ranking,
    pub flags: Vec<Flag>,
    pub warnings: Vec<String>,
    pub interpretability: Interpretability,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementReport>,
}

/// The fields of a rankings line needed to score it against gold.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RankingLine {
    pub id: String,
    pub method: Method,
    pub provenance: Provenance,
    pub order: Vec<String>,
    #[serde(default)]
    pub tiebreak_trace: Vec<TieBreakRecord>,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

/// Everything a run needs besides the samples.
pub struct RunContext {
    pub config: RunConfig,
    pub backends: Backends,
    pub demos: Vec<Demonstration>,
}

impl RunContext {
    pub fn from_config(config: RunConfig) -> Result<Self, RunError> {
        let with_nli = config.needs_nli();
        Self::build(config, with_nli)
    }

    fn build(config: RunConfig, with_nli: bool) -> Result<Self, RunError> {
        config.validate_for(with_nli)?;
        let backends = Backends::build(&config, with_nli)?;
        let demos = load_demos(&config)?;
        Ok(Self {
            config,
            backends,
            demos,
        })
    }

    /// For callers that build backends themselves.
    pub fn with_backends(config: RunConfig, backends: Backends) -> Result<Self, RunError> {
        let demos = load_demos(&config)?;
        Ok(Self {
            config,
            backends,
            demos,
        })
    }
}

fn load_demos(config: &RunConfig) -> Result<Vec<Demonstration>, RunError> {
    let mut demos = match &config.demos {
        Some(p) => load_demonstrations(p)?,
        None => builtin_demonstrations(),
    };
    demos.truncate(config.demo_count);
    Ok(demos)
}

fn llm_kind(sample: &EvalSample, ctx: &RunContext, diag: &mut Diagnostics) -> KindRecord {
    match classify_with_llm(sample, &ctx.demos, &ctx.backends.judge) {
        Ok(ClassificationResult {
            kind,
            raw_model_text,
            parse_status,
        }) => {
            match parse_status {
                ParseStatus::Repaired => diag.flag(
                    Flag::ClassificationRepaired,
                    format!("sample {}: classification label recovered from free text", sample.id),
                ),
                ParseStatus::Defaulted => diag.flag(
                    Flag::ClassificationDefaulted,
                    format!("sample {}: no classification label, defaulted to non-factoid", sample.id),
                ),
                ParseStatus::Clean => {}
            }
            KindRecord {
                kind,
                source: KindSource::Llm,
                parse_status: Some(parse_status),
                raw_model_text: Some(raw_model_text),
            }
        }
        Err(e) => {
            diag.flag(
                Flag::ClassificationDefaulted,
                format!("sample {}: classification failed ({e}), defaulted to non-factoid", sample.id),
            );
            KindRecord {
                kind: QuestionKind::NonFactoid,
                source: KindSource::Llm,
                parse_status: Some(ParseStatus::Defaulted),
                raw_model_text: None,
            }
        }
    }
}

/// The kind a sample is routed by under `mode`.
pub fn resolve_kind(sample: &EvalSample, ctx: &RunContext, diag: &mut Diagnostics) -> KindRecord {
    let forced = |kind| KindRecord {
        kind,
        source: KindSource::Forced,
        parse_status: None,
        raw_model_text: None,
    };
    match ctx.config.classification {
        ClassificationMode::ForcedFactoid => forced(QuestionKind::Factoid),
        ClassificationMode::ForcedNonfactoid => forced(QuestionKind::NonFactoid),
        ClassificationMode::Manual => match sample.kind {
            Some(kind) => KindRecord {
                kind,
                source: KindSource::Dataset,
                parse_status: None,
                raw_model_text: None,
            },
            None => {
                diag.flag(
                    Flag::ManualKindMissing,
                    format!("sample {}: no kind in dataset, classifying with the LLM", sample.id),
                );
                llm_kind(sample, ctx, diag)
            }
        },
        ClassificationMode::Llm => llm_kind(sample, ctx, diag),
    }
}

fn listwise_details(out: ListwiseOutcome, instances: Option<SilverInstanceSet>) -> (Ranking, Interpretability) {
    (
        out.ranking,
        Interpretability::Listwise {
            instances,
            presented: out.presented,
            verdict: out.verdict,
            fallback_steps: out.fallback_steps,
        },
    )
}

fn input_order(sample: &EvalSample) -> Ranking {
    make_ranking(
        sample.response_ids().map(String::from).collect(),
        sample,
        Provenance::InputOrder,
    )
    .expect("input order is a permutation")
}

fn rank_nonfactoid(sample: &EvalSample, ctx: &RunContext, diag: &mut Diagnostics) -> (Ranking, Interpretability) {
    let out = rank_with_instances(sample, &ctx.backends.judge, &listwise_options(sample, &ctx.config), diag);
    listwise_details(out.listwise, out.instances)
}

fn listwise_options(sample: &EvalSample, config: &RunConfig) -> ListwiseOptions {
    ListwiseOptions {
        shuffle_seed: shuffle_seed(config.seed, &sample.id),
        dimensions: config.dimensions.clone(),
    }
}

fn rank_minoseval(
    sample: &EvalSample,
    ctx: &RunContext,
    diag: &mut Diagnostics,
) -> (Route, KindRecord, Ranking, Interpretability) {
    let kind = resolve_kind(sample, ctx, diag);
    if kind.kind == QuestionKind::NonFactoid {
        let (ranking, details) = rank_nonfactoid(sample, ctx, diag);
        return (Route::Ialr, kind, ranking, details);
    }
    let Some(nli) = &ctx.backends.nli else {
        diag.flag(Flag::FallbackToIalr, format!("sample {}: no NLI backend configured", sample.id));
        let (ranking, details) = rank_nonfactoid(sample, ctx, diag);
        return (Route::Akps, kind, ranking, details);
    };
    match rank_factoid(sample, &ctx.backends.judge, nli, ctx.config.key_point_cap, diag) {
        Ok(out) => (
            Route::Akps,
            kind,
            out.ranking,
            Interpretability::KeyPoints {
                key_points: out.key_points,
                scores: out.scores,
            },
        ),
        Err(e) => {
            let why = match &e {
                AkpsError::EmptyExtraction { .. } => "no key points extracted".to_string(),
                other => other.to_string(),
            };
            diag.flag(
                Flag::FallbackToIalr,
                format!("sample {}: key-point scoring failed ({why}), ranking listwise", sample.id),
            );
            let (ranking, details) = rank_nonfactoid(sample, ctx, diag);
            (Route::Akps, kind, ranking, details)
        }
    }
}

/// Ranks one sample under the configured method. Never fails: problems are
/// recorded as flags and the worst case is input order with `RankingFailed`.
pub fn evaluate_sample(sample: &EvalSample, ctx: &RunContext) -> SampleRecord {
    let mut diag = Diagnostics::default();
    let cfg = &ctx.config;
    let judge = &ctx.backends.judge;
    let (route, classification, ranking, interpretability) = match cfg.method {
        Method::Minoseval => {
            let (route, kind, ranking, details) = rank_minoseval(sample, ctx, &mut diag);
            (route, Some(kind), ranking, details)
        }
        Method::Pointwise => match pointwise_rank(sample, judge, &cfg.dimensions, &mut diag) {
            Ok(out) => (Route::Baseline, None, out.ranking, Interpretability::Scores { scores: out.scores }),
            Err(e) => {
                diag.flag(Flag::RankingFailed, format!("sample {}: pointwise scoring failed: {e}", sample.id));
                (Route::Baseline, None, input_order(sample), Interpretability::None)
            }
        },
        Method::Pairwise => {
            let out = pairwise_rank(sample, judge, &cfg.dimensions, &mut diag);
            (
                Route::Baseline,
                None,
                out.ranking,
                Interpretability::Pairwise {
                    win_rates: out.win_rates,
                    verdicts: out.verdicts,
                    recomparisons: out.recomparisons,
                },
            )
        }
        Method::Listwise => {
            let out = naive_listwise_rank(sample, judge, &listwise_options(sample, cfg), &mut diag);
            let (ranking, details) = listwise_details(out, None);
            (Route::Baseline, None, ranking, details)
        }
        Method::Bleu | Method::RougeL => {
            let out = if cfg.method == Method::Bleu {
                bleu_rank(sample)
            } else {
                rouge_l_rank(sample)
            };
            (Route::Baseline, None, out.ranking, Interpretability::Scores { scores: out.scores })
        }
    };

    let agreement = match sample.gold() {
        Some(Ok(gold)) if gold.len() >= 2 => agreement(&ranking, &gold, &cfg.rbo_p).ok(),
        _ => None,
    };
    SampleRecord {
        id: sample.id.clone(),
        method: cfg.method,
        route,
        classification,
        ranking,
        flags: diag.flags.into_iter().collect(),
        warnings: diag.warnings,
        interpretability,
        agreement,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateSummary {
    pub method: Method,
    pub classification: ClassificationMode,
    pub samples: usize,
    pub routes: BTreeMap<String, usize>,
    pub provenance: BTreeMap<String, usize>,
    pub flag_counts: BTreeMap<String, usize>,
    pub ranking_failed: usize,
    pub samples_with_gold: usize,
    /// Samples with gold but fewer than two responses; no correlation exists.
    pub excluded_single_response: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AggregateReport>,
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

pub fn summarize(config: &RunConfig, samples: &[EvalSample], records: &[SampleRecord]) -> EvaluateSummary {
    let mut routes = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    let mut flag_counts = BTreeMap::new();
    for r in records {
        *routes.entry(label(&r.route)).or_insert(0) += 1;
        *provenance.entry(label(&r.ranking.provenance())).or_insert(0) += 1;
        for f in &r.flags {
            *flag_counts.entry(label(f)).or_insert(0) += 1;
        }
    }
    let with_gold: Vec<&EvalSample> = samples.iter().filter(|s| s.gold_ranking.is_some()).collect();
    let reports: Vec<AgreementReport> = records.iter().filter_map(|r| r.agreement.clone()).collect();
    EvaluateSummary {
        method: config.method,
        classification: config.classification,
        samples: records.len(),
        ranking_failed: records.iter().filter(|r| r.flags.contains(&Flag::RankingFailed)).count(),
        routes,
        provenance,
        flag_counts,
        samples_with_gold: with_gold.len(),
        excluded_single_response: with_gold.iter().filter(|s| s.responses.len() < 2).count(),
        agreement: aggregate(&reports, None).ok(),
    }
}

pub fn evaluate_samples(samples: &[EvalSample], ctx: &RunContext) -> Result<Vec<SampleRecord>, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.concurrency)
        .build()
        .map_err(|e| RunError::Other(format!("thread pool: {e}")))?;
    Ok(pool.install(|| samples.par_iter().map(|s| evaluate_sample(s, ctx)).collect()))
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize"));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    fs::write(path, contents).map_err(io_err(format!("writing {}", path.display())))
}

#[derive(Debug)]
pub struct EvaluateOutput {
    pub records: Vec<SampleRecord>,
    pub summary: EvaluateSummary,
    pub rankings_path: PathBuf,
    pub summary_path: PathBuf,
}

impl EvaluateOutput {
    /// 0 on success, 2 when any sample fell through to input order.
    pub fn exit_code(&self) -> i32 {
        if self.summary.ranking_failed > 0 {
            2
        } else {
            0
        }
    }
}

/// Ranks every sample and writes the rankings and summary files.
pub fn evaluate_with(samples: &[EvalSample], ctx: &RunContext) -> Result<EvaluateOutput, RunError> {
    let records = evaluate_samples(samples, ctx)?;
    let summary = summarize(&ctx.config, samples, &records);
    let rankings_path = ctx.config.output_dir.join(RANKINGS_FILE);
    let summary_path = ctx.config.output_dir.join(SUMMARY_FILE);
    write_file(&rankings_path, &to_jsonl(&records))?;
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_file(&summary_path, &json)?;
    Ok(EvaluateOutput {
        records,
        summary,
        rankings_path,
        summary_path,
    })
}

pub fn cmd_evaluate(config: RunConfig) -> Result<EvaluateOutput, RunError> {
    let ctx = RunContext::from_config(config)?;
    let samples = load_dataset(ctx.config.dataset_path()?)?;
    evaluate_with(&samples, &ctx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindLine {
    pub id: String,
    #[serde(flatten)]
    pub record: KindRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_kind: Option<QuestionKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifySummary {
    pub samples: usize,
    pub factoid: usize,
    pub nonfactoid: usize,
    pub defaulted: usize,
    pub repaired: usize,
    /// Percentage of LLM-classified samples agreeing with the dataset kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub scored_against_gold: usize,
}

#[derive(Debug)]
pub struct ClassifyOutput {
    pub lines: Vec<KindLine>,
    pub summary: ClassifySummary,
    pub kinds_path: PathBuf,
}

impl ClassifyOutput {
    /// 0 on success, 2 when any label had to be defaulted.
    pub fn exit_code(&self) -> i32 {
        if self.summary.defaulted > 0 {
            2
        } else {
            0
        }
    }
}

/// Classifies every sample. In `llm` mode kinds present in the dataset are
/// treated as gold labels and used only for accuracy.
pub fn classify_with(samples: &[EvalSample], ctx: &RunContext) -> Result<ClassifyOutput, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.concurrency)
        .build()
        .map_err(|e| RunError::Other(format!("thread pool: {e}")))?;
    let lines: Vec<KindLine> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let mut diag = Diagnostics::default();
                KindLine {
                    id: s.id.clone(),
                    record: resolve_kind(s, ctx, &mut diag),
                    gold_kind: s.kind,
                }
            })
            .collect()
    });

    let scored: Vec<(ClassificationResult, QuestionKind)> = lines
        .iter()
        .filter(|l| l.record.source == KindSource::Llm)
        .filter_map(|l| {
            l.gold_kind.map(|g| {
                (
                    ClassificationResult {
                        kind: l.record.kind,
                        raw_model_text: String::new(),
                        parse_status: l.record.parse_status.unwrap_or(ParseStatus::Clean),
                    },
                    g,
                )
            })
        })
        .collect();
    let status = |st| lines.iter().filter(|l| l.record.parse_status == Some(st)).count();
    let summary = ClassifySummary {
        samples: lines.len(),
        factoid: lines.iter().filter(|l| l.record.kind == QuestionKind::Factoid).count(),
        nonfactoid: lines.iter().filter(|l| l.record.kind == QuestionKind::NonFactoid).count(),
        defaulted: status(ParseStatus::Defaulted),
        repaired: status(ParseStatus::Repaired),
        accuracy: classification_accuracy(&scored).ok(),
        scored_against_gold: scored.len(),
    };
    let kinds_path = ctx.config.output_dir.join(KINDS_FILE);
    write_file(&kinds_path, &to_jsonl(&lines))?;
    Ok(ClassifyOutput {
        lines,
        summary,
        kinds_path,
    })
}

pub fn cmd_classify(config: RunConfig) -> Result<ClassifyOutput, RunError> {
    let ctx = RunContext::build(config, false)?;
    let samples = load_dataset(ctx.config.dataset_path()?)?;
    classify_with(&samples, &ctx)
}

pub fn cmd_stats(path: &Path) -> Result<DatasetManifest, RunError> {
    let samples = load_dataset(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(dataset_stats(&name, &samples)?)
}
