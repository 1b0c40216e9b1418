use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minoseval::config::{ChatKind, ClassificationMode, Method, NliKind, RunConfig};
use minoseval::rank_metrics::DEFAULT_RBO_P;
use minoseval::report::{cmd_report, render_table, Report, ReportRow};
use minoseval::runner::{cmd_classify, cmd_evaluate, cmd_stats, EvaluateOutput};

/// Rank candidate answers to open-ended questions and measure agreement
/// with gold rankings.
#[derive(Parser)]
#[command(name = "minoseval", version)]
struct Cli {
    /// Log warnings (repairs, fallbacks) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label each question factoid or non-factoid.
    Classify(RunArgs),
    /// Rank every sample's responses and write rankings.jsonl and summary.json.
    Evaluate(RunArgs),
    /// Aggregate agreement tables from rankings files.
    Report(ReportArgs),
    /// Print dataset statistics as JSON.
    Stats {
        dataset: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    classification: Option<ClassificationMode>,
    #[arg(long)]
    chat_kind: Option<ChatKind>,
    #[arg(long)]
    chat_base_url: Option<String>,
    #[arg(long)]
    chat_model: Option<String>,
    /// Environment variable holding the chat API key.
    #[arg(long)]
    chat_api_key_env: Option<String>,
    /// JSON script for the mock chat backend.
    #[arg(long)]
    chat_script: Option<PathBuf>,
    #[arg(long)]
    nli_kind: Option<NliKind>,
    #[arg(long)]
    nli_base_url: Option<String>,
    #[arg(long)]
    nli_model: Option<String>,
    #[arg(long)]
    nli_api_key_env: Option<String>,
    #[arg(long)]
    nli_script: Option<PathBuf>,
    /// JSONL classification demonstrations.
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    demo_count: Option<usize>,
    #[arg(long)]
    key_point_cap: Option<usize>,
    /// RBO persistence; repeat for several values.
    #[arg(long = "rbo-p")]
    rbo_p: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Quality dimension for pointwise and pairwise prompts; repeatable.
    #[arg(long = "dimension")]
    dimensions: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Dataset holding the gold rankings.
    #[arg(long)]
    gold: PathBuf,
    /// Rankings files; files of the same method are treated as subsets.
    #[arg(required = true)]
    rankings: Vec<PathBuf>,
    #[arg(long = "rbo-p")]
    rbo_p: Vec<f64>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

macro_rules! set {
    ($($src:expr => $dst:expr),* $(,)?) => {$(
        if let Some(v) = $src {
            $dst = v;
        }
    )*};
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
            None => RunConfig::default(),
        };
        if self.dataset.is_some() {
            cfg.dataset = self.dataset;
        }
        if self.demos.is_some() {
            cfg.demos = self.demos;
        }
        if self.cache_dir.is_some() {
            cfg.cache_dir = self.cache_dir;
        }
        if self.chat_script.is_some() {
            cfg.chat.script = self.chat_script;
        }
        if self.nli_script.is_some() {
            cfg.nli.script = self.nli_script;
        }
        if self.chat_api_key_env.is_some() {
            cfg.chat.api_key_env = self.chat_api_key_env;
        }
        if self.nli_api_key_env.is_some() {
            cfg.nli.api_key_env = self.nli_api_key_env;
        }
        set! {
            self.method => cfg.method,
            self.classification => cfg.classification,
            self.chat_kind => cfg.chat.kind,
            self.chat_base_url => cfg.chat.base_url,
            self.chat_model => cfg.chat.model,
            self.nli_kind => cfg.nli.kind,
            self.nli_base_url => cfg.nli.base_url,
            self.nli_model => cfg.nli.model,
            self.demo_count => cfg.demo_count,
            self.key_point_cap => cfg.key_point_cap,
            self.seed => cfg.seed,
            self.concurrency => cfg.concurrency,
            self.output_dir => cfg.output_dir,
        }
        if !self.rbo_p.is_empty() {
            cfg.rbo_p = self.rbo_p;
        }
        if !self.dimensions.is_empty() {
            cfg.dimensions = self.dimensions;
        }
        Ok(cfg)
    }
}

fn print_evaluation(out: &EvaluateOutput, rbo_p: &[f64]) {
    let s = &out.summary;
    println!("method: {}  samples: {}", s.method, s.samples);
    let counts = |m: &std::collections::BTreeMap<String, usize>| {
        m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    };
    println!("provenance: {}", counts(&s.provenance));
    if !s.flag_counts.is_empty() {
        println!("flags: {}", counts(&s.flag_counts));
    }
    if s.agreement.is_some() {
        let report = Report {
            rbo_p: rbo_p.to_vec(),
            rows: vec![ReportRow {
                method: s.method,
                files: vec![out.rankings_path.clone()],
                samples: s.agreement.as_ref().map_or(0, |a| a.samples),
                excluded_single_response: s.excluded_single_response,
                without_gold: s.samples - s.samples_with_gold,
                aggregate: s.agreement.clone(),
            }],
        };
        print!("\n{}", render_table(&report));
    }
    println!("\nwrote {} and {}", out.rankings_path.display(), out.summary_path.display());
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, text + "\n").map_err(|e| format!("writing {}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<u8, String> {
    match cli.command {
        Command::Classify(args) => {
            let out = cmd_classify(args.into_config()?).map_err(|e| e.to_string())?;
            let s = &out.summary;
            println!(
                "samples: {}  factoid: {}  non-factoid: {}  repaired: {}  defaulted: {}",
                s.samples, s.factoid, s.nonfactoid, s.repaired, s.defaulted
            );
            if let Some(acc) = s.accuracy {
                println!("accuracy: {acc:.2} ({} labelled samples)", s.scored_against_gold);
            }
            println!("wrote {}", out.kinds_path.display());
            Ok(out.exit_code() as u8)
        }
        Command::Evaluate(args) => {
            let cfg = args.into_config()?;
            let rbo_p = cfg.rbo_p.clone();
            let out = cmd_evaluate(cfg).map_err(|e| e.to_string())?;
            print_evaluation(&out, &rbo_p);
            Ok(out.exit_code() as u8)
        }
        Command::Report(args) => {
            let rbo_p = if args.rbo_p.is_empty() {
                DEFAULT_RBO_P.to_vec()
            } else {
                args.rbo_p
            };
            if let Some(p) = rbo_p.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                return Err(format!("rbo p-value {p} outside (0, 1)"));
            }
            let report = cmd_report(&args.rankings, &args.gold, &rbo_p).map_err(|e| e.to_string())?;
            print!("{}", render_table(&report));
            if let Some(path) = args.json {
                write_json(&path, &report)?;
            }
            Ok(0)
        }
        Command::Stats { dataset } => {
            let manifest = cmd_stats(&dataset).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "warn" } else { "error" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
