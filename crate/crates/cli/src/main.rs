use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nrt_core::backend::{BackendConfig, BackendKind, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT_PATH};
use nrt_core::corpus::{load_corpus, Columns};
use nrt_core::experiment::{run_experiment, write_outcome, ExperimentConfig, GroupAggregate};
use nrt_core::metrics::{score_pair, tokenize, SentenceScores};
use nrt_core::report::{write_report, ReportFormat};
use nrt_core::{ExperimentResult, PromptStyle};

mod table;

const EXIT_HARD: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "nrt", version, about = "In-context translation experiments for languages with no training data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a parallel corpus and print diagnostics.
    Validate(ValidateArgs),
    /// Run the leave-one-out grid and write records, aggregates and reports.
    Run(Box<RunArgs>),
    /// Score a CSV of candidate/reference pairs.
    Score(ScoreArgs),
    /// Regenerate report files from a run's records.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct ColumnArgs {
    /// Column holding the source phrase.
    #[arg(long, default_value = "source")]
    source_col: String,
    /// Column holding the English reference.
    #[arg(long, default_value = "translation")]
    target_col: String,
}

impl ColumnArgs {
    fn columns(&self) -> Columns {
        Columns {
            source: self.source_col.clone(),
            target: self.target_col.clone(),
        }
    }
}

#[derive(Args)]
struct ValidateArgs {
    corpus: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Both,
    Chain,
    Direct,
}

#[derive(Args)]
struct RunArgs {
    /// Parallel corpus CSV.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
    /// Comma-separated subset sizes.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    style: StyleArg,
    /// http, mock-gloss, mock-perfect or mock-echo.
    #[arg(long, default_value = "mock-gloss")]
    backend: String,
    /// Base URL of an OpenAI-style chat completions service.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = DEFAULT_ENDPOINT_PATH)]
    endpoint_path: String,
    #[arg(long, default_value = "")]
    model: String,
    /// Name of the environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long, default_value_t = 5)]
    max_retries: u32,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Directory for cached responses.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Directory with chain_of_reasoning.txt and direct.txt templates.
    #[arg(long)]
    prompt_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreFormat {
    Table,
    Csv,
}

#[derive(Args)]
struct ScoreArgs {
    /// CSV with candidate and reference columns.
    input: PathBuf,
    #[arg(long, default_value = "candidate")]
    candidate_col: String,
    #[arg(long, default_value = "reference")]
    reference_col: String,
    #[arg(long, value_enum, default_value = "table")]
    format: ScoreFormat,
    /// Also write the per-row CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing records.json.
    result_dir: PathBuf,
    /// markdown, csv, svg-lines or all.
    #[arg(long, default_value = "all")]
    format: String,
    /// Where to write the files (defaults to the result directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(EXIT_HARD)
        }
    }
}

/// The error chain joined with `: `, skipping causes whose text the
/// message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn cmd_validate(a: &ValidateArgs) -> Result<u8> {
    let corpus = load_corpus(&a.corpus, &a.columns.columns())?;
    println!("{} pairs loaded from {}", corpus.len(), a.corpus.display());
    let dups = corpus.duplicate_sources();
    if !dups.is_empty() {
        println!("warning: {} duplicate source rows", dups.len());
        for (first, dup) in &dups {
            println!("  pair {dup} repeats the source of pair {first}");
        }
    }
    for (label, lens) in [
        ("source", corpus.pairs().iter().map(|p| tokenize(&p.source_text).len()).collect::<Vec<_>>()),
        (
            "translation",
            corpus.pairs().iter().map(|p| tokenize(&p.reference_translation).len()).collect(),
        ),
    ] {
        let (lo, hi) = (lens.iter().min().unwrap_or(&0), lens.iter().max().unwrap_or(&0));
        println!("{label} length: {lo}..{hi} tokens");
    }
    Ok(0)
}

fn backend_config(a: &RunArgs) -> Result<BackendConfig> {
    let kind: BackendKind = a.backend.parse()?;
    let mut c = match kind {
        BackendKind::HttpChat => {
            let Some(url) = &a.endpoint else {
                bail!("--backend http needs --endpoint");
            };
            BackendConfig::http(url, &a.model)
        }
        _ => BackendConfig::mock(kind),
    };
    c.endpoint_path = a.endpoint_path.clone();
    c.api_key_env = a.api_key_env.clone();
    c.temperature = a.temperature;
    c.timeout_secs = a.timeout;
    c.max_retries = a.max_retries;
    if !a.model.is_empty() {
        c.model_name = a.model.clone();
    }
    Ok(c)
}

fn cmd_run(a: &RunArgs) -> Result<u8> {
    let mut config = ExperimentConfig::new(&a.corpus, backend_config(a)?, &a.out);
    config.columns = a.columns.columns();
    config.sizes = a.sizes.clone();
    config.seed = a.seed;
    config.styles = match a.style {
        StyleArg::Both => PromptStyle::ALL.to_vec(),
        StyleArg::Chain => vec![PromptStyle::ChainOfReasoning],
        StyleArg::Direct => vec![PromptStyle::Direct],
    };
    config.max_in_flight = a.max_in_flight;
    config.cache_dir = a.cache.clone();
    config.prompt_dir = a.prompt_dir.clone();

    let outcome = run_experiment(&config)?;
    write_outcome(&outcome, &a.out)?;
    write_report(&outcome.result, &ReportFormat::ALL, &a.out)?;
    print!("{}", aggregate_table(&outcome.result.aggregates));
    let failed = outcome.result.failed_count();
    println!(
        "{} records ({} failed) written to {}",
        outcome.result.records.len(),
        failed,
        a.out.display()
    );
    Ok(if failed > 0 { EXIT_PARTIAL } else { 0 })
}

fn aggregate_table(aggs: &[GroupAggregate]) -> String {
    let mut header = vec!["style".to_string(), "size".to_string(), "n".to_string()];
    header.extend(SentenceScores::NAMES.iter().map(|s| s.to_string()));
    let rows = aggs
        .iter()
        .map(|a| {
            let mut r = vec![a.style.to_string(), a.subset_size.to_string(), a.scored.to_string()];
            r.extend(a.means.values().iter().map(|v| format!("{v:.3}")));
            r
        })
        .collect::<Vec<_>>();
    table::render(&header, &rows)
}

fn cmd_score(a: &ScoreArgs) -> Result<u8> {
    let path = a.input.display().to_string();
    let mut reader = csv::Reader::from_path(&a.input).with_context(|| format!("cannot open {path}"))?;
    let headers = reader.headers().with_context(|| format!("{path}: unreadable header"))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .with_context(|| format!("{path}: no `{name}` column"))
    };
    let (ci, ri) = (col(&a.candidate_col)?, col(&a.reference_col)?);

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("{path}: malformed CSV near line {line}"))?;
        let cand = rec.get(ci).unwrap_or("").to_string();
        let reference = rec.get(ri).unwrap_or("").to_string();
        let scores = score_pair(&cand, &reference).with_context(|| format!("{path} line {line}"))?;
        rows.push((cand, reference, scores));
    }
    if rows.is_empty() {
        eprintln!("warning: {path} has no data rows");
        return Ok(0);
    }
    let mean = SentenceScores::mean(rows.iter().map(|r| &r.2)).expect("at least one row");

    let csv_bytes = {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row", "candidate", "reference"];
        header.extend(SentenceScores::NAMES);
        w.write_record(&header)?;
        for (i, (c, r, s)) in rows.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string(), c.clone(), r.clone()];
            rec.extend(s.values().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["mean".to_string(), String::new(), String::new()];
        rec.extend(mean.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
        w.into_inner().map_err(|e| anyhow::anyhow!("{}", e.error()))?
    };
    if let Some(out) = &a.out {
        nrt_core::fsutil::write_atomic(out, &csv_bytes).with_context(|| format!("cannot write {}", out.display()))?;
    }
    match a.format {
        ScoreFormat::Csv => print!("{}", String::from_utf8_lossy(&csv_bytes)),
        ScoreFormat::Table => {
            let mut header = vec!["#".to_string(), "candidate".to_string()];
            header.extend(SentenceScores::NAMES.iter().map(|s| s.to_string()));
            let fmt = |s: &SentenceScores| s.values().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>();
            let mut body: Vec<Vec<String>> = rows
                .iter()
                .enumerate()
                .map(|(i, (c, _, s))| {
                    let mut r = vec![(i + 1).to_string(), c.clone()];
                    r.extend(fmt(s));
                    r
                })
                .collect();
            let mut m = vec!["mean".to_string(), String::new()];
            m.extend(fmt(&mean));
            body.push(m);
            print!("{}", table::render(&header, &body));
        }
    }
    Ok(0)
}

fn parse_formats(s: &str) -> Result<Vec<ReportFormat>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(ReportFormat::ALL.to_vec());
    }
    s.split(',').map(|f| Ok(f.trim().parse::<ReportFormat>()?)).collect()
}

fn cmd_report(a: &ReportArgs) -> Result<u8> {
    let formats = parse_formats(&a.format)?;
    let records = a.result_dir.join("records.json");
    let result = ExperimentResult::read_json(&records)?;
    let out: &Path = a.out.as_deref().unwrap_or(&a.result_dir);
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for p in write_report(&result, &formats, out)? {
        println!("wrote {}", p.display());
    }
    Ok(0)
}
