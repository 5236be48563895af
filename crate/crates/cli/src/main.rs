use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use fakenews::corpus::{generate_synthetic, load_corpus, write_corpus, Corpus, GenConfig, Label};
use fakenews::eval::{compare, evaluate, evaluate_external, ExternalScores};
use fakenews::explain::{explain, render, render_html, LimeConfig, RenderFormat};
use fakenews::features::{article_tokens, FeatureMode};
use fakenews::model::{train_model, train_on_split, ModelBody, ModelKind, TrainOptions, TrainedModel};

/// Fake-news detection pipeline: generate corpora, train, evaluate, compare
/// and explain models.
#[derive(Debug, Parser)]
#[command(name = "fakenews", version)]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Do not print the JSON summary to stdout.
    #[arg(long, global = true)]
    quiet: bool,

    /// Worker threads (results do not depend on it). Defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus as JSONL.
    Gen(GenArgs),
    /// Train a model and save it.
    Train(TrainArgs),
    /// Evaluate a saved model, or external scores, on a corpus.
    Eval(EvalArgs),
    /// Train and evaluate several kinds on one shared split.
    Compare(CompareArgs),
    /// Explain one prediction with LIME.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    fake_fraction: f64,
    /// Strength of both signal channels, in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    signal: f64,
    /// Override the lexical channel strength.
    #[arg(long)]
    lexical: Option<f64>,
    /// Override the engagement channel strength.
    #[arg(long)]
    engagement: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Features {
    Content,
    Social,
    Hybrid,
}

impl From<Features> for FeatureMode {
    fn from(f: Features) -> Self {
        match f {
            Features::Content => FeatureMode::ContentOnly,
            Features::Social => FeatureMode::SocialOnly,
            Features::Hybrid => FeatureMode::Hybrid,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Model kind: nb, logreg, svm, dtree, rforest, gbdt, gru, ensemble-ml or ensemble-nn.
    #[arg(long)]
    model: String,
    #[arg(long, value_enum, default_value_t = Features::Hybrid)]
    features: Features,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of the corpus used for training; the rest is held out for `eval`.
    #[arg(long, default_value_t = 0.8, conflicts_with = "all")]
    train_fraction: f64,
    /// Train on the whole corpus instead of a split.
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    /// The held-out rows if the model was trained on a split of this corpus,
    /// otherwise every article.
    Auto,
    Test,
    All,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "external_scores")]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    /// JSONL file of {"article_id", "p_fake"} records to score instead of a model.
    #[arg(long)]
    external_scores: Option<PathBuf>,
    /// Decision threshold for external scores (fake iff p_fake > threshold).
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = SplitChoice::Auto)]
    split: SplitChoice,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated model kinds, or "all".
    #[arg(long, default_value = "nb,logreg,svm,dtree,rforest,gbdt")]
    models: String,
    #[arg(long, value_enum, default_value_t = Features::Hybrid)]
    features: Features,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the aligned-text table here.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Html,
    Text,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    article_id: String,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 6)]
    top_k: usize,
    #[arg(long, default_value_t = 25.0)]
    kernel_width: f64,
}

/// Exit status 1: the request itself is unusable.
#[derive(Debug)]
struct Invalid(anyhow::Error);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(Invalid(e.into()))
}

fn input_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(invalid(anyhow!("input file {} does not exist", path.display())));
    }
    Ok(())
}

fn output_file(path: &Path) -> anyhow::Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(invalid(anyhow!("output directory {} does not exist", parent.display())));
    }
    if path.is_dir() {
        return Err(invalid(anyhow!("output path {} is a directory", path.display())));
    }
    Ok(())
}

fn read_corpus_file(path: &Path) -> anyhow::Result<Corpus> {
    load_corpus(path).map_err(invalid)
}

fn read_model(path: &Path) -> anyhow::Result<TrainedModel> {
    TrainedModel::load(path).map_err(invalid)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    w.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn parse_kinds(list: &str) -> anyhow::Result<Vec<ModelKind>> {
    if list.trim() == "all" {
        return Ok(ModelKind::ALL.to_vec());
    }
    let kinds = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<ModelKind>().map_err(|e| invalid(anyhow!(e))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(invalid(anyhow!("no model kinds given")));
    }
    Ok(kinds)
}

fn gen(cli: &Cli, a: &GenArgs) -> anyhow::Result<serde_json::Value> {
    output_file(&a.out)?;
    let mut config = GenConfig::new(a.n, a.fake_fraction, a.signal, cli.seed);
    if a.lexical.is_some() || a.engagement.is_some() {
        config = config.with_channels(a.lexical.unwrap_or(a.signal), a.engagement.unwrap_or(a.signal));
    }
    let corpus = generate_synthetic(&config).map_err(invalid)?;
    write_corpus(&corpus, &a.out)?;
    info!("wrote {} articles to {}", corpus.len(), a.out.display());
    Ok(json!({
        "out": a.out.display().to_string(),
        "corpus_name": corpus.name,
        "n_articles": corpus.len(),
        "n_fake": corpus.count_label(Label::Fake),
        "n_real": corpus.count_label(Label::Real),
        "seed": cli.seed,
        "lexical_signal": config.lexical(),
        "engagement_signal": config.engagement(),
    }))
}

fn train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<serde_json::Value> {
    input_file(&a.corpus)?;
    output_file(&a.out)?;
    let kind: ModelKind = a.model.parse().map_err(|e: String| invalid(anyhow!(e)))?;
    if !a.all && !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(invalid(anyhow!("--train-fraction must be in (0, 1), got {}", a.train_fraction)));
    }
    let corpus = read_corpus_file(&a.corpus)?;
    let mode = FeatureMode::from(a.features);
    let options = TrainOptions::seeded(cli.seed);
    let model = if a.all {
        train_model(&corpus, kind, mode, &options)?
    } else {
        train_on_split(&corpus, a.train_fraction, cli.seed, kind, mode, &options)?.0
    };
    model.save(&a.out)?;
    let mut summary = json!({
        "out": a.out.display().to_string(),
        "model_kind": kind.as_str(),
        "feature_mode": mode.to_string(),
        "corpus_name": corpus.name,
        "training": model.training,
    });
    if let ModelBody::Stacked { model: stack } = &model.body {
        summary["selected"] = json!(stack.selected);
        summary["ranking"] = json!(stack.ranking);
    }
    Ok(summary)
}

fn eval(cli: &Cli, a: &EvalArgs) -> anyhow::Result<serde_json::Value> {
    input_file(&a.corpus)?;
    for p in a.model.iter().chain(&a.external_scores) {
        input_file(p)?;
    }
    if let Some(out) = &a.out {
        output_file(out)?;
    }
    let corpus = read_corpus_file(&a.corpus)?;
    let report = match (&a.external_scores, &a.model) {
        (Some(path), _) => {
            if a.split == SplitChoice::Test {
                return Err(invalid(anyhow!("--split test needs a model trained on a split")));
            }
            let scores = ExternalScores::read(BufReader::new(File::open(path)?)).map_err(invalid)?;
            evaluate_external(&scores, &corpus, a.threshold).map_err(invalid)?
        }
        (None, Some(path)) => {
            let model = read_model(path)?;
            let held_out = model.held_out(&corpus);
            let mut fingerprint = None;
            let target = match (a.split, held_out) {
                (SplitChoice::All, _) => corpus,
                (_, Some(test)) => {
                    fingerprint = model.training.as_ref().map(|t| t.fingerprint.clone());
                    test
                }
                (SplitChoice::Test, None) => {
                    return Err(invalid(anyhow!(
                        "the model was not trained on a split of {}",
                        a.corpus.display()
                    )))
                }
                (SplitChoice::Auto, None) => {
                    warn!("model was not trained on a split of this corpus; evaluating every article");
                    corpus
                }
            };
            let mut report = evaluate(&model, &target, Some(cli.seed)).map_err(invalid)?;
            report.split_fingerprint = fingerprint;
            report
        }
        (None, None) => return Err(invalid(anyhow!("either --model or --external-scores is required"))),
    };
    let value = serde_json::to_value(&report)?;
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&value)?)?;
    }
    Ok(value)
}

fn compare_cmd(cli: &Cli, a: &CompareArgs) -> anyhow::Result<serde_json::Value> {
    input_file(&a.corpus)?;
    output_file(&a.out)?;
    if let Some(t) = &a.text {
        output_file(t)?;
    }
    let kinds = parse_kinds(&a.models)?;
    let corpus = read_corpus_file(&a.corpus)?;
    let table = compare(&corpus, &kinds, cli.seed, a.features.into(), &TrainOptions::default()).map_err(invalid)?;
    let report = table.to_json();
    write_text(&a.out, &report)?;
    if let Some(t) = &a.text {
        write_text(t, &table.to_text())?;
    }
    if !cli.quiet {
        eprint!("{}", table.to_text());
    }
    Ok(serde_json::from_str(&report)?)
}

fn explain_cmd(cli: &Cli, a: &ExplainArgs) -> anyhow::Result<serde_json::Value> {
    input_file(&a.model)?;
    input_file(&a.corpus)?;
    output_file(&a.out)?;
    let model = read_model(&a.model)?;
    let corpus = read_corpus_file(&a.corpus)?;
    let article = corpus
        .get(&a.article_id)
        .ok_or_else(|| invalid(anyhow!("article not found: {}", a.article_id)))?;
    let config = LimeConfig {
        n_samples: a.samples,
        kernel_width: a.kernel_width,
        top_k: a.top_k,
        seed: cli.seed,
        ..Default::default()
    };
    let e = explain(&model, article, &config).map_err(invalid)?;
    let rendered = match a.format {
        Format::Json => render(&e, RenderFormat::Json),
        Format::Text => render(&e, RenderFormat::Text),
        Format::Html => render_html(&e, Some(&article_tokens(article))),
    };
    write_text(&a.out, &rendered)?;
    Ok(serde_json::to_value(&e)?)
}

fn run(cli: &Cli) -> anyhow::Result<serde_json::Value> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Compare(a) => compare_cmd(cli, a),
        Command::Explain(a) => explain_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "warn" }))
        .init();
    match run(&cli) {
        Ok(value) => {
            if !cli.quiet {
                println!("{}", serde_json::to_string_pretty(&value).expect("summary serializes"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
