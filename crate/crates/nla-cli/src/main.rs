//! Command-line driver: score transcribed speaking responses against a
//! CEFR descriptor bank, then analyse the resulting run directory.
//!
//! The expensive backend phase lives in `score`; every other subcommand is
//! a cheap, deterministic re-analysis of the run artifacts, so one scoring
//! pass supports many analyses. Exit codes distinguish failure classes:
//! 0 success, 2 configuration, 3 validation, 4 transport, 5 degenerate
//! statistics.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use nla_core::backend::cache::{CachedBackend, DiskCache};
use nla_core::backend::http::HttpBackend;
use nla_core::backend::mock::{MockBackend, PlantedProfile};
use nla_core::backend::{BackendConfig, RetryPolicy, ScoreBackend};
use nla_core::bias::BiasAggregation;
use nla_core::corpus::{self, generate_synthetic, CorpusProfile, Split, SynthConfig};
use nla_core::error::{ErrorKind, NlaError, Result};
use nla_core::pipeline::{self, RunArtifacts, RunPaths, ScoreConfig};
use nla_core::prompting::PromptTemplate;
use nla_core::regression::{save_models, RidgeConfig};
use nla_core::report;
use nla_core::DescriptorBank;

#[derive(Parser)]
#[command(
    name = "nla",
    version,
    about = "Analytic speaking-assessment pipeline over a logprob-capable language model"
)]
struct Cli {
    /// JSON file of default values; explicit flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a synthetic corpus with planted per-aspect levels.
    Synth(SynthArgs),
    /// Score a corpus: one backend call per (response, aspect, ordering).
    Score(ScoreArgs),
    /// Correlate predicted scores with references (PCC and SRC).
    Evaluate(EvaluateArgs),
    /// Positional-bias table: mean JSD across orderings per aspect.
    Bias(BiasArgs),
    /// Fit per-part ridge models and report coefficients.
    Fit(FitArgs),
    /// Friedman and Nemenyi rank tests over aspects plus the reference.
    Stats(StatsArgs),
    /// Bundle every analysis into one report.
    Report(ReportArgs),
}

/// Optional defaults loadable from `--config`; flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    n_orderings: Option<u32>,
    profile: Option<String>,
    bank: Option<PathBuf>,
    template: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    endpoint: Option<String>,
    model: Option<String>,
    top_n: Option<u32>,
    max_in_flight: Option<usize>,
    max_attempts: Option<u32>,
    backoff_base_ms: Option<u64>,
    lenient_missing_labels: Option<bool>,
    timeout_secs: Option<u64>,
    gap: Option<f64>,
    label_bias: Option<f64>,
    alpha: Option<f64>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let body = std::fs::read_to_string(path)
            .map_err(|e| NlaError::Config(format!("config file {}: {e}", path.display())))?;
        serde_json::from_str(&body)
            .map_err(|e| NlaError::Config(format!("config file {}: {e}", path.display())))
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output path for the response records.
    #[arg(long)]
    corpus: PathBuf,
    /// Output path for the reference scores.
    #[arg(long)]
    refs: PathBuf,
    /// Output path for the planted per-aspect levels (mock backend input).
    #[arg(long)]
    planted: PathBuf,
    #[arg(long, default_value_t = 40)]
    n_candidates: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus profile: "si" (parts 1,3,4,5 on 2.0-6.0) or "generic".
    #[arg(long)]
    profile: Option<String>,
    /// Fraction of candidates assigned to the dev split.
    #[arg(long, default_value_t = 0.5)]
    dev_fraction: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// Deterministic planted-level oracle; requires --planted.
    Mock,
    /// Completions endpoint returning top-N logprobs; requires --endpoint
    /// and --model.
    Http,
}

#[derive(Args)]
struct ScoreArgs {
    /// Response records to score.
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    backend: BackendKind,
    /// Planted levels file (mock backend).
    #[arg(long)]
    planted: Option<PathBuf>,
    /// Logit gap the mock places on the planted level.
    #[arg(long)]
    gap: Option<f64>,
    /// Extra logit the mock adds to option label "A".
    #[arg(long)]
    label_bias: Option<f64>,
    /// Completions endpoint URL (http backend).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model identifier sent to the endpoint (http backend).
    #[arg(long)]
    model: Option<String>,
    /// Top-N logprobs requested per completion.
    #[arg(long)]
    top_n: Option<u32>,
    /// Maximum concurrent backend calls.
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Total attempts per request (network errors and 5xx retry).
    #[arg(long)]
    max_attempts: Option<u32>,
    /// First retry backoff in milliseconds; doubles each retry.
    #[arg(long)]
    backoff_base_ms: Option<u64>,
    /// Assign a floor logit to labels missing from the top-N instead of
    /// failing.
    #[arg(long)]
    lenient_missing_labels: bool,
    /// Per-request timeout in seconds.
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Seed for the per-aspect descriptor orderings.
    #[arg(long)]
    seed: Option<u64>,
    /// Descriptor orderings per aspect.
    #[arg(long)]
    n_orderings: Option<u32>,
    #[arg(long)]
    profile: Option<String>,
    /// Descriptor bank file; the embedded demo bank when omitted.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Prompt template file; the built-in template when omitted.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Response cache directory; defaults to <out>/cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Scored run directory.
    #[arg(long)]
    run: PathBuf,
    /// Reference scores file.
    #[arg(long)]
    refs: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AggregationArg {
    /// Mean JSD over all ordering pairs.
    PairwiseMean,
    /// Single n-way generalized JSD.
    Generalized,
}

impl From<AggregationArg> for BiasAggregation {
    fn from(value: AggregationArg) -> Self {
        match value {
            AggregationArg::PairwiseMean => BiasAggregation::PairwiseMean,
            AggregationArg::Generalized => BiasAggregation::Generalized,
        }
    }
}

#[derive(Args)]
struct BiasArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value_t = AggregationArg::PairwiseMean)]
    aggregation: AggregationArg,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Ridge penalty.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fit without an intercept term.
    #[arg(long)]
    no_intercept: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(value: SplitArg) -> Self {
        match value {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Split whose candidates form the test rows.
    #[arg(long, value_enum, default_value_t = SplitArg::Dev)]
    split: SplitArg,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    no_intercept: bool,
    #[arg(long, value_enum, default_value_t = AggregationArg::PairwiseMean)]
    aggregation: AggregationArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Dev)]
    split: SplitArg,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Validation => 3,
            ErrorKind::Transport => 4,
            ErrorKind::DegenerateStats => 5,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &config),
        Command::Score(args) => cmd_score(args, &config),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Bias(args) => cmd_bias(args),
        Command::Fit(args) => cmd_fit(args, &config),
        Command::Stats(args) => cmd_stats(args),
        Command::Report(args) => cmd_report(args, &config),
    }
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(NlaError::Config(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| NlaError::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| NlaError::Validation(format!("unserializable report: {e}")))?;
    write_text(path, &(body + "\n"))
}

fn profile_from(name: Option<&str>, config: &ConfigFile) -> Result<CorpusProfile> {
    let name = name
        .map(str::to_string)
        .or_else(|| config.profile.clone())
        .unwrap_or_else(|| "si".to_string());
    CorpusProfile::by_name(&name)
}

fn cmd_synth(args: SynthArgs, config: &ConfigFile) -> Result<()> {
    let profile = profile_from(args.profile.as_deref(), config)?;
    let synth = generate_synthetic(&SynthConfig {
        n_candidates: args.n_candidates,
        seed: args.seed.or(config.seed).unwrap_or(0),
        profile,
        dev_fraction: args.dev_fraction,
    })?;
    corpus::save_responses(&args.corpus, &synth.responses)?;
    corpus::save_references(&args.refs, &synth.references)?;
    synth.planted.save(&args.planted)?;
    println!(
        "wrote {} responses for {} candidates to {}",
        synth.responses.len(),
        args.n_candidates,
        args.corpus.display()
    );
    println!("wrote references to {}", args.refs.display());
    println!("wrote planted levels to {}", args.planted.display());
    Ok(())
}

fn cmd_score(args: ScoreArgs, config: &ConfigFile) -> Result<()> {
    require_exists(&args.corpus, "corpus file")?;
    let profile = profile_from(args.profile.as_deref(), config)?;
    let responses = corpus::load_responses(&args.corpus, &profile)?;

    let bank_path = args.bank.clone().or_else(|| config.bank.clone());
    let bank = match &bank_path {
        Some(path) => {
            require_exists(path, "descriptor bank")?;
            DescriptorBank::load(path)?
        }
        None => DescriptorBank::embedded_demo(),
    };
    let template_path = args.template.clone().or_else(|| config.template.clone());
    let template = match &template_path {
        Some(path) => {
            require_exists(path, "prompt template")?;
            PromptTemplate::load(path)?
        }
        None => PromptTemplate::default_template(),
    };

    let cache_dir = args
        .cache_dir
        .clone()
        .or_else(|| config.cache_dir.clone())
        .unwrap_or_else(|| args.out.join("cache"));
    let cache = DiskCache::open(&cache_dir)?;
    let score_cfg = ScoreConfig {
        seed: args.seed.or(config.seed).unwrap_or(0),
        n_orderings: args.n_orderings.or(config.n_orderings).unwrap_or(3),
        profile,
        max_in_flight: args.max_in_flight.or(config.max_in_flight).unwrap_or(4),
    };
    let paths = RunPaths::new(&args.out);

    match args.backend {
        BackendKind::Mock => {
            let planted_path = args
                .planted
                .as_ref()
                .ok_or_else(|| NlaError::Config("--backend mock requires --planted".into()))?;
            require_exists(planted_path, "planted levels file")?;
            let planted = PlantedProfile::load(planted_path)?;
            let gap = args.gap.or(config.gap).unwrap_or(10.0);
            let label_bias = args.label_bias.or(config.label_bias).unwrap_or(0.0);
            let backend = MockBackend::with_label_bias(planted, gap, label_bias);
            let cached = CachedBackend::new(backend, cache);
            execute_score(&paths, &bank, &template, &responses, &cached, &score_cfg)
        }
        BackendKind::Http => {
            let endpoint = args.endpoint.clone().or_else(|| config.endpoint.clone());
            let model = args.model.clone().or_else(|| config.model.clone());
            let (Some(endpoint), Some(model)) = (endpoint, model) else {
                return Err(NlaError::Config(
                    "--backend http requires --endpoint and --model".into(),
                ));
            };
            let backend_cfg = BackendConfig {
                endpoint,
                model,
                top_n: args.top_n.or(config.top_n).unwrap_or(20),
                max_in_flight: score_cfg.max_in_flight,
                retry: RetryPolicy {
                    max_attempts: args.max_attempts.or(config.max_attempts).unwrap_or(3),
                    backoff_base_ms: args
                        .backoff_base_ms
                        .or(config.backoff_base_ms)
                        .unwrap_or(250),
                },
                lenient_missing_labels: args.lenient_missing_labels
                    || config.lenient_missing_labels.unwrap_or(false),
                timeout_secs: args.timeout_secs.or(config.timeout_secs).unwrap_or(120),
            };
            let backend = HttpBackend::new(backend_cfg)?;
            let cached = CachedBackend::new(backend, cache);
            execute_score(&paths, &bank, &template, &responses, &cached, &score_cfg)
        }
    }
}

fn execute_score<B: ScoreBackend>(
    paths: &RunPaths,
    bank: &DescriptorBank,
    template: &PromptTemplate,
    responses: &[corpus::ResponseRecord],
    cached: &CachedBackend<B>,
    cfg: &ScoreConfig,
) -> Result<()> {
    let summary = pipeline::run_score(paths, bank, template, responses, cached, cfg)?;
    println!(
        "scored {} responses ({} unscorable skipped): {} backend tasks, {} candidates",
        summary.n_responses, summary.n_unscorable, summary.n_tasks, summary.n_candidates
    );
    println!(
        "cache: {} hits, {} backend calls",
        cached.hits(),
        cached.misses()
    );
    println!("run directory: {}", paths.root.display());
    Ok(())
}

fn load_run_and_refs(
    run: &Path,
    refs: &Path,
) -> Result<(RunArtifacts, Vec<corpus::ReferenceScore>)> {
    require_exists(run, "run directory")?;
    require_exists(refs, "references file")?;
    let artifacts = pipeline::load_run(&RunPaths::new(run))?;
    let references = corpus::load_references(refs, &artifacts.manifest.profile)?;
    Ok((artifacts, references))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (artifacts, references) = load_run_and_refs(&args.run, &args.refs)?;
    let evaluation = pipeline::evaluate(&artifacts, &references)?;
    let paths = RunPaths::new(&args.run);
    write_json(&paths.root.join("evaluation.json"), &evaluation)?;
    write_text(
        &paths.root.join("evaluation.csv"),
        &report::evaluation_table_csv(&evaluation, None),
    )?;
    print!("{}", report::evaluation_table_text(&evaluation, None));
    Ok(())
}

fn cmd_bias(args: BiasArgs) -> Result<()> {
    require_exists(&args.run, "run directory")?;
    let artifacts = pipeline::load_run(&RunPaths::new(&args.run))?;
    let bias = pipeline::bias(&artifacts, args.aggregation.into())?;
    let paths = RunPaths::new(&args.run);
    write_json(&paths.root.join("bias.json"), &bias)?;
    write_text(&paths.root.join("bias.csv"), &report::bias_table_csv(&bias))?;
    print!("{}", report::bias_table_text(&bias));
    Ok(())
}

fn ridge_config(alpha: Option<f64>, no_intercept: bool, config: &ConfigFile) -> RidgeConfig {
    RidgeConfig {
        alpha: alpha.or(config.alpha).unwrap_or(1.0),
        fit_intercept: !no_intercept,
    }
}

fn cmd_fit(args: FitArgs, config: &ConfigFile) -> Result<()> {
    let (artifacts, references) = load_run_and_refs(&args.run, &args.refs)?;
    let cfg = ridge_config(args.alpha, args.no_intercept, config);
    let (models, fit) = pipeline::fit(&artifacts, &references, &cfg)?;
    let paths = RunPaths::new(&args.run);
    save_models(&paths.models(), &models)?;
    write_json(&paths.root.join("fit.json"), &fit)?;
    write_text(
        &paths.root.join("beta.csv"),
        &report::beta_table_csv(&fit.beta),
    )?;
    print!("{}", report::fit_summary_text(&fit));
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let (artifacts, references) = load_run_and_refs(&args.run, &args.refs)?;
    let stats = pipeline::stats(&artifacts, &references, args.split.into())?;
    let paths = RunPaths::new(&args.run);
    write_json(&paths.root.join("stats.json"), &stats)?;
    write_text(
        &paths.root.join("nemenyi.csv"),
        &report::stats_report_csv(&stats),
    )?;
    print!("{}", report::stats_report_text(&stats));
    Ok(())
}

fn cmd_report(args: ReportArgs, config: &ConfigFile) -> Result<()> {
    let (artifacts, references) = load_run_and_refs(&args.run, &args.refs)?;
    let evaluation = pipeline::evaluate(&artifacts, &references)?;
    let bias = pipeline::bias(&artifacts, args.aggregation.into())?;
    let cfg = ridge_config(args.alpha, args.no_intercept, config);
    let (models, fit) = pipeline::fit(&artifacts, &references, &cfg)?;
    let stats = pipeline::stats(&artifacts, &references, args.split.into())?;

    let paths = RunPaths::new(&args.run);
    save_models(&paths.models(), &models)?;
    write_json(&paths.root.join("evaluation.json"), &evaluation)?;
    write_json(&paths.root.join("bias.json"), &bias)?;
    write_json(&paths.root.join("fit.json"), &fit)?;
    write_json(&paths.root.join("stats.json"), &stats)?;
    write_text(
        &paths.root.join("evaluation.csv"),
        &report::evaluation_table_csv(&evaluation, Some(&fit)),
    )?;
    write_text(&paths.root.join("bias.csv"), &report::bias_table_csv(&bias))?;
    write_text(
        &paths.root.join("beta.csv"),
        &report::beta_table_csv(&fit.beta),
    )?;
    write_text(
        &paths.root.join("nemenyi.csv"),
        &report::stats_report_csv(&stats),
    )?;

    let inputs = report::ReportInputs {
        model_id: &artifacts.manifest.model_id,
        seed: artifacts.manifest.seed,
        n_orderings: artifacts.manifest.n_orderings,
        bank_version: &artifacts.manifest.bank_version,
        evaluation: &evaluation,
        bias: &bias,
        fit: Some(&fit),
        stats: Some(&stats),
    };
    let text = report::run_report_text(&inputs)?;
    write_text(&paths.root.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
