//! Command line entry point: staged analysis of labeled event streams.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use trajektor::binning::{ObservationMatrix, SummaryRule};
use trajektor::corpus::{LabelVocabulary, ParseFormat, SpanPolicy};
use trajektor::lmm::{
    generate, read_trajectories_csv, write_trajectories_csv, DecodeMethod, EmConfig,
    LatentMarkovModel,
};
use trajektor::metrics::{difference, tscore, CohortScope};

use trajektor::synth::{generate_typed_corpus, SynthCorpusConfig};
use trajektor::typing::{Clustering, KModesConfig, NamingConfig, Partition, TypeLabel};

use trajektor_cli::config::{ModelSelection, PipelineConfig};
use trajektor_cli::pipeline::{self, RunLog};
use trajektor_cli::CliError;

#[derive(Parser)]
#[command(
    name = "trajektor",
    version,
    about = "Type longitudinal categorical behavior: equal-event windows, latent Markov modelling, trajectory clustering, and cohort scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full staged pipeline from a config file.
    Run(RunArgs),
    /// Parse events, report cohort statistics, and drop bot-like users.
    Ingest(IngestArgs),
    /// Build equal-event windows and summarize users per window.
    Bin(BinArgs),
    /// Pre-separate users and fit latent Markov models over a state range.
    Fit(FitArgs),
    /// Decode per-user state trajectories with a fitted model.
    Decode(DecodeArgs),
    /// Cluster trajectories with k-modes and chart the WSS curve.
    Cluster(ClusterArgs),
    /// Score a user grouping against the cohort (TScores).
    Score(ScoreArgs),
    /// Name types and emit summary, concentration, and significance tables.
    Report(ReportArgs),
    /// Generate synthetic corpora and observation matrices.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; omitted keys use defaults, so an empty file
    /// is valid.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for all stage artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Master seed for every stochastic stage.
    #[arg(long)]
    seed: u64,
    /// Input events file (overrides the config key).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    span_start: Option<i64>,
    #[arg(long)]
    span_end: Option<i64>,
    /// Events/day above which a user is dropped; skip to keep everyone.
    #[arg(long)]
    bot_threshold: Option<f64>,
    #[arg(long, default_value = "full_span")]
    span_policy: String,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BinArgs {
    /// Events CSV (as written by ingest).
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    periods: usize,
    /// `max_class` or `threshold:Q`.
    #[arg(long, default_value = "max_class")]
    rule: String,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Observation matrix CSV.
    #[arg(long)]
    observations: PathBuf,
    /// Counts CSV paired with the observations.
    #[arg(long)]
    counts: PathBuf,
    /// Partition CSV; computed from the counts when omitted.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k_min: usize,
    #[arg(long, default_value_t = 3)]
    k_max: usize,
    #[arg(long, default_value = "fixed")]
    k_select: String,
    #[arg(long, default_value_t = 3)]
    k_fixed: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value = "random")]
    init: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    /// Model JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    /// Partition CSV restricting decoding to the modeled users.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long, default_value = "viterbi")]
    method: String,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Trajectories CSV.
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value = "random")]
    init: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    wss_k_min: usize,
    #[arg(long, default_value_t = 10)]
    wss_k_max: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    /// Grouping CSV: `user_id,group`.
    #[arg(long)]
    groups: PathBuf,
    /// Cohort denominator: `all` users or `grouped` users only.
    #[arg(long, default_value = "all")]
    cohort: String,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Filtered events CSV.
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    /// Cluster assignments CSV.
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    slope_threshold: f64,
    /// Manual override `CLUSTER=TYPE`, repeatable (1-based cluster ids).
    #[arg(long = "override", value_name = "CLUSTER=TYPE")]
    overrides: Vec<String>,
    #[arg(long)]
    bonferroni: bool,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Planted seven-type event corpus with ground truth.
    Corpus(SynthCorpusArgs),
    /// Observations sampled from a model file.
    Model(SynthModelArgs),
}

#[derive(Args)]
struct SynthCorpusArgs {
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 60)]
    periods: usize,
    #[arg(long, default_value_t = 365.0)]
    span_days: f64,
    /// Seven comma-separated type shares (None, Very Low, Low, High,
    /// Very High, Escalating, De-escalating).
    #[arg(long, value_delimiter = ',')]
    shares: Option<Vec<f64>>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthModelArgs {
    /// Model JSON to sample from.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    users: usize,
    #[arg(long)]
    periods: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Bin(args) => cmd_bin(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Score(args) => cmd_score(args),
        Command::Report(args) => cmd_report(args),
        Command::Synth(args) => cmd_synth(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn vocabulary(labels: &Option<Vec<String>>) -> Result<LabelVocabulary, CliError> {
    match labels {
        None => Ok(LabelVocabulary::default()),
        Some(tokens) => {
            LabelVocabulary::new(tokens).map_err(|e| CliError::Validation(e.to_string()))
        }
    }
}

fn parse_format(raw: &str) -> Result<ParseFormat, CliError> {
    match raw {
        "csv" => Ok(ParseFormat::Csv),
        "jsonl" => Ok(ParseFormat::Jsonl),
        _ => Err(CliError::Validation(format!("unknown format '{raw}'"))),
    }
}

fn parse_rule(raw: &str) -> Result<SummaryRule, CliError> {
    if raw == "max_class" {
        return Ok(SummaryRule::MaxClass);
    }
    if let Some(q) = raw.strip_prefix("threshold:") {
        let q: f64 = q
            .parse()
            .map_err(|_| CliError::Validation(format!("bad threshold in '{raw}'")))?;
        return Ok(SummaryRule::Threshold(q));
    }
    Err(CliError::Validation(format!("unknown rule '{raw}'")))
}

fn prepare_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn reader(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))
}

fn load_obs(
    observations: &Path,
    counts: &Path,
    vocab: &LabelVocabulary,
) -> Result<ObservationMatrix, CliError> {
    ObservationMatrix::read_csv(reader(observations)?, reader(counts)?, vocab)
        .map_err(|e| CliError::Stage(format!("observations: {e}")))
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(input) = &args.input {
        overrides.push(("input".to_string(), input.display().to_string()));
    }
    for setting in &args.set {
        let (key, value) = setting.split_once('=').ok_or_else(|| {
            CliError::Validation(format!("--set expects KEY=VALUE, got '{setting}'"))
        })?;
        overrides.push((key.trim().to_string(), value.trim().to_string()));
    }
    overrides.push(("seed".to_string(), args.seed.to_string()));
    let config = PipelineConfig::load(Some(&args.config), &overrides)?;
    pipeline::cmd_run(&config, &args.out)?;
    println!("run complete: {}", args.out.display());
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let vocab = vocabulary(&args.labels)?;
    let format = parse_format(&args.format)?;
    let span = match (args.span_start, args.span_end) {
        (Some(s), Some(e)) => Some((s, e)),
        (None, None) => None,
        _ => {
            return Err(CliError::Validation(
                "span_start and span_end must be given together".into(),
            ))
        }
    };
    prepare_out_dir(&args.out_dir)?;
    let es = pipeline::stage_ingest(&args.input, format, span, &vocab, &args.out_dir)?;
    if let Some(threshold) = args.bot_threshold {
        let policy = match args.span_policy.as_str() {
            "full_span" => SpanPolicy::FullSpan,
            "user_span" => SpanPolicy::UserSpan,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown span policy '{other}'"
                )))
            }
        };
        pipeline::stage_filter(&es, threshold, policy, &vocab, &args.out_dir)?;
    }
    println!("ingested {} events from {} users", es.len(), es.n_users());
    Ok(())
}

fn cmd_bin(args: BinArgs) -> Result<(), CliError> {
    let vocab = vocabulary(&args.labels)?;
    let rule = parse_rule(&args.rule)?;
    prepare_out_dir(&args.out_dir)?;
    let es = pipeline::load_events(&args.events, &vocab)?;
    let bins = pipeline::stage_bin(&es, args.periods, &args.out_dir)?;
    pipeline::stage_summarize(&es, &bins, rule, &vocab, &args.out_dir)?;
    println!(
        "binned {} events into {} windows",
        es.len(),
        bins.window_count()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let vocab = vocabulary(&args.labels)?;
    prepare_out_dir(&args.out_dir)?;
    let obs = load_obs(&args.observations, &args.counts, &vocab)?;
    let partition = match &args.partition {
        Some(path) => {
            Partition::read_csv(reader(path)?).map_err(|e| CliError::Stage(e.to_string()))?
        }
        None => pipeline::stage_preseparate(&obs, &args.out_dir)?,
    };
    if partition.modeled.is_empty() {
        return Err(CliError::Stage("no modeled users to fit".into()));
    }
    let modeled: std::collections::BTreeSet<String> = partition.modeled.iter().cloned().collect();
    let modeled_obs = obs.subset(&modeled);
    let selection = match args.k_select.as_str() {
        "fixed" => ModelSelection::Fixed,
        "aic" => ModelSelection::Aic,
        "bic" => ModelSelection::Bic,
        other => return Err(CliError::Validation(format!("unknown k_select '{other}'"))),
    };
    let em = EmConfig {
        restarts: args.restarts,
        max_iter: args.max_iter,
        tol: args.tol,
        seed: args.seed,
        init: match args.init.as_str() {
            "random" => trajektor::lmm::InitStrategy::Random,
            "spread" => trajektor::lmm::InitStrategy::Spread,
            other => return Err(CliError::Validation(format!("unknown init '{other}'"))),
        },
    };
    let (rows, chosen) = pipeline::stage_emfit(
        &modeled_obs,
        (args.k_min, args.k_max),
        selection,
        args.k_fixed,
        &em,
        &args.out_dir,
    )?;
    for row in &rows {
        println!(
            "k={} loglik={:.3} aic={:.3} bic={:.3}{}",
            row.k,
            row.loglik,
            row.aic,
            row.bic,
            if row.selected { "  [selected]" } else { "" }
        );
    }
    println!("selected k={chosen}");
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> Result<(), CliError> {
    let vocab = vocabulary(&args.labels)?;
    prepare_out_dir(&args.out_dir)?;
    let obs = load_obs(&args.observations, &args.counts, &vocab)?;
    let (model, _, _) = LatentMarkovModel::read_json(reader(&args.model)?)
        .map_err(|e| CliError::Stage(e.to_string()))?;
    let users: Vec<String> = match &args.partition {
        Some(path) => {
            Partition::read_csv(reader(path)?)
                .map_err(|e| CliError::Stage(e.to_string()))?
                .modeled
        }
        None => obs.users().to_vec(),
    };
    let method = match args.method.as_str() {
        "viterbi" => DecodeMethod::Viterbi,
        "posterior" => DecodeMethod::Posterior,
        other => return Err(CliError::Validation(format!("unknown method '{other}'"))),
    };
    let trajectories = pipeline::stage_decode(&model, &obs, &users, method, &args.out_dir)?;
    println!("decoded {} trajectories", trajectories.len());
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<(), CliError> {
    prepare_out_dir(&args.out_dir)?;
    let trajectories = read_trajectories_csv(reader(&args.trajectories)?)
        .map_err(|e| CliError::Stage(e.to_string()))?;
    let kmodes = KModesConfig {
        restarts: args.restarts,
        max_iter: args.max_iter,
        seed: args.seed,
        init: match args.init.as_str() {
            "random" => trajektor::typing::KModesInit::Random,
            "frequency" => trajektor::typing::KModesInit::Frequency,
            other => return Err(CliError::Validation(format!("unknown init '{other}'"))),
        },
    };
    let clustering = pipeline::stage_cluster(&trajectories, args.k, &kmodes, &args.out_dir)?;
    pipeline::stage_wss(
        &trajectories,
        (args.wss_k_min, args.wss_k_max),
        &kmodes,
        &args.out_dir,
    )?;
    println!("clustered into k={} with wss={}", clustering.k, clustering.wss);
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let vocab = vocabulary(&args.labels)?;
    prepare_out_dir(&args.out_dir)?;
    let obs = load_obs(&args.observations, &args.counts, &vocab)?;
    let grouping = pipeline::read_grouping_csv(reader(&args.groups)?)?;
    let scope = match args.cohort.as_str() {
        "all" => CohortScope::AllUsers,
        "grouped" => CohortScope::GroupedOnly,
        other => return Err(CliError::Validation(format!("unknown cohort '{other}'"))),
    };
    let series =
        tscore(&obs, &grouping, scope).map_err(|e| CliError::Stage(e.to_string()))?;
    series
        .write_csv(
            File::create(args.out_dir.join(pipeline::TSCORES))?,
            &vocab,
        )
        .map_err(|e| CliError::Stage(e.to_string()))?;
    let diff = difference(&series).map_err(|e| CliError::Stage(e.to_string()))?;
    diff.write_csv(
        File::create(args.out_dir.join(pipeline::TSCORES_DIFF))?,
        &vocab,
    )
    .map_err(|e| CliError::Stage(e.to_string()))?;
    println!("scored {} groups", series.groups().len());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let vocab = vocabulary(&args.labels)?;
    prepare_out_dir(&args.out_dir)?;
    let es = pipeline::load_events(&args.events, &vocab)?;
    let obs = load_obs(&args.observations, &args.counts, &vocab)?;
    let partition =
        Partition::read_csv(reader(&args.partition)?).map_err(|e| CliError::Stage(e.to_string()))?;
    let clustering = Clustering::read_assignments_csv(reader(&args.assignments)?, args.clusters, 0)
        .map_err(|e| CliError::Stage(e.to_string()))?;
    let mut overrides: BTreeMap<usize, TypeLabel> = BTreeMap::new();
    for spec in &args.overrides {
        let (cluster, label) = spec.split_once('=').ok_or_else(|| {
            CliError::Validation(format!("--override expects CLUSTER=TYPE, got '{spec}'"))
        })?;
        let c: usize = cluster
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("bad cluster '{cluster}'")))?;
        if c == 0 {
            return Err(CliError::Validation("override clusters are 1-based".into()));
        }
        let label = TypeLabel::parse(label.trim())
            .ok_or_else(|| CliError::Validation(format!("unknown type '{label}'")))?;
        overrides.insert(c - 1, label);
    }
    let grouping = pipeline::naming_grouping(&partition, &clustering)?;
    let series = pipeline::stage_tscore(
        &obs,
        &grouping,
        CohortScope::AllUsers,
        &vocab,
        &args.out_dir,
    )?;
    let naming = NamingConfig {
        slope_threshold: args.slope_threshold,
    };
    let assignment = pipeline::stage_types(
        &partition,
        &clustering,
        &series,
        &overrides,
        &naming,
        &args.out_dir,
    )?;
    pipeline::stage_summaries(
        &es,
        &obs,
        &assignment,
        CohortScope::AllUsers,
        &vocab,
        &args.out_dir,
    )?;
    pipeline::stage_stats(&es, &assignment, &vocab, args.bonferroni, &args.out_dir)?;
    let mut log = RunLog::silent();
    log.note("report complete");
    for (label, share) in assignment.shares() {
        println!("{}: {:.1}%", label, share * 100.0);
    }
    Ok(())
}

fn cmd_synth(args: SynthCommand) -> Result<(), CliError> {
    match args {
        SynthCommand::Corpus(args) => {
            prepare_out_dir(&args.out_dir)?;
            let mut config = SynthCorpusConfig {
                users: args.users,
                periods: args.periods,
                span_days: args.span_days,
                seed: args.seed,
                ..SynthCorpusConfig::default()
            };
            if let Some(shares) = &args.shares {
                if shares.len() != 7 {
                    return Err(CliError::Validation(
                        "--shares needs exactly 7 values".into(),
                    ));
                }
                config.shares.copy_from_slice(shares);
            }
            let corpus =
                generate_typed_corpus(&config).map_err(|e| CliError::Stage(e.to_string()))?;
            let vocab = LabelVocabulary::default();
            corpus
                .events
                .write_csv(File::create(args.out_dir.join("events.csv"))?, &vocab)
                .map_err(|e| CliError::Stage(e.to_string()))?;
            corpus
                .write_truth_csv(File::create(args.out_dir.join("truth.csv"))?)
                .map_err(|e| CliError::Stage(e.to_string()))?;
            println!(
                "generated {} events for {} users",
                corpus.events.len(),
                args.users
            );
            Ok(())
        }
        SynthCommand::Model(args) => {
            prepare_out_dir(&args.out_dir)?;
            let vocab = vocabulary(&args.labels)?;
            let (model, _, _) = LatentMarkovModel::read_json(reader(&args.model)?)
                .map_err(|e| CliError::Stage(e.to_string()))?;
            let data = generate(&model, args.users, args.periods, args.seed)
                .map_err(|e| CliError::Stage(e.to_string()))?;
            data.observations
                .write_obs_csv(
                    File::create(args.out_dir.join("observations.csv"))?,
                    &vocab,
                )
                .map_err(|e| CliError::Stage(e.to_string()))?;
            data.observations
                .write_counts_csv(File::create(args.out_dir.join("counts.csv"))?, &vocab)
                .map_err(|e| CliError::Stage(e.to_string()))?;
            write_trajectories_csv(
                File::create(args.out_dir.join("true_states.csv"))?,
                &data.trajectories,
            )
            .map_err(|e| CliError::Stage(e.to_string()))?;
            println!(
                "sampled {} users over {} windows",
                args.users, args.periods
            );
            Ok(())
        }
    }
}
