//! The staged pipeline. Every stage reads its inputs from files written by
//! the previous stage and writes its own artifacts, so any stage can be
//! re-run standalone and a full run leaves a complete, resumable trail.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use trajektor::binning::{build_bins, summarize, BinningScheme, ObservationMatrix};
use trajektor::corpus::{
    cohort_stats, filter_bot_like, parse_events, EventSet, LabelVocabulary, ParseFormat,
    ParseOptions, SpanPolicy,
};
use trajektor::lmm::{
    em_fit, information_criteria, posterior_decode, read_trajectories_csv, viterbi,
    write_trajectories_csv, DecodeMethod, EmConfig, LatentMarkovModel, StateTrajectory,
};
use trajektor::metrics::{
    difference, gini_report, tscore, type_summary, CohortScope, Grouping, TScoreSeries,
};
use trajektor::stats::{bonferroni, kruskal_wallis, pairwise_wilcoxon, StatsReport, StatsRow};
use trajektor::typing::{
    assign_types, kmodes_fit, pre_separate, wss_curve, write_wss_curve_csv, Clustering,
    KModesConfig, NamingConfig, Partition, TypeAssignment, TypeLabel,
};

use crate::config::{ModelSelection, PipelineConfig};
use crate::manifest::{RunLock, RunManifest};
use crate::CliError;

pub const EVENTS_RAW: &str = "01_events.csv";
pub const COHORT_STATS: &str = "01_cohort_stats.csv";
pub const USER_TOTALS: &str = "01_user_totals.csv";
pub const EVENTS_FILTERED: &str = "02_events.csv";
pub const REMOVED_USERS: &str = "02_removed_users.csv";
pub const BINS: &str = "03_bins.csv";
pub const OBSERVATIONS: &str = "04_observations.csv";
pub const COUNTS: &str = "04_counts.csv";
pub const PARTITION: &str = "05_partition.csv";
pub const MODEL_SELECTION: &str = "06_model_selection.csv";
pub const TRAJECTORIES: &str = "07_trajectories.csv";
pub const CLUSTER_MODES: &str = "08_cluster_modes.csv";
pub const CLUSTER_ASSIGNMENTS: &str = "08_cluster_assignments.csv";
pub const WSS_CURVE: &str = "09_wss_curve.csv";
pub const TSCORES: &str = "10_tscores.csv";
pub const TSCORES_DIFF: &str = "10_tscores_diff.csv";
pub const TYPES: &str = "11_types.csv";
pub const TYPE_SUMMARY: &str = "12_type_summary.csv";
pub const GINI: &str = "12_gini.csv";
pub const TSCORES_BY_TYPE: &str = "12_tscores_by_type.csv";
pub const STATS: &str = "13_stats.csv";

pub fn model_file(k: usize) -> String {
    format!("06_model_k{k}.json")
}

/// Stage progress sink: stderr (unless `TRAJEKTOR_LOG=quiet`) plus a
/// timestamped run log that stays outside the manifest.
pub struct RunLog {
    file: Option<File>,
    quiet: bool,
}

impl RunLog {
    pub fn new(out_dir: &Path) -> Result<Self, CliError> {
        let file = File::create(out_dir.join("run_log.txt"))?;
        let quiet = matches!(
            std::env::var("TRAJEKTOR_LOG").as_deref(),
            Ok("quiet") | Ok("off")
        );
        Ok(RunLog {
            file: Some(file),
            quiet,
        })
    }

    pub fn silent() -> Self {
        RunLog {
            file: None,
            quiet: true,
        }
    }

    pub fn note(&mut self, message: &str) {
        if let Some(file) = &mut self.file {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let _ = writeln!(file, "[{now}] {message}");
        }
        if !self.quiet {
            eprintln!("[trajektor] {message}");
        }
    }
}

fn stage_err(stage: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Stage(format!("{stage}: {e}"))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Stage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::Stage(format!("cannot create {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Stage helpers, shared by `run` and the standalone subcommands.
// ---------------------------------------------------------------------------

pub fn load_events(path: &Path, vocabulary: &LabelVocabulary) -> Result<EventSet, CliError> {
    let options = ParseOptions {
        format: ParseFormat::Csv,
        vocabulary: vocabulary.clone(),
        span: None,
    };
    parse_events(open(path)?, &options).map_err(|e| stage_err("load events", e))
}

pub fn stage_ingest(
    input: &Path,
    format: ParseFormat,
    span: Option<(i64, i64)>,
    vocabulary: &LabelVocabulary,
    out_dir: &Path,
) -> Result<EventSet, CliError> {
    let options = ParseOptions {
        format,
        vocabulary: vocabulary.clone(),
        span,
    };
    let es = parse_events(open(input)?, &options).map_err(|e| stage_err("ingest", e))?;
    es.write_csv(create(&out_dir.join(EVENTS_RAW))?, vocabulary)
        .map_err(|e| stage_err("ingest", e))?;
    let stats = cohort_stats(&es, vocabulary).map_err(|e| stage_err("ingest", e))?;
    {
        let mut wtr = csv::Writer::from_writer(create(&out_dir.join(COHORT_STATS))?);
        wtr.write_record(["label", "total", "proportion"])
            .map_err(|e| stage_err("ingest", e))?;
        for label in vocabulary.labels() {
            wtr.write_record([
                vocabulary.token(label),
                &stats.label_totals[label.index()].to_string(),
                &stats.label_proportions[label.index()].to_string(),
            ])
            .map_err(|e| stage_err("ingest", e))?;
        }
        wtr.flush().map_err(|e| stage_err("ingest", e))?;
    }
    {
        let mut wtr = csv::Writer::from_writer(create(&out_dir.join(USER_TOTALS))?);
        let mut header = vec!["user_id".to_string()];
        header.extend(vocabulary.tokens().iter().cloned());
        header.push("total".to_string());
        wtr.write_record(&header).map_err(|e| stage_err("ingest", e))?;
        for (user, counts) in &stats.per_user_label_counts {
            let mut rec = vec![user.clone()];
            rec.extend(counts.iter().map(|c| c.to_string()));
            rec.push(stats.per_user_totals[user].to_string());
            wtr.write_record(&rec).map_err(|e| stage_err("ingest", e))?;
        }
        wtr.flush().map_err(|e| stage_err("ingest", e))?;
    }
    Ok(es)
}

pub fn stage_filter(
    es: &EventSet,
    threshold: f64,
    policy: SpanPolicy,
    vocabulary: &LabelVocabulary,
    out_dir: &Path,
) -> Result<EventSet, CliError> {
    let (kept, removed) =
        filter_bot_like(es, threshold, policy).map_err(|e| stage_err("filter", e))?;
    kept.write_csv(create(&out_dir.join(EVENTS_FILTERED))?, vocabulary)
        .map_err(|e| stage_err("filter", e))?;
    let mut wtr = csv::Writer::from_writer(create(&out_dir.join(REMOVED_USERS))?);
    wtr.write_record(["user_id", "events", "span_days", "rate_per_day"])
        .map_err(|e| stage_err("filter", e))?;
    for r in &removed {
        wtr.write_record([
            r.user_id.as_str(),
            &r.events.to_string(),
            &r.span_days.to_string(),
            &r.rate_per_day.to_string(),
        ])
        .map_err(|e| stage_err("filter", e))?;
    }
    wtr.flush().map_err(|e| stage_err("filter", e))?;
    Ok(kept)
}

pub fn stage_bin(es: &EventSet, periods: usize, out_dir: &Path) -> Result<BinningScheme, CliError> {
    let bins = build_bins(es, periods).map_err(|e| stage_err("bin", e))?;
    bins.write_csv(create(&out_dir.join(BINS))?)
        .map_err(|e| stage_err("bin", e))?;
    Ok(bins)
}

pub fn stage_summarize(
    es: &EventSet,
    bins: &BinningScheme,
    rule: trajektor::binning::SummaryRule,
    vocabulary: &LabelVocabulary,
    out_dir: &Path,
) -> Result<ObservationMatrix, CliError> {
    let obs = summarize(es, bins, rule, vocabulary).map_err(|e| stage_err("summarize", e))?;
    obs.write_obs_csv(create(&out_dir.join(OBSERVATIONS))?, vocabulary)
        .map_err(|e| stage_err("summarize", e))?;
    obs.write_counts_csv(create(&out_dir.join(COUNTS))?, vocabulary)
        .map_err(|e| stage_err("summarize", e))?;
    Ok(obs)
}

pub fn load_observations(
    out_dir: &Path,
    vocabulary: &LabelVocabulary,
) -> Result<ObservationMatrix, CliError> {
    ObservationMatrix::read_csv(
        open(&out_dir.join(OBSERVATIONS))?,
        open(&out_dir.join(COUNTS))?,
        vocabulary,
    )
    .map_err(|e| stage_err("load observations", e))
}

pub fn stage_preseparate(obs: &ObservationMatrix, out_dir: &Path) -> Result<Partition, CliError> {
    let partition = pre_separate(obs);
    partition
        .write_csv(create(&out_dir.join(PARTITION))?)
        .map_err(|e| stage_err("preseparate", e))?;
    Ok(partition)
}

/// Rows of the model-selection table.
#[derive(Debug, Clone)]
pub struct SelectionRow {
    pub k: usize,
    pub loglik: f64,
    pub params: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub degenerate: bool,
    pub selected: bool,
}

pub fn stage_emfit(
    modeled_obs: &ObservationMatrix,
    k_range: (usize, usize),
    selection: ModelSelection,
    k_fixed: usize,
    em: &EmConfig,
    out_dir: &Path,
) -> Result<(Vec<SelectionRow>, usize), CliError> {
    let mut rows = Vec::new();
    for k in k_range.0..=k_range.1 {
        let fit = em_fit(modeled_obs, k, em).map_err(|e| stage_err("emfit", e))?;
        let ic = information_criteria(&fit, modeled_obs.n_users())
            .map_err(|e| stage_err("emfit", e))?;
        fit.model
            .write_json(
                create(&out_dir.join(model_file(k)))?,
                Some(em.seed),
                Some(fit.loglik),
            )
            .map_err(|e| stage_err("emfit", e))?;
        rows.push(SelectionRow {
            k,
            loglik: fit.loglik,
            params: ic.params,
            aic: ic.aic,
            bic: ic.bic,
            converged: fit.converged,
            degenerate: fit.degenerate,
            selected: false,
        });
    }
    let chosen = match selection {
        ModelSelection::Fixed => k_fixed,
        ModelSelection::Aic => {
            rows.iter()
                .min_by(|a, b| a.aic.partial_cmp(&b.aic).unwrap())
                .unwrap()
                .k
        }
        ModelSelection::Bic => {
            rows.iter()
                .min_by(|a, b| a.bic.partial_cmp(&b.bic).unwrap())
                .unwrap()
                .k
        }
    };
    for row in rows.iter_mut() {
        row.selected = row.k == chosen;
    }
    let mut wtr = csv::Writer::from_writer(create(&out_dir.join(MODEL_SELECTION))?);
    wtr.write_record([
        "k", "loglik", "params", "aic", "bic", "converged", "degenerate", "selected",
    ])
    .map_err(|e| stage_err("emfit", e))?;
    for row in &rows {
        wtr.write_record([
            row.k.to_string(),
            row.loglik.to_string(),
            row.params.to_string(),
            row.aic.to_string(),
            row.bic.to_string(),
            row.converged.to_string(),
            row.degenerate.to_string(),
            row.selected.to_string(),
        ])
        .map_err(|e| stage_err("emfit", e))?;
    }
    wtr.flush().map_err(|e| stage_err("emfit", e))?;
    Ok((rows, chosen))
}

pub fn selected_k(out_dir: &Path) -> Result<usize, CliError> {
    let mut rdr = csv::Reader::from_reader(open(&out_dir.join(MODEL_SELECTION))?);
    for record in rdr.records() {
        let record = record.map_err(|e| stage_err("decode", e))?;
        if record.get(7) == Some("true") {
            return record
                .get(0)
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| stage_err("decode", "bad selection row"));
        }
    }
    Err(stage_err("decode", "no selected model in selection table"))
}

pub fn stage_decode(
    model: &LatentMarkovModel,
    obs: &ObservationMatrix,
    users: &[String],
    method: DecodeMethod,
    out_dir: &Path,
) -> Result<Vec<StateTrajectory>, CliError> {
    let mut trajectories = Vec::with_capacity(users.len());
    for user in users {
        let row = obs
            .user_row(user)
            .ok_or_else(|| stage_err("decode", format!("user '{user}' missing from observations")))?;
        let seq = obs.row(row);
        let states = match method {
            DecodeMethod::Viterbi => viterbi(model, seq),
            DecodeMethod::Posterior => posterior_decode(model, seq),
        }
        .map_err(|e| stage_err("decode", format!("user '{user}': {e}")))?;
        trajectories.push(StateTrajectory {
            user_id: user.clone(),
            states,
        });
    }
    write_trajectories_csv(create(&out_dir.join(TRAJECTORIES))?, &trajectories)
        .map_err(|e| stage_err("decode", e))?;
    Ok(trajectories)
}

pub fn stage_cluster(
    trajectories: &[StateTrajectory],
    k: usize,
    kmodes: &KModesConfig,
    out_dir: &Path,
) -> Result<Clustering, CliError> {
    let clustering = kmodes_fit(trajectories, k, kmodes).map_err(|e| stage_err("cluster", e))?;
    clustering
        .write_modes_csv(create(&out_dir.join(CLUSTER_MODES))?)
        .map_err(|e| stage_err("cluster", e))?;
    clustering
        .write_assignments_csv(create(&out_dir.join(CLUSTER_ASSIGNMENTS))?)
        .map_err(|e| stage_err("cluster", e))?;
    Ok(clustering)
}

pub fn stage_wss(
    trajectories: &[StateTrajectory],
    k_range: (usize, usize),
    kmodes: &KModesConfig,
    out_dir: &Path,
) -> Result<(), CliError> {
    let distinct = {
        let mut rows: Vec<&[usize]> = trajectories.iter().map(|t| t.states.as_slice()).collect();
        rows.sort();
        rows.dedup();
        rows.len()
    };
    let hi = k_range.1.min(distinct);
    let lo = k_range.0.min(hi);
    let curve =
        wss_curve(trajectories, lo..=hi, kmodes).map_err(|e| stage_err("wss", e))?;
    write_wss_curve_csv(create(&out_dir.join(WSS_CURVE))?, &curve)
        .map_err(|e| stage_err("wss", e))
}

/// The grouping used for scoring and naming: pre-separated pools (when
/// nonempty) plus one group per cluster.
pub fn naming_grouping(
    partition: &Partition,
    clustering: &Clustering,
) -> Result<Grouping, CliError> {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    if !partition.none_only.is_empty() {
        groups.push(("none_only".to_string(), partition.none_only.clone()));
    }
    if !partition.none_implicit_only.is_empty() {
        groups.push((
            "none_implicit_only".to_string(),
            partition.none_implicit_only.clone(),
        ));
    }
    for (c, members) in clustering.members().into_iter().enumerate() {
        if members.is_empty() {
            return Err(stage_err("tscore", format!("cluster {} is empty", c + 1)));
        }
        groups.push((Clustering::cluster_name(c), members));
    }
    Grouping::new(groups).map_err(|e| stage_err("tscore", e))
}

pub fn stage_tscore(
    obs: &ObservationMatrix,
    grouping: &Grouping,
    scope: CohortScope,
    vocabulary: &LabelVocabulary,
    out_dir: &Path,
) -> Result<TScoreSeries, CliError> {
    let series = tscore(obs, grouping, scope).map_err(|e| stage_err("tscore", e))?;
    series
        .write_csv(create(&out_dir.join(TSCORES))?, vocabulary)
        .map_err(|e| stage_err("tscore", e))?;
    let diff = difference(&series).map_err(|e| stage_err("tscore", e))?;
    diff.write_csv(create(&out_dir.join(TSCORES_DIFF))?, vocabulary)
        .map_err(|e| stage_err("tscore", e))?;
    Ok(series)
}

pub fn stage_types(
    partition: &Partition,
    clustering: &Clustering,
    series: &TScoreSeries,
    overrides: &BTreeMap<usize, TypeLabel>,
    naming: &NamingConfig,
    out_dir: &Path,
) -> Result<TypeAssignment, CliError> {
    let assignment = assign_types(partition, clustering, series, overrides, naming)
        .map_err(|e| stage_err("types", e))?;
    assignment
        .write_csv(create(&out_dir.join(TYPES))?)
        .map_err(|e| stage_err("types", e))?;
    Ok(assignment)
}

/// Nonempty types in canonical order as a grouping.
pub fn type_grouping(assignment: &TypeAssignment) -> Result<Grouping, CliError> {
    let groups: Vec<(String, Vec<String>)> = assignment
        .members_by_type()
        .into_iter()
        .filter(|(_, members)| !members.is_empty())
        .map(|(label, members)| (label.name().to_string(), members))
        .collect();
    Grouping::new(groups).map_err(|e| stage_err("summaries", e))
}

pub fn stage_summaries(
    es: &EventSet,
    obs: &ObservationMatrix,
    assignment: &TypeAssignment,
    scope: CohortScope,
    vocabulary: &LabelVocabulary,
    out_dir: &Path,
) -> Result<(), CliError> {
    let grouping = type_grouping(assignment)?;
    let summary =
        type_summary(es, &grouping, vocabulary).map_err(|e| stage_err("summaries", e))?;
    summary
        .write_csv(create(&out_dir.join(TYPE_SUMMARY))?, vocabulary)
        .map_err(|e| stage_err("summaries", e))?;
    let report = gini_report(obs).map_err(|e| stage_err("summaries", e))?;
    report
        .write_csv(create(&out_dir.join(GINI))?, vocabulary)
        .map_err(|e| stage_err("summaries", e))?;
    let by_type = tscore(obs, &grouping, scope).map_err(|e| stage_err("summaries", e))?;
    by_type
        .write_csv(create(&out_dir.join(TSCORES_BY_TYPE))?, vocabulary)
        .map_err(|e| stage_err("summaries", e))?;
    Ok(())
}

pub fn stage_stats(
    es: &EventSet,
    assignment: &TypeAssignment,
    vocabulary: &LabelVocabulary,
    apply_bonferroni: bool,
    out_dir: &Path,
) -> Result<(), CliError> {
    let stats = cohort_stats(es, vocabulary).map_err(|e| stage_err("stats", e))?;
    let groups: Vec<(String, Vec<String>)> = assignment
        .members_by_type()
        .into_iter()
        .filter(|(_, members)| !members.is_empty())
        .map(|(label, members)| (label.name().to_string(), members))
        .collect();
    if groups.len() < 2 {
        return Err(stage_err("stats", "need at least two nonempty types"));
    }
    let mut rows = Vec::new();
    for label in vocabulary.labels() {
        let samples: Vec<Vec<f64>> = groups
            .iter()
            .map(|(_, members)| {
                members
                    .iter()
                    .map(|u| stats.per_user_label_counts[u][label.index()] as f64)
                    .collect()
            })
            .collect();
        let kw = kruskal_wallis(&samples).map_err(|e| stage_err("stats", e))?;
        rows.push(StatsRow {
            label: vocabulary.token(label).to_string(),
            group_a: "all".to_string(),
            group_b: String::new(),
            result: kw,
        });
        let matrix = pairwise_wilcoxon(&samples).map_err(|e| stage_err("stats", e))?;
        let comparisons = groups.len() * (groups.len() - 1) / 2;
        for i in 0..groups.len() {
            for j in (i + 1)..groups.len() {
                let mut result = matrix[i][j].clone().unwrap();
                if apply_bonferroni {
                    result.p_value = bonferroni(result.p_value, comparisons);
                }
                rows.push(StatsRow {
                    label: vocabulary.token(label).to_string(),
                    group_a: groups[i].0.clone(),
                    group_b: groups[j].0.clone(),
                    result,
                });
            }
        }
    }
    StatsReport { rows }
        .write_csv(create(&out_dir.join(STATS))?)
        .map_err(|e| stage_err("stats", e))
}

/// Generic `user_id,group` CSV used by the standalone `score` subcommand.
pub fn read_grouping_csv<R: BufRead>(r: R) -> Result<Grouping, CliError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| stage_err("score", e))?;
        let user = record
            .get(0)
            .ok_or_else(|| stage_err("score", "missing user_id"))?;
        let group = record
            .get(1)
            .ok_or_else(|| stage_err("score", "missing group"))?;
        groups.entry(group.to_string()).or_default().push(user.to_string());
    }
    Grouping::new(groups.into_iter().collect()).map_err(|e| stage_err("score", e))
}

// ---------------------------------------------------------------------------
// Full pipeline.
// ---------------------------------------------------------------------------

/// Run every stage. On failure the manifest records the failing stage and
/// already-written artifacts stay on disk.
pub fn cmd_run(config: &PipelineConfig, out_dir: &Path) -> Result<RunManifest, CliError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let _lock = RunLock::acquire(out_dir)?;
    let mut log = RunLog::new(out_dir)?;
    let mut manifest = RunManifest::new(config.seed, config.snapshot());

    match run_stages(config, out_dir, &mut log, &mut manifest) {
        Ok(()) => {
            manifest.write(out_dir)?;
            log.note("run complete");
            Ok(manifest)
        }
        Err(e) => {
            let failed_stage = match &e {
                CliError::Stage(msg) => msg.split(':').next().unwrap_or("unknown").to_string(),
                _ => "unknown".to_string(),
            };
            manifest.failure = Some((failed_stage, e.to_string()));
            let _ = manifest.write(out_dir);
            log.note(&format!("run failed: {e}"));
            Err(e)
        }
    }
}

fn run_stages(
    config: &PipelineConfig,
    out: &Path,
    log: &mut RunLog,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let vocab = &config.vocabulary;
    let art = |names: &[&str]| -> Vec<PathBuf> { names.iter().map(|n| out.join(n)).collect() };

    log.note("stage 01 ingest");
    let es = stage_ingest(&config.input, config.format, config.span, vocab, out)?;
    manifest.data_span = Some(es.span());
    manifest.record_stage(out, "ingest", &art(&[EVENTS_RAW, COHORT_STATS, USER_TOTALS]))?;
    drop(es);

    log.note("stage 02 filter");
    let es = load_events(&out.join(EVENTS_RAW), vocab)?;
    stage_filter(&es, config.bot_threshold, config.span_policy, vocab, out)?;
    manifest.record_stage(out, "filter", &art(&[EVENTS_FILTERED, REMOVED_USERS]))?;
    drop(es);

    log.note("stage 03 bin");
    let es = load_events(&out.join(EVENTS_FILTERED), vocab)?;
    stage_bin(&es, config.periods, out)?;
    manifest.record_stage(out, "bin", &art(&[BINS]))?;

    log.note("stage 04 summarize");
    let bins = BinningScheme::read_csv(open(&out.join(BINS))?).map_err(|e| stage_err("summarize", e))?;
    stage_summarize(&es, &bins, config.summary_rule, vocab, out)?;
    manifest.record_stage(out, "summarize", &art(&[OBSERVATIONS, COUNTS]))?;
    drop(bins);
    drop(es);

    log.note("stage 05 preseparate");
    let obs = load_observations(out, vocab)?;
    let partition = stage_preseparate(&obs, out)?;
    manifest.record_stage(out, "preseparate", &art(&[PARTITION]))?;
    if partition.modeled.is_empty() {
        return Err(stage_err("preseparate", "no users left to model"));
    }

    log.note("stage 06 emfit");
    let partition = Partition::read_csv(open(&out.join(PARTITION))?)
        .map_err(|e| stage_err("emfit", e))?;
    let modeled_set: std::collections::BTreeSet<String> =
        partition.modeled.iter().cloned().collect();
    let modeled_obs = obs.subset(&modeled_set);
    let mut em = config.em.clone();
    em.seed = config.seed;
    let (_, chosen) = stage_emfit(
        &modeled_obs,
        (config.k_min, config.k_max),
        config.k_select,
        config.k_fixed,
        &em,
        out,
    )?;
    let mut model_artifacts: Vec<PathBuf> = (config.k_min..=config.k_max)
        .map(|k| out.join(model_file(k)))
        .collect();
    model_artifacts.push(out.join(MODEL_SELECTION));
    manifest.record_stage(out, "emfit", &model_artifacts)?;

    log.note("stage 07 decode");
    let k = selected_k(out)?;
    debug_assert_eq!(k, chosen);
    let (model, _, _) = LatentMarkovModel::read_json(open(&out.join(model_file(k)))?)
        .map_err(|e| stage_err("decode", e))?;
    stage_decode(&model, &modeled_obs, &partition.modeled, config.decode, out)?;
    manifest.record_stage(out, "decode", &art(&[TRAJECTORIES]))?;

    log.note("stage 08 cluster");
    let trajectories =
        read_trajectories_csv(open(&out.join(TRAJECTORIES))?).map_err(|e| stage_err("cluster", e))?;
    let mut kmodes = config.kmodes.clone();
    kmodes.seed = config.seed;
    let clustering = stage_cluster(&trajectories, config.clusters, &kmodes, out)?;
    manifest.record_stage(out, "cluster", &art(&[CLUSTER_MODES, CLUSTER_ASSIGNMENTS]))?;

    log.note("stage 09 wss");
    stage_wss(&trajectories, (config.wss_k_min, config.wss_k_max), &kmodes, out)?;
    manifest.record_stage(out, "wss", &art(&[WSS_CURVE]))?;

    log.note("stage 10 tscore");
    let clustering = {
        let loaded = Clustering::read_assignments_csv(
            open(&out.join(CLUSTER_ASSIGNMENTS))?,
            config.clusters,
            config.seed,
        )
        .map_err(|e| stage_err("tscore", e))?;
        Clustering {
            modes: clustering.modes.clone(),
            wss: clustering.wss,
            ..loaded
        }
    };
    let grouping = naming_grouping(&partition, &clustering)?;
    let series = stage_tscore(&obs, &grouping, config.tscore_cohort, vocab, out)?;
    manifest.record_stage(out, "tscore", &art(&[TSCORES, TSCORES_DIFF]))?;

    log.note("stage 11 types");
    stage_types(
        &partition,
        &clustering,
        &series,
        &config.overrides,
        &config.naming,
        out,
    )?;
    manifest.record_stage(out, "types", &art(&[TYPES]))?;

    log.note("stage 12 summaries");
    let assignment = TypeAssignment::read_csv(open(&out.join(TYPES))?)
        .map_err(|e| stage_err("summaries", e))?;
    let es = load_events(&out.join(EVENTS_FILTERED), vocab)?;
    stage_summaries(&es, &obs, &assignment, config.tscore_cohort, vocab, out)?;
    manifest.record_stage(out, "summaries", &art(&[TYPE_SUMMARY, GINI, TSCORES_BY_TYPE]))?;

    log.note("stage 13 stats");
    stage_stats(&es, &assignment, vocab, config.bonferroni, out)?;
    manifest.record_stage(out, "stats", &art(&[STATS]))?;

    Ok(())
}
