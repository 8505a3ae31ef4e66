//! Pipeline configuration: a flat `key = value` file with full defaulting,
//! overridable from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use trajektor::binning::SummaryRule;
use trajektor::corpus::{LabelVocabulary, ParseFormat, SpanPolicy};
use trajektor::lmm::{DecodeMethod, EmConfig, InitStrategy};
use trajektor::metrics::CohortScope;
use trajektor::typing::{KModesConfig, KModesInit, NamingConfig, TypeLabel};

use crate::CliError;

/// How the state count used for decoding is chosen from the fitted range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSelection {
    /// Use `k_fixed`.
    Fixed,
    /// Lowest AIC in the fitted range.
    Aic,
    /// Lowest BIC in the fitted range.
    Bic,
}

/// Fully resolved pipeline configuration.
///
/// Every default mirrors the reference analysis: bot threshold 40 events/day
/// over the full span, 100 windows, max-class summaries, a 3-state model,
/// and 5 clusters.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub format: ParseFormat,
    pub vocabulary: LabelVocabulary,
    pub span: Option<(i64, i64)>,
    pub bot_threshold: f64,
    pub span_policy: SpanPolicy,
    pub periods: usize,
    pub summary_rule: SummaryRule,
    pub k_min: usize,
    pub k_max: usize,
    pub k_fixed: usize,
    pub k_select: ModelSelection,
    pub em: EmConfig,
    pub decode: DecodeMethod,
    pub clusters: usize,
    pub kmodes: KModesConfig,
    pub wss_k_min: usize,
    pub wss_k_max: usize,
    /// Which users form the score denominator.
    pub tscore_cohort: CohortScope,
    pub naming: NamingConfig,
    /// Manual overrides: 0-based cluster index to type label.
    pub overrides: BTreeMap<usize, TypeLabel>,
    pub bonferroni: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::new(),
            format: ParseFormat::Csv,
            vocabulary: LabelVocabulary::default(),
            span: None,
            bot_threshold: 40.0,
            span_policy: SpanPolicy::FullSpan,
            periods: 100,
            summary_rule: SummaryRule::MaxClass,
            k_min: 3,
            k_max: 3,
            k_fixed: 3,
            k_select: ModelSelection::Fixed,
            em: EmConfig::default(),
            decode: DecodeMethod::Viterbi,
            clusters: 5,
            kmodes: KModesConfig::default(),
            wss_k_min: 2,
            wss_k_max: 10,
            tscore_cohort: CohortScope::AllUsers,
            naming: NamingConfig::default(),
            overrides: BTreeMap::new(),
            bonferroni: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Load a config file and apply `overrides` (`key=value` pairs) on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (no, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Validation(format!(
                        "{}:{}: expected 'key = value', got '{raw}'",
                        path.display(),
                        no + 1
                    ))
                })?;
                pairs.push((key.trim().to_string(), value.trim().to_string()));
            }
        }
        pairs.extend(overrides.iter().cloned());

        let mut config = PipelineConfig::default();
        for (key, value) in &pairs {
            config.apply(key, value)?;
        }
        Ok(config)
    }

    /// Apply one `key = value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |what: &str| CliError::Validation(format!("bad value '{value}' for {what}"));
        let parse_usize = |what: &str| value.parse::<usize>().map_err(|_| bad(what));
        let parse_f64 = |what: &str| value.parse::<f64>().map_err(|_| bad(what));
        let parse_i64 = |what: &str| value.parse::<i64>().map_err(|_| bad(what));
        let parse_u64 = |what: &str| value.parse::<u64>().map_err(|_| bad(what));
        let parse_bool = |what: &str| match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad(what)),
        };
        match key {
            "input" => self.input = PathBuf::from(value),
            "labels" => {
                let tokens: Vec<&str> = value.split(',').map(|t| t.trim()).collect();
                self.vocabulary = LabelVocabulary::new(&tokens)
                    .map_err(|e| CliError::Validation(e.to_string()))?;
            }
            "format" => {
                self.format = match value {
                    "csv" => ParseFormat::Csv,
                    "jsonl" => ParseFormat::Jsonl,
                    _ => return Err(bad("format (csv|jsonl)")),
                }
            }
            "span_start" => {
                let start = parse_i64("span_start")?;
                let end = self.span.map(|(_, e)| e).unwrap_or(i64::MAX);
                self.span = Some((start, end));
            }
            "span_end" => {
                let end = parse_i64("span_end")?;
                let start = self.span.map(|(s, _)| s).unwrap_or(i64::MIN);
                self.span = Some((start, end));
            }
            "bot_threshold" => self.bot_threshold = parse_f64("bot_threshold")?,
            "span_policy" => {
                self.span_policy = match value {
                    "full_span" => SpanPolicy::FullSpan,
                    "user_span" => SpanPolicy::UserSpan,
                    _ => return Err(bad("span_policy (full_span|user_span)")),
                }
            }
            "periods" => self.periods = parse_usize("periods")?,
            "summary_rule" => {
                self.summary_rule = match value {
                    "max_class" => SummaryRule::MaxClass,
                    _ => match value.strip_prefix("threshold:") {
                        Some(q) => SummaryRule::Threshold(
                            q.parse::<f64>().map_err(|_| bad("summary_rule threshold"))?,
                        ),
                        None => return Err(bad("summary_rule (max_class|threshold:Q)")),
                    },
                }
            }
            "k_min" => self.k_min = parse_usize("k_min")?,
            "k_max" => self.k_max = parse_usize("k_max")?,
            "k_fixed" => self.k_fixed = parse_usize("k_fixed")?,
            "k_select" => {
                self.k_select = match value {
                    "fixed" => ModelSelection::Fixed,
                    "aic" => ModelSelection::Aic,
                    "bic" => ModelSelection::Bic,
                    _ => return Err(bad("k_select (fixed|aic|bic)")),
                }
            }
            "em_restarts" => self.em.restarts = parse_usize("em_restarts")?,
            "em_max_iter" => self.em.max_iter = parse_usize("em_max_iter")?,
            "em_tol" => self.em.tol = parse_f64("em_tol")?,
            "em_init" => {
                self.em.init = match value {
                    "random" => InitStrategy::Random,
                    "spread" => InitStrategy::Spread,
                    _ => return Err(bad("em_init (random|spread)")),
                }
            }
            "decode" => {
                self.decode = match value {
                    "viterbi" => DecodeMethod::Viterbi,
                    "posterior" => DecodeMethod::Posterior,
                    _ => return Err(bad("decode (viterbi|posterior)")),
                }
            }
            "clusters" => self.clusters = parse_usize("clusters")?,
            "kmodes_restarts" => self.kmodes.restarts = parse_usize("kmodes_restarts")?,
            "kmodes_max_iter" => self.kmodes.max_iter = parse_usize("kmodes_max_iter")?,
            "kmodes_init" => {
                self.kmodes.init = match value {
                    "random" => KModesInit::Random,
                    "frequency" => KModesInit::Frequency,
                    _ => return Err(bad("kmodes_init (random|frequency)")),
                }
            }
            "wss_k_min" => self.wss_k_min = parse_usize("wss_k_min")?,
            "wss_k_max" => self.wss_k_max = parse_usize("wss_k_max")?,
            "tscore_cohort" => {
                self.tscore_cohort = match value {
                    "all" => CohortScope::AllUsers,
                    "grouped" => CohortScope::GroupedOnly,
                    _ => return Err(bad("tscore_cohort (all|grouped)")),
                }
            }
            "slope_threshold" => self.naming.slope_threshold = parse_f64("slope_threshold")?,
            "bonferroni" => self.bonferroni = parse_bool("bonferroni")?,
            "seed" => {
                self.seed = parse_u64("seed")?;
                self.em.seed = self.seed;
                self.kmodes.seed = self.seed;
            }
            _ => match key.strip_prefix("override.") {
                Some(cluster) => {
                    let c: usize = cluster.parse().map_err(|_| {
                        CliError::Validation(format!("bad override cluster '{cluster}'"))
                    })?;
                    if c == 0 {
                        return Err(CliError::Validation(
                            "override clusters are 1-based".into(),
                        ));
                    }
                    let label = TypeLabel::parse(value).ok_or_else(|| {
                        CliError::Validation(format!("unknown type label '{value}'"))
                    })?;
                    self.overrides.insert(c - 1, label);
                }
                None => {
                    return Err(CliError::Validation(format!("unknown config key '{key}'")))
                }
            },
        }
        Ok(())
    }

    /// Validate cross-field constraints before a run.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.input.as_os_str().is_empty() {
            return Err(CliError::Validation("no input path configured".into()));
        }
        if !self.input.exists() {
            return Err(CliError::Validation(format!(
                "input {} does not exist",
                self.input.display()
            )));
        }
        if self.periods == 0 {
            return Err(CliError::Validation("periods must be positive".into()));
        }
        if !(self.bot_threshold > 0.0) {
            return Err(CliError::Validation("bot_threshold must be positive".into()));
        }
        if let SummaryRule::Threshold(q) = self.summary_rule {
            if !(q > 0.0 && q <= 1.0) {
                return Err(CliError::Validation(format!(
                    "summary threshold {q} outside (0, 1]"
                )));
            }
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(CliError::Validation(format!(
                "bad state range {}..={}",
                self.k_min, self.k_max
            )));
        }
        if self.k_select == ModelSelection::Fixed
            && !(self.k_min..=self.k_max).contains(&self.k_fixed)
        {
            return Err(CliError::Validation(format!(
                "k_fixed {} outside fitted range {}..={}",
                self.k_fixed, self.k_min, self.k_max
            )));
        }
        if self.clusters == 0 {
            return Err(CliError::Validation("clusters must be positive".into()));
        }
        if self.wss_k_min < 2 || self.wss_k_min > self.wss_k_max {
            return Err(CliError::Validation(format!(
                "bad wss range {}..={}",
                self.wss_k_min, self.wss_k_max
            )));
        }
        if self.em.restarts == 0 || self.kmodes.restarts == 0 {
            return Err(CliError::Validation("restarts must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic snapshot of every setting, for the run manifest. The
    /// output directory is intentionally not part of the snapshot.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("input", self.input.display().to_string());
        put("labels", self.vocabulary.tokens().join(","));
        put(
            "format",
            match self.format {
                ParseFormat::Csv => "csv".into(),
                ParseFormat::Jsonl => "jsonl".into(),
            },
        );
        if let Some((s, e)) = self.span {
            put("span_start", s.to_string());
            put("span_end", e.to_string());
        }
        put("bot_threshold", self.bot_threshold.to_string());
        put(
            "span_policy",
            match self.span_policy {
                SpanPolicy::FullSpan => "full_span".into(),
                SpanPolicy::UserSpan => "user_span".into(),
            },
        );
        put("periods", self.periods.to_string());
        put(
            "summary_rule",
            match self.summary_rule {
                SummaryRule::MaxClass => "max_class".into(),
                SummaryRule::Threshold(q) => format!("threshold:{q}"),
            },
        );
        put("k_min", self.k_min.to_string());
        put("k_max", self.k_max.to_string());
        put("k_fixed", self.k_fixed.to_string());
        put(
            "k_select",
            match self.k_select {
                ModelSelection::Fixed => "fixed".into(),
                ModelSelection::Aic => "aic".into(),
                ModelSelection::Bic => "bic".into(),
            },
        );
        put("em_restarts", self.em.restarts.to_string());
        put("em_max_iter", self.em.max_iter.to_string());
        put("em_tol", self.em.tol.to_string());
        put(
            "em_init",
            match self.em.init {
                InitStrategy::Random => "random".into(),
                InitStrategy::Spread => "spread".into(),
            },
        );
        put(
            "decode",
            match self.decode {
                DecodeMethod::Viterbi => "viterbi".into(),
                DecodeMethod::Posterior => "posterior".into(),
            },
        );
        put("clusters", self.clusters.to_string());
        put("kmodes_restarts", self.kmodes.restarts.to_string());
        put("kmodes_max_iter", self.kmodes.max_iter.to_string());
        put(
            "kmodes_init",
            match self.kmodes.init {
                KModesInit::Random => "random".into(),
                KModesInit::Frequency => "frequency".into(),
            },
        );
        put("wss_k_min", self.wss_k_min.to_string());
        put("wss_k_max", self.wss_k_max.to_string());
        put(
            "tscore_cohort",
            match self.tscore_cohort {
                CohortScope::AllUsers => "all".into(),
                CohortScope::GroupedOnly => "grouped".into(),
            },
        );
        put("slope_threshold", self.naming.slope_threshold.to_string());
        put("bonferroni", self.bonferroni.to_string());
        put("seed", self.seed.to_string());
        for (c, label) in &self.overrides {
            map.insert(format!("override.{}", c + 1), label.name().to_string());
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn defaults_mirror_reference_choices() {
        let config = PipelineConfig::default();
        assert_eq!(config.bot_threshold, 40.0);
        assert_eq!(config.periods, 100);
        assert_eq!(config.k_fixed, 3);
        assert_eq!(config.clusters, 5);
        assert!(matches!(config.summary_rule, SummaryRule::MaxClass));
    }

    #[test]
    fn parses_file_with_comments_and_overrides() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# analysis setup").unwrap();
        writeln!(file, "periods = 50").unwrap();
        writeln!(file, "summary_rule = threshold:0.05").unwrap();
        writeln!(file, "override.2 = High  # pin cluster 2").unwrap();
        let config = PipelineConfig::load(
            Some(file.path()),
            &[("seed".to_string(), "7".to_string())],
        )
        .unwrap();
        assert_eq!(config.periods, 50);
        assert!(matches!(config.summary_rule, SummaryRule::Threshold(q) if q == 0.05));
        assert_eq!(config.overrides[&1], TypeLabel::High);
        assert_eq!(config.seed, 7);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut config = PipelineConfig::default();
        assert!(config.apply("not_a_key", "1").is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut config = PipelineConfig::default();
        config.input = PathBuf::from("/definitely/not/here.csv");
        assert!(config.validate().is_err());
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "user_id,timestamp,label").unwrap();
        config.input = f.path().to_path_buf();
        config.k_min = 4;
        config.k_max = 2;
        assert!(config.validate().is_err());
        config.k_min = 3;
        config.k_max = 3;
        assert!(config.validate().is_ok());
    }

    #[test]
    fn snapshot_is_deterministic() {
        let config = PipelineConfig::default();
        assert_eq!(config.snapshot(), config.snapshot());
    }
}
