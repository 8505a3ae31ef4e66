//! Cohort-relative behavior scores, concentration coefficients, and
//! per-group summary tables.
//!
//! The central quantity is the TScore: a group's mean per-user event count in
//! a window and label, divided by the cohort mean, times 100. A score of 100
//! means the group behaves like the cohort average in that cell.

use std::io::Write;

use crate::binning::ObservationMatrix;
use crate::corpus::{cohort_stats, EventSet, Label, LabelVocabulary};
use crate::error::{Error, Result};

/// A named partition of users into groups (clusters, behavioral types, or
/// rule pools).
#[derive(Debug, Clone)]
pub struct Grouping {
    names: Vec<String>,
    members: Vec<Vec<String>>,
}

impl Grouping {
    /// Build from ordered `(name, members)` pairs. Groups must be nonempty
    /// and disjoint.
    pub fn new(groups: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, members) in &groups {
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "group '{name}' has no users"
                )));
            }
            for m in members {
                if !seen.insert(m.clone()) {
                    return Err(Error::InvalidArgument(format!(
                        "user '{m}' appears in more than one group"
                    )));
                }
            }
        }
        let (names, members) = groups.into_iter().unzip();
        Ok(Grouping { names, members })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn members(&self, group: usize) -> &[String] {
        &self.members[group]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Which users form the cohort denominator of the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CohortScope {
    /// Every user in the observation matrix.
    AllUsers,
    /// Only users that belong to some group of the grouping.
    GroupedOnly,
}

/// Per-group, per-window, per-label score series.
///
/// A cell is `None` (undefined) exactly when the cohort mean for that window
/// and label is zero; undefined cells serialize as empty fields.
#[derive(Debug, Clone)]
pub struct TScoreSeries {
    groups: Vec<String>,
    group_sizes: Vec<usize>,
    cohort_size: usize,
    window_count: usize,
    n_labels: usize,
    /// Cohort mean events per user: `[window][label]`.
    cohort_means: Vec<Vec<f64>>,
    /// Cohort mean over all elevated labels pooled: `[window]`.
    cohort_elevated_means: Vec<f64>,
    /// Group means: `[group][window][label]`.
    group_means: Vec<Vec<Vec<f64>>>,
    group_elevated_means: Vec<Vec<f64>>,
    /// Scores: `[group][window][label]`.
    scores: Vec<Vec<Vec<Option<f64>>>>,
    elevated_scores: Vec<Vec<Option<f64>>>,
}

impl TScoreSeries {
    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn cohort_size(&self) -> usize {
        self.cohort_size
    }

    pub fn window_count(&self) -> usize {
        self.window_count
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn cohort_mean(&self, window: usize, label: usize) -> f64 {
        self.cohort_means[window][label]
    }

    /// Cohort mean over all elevated labels pooled.
    pub fn cohort_elevated_mean(&self, window: usize) -> f64 {
        self.cohort_elevated_means[window]
    }

    /// Group mean over all elevated labels pooled.
    pub fn group_elevated_mean(&self, group: usize, window: usize) -> f64 {
        self.group_elevated_means[group][window]
    }

    pub fn group_mean(&self, group: usize, window: usize, label: usize) -> f64 {
        self.group_means[group][window][label]
    }

    /// Score for one cell, `None` when the cohort mean is zero.
    pub fn score(&self, group: usize, window: usize, label: usize) -> Option<f64> {
        self.scores[group][window][label]
    }

    /// Score on all elevated labels pooled.
    pub fn elevated_score(&self, group: usize, window: usize) -> Option<f64> {
        self.elevated_scores[group][window]
    }

    /// Base-label score series of one group.
    pub fn base_series(&self, group: usize) -> Vec<Option<f64>> {
        (0..self.window_count)
            .map(|p| self.scores[group][p][0])
            .collect()
    }

    /// Pooled elevated score series of one group.
    pub fn elevated_series(&self, group: usize) -> Vec<Option<f64>> {
        self.elevated_scores[group].clone()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == name)
    }

    /// Long CSV: `group,period,label,tscore`. The pooled elevated series uses
    /// the pseudo-label `elevated`.
    pub fn write_csv<W: Write>(&self, w: W, vocabulary: &LabelVocabulary) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["group", "period", "label", "tscore"])?;
        for (g, group) in self.groups.iter().enumerate() {
            for p in 0..self.window_count {
                for l in 0..self.n_labels {
                    wtr.write_record([
                        group.as_str(),
                        &(p + 1).to_string(),
                        vocabulary.token(Label(l as u8)),
                        &fmt_opt(self.scores[g][p][l]),
                    ])?;
                }
                wtr.write_record([
                    group.as_str(),
                    &(p + 1).to_string(),
                    "elevated",
                    &fmt_opt(self.elevated_scores[g][p]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Compute the score series of `grouping` over the counts in `obs`.
///
/// Undefined cells (cohort mean zero) yield `None`; no division happens
/// there. Every group must be nonempty and every grouped user present in
/// `obs`.
pub fn tscore(obs: &ObservationMatrix, grouping: &Grouping, scope: CohortScope) -> Result<TScoreSeries> {
    if grouping.is_empty() {
        return Err(Error::InvalidArgument("grouping has no groups".into()));
    }
    let window_count = obs.window_count();
    let n_labels = obs.n_labels();

    let group_rows: Vec<Vec<usize>> = grouping
        .names()
        .iter()
        .enumerate()
        .map(|(g, name)| {
            let members = grouping.members(g);
            members
                .iter()
                .map(|m| {
                    obs.user_row(m).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "group '{name}' references user '{m}' missing from observations"
                        ))
                    })
                })
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let cohort_rows: Vec<usize> = match scope {
        CohortScope::AllUsers => (0..obs.n_users()).collect(),
        CohortScope::GroupedOnly => {
            let mut rows: Vec<usize> = group_rows.iter().flatten().copied().collect();
            rows.sort_unstable();
            rows
        }
    };
    let cohort_size = cohort_rows.len();
    if cohort_size == 0 {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }

    let mean_over = |rows: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut means = vec![vec![0.0; n_labels]; window_count];
        let mut elevated = vec![0.0; window_count];
        for &u in rows {
            for p in 0..window_count {
                let counts = obs.counts(u, p);
                for (l, &c) in counts.iter().enumerate() {
                    means[p][l] += c as f64;
                    if l > 0 {
                        elevated[p] += c as f64;
                    }
                }
            }
        }
        let n = rows.len() as f64;
        for row in means.iter_mut() {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        for v in elevated.iter_mut() {
            *v /= n;
        }
        (means, elevated)
    };

    let (cohort_means, cohort_elevated_means) = mean_over(&cohort_rows);
    let mut group_means = Vec::with_capacity(grouping.len());
    let mut group_elevated_means = Vec::with_capacity(grouping.len());
    let mut scores = Vec::with_capacity(grouping.len());
    let mut elevated_scores = Vec::with_capacity(grouping.len());
    for rows in &group_rows {
        let (means, elevated) = mean_over(rows);
        let score_rows: Vec<Vec<Option<f64>>> = (0..window_count)
            .map(|p| {
                (0..n_labels)
                    .map(|l| {
                        let mu = cohort_means[p][l];
                        if mu > 0.0 {
                            Some(means[p][l] / mu * 100.0)
                        } else {
                            None
                        }
                    })
                    .collect()
            })
            .collect();
        let elevated_rows: Vec<Option<f64>> = (0..window_count)
            .map(|p| {
                let mu = cohort_elevated_means[p];
                if mu > 0.0 {
                    Some(elevated[p] / mu * 100.0)
                } else {
                    None
                }
            })
            .collect();
        group_means.push(means);
        group_elevated_means.push(elevated);
        scores.push(score_rows);
        elevated_scores.push(elevated_rows);
    }

    Ok(TScoreSeries {
        groups: grouping.names().to_vec(),
        group_sizes: group_rows.iter().map(|r| r.len()).collect(),
        cohort_size,
        window_count,
        n_labels,
        cohort_means,
        cohort_elevated_means,
        group_means,
        group_elevated_means,
        scores,
        elevated_scores,
    })
}

/// First differences over windows, per group and label; undefined inputs
/// propagate.
#[derive(Debug, Clone)]
pub struct DifferencedScores {
    pub groups: Vec<String>,
    /// `[group][window][label]`, length `P - 1` in the window dimension.
    pub deltas: Vec<Vec<Vec<Option<f64>>>>,
    /// Pooled elevated deltas, `[group][window]`.
    pub elevated_deltas: Vec<Vec<Option<f64>>>,
}

/// First-difference a score series: `out[p] = in[p+1] - in[p]`.
pub fn difference(series: &TScoreSeries) -> Result<DifferencedScores> {
    let p = series.window_count;
    if p < 2 {
        return Err(Error::InvalidArgument(
            "differencing needs at least two windows".into(),
        ));
    }
    let diff = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(y - x),
        _ => None,
    };
    let deltas = (0..series.groups.len())
        .map(|g| {
            (0..p - 1)
                .map(|w| {
                    (0..series.n_labels)
                        .map(|l| diff(series.scores[g][w][l], series.scores[g][w + 1][l]))
                        .collect()
                })
                .collect()
        })
        .collect();
    let elevated_deltas = (0..series.groups.len())
        .map(|g| {
            (0..p - 1)
                .map(|w| diff(series.elevated_scores[g][w], series.elevated_scores[g][w + 1]))
                .collect()
        })
        .collect();
    Ok(DifferencedScores {
        groups: series.groups.clone(),
        deltas,
        elevated_deltas,
    })
}

impl DifferencedScores {
    /// Long CSV: `group,period,label,delta`; row `period=p` holds
    /// `score(p+1) - score(p)`.
    pub fn write_csv<W: Write>(&self, w: W, vocabulary: &LabelVocabulary) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["group", "period", "label", "delta"])?;
        for (g, group) in self.groups.iter().enumerate() {
            for (w_idx, row) in self.deltas[g].iter().enumerate() {
                for (l, v) in row.iter().enumerate() {
                    wtr.write_record([
                        group.as_str(),
                        &(w_idx + 1).to_string(),
                        vocabulary.token(Label(l as u8)),
                        &fmt_opt(*v),
                    ])?;
                }
                wtr.write_record([
                    group.as_str(),
                    &(w_idx + 1).to_string(),
                    "elevated",
                    &fmt_opt(self.elevated_deltas[g][w_idx]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Gini coefficient of a nonnegative distribution, via the sorted cumulative
/// form. Zero means perfect equality.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("gini of empty input".into()));
    }
    if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "gini needs finite nonnegative values".into(),
        ));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "gini undefined for an all-zero distribution".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as f64 + 1.0) * v)
        .sum();
    Ok(2.0 * weighted / (n * total) - (n + 1.0) / n)
}

/// Concentration of per-user event counts: one coefficient per label, one
/// for all elevated labels pooled, one for all events.
#[derive(Debug, Clone)]
pub struct GiniReport {
    /// Per label; `None` when that label never occurs.
    pub per_label: Vec<Option<f64>>,
    /// Elevated labels pooled; `None` when no elevated events exist.
    pub elevated: Option<f64>,
    /// All events.
    pub all_events: f64,
}

/// Gini coefficients of the per-user count distributions in `obs`.
pub fn gini_report(obs: &ObservationMatrix) -> Result<GiniReport> {
    let n_labels = obs.n_labels();
    let mut per_label_counts = vec![Vec::with_capacity(obs.n_users()); n_labels];
    let mut elevated_counts = Vec::with_capacity(obs.n_users());
    let mut totals = Vec::with_capacity(obs.n_users());
    for u in 0..obs.n_users() {
        let user_totals = obs.user_label_totals(u);
        for (l, &c) in user_totals.iter().enumerate() {
            per_label_counts[l].push(c as f64);
        }
        elevated_counts.push(user_totals.iter().skip(1).sum::<u64>() as f64);
        totals.push(user_totals.iter().sum::<u64>() as f64);
    }
    let maybe = |values: &[f64]| -> Option<f64> {
        if values.iter().any(|&v| v > 0.0) {
            Some(gini(values).unwrap())
        } else {
            None
        }
    };
    Ok(GiniReport {
        per_label: per_label_counts.iter().map(|v| maybe(v)).collect(),
        elevated: maybe(&elevated_counts),
        all_events: gini(&totals)?,
    })
}

impl GiniReport {
    /// CSV: `scope,gini`; undefined coefficients serialize as empty fields.
    pub fn write_csv<W: Write>(&self, w: W, vocabulary: &LabelVocabulary) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["scope", "gini"])?;
        for (l, v) in self.per_label.iter().enumerate() {
            wtr.write_record([vocabulary.token(Label(l as u8)), &fmt_opt(*v)])?;
        }
        wtr.write_record(["elevated", &fmt_opt(self.elevated)])?;
        wtr.write_record(["all", &self.all_events.to_string()])?;
        wtr.flush()?;
        Ok(())
    }
}

/// One row of the per-group quantitative summary.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub group: String,
    pub users: usize,
    /// Per-label mean events per user.
    pub means: Vec<f64>,
    /// Per-label population standard deviation.
    pub sds: Vec<f64>,
    /// Per-label share of the group's events; zero when the group is silent.
    pub shares: Vec<f64>,
    pub total_mean: f64,
}

/// Per-group means, population standard deviations, and label shares, with a
/// cohort row appended.
#[derive(Debug, Clone)]
pub struct TypeSummary {
    pub rows: Vec<SummaryRow>,
}

/// Summarize per-user label counts by group over the raw events.
pub fn type_summary(
    es: &EventSet,
    grouping: &Grouping,
    vocabulary: &LabelVocabulary,
) -> Result<TypeSummary> {
    let stats = cohort_stats(es, vocabulary)?;
    for (g, name) in grouping.names().iter().enumerate() {
        for m in grouping.members(g) {
            if !stats.per_user_label_counts.contains_key(m) {
                return Err(Error::InvalidArgument(format!(
                    "group '{name}' references user '{m}' with no events"
                )));
            }
        }
    }
    let n_labels = vocabulary.len();
    let row_for = |name: &str, users: Vec<&str>| -> SummaryRow {
        let n = users.len() as f64;
        let mut means = vec![0.0; n_labels];
        for u in &users {
            for (l, &c) in stats.per_user_label_counts[*u].iter().enumerate() {
                means[l] += c as f64;
            }
        }
        for m in means.iter_mut() {
            *m /= n;
        }
        let mut sds = vec![0.0; n_labels];
        for u in &users {
            for (l, &c) in stats.per_user_label_counts[*u].iter().enumerate() {
                let d = c as f64 - means[l];
                sds[l] += d * d;
            }
        }
        for s in sds.iter_mut() {
            *s = (*s / n).sqrt();
        }
        let group_total: f64 = means.iter().sum();
        let shares = if group_total > 0.0 {
            means.iter().map(|m| m / group_total).collect()
        } else {
            vec![0.0; n_labels]
        };
        SummaryRow {
            group: name.to_string(),
            users: users.len(),
            means,
            sds,
            shares,
            total_mean: group_total,
        }
    };
    let mut rows: Vec<SummaryRow> = grouping
        .names()
        .iter()
        .enumerate()
        .map(|(g, name)| {
            row_for(
                name,
                grouping.members(g).iter().map(|s| s.as_str()).collect(),
            )
        })
        .collect();
    rows.push(row_for(
        "cohort",
        stats.per_user_label_counts.keys().map(|s| s.as_str()).collect(),
    ));
    Ok(TypeSummary { rows })
}

impl TypeSummary {
    /// CSV: group, user count, then mean/sd/share per label, then total mean.
    pub fn write_csv<W: Write>(&self, w: W, vocabulary: &LabelVocabulary) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["group".to_string(), "users".to_string()];
        for token in vocabulary.tokens() {
            header.push(format!("mean_{token}"));
            header.push(format!("sd_{token}"));
            header.push(format!("share_{token}"));
        }
        header.push("total_mean".to_string());
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.group.clone(), row.users.to_string()];
            for l in 0..vocabulary.len() {
                rec.push(row.means[l].to_string());
                rec.push(row.sds[l].to_string());
                rec.push(row.shares[l].to_string());
            }
            rec.push(row.total_mean.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
