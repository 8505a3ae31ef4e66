//! Partitioning users into behavioral types: rule-based pre-separation plus
//! k-modes clustering of decoded state trajectories, with automatic naming of
//! the clustered types.

mod kmodes;

pub use kmodes::{kmodes, KModesConfig, KModesInit, KModesOutcome};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::binning::ObservationMatrix;
use crate::error::{Error, Result};
use crate::lmm::StateTrajectory;
use crate::metrics::TScoreSeries;

/// Rule-based split of users made before any model fitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    /// Users whose raw events never leave the base class.
    pub none_only: Vec<String>,
    /// Users with elevated events but none in the highest class.
    pub none_implicit_only: Vec<String>,
    /// Everyone else; these users feed the latent Markov model.
    pub modeled: Vec<String>,
}

impl Partition {
    /// Group name of a user, if present.
    pub fn group_of(&self, user: &str) -> Option<&'static str> {
        if self.none_only.iter().any(|u| u == user) {
            Some("none_only")
        } else if self.none_implicit_only.iter().any(|u| u == user) {
            Some("none_implicit_only")
        } else if self.modeled.iter().any(|u| u == user) {
            Some("modeled")
        } else {
            None
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["user_id", "group"])?;
        let mut rows: Vec<(&String, &str)> = self
            .none_only
            .iter()
            .map(|u| (u, "none_only"))
            .chain(self.none_implicit_only.iter().map(|u| (u, "none_implicit_only")))
            .chain(self.modeled.iter().map(|u| (u, "modeled")))
            .collect();
        rows.sort();
        for (user, group) in rows {
            wtr.write_record([user.as_str(), group])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut partition = Partition {
            none_only: Vec::new(),
            none_implicit_only: Vec::new(),
            modeled: Vec::new(),
        };
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let user = record
                .get(0)
                .ok_or(Error::MalformedLine {
                    line,
                    reason: "missing user_id".into(),
                })?
                .to_string();
            match record.get(1) {
                Some("none_only") => partition.none_only.push(user),
                Some("none_implicit_only") => partition.none_implicit_only.push(user),
                Some("modeled") => partition.modeled.push(user),
                other => {
                    return Err(Error::MalformedLine {
                        line,
                        reason: format!("unknown partition group {other:?}"),
                    })
                }
            }
        }
        Ok(partition)
    }
}

/// Split users on their raw event counts: no elevated events at all, elevated
/// but never the top class, or at least one top-class event.
pub fn pre_separate(obs: &ObservationMatrix) -> Partition {
    let top = obs.n_labels() - 1;
    let mut partition = Partition {
        none_only: Vec::new(),
        none_implicit_only: Vec::new(),
        modeled: Vec::new(),
    };
    for (row, user) in obs.users().iter().enumerate() {
        let totals = obs.user_label_totals(row);
        let elevated: u64 = totals.iter().skip(1).sum();
        if elevated == 0 {
            partition.none_only.push(user.clone());
        } else if totals[top] == 0 {
            partition.none_implicit_only.push(user.clone());
        } else {
            partition.modeled.push(user.clone());
        }
    }
    partition
}

/// A k-modes clustering of user trajectories.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub k: usize,
    /// `modes[c][p]`: 0-based state of cluster `c` at window `p`.
    pub modes: Vec<Vec<usize>>,
    /// User id to 0-based cluster index.
    pub assignment: BTreeMap<String, usize>,
    pub wss: f64,
    pub seed: u64,
}

impl Clustering {
    /// Members of each cluster, in user order.
    pub fn members(&self) -> Vec<Vec<String>> {
        let mut members = vec![Vec::new(); self.k];
        for (user, &c) in &self.assignment {
            members[c].push(user.clone());
        }
        members
    }

    /// External name of a cluster (1-based).
    pub fn cluster_name(c: usize) -> String {
        format!("cluster_{}", c + 1)
    }

    /// Modes CSV: `cluster_id,p1..pP` with 1-based ids and states.
    pub fn write_modes_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let p = self.modes.first().map(|m| m.len()).unwrap_or(0);
        let mut header = vec!["cluster_id".to_string()];
        header.extend((1..=p).map(|i| format!("p{i}")));
        wtr.write_record(&header)?;
        for (c, mode) in self.modes.iter().enumerate() {
            let mut rec = vec![(c + 1).to_string()];
            rec.extend(mode.iter().map(|s| (s + 1).to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Assignments CSV: `user_id,cluster_id` with 1-based cluster ids.
    pub fn write_assignments_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["user_id", "cluster_id"])?;
        for (user, &c) in &self.assignment {
            wtr.write_record([user.as_str(), &(c + 1).to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_assignments_csv<R: BufRead>(r: R, k: usize, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut assignment = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let user = record
                .get(0)
                .ok_or(Error::MalformedLine {
                    line,
                    reason: "missing user_id".into(),
                })?
                .to_string();
            let c: usize = record
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or(Error::MalformedLine {
                    line,
                    reason: "bad cluster_id".into(),
                })?;
            if c == 0 || c > k {
                return Err(Error::MalformedLine {
                    line,
                    reason: format!("cluster_id {c} out of 1..={k}"),
                });
            }
            assignment.insert(user, c - 1);
        }
        Ok(Clustering {
            k,
            modes: Vec::new(),
            assignment,
            wss: f64::NAN,
            seed,
        })
    }
}

/// Cluster decoded trajectories. Thin wrapper over [`kmodes`] that carries
/// user ids along.
pub fn kmodes_fit(
    trajectories: &[StateTrajectory],
    k: usize,
    config: &KModesConfig,
) -> Result<Clustering> {
    let points: Vec<Vec<usize>> = trajectories.iter().map(|t| t.states.clone()).collect();
    let outcome = kmodes(&points, k, config)?;
    let assignment = trajectories
        .iter()
        .zip(&outcome.assignment)
        .map(|(t, &c)| (t.user_id.clone(), c))
        .collect();
    Ok(Clustering {
        k,
        modes: outcome.modes,
        assignment,
        wss: outcome.wss,
        seed: config.seed,
    })
}

/// One point of the cluster-count selection curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WssPoint {
    pub k: usize,
    pub wss: f64,
    /// Set when this WSS exceeds the previous k's; best-of-restarts values
    /// should be non-increasing, so a rise means the restart budget was too
    /// small.
    pub under_restarted: bool,
}

/// Best-of-restarts WSS for each cluster count in `k_range`.
pub fn wss_curve(
    trajectories: &[StateTrajectory],
    k_range: std::ops::RangeInclusive<usize>,
    config: &KModesConfig,
) -> Result<Vec<WssPoint>> {
    let points: Vec<Vec<usize>> = trajectories.iter().map(|t| t.states.clone()).collect();
    let mut curve: Vec<WssPoint> = Vec::new();
    for k in k_range {
        let outcome = kmodes(&points, k, config)?;
        let under_restarted = curve
            .last()
            .map(|prev| outcome.wss > prev.wss)
            .unwrap_or(false);
        curve.push(WssPoint {
            k,
            wss: outcome.wss,
            under_restarted,
        });
    }
    Ok(curve)
}

pub fn write_wss_curve_csv<W: Write>(w: W, curve: &[WssPoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["k", "wss", "under_restarted"])?;
    for point in curve {
        wtr.write_record([
            point.k.to_string(),
            point.wss.to_string(),
            point.under_restarted.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// The seven behavioral type labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TypeLabel {
    None,
    VeryLow,
    Low,
    High,
    VeryHigh,
    Escalating,
    DeEscalating,
}

impl TypeLabel {
    pub const ALL: [TypeLabel; 7] = [
        TypeLabel::None,
        TypeLabel::VeryLow,
        TypeLabel::Low,
        TypeLabel::High,
        TypeLabel::VeryHigh,
        TypeLabel::Escalating,
        TypeLabel::DeEscalating,
    ];

    /// The five labels available to clustered users.
    pub const CLUSTERED: [TypeLabel; 5] = [
        TypeLabel::Low,
        TypeLabel::High,
        TypeLabel::VeryHigh,
        TypeLabel::Escalating,
        TypeLabel::DeEscalating,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TypeLabel::None => "None",
            TypeLabel::VeryLow => "Very Low",
            TypeLabel::Low => "Low",
            TypeLabel::High => "High",
            TypeLabel::VeryHigh => "Very High",
            TypeLabel::Escalating => "Escalating",
            TypeLabel::DeEscalating => "De-escalating",
        }
    }

    pub fn parse(name: &str) -> Option<TypeLabel> {
        TypeLabel::ALL.iter().copied().find(|t| t.name() == name)
    }
}

impl std::fmt::Display for TypeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a user's type label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Rule,
    Heuristic,
    ManualOverride,
}

impl Provenance {
    pub fn token(&self) -> &'static str {
        match self {
            Provenance::Rule => "rule",
            Provenance::Heuristic => "heuristic",
            Provenance::ManualOverride => "manual_override",
        }
    }
}

/// Final user-to-type mapping.
#[derive(Debug, Clone)]
pub struct TypeAssignment {
    /// user id -> (type, cluster index when clustered, provenance).
    pub assignments: BTreeMap<String, (TypeLabel, Option<usize>, Provenance)>,
    /// Cluster index -> assigned label (for reporting).
    pub cluster_labels: BTreeMap<usize, TypeLabel>,
}

impl TypeAssignment {
    /// Users per type, in canonical type order, empty types included.
    pub fn members_by_type(&self) -> Vec<(TypeLabel, Vec<String>)> {
        TypeLabel::ALL
            .iter()
            .map(|&label| {
                let members = self
                    .assignments
                    .iter()
                    .filter(|(_, (l, _, _))| *l == label)
                    .map(|(u, _)| u.clone())
                    .collect();
                (label, members)
            })
            .collect()
    }

    /// Share of users per type, canonical order.
    pub fn shares(&self) -> Vec<(TypeLabel, f64)> {
        let total = self.assignments.len() as f64;
        self.members_by_type()
            .into_iter()
            .map(|(label, members)| (label, members.len() as f64 / total))
            .collect()
    }

    /// CSV: `user_id,type,cluster_id,provenance`; cluster id is 1-based and
    /// empty for pre-separated users.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["user_id", "type", "cluster_id", "provenance"])?;
        for (user, (label, cluster, provenance)) in &self.assignments {
            wtr.write_record([
                user.as_str(),
                label.name(),
                &cluster.map(|c| (c + 1).to_string()).unwrap_or_default(),
                provenance.token(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut assignments = BTreeMap::new();
        let mut cluster_labels = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |reason: String| Error::MalformedLine { line, reason };
            let user = record
                .get(0)
                .ok_or_else(|| bad("missing user_id".into()))?
                .to_string();
            let label = record
                .get(1)
                .and_then(TypeLabel::parse)
                .ok_or_else(|| bad(format!("unknown type '{}'", record.get(1).unwrap_or(""))))?;
            let cluster = match record.get(2) {
                None | Some("") => None,
                Some(raw) => {
                    let c: usize = raw
                        .parse()
                        .map_err(|_| bad(format!("bad cluster_id '{raw}'")))?;
                    if c == 0 {
                        return Err(bad("cluster ids are 1-based".into()));
                    }
                    Some(c - 1)
                }
            };
            let provenance = match record.get(3) {
                Some("rule") => Provenance::Rule,
                Some("heuristic") => Provenance::Heuristic,
                Some("manual_override") => Provenance::ManualOverride,
                other => return Err(bad(format!("unknown provenance {other:?}"))),
            };
            if let Some(c) = cluster {
                cluster_labels.insert(c, label);
            }
            assignments.insert(user, (label, cluster, provenance));
        }
        Ok(TypeAssignment {
            assignments,
            cluster_labels,
        })
    }
}

/// Controls for the automatic naming of clustered types.
#[derive(Debug, Clone)]
pub struct NamingConfig {
    /// Minimum absolute least-squares slope (score units per window) of the
    /// elevated-minus-base score series for a cluster to count as trending.
    pub slope_threshold: f64,
}

impl Default for NamingConfig {
    fn default() -> Self {
        NamingConfig {
            slope_threshold: 0.5,
        }
    }
}

/// Ordinary least-squares slope over the defined points of a series.
fn ols_slope(series: &[Option<f64>]) -> Option<f64> {
    let points: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|y| (i as f64, y)))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let var: f64 = points.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    if var == 0.0 {
        return None;
    }
    Some(cov / var)
}

/// Per-cluster trend statistics used by [`assign_types`].
#[derive(Debug, Clone)]
pub struct ClusterTrend {
    pub cluster: usize,
    /// Slope of the elevated score relative to the base score, per window.
    pub slope: f64,
    /// Mean pooled elevated score over defined windows.
    pub mean_elevated: f64,
}

fn cluster_trends(clustering: &Clustering, tscores: &TScoreSeries) -> Result<Vec<ClusterTrend>> {
    let mut trends = Vec::with_capacity(clustering.k);
    for c in 0..clustering.k {
        let name = Clustering::cluster_name(c);
        let g = tscores.position(&name).ok_or_else(|| {
            Error::InvalidArgument(format!("score series lacks group '{name}'"))
        })?;
        let elevated = tscores.elevated_series(g);
        let base = tscores.base_series(g);
        let relative: Vec<Option<f64>> = elevated
            .iter()
            .zip(&base)
            .map(|(e, b)| match (e, b) {
                (Some(e), Some(b)) => Some(e - b),
                _ => None,
            })
            .collect();
        let slope = ols_slope(&relative).ok_or_else(|| {
            Error::TypeNaming(format!("cluster {} has no usable trend series", c + 1))
        })?;
        let defined: Vec<f64> = elevated.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::TypeNaming(format!(
                "cluster {} has no defined elevated scores",
                c + 1
            )));
        }
        let mean_elevated = defined.iter().sum::<f64>() / defined.len() as f64;
        trends.push(ClusterTrend {
            cluster: c,
            slope,
            mean_elevated,
        });
    }
    Ok(trends)
}

/// Assign the seven type labels.
///
/// Pre-separated pools map by rule; clusters are named by trend (slope beyond
/// the configured threshold makes a cluster Escalating or De-escalating) and
/// the remaining clusters rank into the volume labels by their mean elevated
/// score. Manual `overrides` (0-based cluster to label) win and are recorded
/// as such. The heuristic requires exactly five clusters; with any other k,
/// every cluster must be overridden.
pub fn assign_types(
    partition: &Partition,
    clustering: &Clustering,
    tscores: &TScoreSeries,
    overrides: &BTreeMap<usize, TypeLabel>,
    config: &NamingConfig,
) -> Result<TypeAssignment> {
    // The clustering must cover exactly the modeled users.
    let modeled: std::collections::BTreeSet<&String> = partition.modeled.iter().collect();
    let clustered: std::collections::BTreeSet<&String> = clustering.assignment.keys().collect();
    if modeled != clustered {
        return Err(Error::InvalidArgument(format!(
            "clustering covers {} users but the modeled partition has {}",
            clustered.len(),
            modeled.len()
        )));
    }
    for (&c, label) in overrides {
        if c >= clustering.k {
            return Err(Error::InvalidArgument(format!(
                "override references cluster {} but k = {}",
                c + 1,
                clustering.k
            )));
        }
        if !TypeLabel::CLUSTERED.contains(label) {
            return Err(Error::InvalidArgument(format!(
                "override label '{label}' is reserved for pre-separated users"
            )));
        }
    }

    let mut cluster_labels: BTreeMap<usize, (TypeLabel, Provenance)> = overrides
        .iter()
        .map(|(&c, &label)| (c, (label, Provenance::ManualOverride)))
        .collect();
    {
        let mut seen = std::collections::BTreeSet::new();
        for (label, _) in cluster_labels.values() {
            if !seen.insert(*label) {
                return Err(Error::TypeNaming(format!(
                    "override label '{label}' used for more than one cluster"
                )));
            }
        }
    }

    let pending: Vec<usize> = (0..clustering.k)
        .filter(|c| !cluster_labels.contains_key(c))
        .collect();
    if !pending.is_empty() {
        if clustering.k != 5 {
            return Err(Error::TypeNaming(format!(
                "automatic naming expects 5 clusters, got {}; override every cluster",
                clustering.k
            )));
        }
        let trends = cluster_trends(clustering, tscores)?;
        let taken: std::collections::BTreeSet<TypeLabel> =
            cluster_labels.values().map(|(l, _)| *l).collect();

        let mut escalating: Vec<usize> = Vec::new();
        let mut de_escalating: Vec<usize> = Vec::new();
        let mut stable: Vec<&ClusterTrend> = Vec::new();
        for trend in trends.iter().filter(|t| pending.contains(&t.cluster)) {
            if trend.slope > config.slope_threshold && !taken.contains(&TypeLabel::Escalating) {
                escalating.push(trend.cluster);
            } else if trend.slope < -config.slope_threshold
                && !taken.contains(&TypeLabel::DeEscalating)
            {
                de_escalating.push(trend.cluster);
            } else {
                stable.push(trend);
            }
        }
        if escalating.len() > 1 {
            return Err(Error::TypeNaming(format!(
                "clusters {:?} all trend upward",
                escalating.iter().map(|c| c + 1).collect::<Vec<_>>()
            )));
        }
        if de_escalating.len() > 1 {
            return Err(Error::TypeNaming(format!(
                "clusters {:?} all trend downward",
                de_escalating.iter().map(|c| c + 1).collect::<Vec<_>>()
            )));
        }
        if let Some(&c) = escalating.first() {
            cluster_labels.insert(c, (TypeLabel::Escalating, Provenance::Heuristic));
        }
        if let Some(&c) = de_escalating.first() {
            cluster_labels.insert(c, (TypeLabel::DeEscalating, Provenance::Heuristic));
        }

        let mut rank_labels: Vec<TypeLabel> = [TypeLabel::Low, TypeLabel::High, TypeLabel::VeryHigh]
            .into_iter()
            .filter(|l| {
                !cluster_labels
                    .values()
                    .any(|(assigned, _)| assigned == l)
            })
            .collect();
        if stable.len() != rank_labels.len() {
            return Err(Error::TypeNaming(format!(
                "{} stable clusters but {} volume labels available",
                stable.len(),
                rank_labels.len()
            )));
        }
        stable.sort_by(|a, b| a.mean_elevated.partial_cmp(&b.mean_elevated).unwrap());
        rank_labels.sort();
        for (trend, label) in stable.iter().zip(rank_labels) {
            cluster_labels.insert(trend.cluster, (label, Provenance::Heuristic));
        }
    }

    let mut assignments = BTreeMap::new();
    for user in &partition.none_only {
        assignments.insert(user.clone(), (TypeLabel::None, None, Provenance::Rule));
    }
    for user in &partition.none_implicit_only {
        assignments.insert(user.clone(), (TypeLabel::VeryLow, None, Provenance::Rule));
    }
    for (user, &c) in &clustering.assignment {
        let (label, provenance) = cluster_labels[&c];
        assignments.insert(user.clone(), (label, Some(c), provenance));
    }
    Ok(TypeAssignment {
        assignments,
        cluster_labels: cluster_labels
            .into_iter()
            .map(|(c, (l, _))| (c, l))
            .collect(),
    })
}

/// Adjusted Rand index between two flat partitions of the same points.
/// 1 means identical partitions; 0 is the chance level.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same points");
    let n = a.len();
    let ka = a.iter().max().map(|&m| m + 1).unwrap_or(0);
    let kb = b.iter().max().map(|&m| m + 1).unwrap_or(0);
    let mut table = vec![vec![0u64; kb]; ka];
    for i in 0..n {
        table[a[i]][b[i]] += 1;
    }
    let choose2 = |x: u64| -> f64 { (x * x.saturating_sub(1)) as f64 / 2.0 };
    let sum_ij: f64 = table.iter().flatten().map(|&x| choose2(x)).sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EventRecord, EventSet, Label, LabelVocabulary};
    use crate::metrics::{tscore, CohortScope, Grouping};

    fn obs_with_counts(rows: Vec<(&str, [u64; 3])>) -> ObservationMatrix {
        let mut events = Vec::new();
        for (user, counts) in &rows {
            for (l, &c) in counts.iter().enumerate() {
                for i in 0..c {
                    events.push(EventRecord {
                        user_id: user.to_string(),
                        timestamp: i as i64,
                        label: Label(l as u8),
                    });
                }
            }
        }
        let es = EventSet::from_events(events, None).unwrap();
        let bins = crate::binning::build_bins(&es, 1).unwrap();
        crate::binning::summarize(
            &es,
            &bins,
            crate::binning::SummaryRule::MaxClass,
            &LabelVocabulary::default(),
        )
        .unwrap()
    }

    #[test]
    fn pre_separation_rules() {
        let obs = obs_with_counts(vec![
            ("pure", [50, 0, 0]),
            ("mild", [50, 2, 0]),
            ("hot", [50, 0, 1]),
        ]);
        let partition = pre_separate(&obs);
        assert_eq!(partition.none_only, vec!["pure".to_string()]);
        assert_eq!(partition.none_implicit_only, vec!["mild".to_string()]);
        assert_eq!(partition.modeled, vec!["hot".to_string()]);
    }

    #[test]
    fn pre_separation_partitions_exactly() {
        let obs = obs_with_counts(vec![
            ("a", [5, 0, 0]),
            ("b", [5, 1, 0]),
            ("c", [5, 1, 2]),
            ("d", [0, 0, 3]),
        ]);
        let partition = pre_separate(&obs);
        let total =
            partition.none_only.len() + partition.none_implicit_only.len() + partition.modeled.len();
        assert_eq!(total, 4);
        for user in ["a", "b", "c", "d"] {
            assert!(partition.group_of(user).is_some());
        }
    }

    fn trajectories(specs: &[(&str, Vec<usize>)]) -> Vec<StateTrajectory> {
        specs
            .iter()
            .map(|(u, states)| StateTrajectory {
                user_id: u.to_string(),
                states: states.clone(),
            })
            .collect()
    }

    #[test]
    fn wss_curve_hits_zero_at_distinct_count() {
        let trajs = trajectories(&[
            ("a", vec![0, 0, 0]),
            ("b", vec![1, 1, 1]),
            ("c", vec![2, 2, 2]),
            ("d", vec![0, 0, 0]),
            ("e", vec![1, 1, 1]),
        ]);
        let curve = wss_curve(&trajs, 2..=3, &KModesConfig::default()).unwrap();
        assert_eq!(curve.len(), 2);
        assert!(curve[0].wss > 0.0);
        assert_eq!(curve[1].wss, 0.0);
        assert!(!curve[1].under_restarted);
    }

    #[test]
    fn duplicated_trajectories_double_the_curve() {
        let base = vec![
            ("a", vec![0usize, 0, 1, 2]),
            ("b", vec![1, 1, 1, 1]),
            ("c", vec![2, 2, 0, 0]),
            ("d", vec![0, 2, 2, 2]),
        ];
        let trajs = trajectories(&base);
        let doubled: Vec<StateTrajectory> = trajs
            .iter()
            .cloned()
            .chain(trajs.iter().map(|t| StateTrajectory {
                user_id: format!("{}2", t.user_id),
                states: t.states.clone(),
            }))
            .collect();
        let cfg = KModesConfig::default();
        let single = wss_curve(&trajs, 2..=3, &cfg).unwrap();
        let double = wss_curve(&doubled, 2..=3, &cfg).unwrap();
        for (s, d) in single.iter().zip(&double) {
            assert!((d.wss - 2.0 * s.wss).abs() < 1e-9, "k={}: {} vs {}", s.k, s.wss, d.wss);
        }
    }

    /// Build a synthetic 5-cluster setting with controllable score series.
    fn naming_fixture() -> (Partition, Clustering, TScoreSeries) {
        // 5 clusters, one user each, plus pools. Counts are shaped so the
        // per-window elevated-vs-base scores produce: low, high, very high,
        // escalating, de-escalating.
        let windows = 8;
        let mut events = Vec::new();
        let mut push = |user: &str, p: usize, label: u8, c: u64| {
            for i in 0..c {
                events.push(EventRecord {
                    user_id: user.to_string(),
                    timestamp: (p as i64) * 1_000 + i as i64 % 900,
                    label: Label(label),
                });
            }
        };
        for p in 0..windows {
            push("pool_none", p, 0, 10);
            push("pool_mild", p, 0, 8);
            if p == 0 {
                push("pool_mild", p, 1, 1);
            }
            // Stable low volume.
            push("c_low", p, 0, 10);
            push("c_low", p, 2, 1);
            // Stable high.
            push("c_high", p, 0, 10);
            push("c_high", p, 1, 6);
            push("c_high", p, 2, 6);
            // Stable very high.
            push("c_vhigh", p, 0, 10);
            push("c_vhigh", p, 1, 12);
            push("c_vhigh", p, 2, 12);
            // Escalating: elevated counts ramp up.
            push("c_esc", p, 0, 10);
            push("c_esc", p, 1, (3 * p) as u64);
            push("c_esc", p, 2, 1);
            // De-escalating: ramp down.
            push("c_de", p, 0, 10);
            push("c_de", p, 1, (3 * (windows - 1 - p)) as u64);
            push("c_de", p, 2, 1);
        }
        let es = EventSet::from_events(events, None).unwrap();
        // One conceptual window per 1000 ticks.
        let boundaries: Vec<usize> = (0..=windows)
            .map(|p| {
                es.events()
                    .iter()
                    .position(|e| e.timestamp >= (p as i64) * 1_000)
                    .unwrap_or(es.len())
            })
            .collect();
        let scheme = crate::binning::BinningScheme {
            time_spans: boundaries
                .windows(2)
                .map(|w| {
                    (
                        es.events()[w[0]].timestamp,
                        es.events()[w[1].saturating_sub(1).max(w[0])].timestamp,
                    )
                })
                .collect(),
            boundaries,
        };
        let obs = crate::binning::summarize(
            &es,
            &scheme,
            crate::binning::SummaryRule::MaxClass,
            &LabelVocabulary::default(),
        )
        .unwrap();
        let partition = pre_separate(&obs);
        let clustered_users = ["c_low", "c_high", "c_vhigh", "c_esc", "c_de"];
        let assignment: BTreeMap<String, usize> = clustered_users
            .iter()
            .enumerate()
            .map(|(c, u)| (u.to_string(), c))
            .collect();
        let clustering = Clustering {
            k: 5,
            modes: vec![vec![0; windows]; 5],
            assignment,
            wss: 0.0,
            seed: 0,
        };
        let mut groups: Vec<(String, Vec<String>)> = vec![
            ("none_only".into(), partition.none_only.clone()),
            ("none_implicit_only".into(), partition.none_implicit_only.clone()),
        ];
        for (c, user) in clustered_users.iter().enumerate() {
            groups.push((Clustering::cluster_name(c), vec![user.to_string()]));
        }
        let grouping = Grouping::new(groups).unwrap();
        let series = tscore(&obs, &grouping, CohortScope::AllUsers).unwrap();
        (partition, clustering, series)
    }

    #[test]
    fn naming_heuristic_labels_all_five_clusters() {
        let (partition, clustering, series) = naming_fixture();
        let assignment = assign_types(
            &partition,
            &clustering,
            &series,
            &BTreeMap::new(),
            &NamingConfig::default(),
        )
        .unwrap();
        assert_eq!(assignment.cluster_labels[&0], TypeLabel::Low);
        assert_eq!(assignment.cluster_labels[&1], TypeLabel::High);
        assert_eq!(assignment.cluster_labels[&2], TypeLabel::VeryHigh);
        assert_eq!(assignment.cluster_labels[&3], TypeLabel::Escalating);
        assert_eq!(assignment.cluster_labels[&4], TypeLabel::DeEscalating);
        let (label, cluster, provenance) = &assignment.assignments["pool_none"];
        assert_eq!(*label, TypeLabel::None);
        assert!(cluster.is_none());
        assert_eq!(*provenance, Provenance::Rule);
        assert_eq!(assignment.assignments["pool_mild"].0, TypeLabel::VeryLow);
        // Every user got exactly one label.
        assert_eq!(assignment.assignments.len(), 7);
    }

    #[test]
    fn override_wins_and_is_recorded() {
        let (partition, clustering, series) = naming_fixture();
        let mut overrides = BTreeMap::new();
        overrides.insert(1usize, TypeLabel::High);
        let assignment = assign_types(
            &partition,
            &clustering,
            &series,
            &overrides,
            &NamingConfig::default(),
        )
        .unwrap();
        let (label, _, provenance) = &assignment.assignments["c_high"];
        assert_eq!(*label, TypeLabel::High);
        assert_eq!(*provenance, Provenance::ManualOverride);
    }

    #[test]
    fn csv_round_trip() {
        let (partition, clustering, series) = naming_fixture();
        let assignment = assign_types(
            &partition,
            &clustering,
            &series,
            &BTreeMap::new(),
            &NamingConfig::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        assignment.write_csv(&mut buf).unwrap();
        let back = TypeAssignment::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.assignments.len(), assignment.assignments.len());
        for (user, (label, cluster, _)) in &assignment.assignments {
            let (l2, c2, _) = &back.assignments[user];
            assert_eq!(label, l2);
            assert_eq!(cluster, c2);
        }
    }

    #[test]
    fn ari_extremes() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(ari <= 0.0 + 1e-12);
    }
}
