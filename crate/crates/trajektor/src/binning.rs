//! Activity-scaled time windows and per-user window summaries.
//!
//! The global timeline is split into `P` windows holding (near-)equal numbers
//! of events rather than equal calendar time, then each user's behavior in
//! each window is reduced to a single ordinal label.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::corpus::{EventSet, Label, LabelVocabulary};
use crate::error::{Error, Result};

/// Balanced window sizes: the first `n % p` windows take the extra event.
pub fn window_sizes(n: usize, p: usize) -> Vec<usize> {
    let base = n / p;
    let extra = n % p;
    (0..p).map(|i| if i < extra { base + 1 } else { base }).collect()
}

/// Equal-event windowing of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinningScheme {
    /// `P + 1` global event indices, strictly increasing from 0 to N.
    pub boundaries: Vec<usize>,
    /// Per-window (first event timestamp, last event timestamp); diagnostic
    /// only, nothing downstream depends on them.
    pub time_spans: Vec<(i64, i64)>,
}

impl BinningScheme {
    /// Number of windows.
    pub fn window_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Event-count size of each window.
    pub fn sizes(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Window index for a global event position.
    fn window_of(&self, pos: usize) -> usize {
        // The window whose [start, end) holds pos; robust to empty windows.
        self.boundaries.partition_point(|&b| b <= pos) - 1
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["period", "start_index", "end_index", "events", "start_ts", "end_ts"])?;
        for (i, (span, size)) in self.time_spans.iter().zip(self.sizes()).enumerate() {
            wtr.write_record([
                (i + 1).to_string(),
                self.boundaries[i].to_string(),
                self.boundaries[i + 1].to_string(),
                size.to_string(),
                span.0.to_string(),
                span.1.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read a scheme written by [`write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut boundaries = vec![0usize];
        let mut time_spans = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let get = |i: usize| -> Result<&str> {
                record.get(i).ok_or(Error::MalformedLine {
                    line,
                    reason: format!("missing field {i}"),
                })
            };
            let parse_usize = |raw: &str| -> Result<usize> {
                raw.parse().map_err(|_| Error::MalformedLine {
                    line,
                    reason: format!("bad index '{raw}'"),
                })
            };
            let parse_i64 = |raw: &str| -> Result<i64> {
                raw.parse().map_err(|_| Error::MalformedLine {
                    line,
                    reason: format!("bad timestamp '{raw}'"),
                })
            };
            let start = parse_usize(get(1)?)?;
            let end = parse_usize(get(2)?)?;
            if start != *boundaries.last().unwrap() || end < start {
                return Err(Error::MalformedLine {
                    line,
                    reason: "window boundaries are not contiguous".into(),
                });
            }
            boundaries.push(end);
            time_spans.push((parse_i64(get(4)?)?, parse_i64(get(5)?)?));
        }
        if time_spans.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(BinningScheme {
            boundaries,
            time_spans,
        })
    }
}

/// Split `es` into `p` equal-event windows.
pub fn build_bins(es: &EventSet, p: usize) -> Result<BinningScheme> {
    let n = es.len();
    if p == 0 {
        return Err(Error::InvalidArgument("window count must be positive".into()));
    }
    if p > n {
        return Err(Error::InvalidArgument(format!(
            "window count {p} exceeds event count {n}"
        )));
    }
    let sizes = window_sizes(n, p);
    let mut boundaries = Vec::with_capacity(p + 1);
    boundaries.push(0);
    for size in &sizes {
        boundaries.push(boundaries.last().unwrap() + size);
    }
    let events = es.events();
    let time_spans = boundaries
        .windows(2)
        .map(|w| (events[w[0]].timestamp, events[w[1] - 1].timestamp))
        .collect();
    Ok(BinningScheme {
        boundaries,
        time_spans,
    })
}

/// How a user's events inside one window collapse to a single label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SummaryRule {
    /// The highest class present, regardless of volume.
    MaxClass,
    /// The highest elevated class whose share of the user's window events is
    /// at least `q`; base class otherwise.
    Threshold(f64),
}

/// Users × windows grid of summarized labels plus the raw per-window counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    users: Vec<String>,
    n_labels: usize,
    /// `obs[u][p]`: summarized label.
    obs: Vec<Vec<Label>>,
    /// `counts[u][p][l]`: raw event counts.
    counts: Vec<Vec<Vec<u32>>>,
}

impl ObservationMatrix {
    /// Build a matrix directly from per-user label sequences (one implicit
    /// event per window). Used by synthetic generators and file loaders.
    pub fn from_sequences(
        users: Vec<String>,
        sequences: Vec<Vec<Label>>,
        n_labels: usize,
    ) -> Result<Self> {
        if users.len() != sequences.len() {
            return Err(Error::InvalidArgument(
                "user list and sequence list differ in length".into(),
            ));
        }
        let window_count = sequences.first().map(|s| s.len()).unwrap_or(0);
        if window_count == 0 {
            return Err(Error::InvalidArgument("empty sequences".into()));
        }
        for seq in &sequences {
            if seq.len() != window_count {
                return Err(Error::InvalidArgument("ragged sequences".into()));
            }
            if let Some(l) = seq.iter().find(|l| l.index() >= n_labels) {
                return Err(Error::InvalidArgument(format!(
                    "label index {} out of range for {} labels",
                    l.index(),
                    n_labels
                )));
            }
        }
        let counts = sequences
            .iter()
            .map(|seq| {
                seq.iter()
                    .map(|l| {
                        let mut c = vec![0u32; n_labels];
                        c[l.index()] = 1;
                        c
                    })
                    .collect()
            })
            .collect();
        Ok(ObservationMatrix {
            users,
            n_labels,
            obs: sequences,
            counts,
        })
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn window_count(&self) -> usize {
        self.obs.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    /// Summarized label sequence for user row `u`.
    pub fn row(&self, u: usize) -> &[Label] {
        &self.obs[u]
    }

    /// Raw counts for user row `u`, window `p`.
    pub fn counts(&self, u: usize, p: usize) -> &[u32] {
        &self.counts[u][p]
    }

    /// Per-user total count of each label across all windows.
    pub fn user_label_totals(&self, u: usize) -> Vec<u64> {
        let mut totals = vec![0u64; self.n_labels];
        for window in &self.counts[u] {
            for (l, &c) in window.iter().enumerate() {
                totals[l] += c as u64;
            }
        }
        totals
    }

    /// Row index of a user id, if present.
    pub fn user_row(&self, user_id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == user_id)
    }

    /// Restrict to the given users (kept in this matrix's row order).
    pub fn subset(&self, keep: &std::collections::BTreeSet<String>) -> ObservationMatrix {
        let mut users = Vec::new();
        let mut obs = Vec::new();
        let mut counts = Vec::new();
        for (i, user) in self.users.iter().enumerate() {
            if keep.contains(user) {
                users.push(user.clone());
                obs.push(self.obs[i].clone());
                counts.push(self.counts[i].clone());
            }
        }
        ObservationMatrix {
            users,
            n_labels: self.n_labels,
            obs,
            counts,
        }
    }

    /// Write the label grid as CSV: `user_id,p1..pP`.
    pub fn write_obs_csv<W: Write>(&self, w: W, vocabulary: &LabelVocabulary) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["user_id".to_string()];
        header.extend((1..=self.window_count()).map(|p| format!("p{p}")));
        wtr.write_record(&header)?;
        for (user, row) in self.users.iter().zip(&self.obs) {
            let mut rec = vec![user.clone()];
            rec.extend(row.iter().map(|l| vocabulary.token(*l).to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Write raw counts as long CSV: `user_id,period,label,count`.
    /// Zero cells are omitted.
    pub fn write_counts_csv<W: Write>(&self, w: W, vocabulary: &LabelVocabulary) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["user_id", "period", "label", "count"])?;
        for (user, windows) in self.users.iter().zip(&self.counts) {
            for (p, window) in windows.iter().enumerate() {
                for (l, &c) in window.iter().enumerate() {
                    if c > 0 {
                        wtr.write_record([
                            user.as_str(),
                            &(p + 1).to_string(),
                            vocabulary.token(Label(l as u8)),
                            &c.to_string(),
                        ])?;
                    }
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read a label grid written by [`write_obs_csv`], rebuilding counts from
    /// the paired counts CSV written by [`write_counts_csv`].
    pub fn read_csv<R: BufRead, R2: BufRead>(
        obs_reader: R,
        counts_reader: R2,
        vocabulary: &LabelVocabulary,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(obs_reader);
        let header_len = rdr.headers()?.len();
        if header_len < 2 {
            return Err(Error::MalformedLine {
                line: 1,
                reason: "observation matrix needs user_id plus period columns".into(),
            });
        }
        let window_count = header_len - 1;
        let mut users = Vec::new();
        let mut obs = Vec::new();
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
            let mut row = Vec::with_capacity(window_count);
            for i in 1..=window_count {
                let token = record.get(i).ok_or(Error::MalformedLine {
                    line,
                    reason: format!("missing period column {i}"),
                })?;
                let label = vocabulary
                    .parse_token(token)
                    .ok_or_else(|| Error::UnknownLabel {
                        token: token.to_string(),
                        line,
                    })?;
                row.push(label);
            }
            users.push(user);
            obs.push(row);
        }
        if users.is_empty() {
            return Err(Error::EmptyInput);
        }
        let user_rows: BTreeMap<String, usize> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        let mut counts = vec![vec![vec![0u32; vocabulary.len()]; window_count]; users.len()];
        let mut rdr = csv::Reader::from_reader(counts_reader);
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let get = |i: usize| {
                record.get(i).ok_or(Error::MalformedLine {
                    line,
                    reason: format!("missing field {i}"),
                })
            };
            let user = get(0)?;
            let row = *user_rows.get(user).ok_or_else(|| Error::MalformedLine {
                line,
                reason: format!("counts reference unknown user '{user}'"),
            })?;
            let period: usize = get(1)?.parse().map_err(|_| Error::MalformedLine {
                line,
                reason: "bad period".into(),
            })?;
            if period == 0 || period > window_count {
                return Err(Error::MalformedLine {
                    line,
                    reason: format!("period {period} out of range"),
                });
            }
            let token = get(2)?;
            let label = vocabulary
                .parse_token(token)
                .ok_or_else(|| Error::UnknownLabel {
                    token: token.to_string(),
                    line,
                })?;
            let count: u32 = get(3)?.parse().map_err(|_| Error::MalformedLine {
                line,
                reason: "bad count".into(),
            })?;
            counts[row][period - 1][label.index()] = count;
        }
        Ok(ObservationMatrix {
            users,
            n_labels: vocabulary.len(),
            obs,
            counts,
        })
    }
}

/// Summarize every user's behavior in every window under `rule`.
///
/// A window with no events from a user yields the base label.
pub fn summarize(
    es: &EventSet,
    bins: &BinningScheme,
    rule: SummaryRule,
    vocabulary: &LabelVocabulary,
) -> Result<ObservationMatrix> {
    if let SummaryRule::Threshold(q) = rule {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold share must be in (0, 1], got {q}"
            )));
        }
    }
    let window_count = bins.window_count();
    if *bins.boundaries.last().unwrap() != es.len() {
        return Err(Error::InvalidArgument(
            "binning scheme was not built from this event set".into(),
        ));
    }
    let n_labels = vocabulary.len();
    let users: Vec<String> = es.user_ids().map(|u| u.to_string()).collect();
    let mut counts = vec![vec![vec![0u32; n_labels]; window_count]; users.len()];
    for (row, (_, positions)) in es.user_index().iter().enumerate() {
        for &pos in positions {
            let p = bins.window_of(pos);
            counts[row][p][es.events()[pos].label.index()] += 1;
        }
    }
    let obs = counts
        .iter()
        .map(|windows| {
            windows
                .iter()
                .map(|window| summarize_window(window, rule))
                .collect()
        })
        .collect();
    Ok(ObservationMatrix {
        users,
        n_labels,
        obs,
        counts,
    })
}

fn summarize_window(counts: &[u32], rule: SummaryRule) -> Label {
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return Label::BASE;
    }
    match rule {
        SummaryRule::MaxClass => {
            let highest = counts.iter().rposition(|&c| c > 0).unwrap();
            Label(highest as u8)
        }
        SummaryRule::Threshold(q) => {
            for l in (1..counts.len()).rev() {
                if counts[l] as f64 / total as f64 >= q {
                    return Label(l as u8);
                }
            }
            Label::BASE
        }
    }
}
