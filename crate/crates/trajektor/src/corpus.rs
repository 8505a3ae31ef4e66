//! Labeled event streams: parsing, cohort statistics, and user-level filters.
//!
//! An event is one (user, timestamp, label) triple. Events are kept in a
//! single globally sorted [`EventSet`]; every downstream stage consumes that
//! set read-only.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Ordinal categorical label, stored as an index into a [`LabelVocabulary`].
///
/// Higher indices denote higher classes; index 0 is the base class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u8);

impl Label {
    /// The base (lowest) class.
    pub const BASE: Label = Label(0);

    /// Index into count/probability vectors.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// True for any class above the base class.
    pub fn is_elevated(self) -> bool {
        self.0 > 0
    }
}

/// Ordered set of label tokens. Index order is the ordinal order.
///
/// Tokens are matched case-insensitively on read and written lowercase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    names: Vec<String>,
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        LabelVocabulary::new(&["none", "implicit", "explicit"]).unwrap()
    }
}

impl LabelVocabulary {
    /// Build a vocabulary from ordered tokens. At least two classes are
    /// required; tokens are normalized to lowercase and must be distinct.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "label vocabulary needs at least 2 classes, got {}",
                names.len()
            )));
        }
        if names.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument(
                "label vocabulary too large".into(),
            ));
        }
        let mut lowered = Vec::with_capacity(names.len());
        for name in names {
            let token = name.as_ref().trim().to_ascii_lowercase();
            if token.is_empty() {
                return Err(Error::InvalidArgument("empty label token".into()));
            }
            if lowered.contains(&token) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate label token '{token}'"
                )));
            }
            lowered.push(token);
        }
        Ok(LabelVocabulary { names: lowered })
    }

    /// Number of classes.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    /// True when the vocabulary holds no classes (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Token for a label.
    pub fn token(&self, label: Label) -> &str {
        &self.names[label.index()]
    }

    /// All tokens in ordinal order.
    pub fn tokens(&self) -> &[String] {
        &self.names
    }

    /// Look a token up, case-insensitively.
    pub fn parse_token(&self, token: &str) -> Option<Label> {
        let lowered = token.trim().to_ascii_lowercase();
        self.names
            .iter()
            .position(|n| *n == lowered)
            .map(|i| Label(i as u8))
    }

    /// All labels in ordinal order.
    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        (0..self.names.len()).map(|i| Label(i as u8))
    }
}

/// One labeled event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub user_id: String,
    /// Seconds since the Unix epoch (UTC).
    pub timestamp: i64,
    pub label: Label,
}

/// Input encodings understood by [`parse_events`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseFormat {
    /// Header `user_id,timestamp,label`.
    Csv,
    /// One JSON object per line with keys `user_id`, `timestamp`, `label`.
    Jsonl,
}

/// Options for [`parse_events`].
#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub format: ParseFormat,
    pub vocabulary: LabelVocabulary,
    /// Observation span `[start, end]`. When `None` the span is derived from
    /// the data (min and max timestamp). When set, any event outside it is an
    /// error.
    pub span: Option<(i64, i64)>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            format: ParseFormat::Csv,
            vocabulary: LabelVocabulary::default(),
            span: None,
        }
    }
}

/// A complete, immutable corpus of events.
///
/// Events are sorted by timestamp; ties keep input order. `user_index` maps
/// each user to the positions of their events in that global order.
#[derive(Debug, Clone)]
pub struct EventSet {
    events: Vec<EventRecord>,
    span_start: i64,
    span_end: i64,
    user_index: BTreeMap<String, Vec<usize>>,
}

impl EventSet {
    /// Assemble a set from loose events, sorting and indexing them.
    ///
    /// `span` behaves as in [`ParseOptions`]; events outside an explicit span
    /// are rejected.
    pub fn from_events(events: Vec<EventRecord>, span: Option<(i64, i64)>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some((start, end)) = span {
            if start > end {
                return Err(Error::InvalidArgument(format!(
                    "span start {start} after span end {end}"
                )));
            }
            for (i, ev) in events.iter().enumerate() {
                if ev.timestamp < start || ev.timestamp > end {
                    return Err(Error::TimestampOutOfSpan {
                        timestamp: ev.timestamp,
                        line: i + 1,
                        span_start: start,
                        span_end: end,
                    });
                }
            }
        }
        for (i, ev) in events.iter().enumerate() {
            if ev.user_id.is_empty() {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    reason: "empty user_id".into(),
                });
            }
        }
        let mut events = events;
        // Stable sort keeps input order for equal timestamps.
        events.sort_by_key(|e| e.timestamp);
        let (span_start, span_end) = span.unwrap_or_else(|| {
            (
                events.first().map(|e| e.timestamp).unwrap_or(0),
                events.last().map(|e| e.timestamp).unwrap_or(0),
            )
        });
        let mut user_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, ev) in events.iter().enumerate() {
            user_index.entry(ev.user_id.clone()).or_default().push(pos);
        }
        Ok(EventSet {
            events,
            span_start,
            span_end,
            user_index,
        })
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn span(&self) -> (i64, i64) {
        (self.span_start, self.span_end)
    }

    /// Span length in days (fractional).
    pub fn span_days(&self) -> f64 {
        (self.span_end - self.span_start) as f64 / SECONDS_PER_DAY
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    /// Users in lexicographic order with their event positions.
    pub fn user_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.user_index
    }

    /// User ids in lexicographic order.
    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.user_index.keys().map(|s| s.as_str())
    }

    /// Write the set as CSV (`user_id,timestamp,label`), sorted order.
    pub fn write_csv<W: Write>(&self, w: W, vocabulary: &LabelVocabulary) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["user_id", "timestamp", "label"])?;
        for ev in &self.events {
            wtr.write_record([
                ev.user_id.as_str(),
                &ev.timestamp.to_string(),
                vocabulary.token(ev.label),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Write the set as JSONL, sorted order.
    pub fn write_jsonl<W: Write>(&self, mut w: W, vocabulary: &LabelVocabulary) -> Result<()> {
        for ev in &self.events {
            let obj = serde_json::json!({
                "user_id": ev.user_id,
                "timestamp": ev.timestamp,
                "label": vocabulary.token(ev.label),
            });
            writeln!(w, "{obj}")?;
        }
        Ok(())
    }
}

/// Parse a line-oriented stream into an [`EventSet`].
///
/// Malformed lines and unknown labels are reported with their line number.
pub fn parse_events<R: BufRead>(reader: R, options: &ParseOptions) -> Result<EventSet> {
    let events = match options.format {
        ParseFormat::Csv => parse_csv(reader, &options.vocabulary)?,
        ParseFormat::Jsonl => parse_jsonl(reader, &options.vocabulary)?,
    };
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    EventSet::from_events(events, options.span)
}

fn parse_csv<R: BufRead>(reader: R, vocabulary: &LabelVocabulary) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (user_col, ts_col, label_col) = match (col("user_id"), col("timestamp"), col("label")) {
        (Some(u), Some(t), Some(l)) => (u, t, l),
        _ => {
            return Err(Error::MalformedLine {
                line: 1,
                reason: "header must contain user_id, timestamp, label".into(),
            })
        }
    };
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(events.len() + 2);
        let field = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::MalformedLine {
                line,
                reason: format!("missing field {i}"),
            })
        };
        let user_id = field(user_col)?.to_string();
        if user_id.is_empty() {
            return Err(Error::MalformedLine {
                line,
                reason: "empty user_id".into(),
            });
        }
        let ts_raw = field(ts_col)?;
        let timestamp = ts_raw.trim().parse::<i64>().map_err(|_| Error::MalformedLine {
            line,
            reason: format!("bad timestamp '{ts_raw}'"),
        })?;
        let token = field(label_col)?;
        let label = vocabulary
            .parse_token(token)
            .ok_or_else(|| Error::UnknownLabel {
                token: token.to_string(),
                line,
            })?;
        events.push(EventRecord {
            user_id,
            timestamp,
            label,
        });
    }
    Ok(events)
}

fn parse_jsonl<R: BufRead>(reader: R, vocabulary: &LabelVocabulary) -> Result<Vec<EventRecord>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                reason: format!("bad json: {e}"),
            })?;
        let user_id = value
            .get("user_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::MalformedLine {
                line: line_no,
                reason: "missing string field 'user_id'".into(),
            })?
            .to_string();
        if user_id.is_empty() {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: "empty user_id".into(),
            });
        }
        let timestamp = value
            .get("timestamp")
            .and_then(|v| v.as_i64())
            .ok_or_else(|| Error::MalformedLine {
                line: line_no,
                reason: "missing integer field 'timestamp'".into(),
            })?;
        let token = value
            .get("label")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::MalformedLine {
                line: line_no,
                reason: "missing string field 'label'".into(),
            })?;
        let label = vocabulary
            .parse_token(token)
            .ok_or_else(|| Error::UnknownLabel {
                token: token.to_string(),
                line: line_no,
            })?;
        events.push(EventRecord {
            user_id,
            timestamp,
            label,
        });
    }
    Ok(events)
}

/// Denominator used for the events-per-day rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanPolicy {
    /// The full observation span of the corpus.
    FullSpan,
    /// Each user's own first-to-last event span; a zero-length span counts
    /// as one day.
    UserSpan,
}

/// A user dropped by [`filter_bot_like`], with the rate that removed them.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovedUser {
    pub user_id: String,
    pub events: usize,
    pub span_days: f64,
    pub rate_per_day: f64,
}

/// Remove users whose average daily event rate strictly exceeds `threshold`.
///
/// Exactly at the threshold a user is kept. The surviving events are
/// re-indexed into a fresh [`EventSet`].
pub fn filter_bot_like(
    es: &EventSet,
    threshold: f64,
    policy: SpanPolicy,
) -> Result<(EventSet, Vec<RemovedUser>)> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bot threshold must be positive, got {threshold}"
        )));
    }
    if policy == SpanPolicy::FullSpan && es.span_days() <= 0.0 {
        return Err(Error::InvalidArgument(
            "full observation span must be longer than zero days".into(),
        ));
    }
    let mut removed = Vec::new();
    let mut removed_set = std::collections::BTreeSet::new();
    for (user, positions) in es.user_index() {
        let span_days = match policy {
            SpanPolicy::FullSpan => es.span_days(),
            SpanPolicy::UserSpan => {
                let first = es.events[*positions.first().unwrap()].timestamp;
                let last = es.events[*positions.last().unwrap()].timestamp;
                let days = (last - first) as f64 / SECONDS_PER_DAY;
                if days > 0.0 {
                    days
                } else {
                    1.0
                }
            }
        };
        let rate = positions.len() as f64 / span_days;
        if rate > threshold {
            removed.push(RemovedUser {
                user_id: user.clone(),
                events: positions.len(),
                span_days,
                rate_per_day: rate,
            });
            removed_set.insert(user.clone());
        }
    }
    if removed.len() == es.n_users() {
        return Err(Error::InvalidArgument(
            "bot filter removed every user".into(),
        ));
    }
    let kept: Vec<EventRecord> = es
        .events
        .iter()
        .filter(|e| !removed_set.contains(&e.user_id))
        .cloned()
        .collect();
    let kept = EventSet::from_events(kept, Some((es.span_start, es.span_end)))?;
    Ok((kept, removed))
}

/// Per-label and per-user tallies for a corpus.
#[derive(Debug, Clone)]
pub struct CohortSummary {
    /// Event count per label, ordinal order.
    pub label_totals: Vec<u64>,
    /// `label_totals / total`, sums to 1.
    pub label_proportions: Vec<f64>,
    /// Per-user per-label counts, user order lexicographic.
    pub per_user_label_counts: BTreeMap<String, Vec<u64>>,
    /// Per-user total event counts.
    pub per_user_totals: BTreeMap<String, u64>,
    pub total_events: u64,
}

/// Tally label totals, proportions, and per-user distributions.
pub fn cohort_stats(es: &EventSet, vocabulary: &LabelVocabulary) -> Result<CohortSummary> {
    if es.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n_labels = vocabulary.len();
    let mut label_totals = vec![0u64; n_labels];
    let mut per_user_label_counts: BTreeMap<String, Vec<u64>> = es
        .user_ids()
        .map(|u| (u.to_string(), vec![0u64; n_labels]))
        .collect();
    for ev in es.events() {
        label_totals[ev.label.index()] += 1;
        per_user_label_counts.get_mut(&ev.user_id).unwrap()[ev.label.index()] += 1;
    }
    let total_events = es.len() as u64;
    let label_proportions = label_totals
        .iter()
        .map(|&c| c as f64 / total_events as f64)
        .collect();
    let per_user_totals = per_user_label_counts
        .iter()
        .map(|(u, counts)| (u.clone(), counts.iter().sum()))
        .collect();
    Ok(CohortSummary {
        label_totals,
        label_proportions,
        per_user_label_counts,
        per_user_totals,
        total_events,
    })
}
