//! Seeded generation of a planted seven-type event corpus.
//!
//! Each user is drawn from one of the seven behavioral archetypes and emits
//! labeled events across conceptual periods of a fixed observation span. The
//! planted truth is returned alongside the events so a full pipeline run can
//! be scored against it.

use std::collections::BTreeMap;
use std::io::Write;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EventRecord, EventSet, Label};
use crate::error::{Error, Result};
use crate::typing::TypeLabel;

/// Controls for [`generate_typed_corpus`].
#[derive(Debug, Clone)]
pub struct SynthCorpusConfig {
    pub users: usize,
    /// Conceptual periods; align the pipeline's window count with this.
    pub periods: usize,
    pub span_start: i64,
    pub span_days: f64,
    /// Planted share per type, canonical order
    /// (None, Very Low, Low, High, Very High, Escalating, De-escalating).
    /// Normalized internally.
    pub shares: [f64; 7],
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            users: 1000,
            periods: 60,
            span_start: 0,
            span_days: 365.0,
            shares: [0.289, 0.140, 0.270, 0.092, 0.088, 0.048, 0.074],
            seed: 0,
        }
    }
}

/// A planted corpus: the events plus the ground-truth type of every user.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub events: EventSet,
    pub truth: BTreeMap<String, TypeLabel>,
    /// Users planted per type, canonical order.
    pub planted_counts: Vec<(TypeLabel, usize)>,
}

impl SynthCorpus {
    /// Truth CSV: `user_id,type`.
    pub fn write_truth_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["user_id", "type"])?;
        for (user, label) in &self.truth {
            wtr.write_record([user.as_str(), label.name()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Planted share per type.
    pub fn planted_shares(&self) -> Vec<(TypeLabel, f64)> {
        let total: usize = self.planted_counts.iter().map(|(_, c)| c).sum();
        self.planted_counts
            .iter()
            .map(|&(label, c)| (label, c as f64 / total as f64))
            .collect()
    }
}

/// Largest-remainder apportionment of `total` into the given weights.
fn quota(total: usize, weights: &[f64]) -> Vec<usize> {
    let weight_sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights
        .iter()
        .map(|w| w / weight_sum * total as f64)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % weights.len()]] += 1;
    }
    counts
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Activity probability, mean event count, and label mix of one archetype in
/// one period.
struct PeriodProfile {
    activity: f64,
    rate: f64,
    mix: [f64; 3],
}

const QUIET_MIX: [f64; 3] = [0.99, 0.008, 0.002];
const HEAVY_MIX: [f64; 3] = [0.78, 0.14, 0.08];

fn period_profile(label: TypeLabel, t: f64, rng: &mut ChaCha8Rng) -> PeriodProfile {
    match label {
        TypeLabel::None => PeriodProfile {
            activity: 0.45,
            rate: 2.0,
            mix: [1.0, 0.0, 0.0],
        },
        TypeLabel::VeryLow => PeriodProfile {
            activity: 0.50,
            rate: 2.2,
            mix: [0.97, 0.03, 0.0],
        },
        TypeLabel::Low => {
            // Mostly quiet with occasional short elevated bursts.
            if rng.random::<f64>() < 0.08 {
                PeriodProfile {
                    activity: 0.9,
                    rate: 3.5,
                    mix: [0.55, 0.25, 0.20],
                }
            } else {
                PeriodProfile {
                    activity: 0.50,
                    rate: 2.2,
                    mix: QUIET_MIX,
                }
            }
        }
        TypeLabel::High => PeriodProfile {
            activity: 0.85,
            rate: 12.0,
            mix: [0.89, 0.08, 0.03],
        },
        TypeLabel::VeryHigh => PeriodProfile {
            activity: 0.96,
            rate: 30.0,
            mix: [0.79, 0.14, 0.07],
        },
        TypeLabel::Escalating => ramp(t),
        TypeLabel::DeEscalating => ramp(1.0 - t),
    }
}

/// Interpolates from the quiet low-volume profile to the heavy high-volume
/// profile as `t` goes 0 to 1.
fn ramp(t: f64) -> PeriodProfile {
    PeriodProfile {
        activity: lerp(0.5, 0.96, t),
        rate: lerp(2.2, 34.0, t),
        mix: [
            lerp(QUIET_MIX[0], HEAVY_MIX[0], t),
            lerp(QUIET_MIX[1], HEAVY_MIX[1], t),
            lerp(QUIET_MIX[2], HEAVY_MIX[2], t),
        ],
    }
}

fn poisson(lambda: f64, rng: &mut ChaCha8Rng) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let limit = (-lambda).exp();
    let mut k = 0usize;
    let mut product = 1.0;
    loop {
        product *= rng.random::<f64>();
        if product <= limit {
            return k;
        }
        k += 1;
    }
}

fn sample_mix(mix: &[f64; 3], rng: &mut ChaCha8Rng) -> Label {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in mix.iter().enumerate() {
        acc += w;
        if draw < acc {
            return Label(i as u8);
        }
    }
    Label(2)
}

/// Generate a corpus with the planted type mixture. Deterministic for a
/// given seed. The default label vocabulary (three classes) is assumed.
pub fn generate_typed_corpus(config: &SynthCorpusConfig) -> Result<SynthCorpus> {
    if config.users < 7 {
        return Err(Error::InvalidArgument(
            "need at least 7 users to plant every type".into(),
        ));
    }
    if config.periods < 2 {
        return Err(Error::InvalidArgument("need at least two periods".into()));
    }
    if config.span_days <= 0.0 {
        return Err(Error::InvalidArgument("span must be positive".into()));
    }
    if config.shares.iter().any(|&s| s < 0.0) || config.shares.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument("bad share vector".into()));
    }
    let counts = quota(config.users, &config.shares);
    let span_seconds = (config.span_days * 86_400.0) as i64;
    let period_seconds = span_seconds / config.periods as i64;
    if period_seconds < 1 {
        return Err(Error::InvalidArgument("span too short for period count".into()));
    }
    let span_end = config.span_start + period_seconds * config.periods as i64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.users.to_string().len();
    let mut events: Vec<EventRecord> = Vec::new();
    let mut truth = BTreeMap::new();
    let mut user_no = 0usize;
    for (type_idx, &label) in TypeLabel::ALL.iter().enumerate() {
        for _ in 0..counts[type_idx] {
            user_no += 1;
            let user_id = format!("u{:0width$}", user_no, width = width);
            let start_idx = events.len();
            for p in 0..config.periods {
                let t = p as f64 / (config.periods - 1) as f64;
                let profile = period_profile(label, t, &mut rng);
                if rng.random::<f64>() >= profile.activity {
                    continue;
                }
                let n = 1 + poisson(profile.rate - 1.0, &mut rng);
                let window_start = config.span_start + period_seconds * p as i64;
                for _ in 0..n {
                    let offset = rng.random_range(0..period_seconds);
                    events.push(EventRecord {
                        user_id: user_id.clone(),
                        timestamp: window_start + offset,
                        label: sample_mix(&profile.mix, &mut rng),
                    });
                }
            }
            if events.len() == start_idx {
                // Archetypes are active enough that this never fires in
                // practice; keep every planted user observable regardless.
                events.push(EventRecord {
                    user_id: user_id.clone(),
                    timestamp: config.span_start,
                    label: Label(0),
                });
            }
            enforce_type_constraints(label, &mut events[start_idx..]);
            truth.insert(user_id, label);
        }
    }
    let events = EventSet::from_events(events, Some((config.span_start, span_end)))?;
    Ok(SynthCorpus {
        events,
        truth,
        planted_counts: TypeLabel::ALL
            .iter()
            .zip(&counts)
            .map(|(&l, &c)| (l, c))
            .collect(),
    })
}

/// Make the raw counts of one user consistent with the planted type, so the
/// rule-based pre-separation recovers the pools exactly.
fn enforce_type_constraints(label: TypeLabel, events: &mut [EventRecord]) {
    let has = |events: &[EventRecord], l: u8| events.iter().any(|e| e.label == Label(l));
    match label {
        TypeLabel::None => {
            // The mix already emits only base events.
            debug_assert!(!has(events, 1) && !has(events, 2));
        }
        TypeLabel::VeryLow => {
            if !has(events, 1) {
                events.last_mut().unwrap().label = Label(1);
            }
            debug_assert!(!has(events, 2));
        }
        TypeLabel::DeEscalating => {
            if !has(events, 2) {
                events.first_mut().unwrap().label = Label(2);
            }
        }
        _ => {
            if !has(events, 2) {
                events.last_mut().unwrap().label = Label(2);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{build_bins, summarize, SummaryRule};
    use crate::corpus::LabelVocabulary;
    use crate::typing::pre_separate;

    #[test]
    fn quota_is_exact_and_deterministic() {
        let counts = quota(1000, &[0.289, 0.140, 0.270, 0.092, 0.088, 0.048, 0.074]);
        assert_eq!(counts.iter().sum::<usize>(), 1000);
        assert_eq!(counts, quota(1000, &[0.289, 0.140, 0.270, 0.092, 0.088, 0.048, 0.074]));
        // Shares land within half a user of the normalized weights.
        let total: f64 = 1.001;
        for (c, w) in counts.iter().zip([0.289, 0.140, 0.270, 0.092, 0.088, 0.048, 0.074]) {
            assert!((*c as f64 - w / total * 1000.0).abs() <= 1.0);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let config = SynthCorpusConfig {
            users: 60,
            periods: 12,
            ..SynthCorpusConfig::default()
        };
        let a = generate_typed_corpus(&config).unwrap();
        let b = generate_typed_corpus(&config).unwrap();
        assert_eq!(a.events.events(), b.events.events());
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn pre_separation_recovers_planted_pools_exactly() {
        let config = SynthCorpusConfig {
            users: 300,
            periods: 30,
            seed: 11,
            ..SynthCorpusConfig::default()
        };
        let corpus = generate_typed_corpus(&config).unwrap();
        let vocab = LabelVocabulary::default();
        let bins = build_bins(&corpus.events, 30).unwrap();
        let obs = summarize(&corpus.events, &bins, SummaryRule::MaxClass, &vocab).unwrap();
        let partition = pre_separate(&obs);
        let planted = |label: TypeLabel| -> usize {
            corpus.truth.values().filter(|&&l| l == label).count()
        };
        assert_eq!(partition.none_only.len(), planted(TypeLabel::None));
        assert_eq!(
            partition.none_implicit_only.len(),
            planted(TypeLabel::VeryLow)
        );
        for user in &partition.none_only {
            assert_eq!(corpus.truth[user], TypeLabel::None);
        }
        for user in &partition.none_implicit_only {
            assert_eq!(corpus.truth[user], TypeLabel::VeryLow);
        }
    }

    #[test]
    fn no_user_crosses_the_bot_threshold() {
        let config = SynthCorpusConfig {
            users: 200,
            periods: 20,
            seed: 3,
            ..SynthCorpusConfig::default()
        };
        let corpus = generate_typed_corpus(&config).unwrap();
        let (kept, removed) =
            crate::corpus::filter_bot_like(&corpus.events, 40.0, crate::corpus::SpanPolicy::FullSpan)
                .unwrap();
        assert!(removed.is_empty());
        assert_eq!(kept.n_users(), 200);
    }
}
