//! Categorical latent Markov model: likelihood, EM fitting, decoding, model
//! selection, and synthetic generation.
//!
//! Each user occupies one of `K` unobserved states per window; the state
//! chain is time-homogeneous and emissions are categorical over the label
//! vocabulary.

mod em;
mod forward;
mod generate;
mod viterbi;

pub use em::{em_fit, information_criteria, EmConfig, FitResult, InformationCriteria, InitStrategy};
pub use forward::{log_likelihood, posterior_decode};
pub use generate::{generate, GeneratedData};
pub use viterbi::{path_log_probability, viterbi};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Row sums of `pi`, `A`, and `B` must be 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// A fitted or hand-built latent Markov model.
///
/// `transitions[i][j]` is the probability of moving from state `i` to state
/// `j` between consecutive windows; `emissions[i][l]` the probability that
/// state `i` shows label `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMarkovModel {
    pi: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    emissions: Vec<Vec<f64>>,
}

impl LatentMarkovModel {
    /// Validate and build a model. Every row must already be stochastic.
    pub fn new(pi: Vec<f64>, transitions: Vec<Vec<f64>>, emissions: Vec<Vec<f64>>) -> Result<Self> {
        let k = pi.len();
        if k == 0 {
            return Err(Error::InvalidModel("no states".into()));
        }
        if transitions.len() != k || emissions.len() != k {
            return Err(Error::InvalidModel(format!(
                "expected {k} transition and emission rows, got {} and {}",
                transitions.len(),
                emissions.len()
            )));
        }
        let n_labels = emissions[0].len();
        if n_labels == 0 {
            return Err(Error::InvalidModel("no labels".into()));
        }
        check_row("pi", &pi)?;
        for (i, row) in transitions.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidModel(format!(
                    "transition row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            check_row(&format!("transition row {i}"), row)?;
        }
        for (i, row) in emissions.iter().enumerate() {
            if row.len() != n_labels {
                return Err(Error::InvalidModel(format!(
                    "emission row {i} has {} entries, expected {n_labels}",
                    row.len()
                )));
            }
            check_row(&format!("emission row {i}"), row)?;
        }
        Ok(LatentMarkovModel {
            pi,
            transitions,
            emissions,
        })
    }

    /// Build a model from rows that may be slightly off-stochastic (for
    /// example rounded published tables), rescaling each row to sum to 1.
    pub fn from_rounded_rows(
        pi: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        emissions: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let norm = |row: Vec<f64>| -> Result<Vec<f64>> {
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 || row.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidModel(
                    "rows must be nonnegative with positive sum".into(),
                ));
            }
            Ok(row.into_iter().map(|v| v / sum).collect())
        };
        LatentMarkovModel::new(
            norm(pi)?,
            transitions.into_iter().map(norm).collect::<Result<_>>()?,
            emissions.into_iter().map(norm).collect::<Result<_>>()?,
        )
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_labels(&self) -> usize {
        self.emissions[0].len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.pi
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    pub fn emissions(&self) -> &[Vec<f64>] {
        &self.emissions
    }

    /// Emission probability of `label` in `state`.
    pub fn emission(&self, state: usize, label: Label) -> f64 {
        self.emissions[state][label.index()]
    }

    /// Reorder states by `perm`, where new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> LatentMarkovModel {
        let k = self.n_states();
        assert_eq!(perm.len(), k);
        let pi = perm.iter().map(|&s| self.pi[s]).collect();
        let transitions = perm
            .iter()
            .map(|&i| perm.iter().map(|&j| self.transitions[i][j]).collect())
            .collect();
        let emissions = perm.iter().map(|&s| self.emissions[s].clone()).collect();
        LatentMarkovModel {
            pi,
            transitions,
            emissions,
        }
    }

    /// Persist as JSON. `seed` and `loglik` are recorded when known.
    pub fn write_json<W: Write>(&self, w: W, seed: Option<u64>, loglik: Option<f64>) -> Result<()> {
        let file = ModelFile {
            k: self.n_states(),
            pi: self.pi.clone(),
            a: self.transitions.clone(),
            b: self.emissions.clone(),
            seed,
            loglik,
        };
        serde_json::to_writer_pretty(w, &file)?;
        Ok(())
    }

    /// Load a model written by [`write_json`].
    pub fn read_json<R: BufRead>(r: R) -> Result<(Self, Option<u64>, Option<f64>)> {
        let file: ModelFile = serde_json::from_reader(r)?;
        if file.pi.len() != file.k {
            return Err(Error::InvalidModel(format!(
                "header K={} does not match pi length {}",
                file.k,
                file.pi.len()
            )));
        }
        let model = LatentMarkovModel::new(file.pi, file.a, file.b)?;
        Ok((model, file.seed, file.loglik))
    }
}

fn check_row(context: &str, row: &[f64]) -> Result<()> {
    for &v in row {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::InvalidModel(format!(
                "{context}: entry {v} outside [0, 1]"
            )));
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!(
            "{context}: sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "K")]
    k: usize,
    pi: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    seed: Option<u64>,
    loglik: Option<f64>,
}

/// How per-window states are assigned to users after fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMethod {
    /// Joint most-probable path.
    Viterbi,
    /// Per-window posterior argmax.
    Posterior,
}

/// A user's decoded state path. States are 0-based in memory and 1-based in
/// every serialized form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateTrajectory {
    pub user_id: String,
    pub states: Vec<usize>,
}

/// Write trajectories as CSV: `user_id,p1..pP` with 1-based state numbers.
pub fn write_trajectories_csv<W: Write>(w: W, trajectories: &[StateTrajectory]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let p = trajectories.first().map(|t| t.states.len()).unwrap_or(0);
    let mut header = vec!["user_id".to_string()];
    header.extend((1..=p).map(|i| format!("p{i}")));
    wtr.write_record(&header)?;
    for t in trajectories {
        let mut rec = vec![t.user_id.clone()];
        rec.extend(t.states.iter().map(|s| (s + 1).to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read trajectories written by [`write_trajectories_csv`].
pub fn read_trajectories_csv<R: BufRead>(r: R) -> Result<Vec<StateTrajectory>> {
    let mut rdr = csv::Reader::from_reader(r);
    let p = rdr.headers()?.len().saturating_sub(1);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let user_id = record
            .get(0)
            .ok_or(Error::MalformedLine {
                line,
                reason: "missing user_id".into(),
            })?
            .to_string();
        let mut states = Vec::with_capacity(p);
        for i in 1..=p {
            let raw = record.get(i).ok_or(Error::MalformedLine {
                line,
                reason: format!("missing state column {i}"),
            })?;
            let one_based: usize = raw.parse().map_err(|_| Error::MalformedLine {
                line,
                reason: format!("bad state '{raw}'"),
            })?;
            if one_based == 0 {
                return Err(Error::MalformedLine {
                    line,
                    reason: "state indices are 1-based".into(),
                });
            }
            states.push(one_based - 1);
        }
        out.push(StateTrajectory { user_id, states });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

/// Find the state permutation of `fitted` that best matches `reference`,
/// minimizing total L1 distance between emission rows. Exhaustive over all
/// `K!` permutations; `K` must be at most 12.
pub fn align_states(fitted: &LatentMarkovModel, reference: &LatentMarkovModel) -> Result<Vec<usize>> {
    let k = fitted.n_states();
    if reference.n_states() != k || reference.n_labels() != fitted.n_labels() {
        return Err(Error::InvalidArgument(
            "models must share state and label counts for alignment".into(),
        ));
    }
    if k > 12 {
        return Err(Error::InvalidArgument(
            "state alignment is exhaustive and limited to K <= 12".into(),
        ));
    }
    let dist = |fit_state: usize, ref_state: usize| -> f64 {
        fitted.emissions[fit_state]
            .iter()
            .zip(&reference.emissions[ref_state])
            .map(|(a, b)| (a - b).abs())
            .sum()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..k).collect();
    permute(&mut perm, 0, &mut |p| {
        let cost: f64 = (0..k).map(|r| dist(p[r], r)).sum();
        if best.as_ref().map(|(c, _)| cost < *c).unwrap_or(true) {
            best = Some((cost, p.to_vec()));
        }
    });
    Ok(best.unwrap().1)
}

fn permute(items: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}
