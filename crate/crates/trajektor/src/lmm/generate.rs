//! Seeded sampling of synthetic observation matrices from a model.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::binning::ObservationMatrix;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::lmm::{LatentMarkovModel, StateTrajectory};

/// Sampled observations plus the hidden state paths that produced them.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub observations: ObservationMatrix,
    pub trajectories: Vec<StateTrajectory>,
}

/// Sample `n_users` independent users, each a length-`n_windows` state chain
/// with one emitted label per window. Bit-identical for a given seed.
pub fn generate(
    model: &LatentMarkovModel,
    n_users: usize,
    n_windows: usize,
    seed: u64,
) -> Result<GeneratedData> {
    if n_users == 0 || n_windows == 0 {
        return Err(Error::InvalidArgument(
            "need at least one user and one window".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n_users.to_string().len();
    let mut users = Vec::with_capacity(n_users);
    let mut sequences = Vec::with_capacity(n_users);
    let mut trajectories = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let user_id = format!("u{:0width$}", u + 1, width = width);
        let mut states = Vec::with_capacity(n_windows);
        let mut labels = Vec::with_capacity(n_windows);
        let mut state = sample_index(model.initial(), &mut rng);
        for w in 0..n_windows {
            if w > 0 {
                state = sample_index(&model.transitions()[state], &mut rng);
            }
            states.push(state);
            let label = sample_index(&model.emissions()[state], &mut rng);
            labels.push(Label(label as u8));
        }
        users.push(user_id.clone());
        sequences.push(labels);
        trajectories.push(StateTrajectory { user_id, states });
    }
    let observations = ObservationMatrix::from_sequences(users, sequences, model.n_labels())?;
    Ok(GeneratedData {
        observations,
        trajectories,
    })
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_model() -> LatentMarkovModel {
        LatentMarkovModel::new(
            vec![0.0, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_model_yields_constant_sequences() {
        let data = generate(&one_hot_model(), 3, 4, 9).unwrap();
        for u in 0..3 {
            // Starts in state 1, alternates deterministically.
            assert_eq!(data.trajectories[u].states, vec![1, 0, 1, 0]);
            assert_eq!(
                data.observations.row(u),
                &[Label(1), Label(0), Label(1), Label(0)]
            );
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = LatentMarkovModel::new(
            vec![0.5, 0.5],
            vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]],
        )
        .unwrap();
        let a = generate(&m, 50, 20, 1234).unwrap();
        let b = generate(&m, 50, 20, 1234).unwrap();
        assert_eq!(a.observations, b.observations);
        assert_eq!(a.trajectories, b.trajectories);
        let c = generate(&m, 50, 20, 1235).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    /// Stationary distribution by power iteration; oracle for the pooled
    /// emission check.
    fn stationary(transitions: &[Vec<f64>]) -> Vec<f64> {
        let k = transitions.len();
        let mut dist = vec![1.0 / k as f64; k];
        for _ in 0..10_000 {
            let mut next = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    next[j] += dist[i] * transitions[i][j];
                }
            }
            dist = next;
        }
        dist
    }

    #[test]
    fn pooled_emissions_match_stationary_mixture() {
        // Start the chain at its stationary distribution so every window is
        // marginally stationary.
        let transitions = vec![
            vec![0.99, 0.01, 0.00],
            vec![0.03, 0.96, 0.01],
            vec![0.02, 0.03, 0.95],
        ];
        let emissions = vec![
            vec![0.95, 0.03, 0.02],
            vec![0.45 / 0.99, 0.32 / 0.99, 0.22 / 0.99],
            vec![0.06, 0.13, 0.81],
        ];
        let pi = stationary(&transitions);
        let model =
            LatentMarkovModel::from_rounded_rows(pi.clone(), transitions.clone(), emissions.clone())
                .unwrap();
        let data = generate(&model, 10_000, 100, 2024).unwrap();
        let mut freq = vec![0.0f64; 3];
        let mut total = 0.0;
        for u in 0..data.observations.n_users() {
            for l in data.observations.row(u) {
                freq[l.index()] += 1.0;
                total += 1.0;
            }
        }
        for f in freq.iter_mut() {
            *f /= total;
        }
        for l in 0..3 {
            let expected: f64 = (0..3).map(|s| pi[s] * model.emissions()[s][l]).sum();
            assert!(
                (freq[l] - expected).abs() < 0.01,
                "label {l}: pooled {} vs stationary mixture {}",
                freq[l],
                expected
            );
        }
    }
}
