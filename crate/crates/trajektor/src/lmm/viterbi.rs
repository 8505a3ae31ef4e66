//! Joint most-probable state path, in log space.

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::lmm::LatentMarkovModel;

/// Decode the argmax-probability state path for `seq`.
///
/// Ties are broken toward the lowest state index at every step, which makes
/// the output unique. A step where no state has positive probability is an
/// error naming that step.
pub fn viterbi(model: &LatentMarkovModel, seq: &[Label]) -> Result<Vec<usize>> {
    if seq.is_empty() {
        return Ok(Vec::new());
    }
    let k = model.n_states();
    let t_len = seq.len();
    let ln = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };

    let mut delta = vec![vec![f64::NEG_INFINITY; k]; t_len];
    let mut back = vec![vec![0usize; k]; t_len];
    for i in 0..k {
        delta[0][i] = ln(model.initial()[i]) + ln(model.emission(i, seq[0]));
    }
    if delta[0].iter().all(|v| v.is_infinite()) {
        return Err(Error::ImpossiblePath { step: 0 });
    }
    for t in 1..t_len {
        for j in 0..k {
            let emit = ln(model.emission(j, seq[t]));
            if emit.is_infinite() {
                continue;
            }
            let mut best_score = f64::NEG_INFINITY;
            let mut best_prev = 0;
            for i in 0..k {
                let score = delta[t - 1][i] + ln(model.transitions()[i][j]);
                // Strict comparison keeps the lowest index on ties.
                if score > best_score {
                    best_score = score;
                    best_prev = i;
                }
            }
            delta[t][j] = best_score + emit;
            back[t][j] = best_prev;
        }
        if delta[t].iter().all(|v| v.is_infinite()) {
            return Err(Error::ImpossiblePath { step: t });
        }
    }

    let mut last = 0;
    for i in 1..k {
        if delta[t_len - 1][i] > delta[t_len - 1][last] {
            last = i;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(path)
}

/// Log-probability of a specific state path for `seq`.
pub fn path_log_probability(model: &LatentMarkovModel, seq: &[Label], path: &[usize]) -> f64 {
    let ln = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
    let mut total = ln(model.initial()[path[0]]) + ln(model.emission(path[0], seq[0]));
    for t in 1..seq.len() {
        total += ln(model.transitions()[path[t - 1]][path[t]]) + ln(model.emission(path[t], seq[t]));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn label_seq(indices: &[u8]) -> Vec<Label> {
        indices.iter().map(|&i| Label(i)).collect()
    }

    #[test]
    fn single_state_path_is_constant() {
        let m = LatentMarkovModel::new(
            vec![1.0],
            vec![vec![1.0]],
            vec![vec![0.5, 0.5]],
        )
        .unwrap();
        let path = viterbi(&m, &label_seq(&[0, 1, 0])).unwrap();
        assert_eq!(path, vec![0, 0, 0]);
    }

    #[test]
    fn identity_emissions_force_the_path() {
        let m = LatentMarkovModel::new(
            vec![0.5, 0.3, 0.2],
            vec![
                vec![0.4, 0.3, 0.3],
                vec![0.3, 0.4, 0.3],
                vec![0.3, 0.3, 0.4],
            ],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        let path = viterbi(&m, &label_seq(&[2, 0, 1, 1])).unwrap();
        assert_eq!(path, vec![2, 0, 1, 1]);
    }

    #[test]
    fn impossible_step_is_named() {
        let m = LatentMarkovModel::new(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let err = viterbi(&m, &label_seq(&[0, 0, 1])).unwrap_err();
        match err {
            Error::ImpossiblePath { step } => assert_eq!(step, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    /// Exhaustive argmax over all K^T paths.
    fn brute_force_best(model: &LatentMarkovModel, seq: &[Label]) -> (f64, Vec<usize>) {
        let k = model.n_states();
        let t_len = seq.len();
        let mut best_score = f64::NEG_INFINITY;
        let mut best_path = Vec::new();
        let paths = (k as u64).pow(t_len as u32);
        for code in 0..paths {
            let mut c = code;
            let mut path = Vec::with_capacity(t_len);
            for _ in 0..t_len {
                path.push((c % k as u64) as usize);
                c /= k as u64;
            }
            let score = path_log_probability(model, seq, &path);
            if score > best_score {
                best_score = score;
                best_path = path;
            }
        }
        (best_score, best_path)
    }

    #[test]
    fn matches_exhaustive_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let k = rng.random_range(1..=3);
            let t = rng.random_range(1..=4usize);
            let m = crate::lmm::forward::tests::random_model(k, 3, &mut rng);
            let seq: Vec<Label> = (0..t).map(|_| Label(rng.random_range(0..3u8))).collect();
            let path = viterbi(&m, &seq).unwrap();
            let (best_score, best_path) = brute_force_best(&m, &seq);
            let score = path_log_probability(&m, &seq, &path);
            assert!(
                (score - best_score).abs() < 1e-9,
                "viterbi {score} vs brute {best_score}"
            );
            assert_eq!(path, best_path);
        }
    }
}
