//! Scaled forward–backward recursions.
//!
//! Per-step scaling constants keep the recursion in a safe floating range at
//! any sequence length; the log-likelihood is the sum of the logged scales.
//! The hot path works on flat, caller-owned buffers so EM can sweep thousands
//! of users without allocating.

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::lmm::LatentMarkovModel;

/// Reusable flat buffers for one forward–backward sweep.
#[derive(Default)]
pub(crate) struct FbWorkspace {
    /// `t * k + i`: scaled forward variable.
    pub alpha: Vec<f64>,
    /// `t * k + i`: scaled backward variable.
    pub beta: Vec<f64>,
    /// Per-step normalizers.
    pub scales: Vec<f64>,
    /// Flattened transition matrix, `i * k + j`.
    pub trans: Vec<f64>,
    /// Flattened emission matrix, `i * n_labels + l`.
    pub emit: Vec<f64>,
    k: usize,
    n_labels: usize,
}

impl FbWorkspace {
    pub fn prepare(&mut self, model: &LatentMarkovModel) {
        let k = model.n_states();
        let n_labels = model.n_labels();
        self.k = k;
        self.n_labels = n_labels;
        self.trans.clear();
        for row in model.transitions() {
            self.trans.extend_from_slice(row);
        }
        self.emit.clear();
        for row in model.emissions() {
            self.emit.extend_from_slice(row);
        }
    }

    fn reserve(&mut self, t_len: usize) {
        self.alpha.resize(t_len * self.k, 0.0);
        self.beta.resize(t_len * self.k, 0.0);
        self.scales.resize(t_len, 0.0);
    }

    #[inline]
    pub fn emission(&self, state: usize, label: usize) -> f64 {
        self.emit[state * self.n_labels + label]
    }
}

/// Scaled forward pass over prepared buffers. `Err(step)` when the sequence
/// becomes impossible at `step`.
pub(crate) fn forward_into(
    model: &LatentMarkovModel,
    seq: &[Label],
    ws: &mut FbWorkspace,
) -> std::result::Result<(), usize> {
    let k = model.n_states();
    let t_len = seq.len();
    ws.reserve(t_len);

    let mut sum = 0.0;
    let y0 = seq[0].index();
    for i in 0..k {
        let v = model.initial()[i] * ws.emission(i, y0);
        ws.alpha[i] = v;
        sum += v;
    }
    if sum <= 0.0 {
        return Err(0);
    }
    ws.scales[0] = sum;
    let inv = 1.0 / sum;
    for v in &mut ws.alpha[..k] {
        *v *= inv;
    }

    for t in 1..t_len {
        let y = seq[t].index();
        let (prev_rows, cur_rows) = ws.alpha.split_at_mut(t * k);
        let prev = &prev_rows[(t - 1) * k..];
        let cur = &mut cur_rows[..k];
        let mut sum = 0.0;
        for (j, cur_j) in cur.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..k {
                acc += prev[i] * ws.trans[i * k + j];
            }
            let v = acc * ws.emit[j * ws.n_labels + y];
            *cur_j = v;
            sum += v;
        }
        if sum <= 0.0 {
            return Err(t);
        }
        ws.scales[t] = sum;
        let inv = 1.0 / sum;
        for v in cur.iter_mut() {
            *v *= inv;
        }
    }
    Ok(())
}

/// Scaled backward pass; requires a completed forward pass in `ws`.
pub(crate) fn backward_into(model: &LatentMarkovModel, seq: &[Label], ws: &mut FbWorkspace) {
    let k = model.n_states();
    let t_len = seq.len();
    for v in &mut ws.beta[(t_len - 1) * k..t_len * k] {
        *v = 1.0;
    }
    for t in (0..t_len - 1).rev() {
        let y_next = seq[t + 1].index();
        let inv_scale = 1.0 / ws.scales[t + 1];
        let (head, tail) = ws.beta.split_at_mut((t + 1) * k);
        let cur = &mut head[t * k..];
        let next = &tail[..k];
        for (i, cur_i) in cur.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..k {
                acc += ws.trans[i * k + j] * ws.emit[j * ws.n_labels + y_next] * next[j];
            }
            *cur_i = acc * inv_scale;
        }
    }
}

/// Sum of logged scales, batching the logarithms: scales stay in (0, 1], so
/// partial products are multiplied down to a floor before each `ln`.
pub(crate) fn loglik_from_scales(scales: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut product = 1.0f64;
    for &c in scales {
        product *= c;
        if product < 1e-280 {
            total += product.ln();
            product = 1.0;
        }
    }
    total + product.ln()
}

/// Posterior quantities for one sequence; allocating reference
/// implementation kept for the tests that cross-check the flat E-step path.
#[cfg(test)]
pub(crate) struct ForwardBackward {
    pub log_likelihood: f64,
    /// `gamma[t][i]`: posterior probability of state `i` at step `t`.
    pub gamma: Vec<Vec<f64>>,
    /// `xi_sum[i][j]`: expected transition count `i -> j`, summed over steps.
    pub xi_sum: Vec<Vec<f64>>,
}

/// Log-probability of `seq` under `model`.
///
/// Returns negative infinity when the sequence is impossible under the model
/// (some step has zero probability in every state).
pub fn log_likelihood(model: &LatentMarkovModel, seq: &[Label]) -> f64 {
    if seq.is_empty() {
        return 0.0;
    }
    let mut ws = FbWorkspace::default();
    ws.prepare(model);
    match forward_into(model, seq, &mut ws) {
        Ok(()) => loglik_from_scales(&ws.scales[..seq.len()]),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Full forward–backward pass. `None` when the sequence is impossible under
/// the model.
#[cfg(test)]
pub(crate) fn forward_backward(
    model: &LatentMarkovModel,
    seq: &[Label],
) -> Option<ForwardBackward> {
    let k = model.n_states();
    let t_len = seq.len();
    let mut ws = FbWorkspace::default();
    ws.prepare(model);
    if forward_into(model, seq, &mut ws).is_err() {
        return None;
    }
    backward_into(model, seq, &mut ws);
    let log_likelihood = loglik_from_scales(&ws.scales[..t_len]);

    let gamma = (0..t_len)
        .map(|t| {
            (0..k)
                .map(|i| ws.alpha[t * k + i] * ws.beta[t * k + i])
                .collect()
        })
        .collect();

    let mut xi_sum = vec![vec![0.0; k]; k];
    for t in 0..t_len.saturating_sub(1) {
        let y_next = seq[t + 1].index();
        let inv_scale = 1.0 / ws.scales[t + 1];
        for i in 0..k {
            let a_ti = ws.alpha[t * k + i];
            if a_ti == 0.0 {
                continue;
            }
            for j in 0..k {
                xi_sum[i][j] += a_ti
                    * ws.trans[i * k + j]
                    * ws.emission(j, y_next)
                    * ws.beta[(t + 1) * k + j]
                    * inv_scale;
            }
        }
    }

    Some(ForwardBackward {
        log_likelihood,
        gamma,
        xi_sum,
    })
}

/// Decode by per-window posterior argmax; ties go to the lowest state index.
pub fn posterior_decode(model: &LatentMarkovModel, seq: &[Label]) -> Result<Vec<usize>> {
    if seq.is_empty() {
        return Ok(Vec::new());
    }
    let mut ws = FbWorkspace::default();
    ws.prepare(model);
    if let Err(step) = forward_into(model, seq, &mut ws) {
        return Err(Error::ImpossiblePath { step });
    }
    backward_into(model, seq, &mut ws);
    let k = model.n_states();
    Ok((0..seq.len())
        .map(|t| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for i in 0..k {
                let v = ws.alpha[t * k + i] * ws.beta[t * k + i];
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn label_seq(indices: &[u8]) -> Vec<Label> {
        indices.iter().map(|&i| Label(i)).collect()
    }

    /// Exhaustive path-sum likelihood; the independent oracle for the scaled
    /// forward recursion.
    fn brute_force_likelihood(model: &LatentMarkovModel, seq: &[Label]) -> f64 {
        let k = model.n_states();
        let t_len = seq.len();
        let mut total = 0.0;
        let paths = (k as u64).pow(t_len as u32);
        for code in 0..paths {
            let mut c = code;
            let mut path = Vec::with_capacity(t_len);
            for _ in 0..t_len {
                path.push((c % k as u64) as usize);
                c /= k as u64;
            }
            let mut prob = model.initial()[path[0]] * model.emission(path[0], seq[0]);
            for t in 1..t_len {
                prob *= model.transitions()[path[t - 1]][path[t]] * model.emission(path[t], seq[t]);
            }
            total += prob;
        }
        total
    }

    pub(crate) fn random_model(k: usize, n_labels: usize, rng: &mut ChaCha8Rng) -> LatentMarkovModel {
        let mut row = |len: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..len).map(|_| -rng.random::<f64>().ln()).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        };
        let pi = row(k);
        let transitions = (0..k).map(|_| row(k)).collect();
        let emissions = (0..k).map(|_| row(n_labels)).collect();
        LatentMarkovModel::new(pi, transitions, emissions).unwrap()
    }

    #[test]
    fn single_state_likelihood_is_a_product() {
        let m = LatentMarkovModel::new(
            vec![1.0],
            vec![vec![1.0]],
            vec![vec![0.5, 0.3, 0.2]],
        )
        .unwrap();
        let ll = log_likelihood(&m, &label_seq(&[0, 0]));
        assert!((ll - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_model_has_zero_loglik() {
        let m = LatentMarkovModel::new(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let ll = log_likelihood(&m, &label_seq(&[0, 0, 0]));
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn impossible_sequence_is_negative_infinity() {
        let m = LatentMarkovModel::new(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let ll = log_likelihood(&m, &label_seq(&[0, 1]));
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn forward_matches_exhaustive_path_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = rng.random_range(1..=3);
            let t = rng.random_range(1..=5usize);
            let m = random_model(k, 3, &mut rng);
            let seq: Vec<Label> = (0..t).map(|_| Label(rng.random_range(0..3u8))).collect();
            let scaled = log_likelihood(&m, &seq);
            let brute = brute_force_likelihood(&m, &seq).ln();
            assert!(
                (scaled - brute).abs() < 1e-9,
                "scaled {scaled} vs brute {brute}"
            );
        }
    }

    #[test]
    fn batched_log_matches_plain_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let scales: Vec<f64> = (0..5000).map(|_| rng.random::<f64>().max(1e-6)).collect();
        let plain: f64 = scales.iter().map(|c| c.ln()).sum();
        let batched = loglik_from_scales(&scales);
        assert!((plain - batched).abs() < 1e-6 * plain.abs());
    }

    #[test]
    fn posteriors_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(3, 3, &mut rng);
        let seq = label_seq(&[0, 2, 1, 1, 0]);
        let fb = forward_backward(&m, &seq).unwrap();
        for row in &fb.gamma {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        let xi_total: f64 = fb.xi_sum.iter().flatten().sum();
        assert!((xi_total - (seq.len() - 1) as f64).abs() < 1e-9);
    }
}
