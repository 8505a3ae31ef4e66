//! Lloyd-style k-modes over categorical vectors with Hamming dissimilarity.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mode initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KModesInit {
    /// Sample k distinct data vectors as modes.
    Random,
    /// Sample each mode position from the empirical category frequencies,
    /// then snap to the nearest unused distinct data vector.
    Frequency,
}

/// Controls for [`kmodes`] and the typing wrappers around it.
#[derive(Debug, Clone)]
pub struct KModesConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub init: KModesInit,
}

impl Default for KModesConfig {
    fn default() -> Self {
        KModesConfig {
            restarts: 10,
            max_iter: 100,
            seed: 0,
            init: KModesInit::Random,
        }
    }
}

/// Result of one k-modes run (best of restarts).
#[derive(Debug, Clone)]
pub struct KModesOutcome {
    /// `modes[c][p]`: category of cluster `c` at position `p`.
    pub modes: Vec<Vec<usize>>,
    /// Cluster index per input vector.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of Hamming dissimilarities.
    pub wss: f64,
    /// WSS after each assignment step of the winning restart.
    pub wss_trace: Vec<f64>,
    /// Final WSS of every restart.
    pub restart_wss: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn hamming(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Cluster `points` into `k` modes. Deterministic given the seed; ties in
/// nearest-mode go to the lowest cluster index and ties in positionwise modes
/// to the lowest category.
pub fn kmodes(points: &[Vec<usize>], k: usize, config: &KModesConfig) -> Result<KModesOutcome> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("cluster count must be positive".into()));
    }
    let len = points[0].len();
    if points.iter().any(|p| p.len() != len) {
        return Err(Error::InvalidArgument("ragged trajectory vectors".into()));
    }
    let mut distinct: Vec<Vec<usize>> = points.to_vec();
    distinct.sort();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} exceeds {} distinct trajectories",
            distinct.len()
        )));
    }
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    let n_categories = 1 + points
        .iter()
        .flat_map(|p| p.iter())
        .copied()
        .max()
        .unwrap_or(0);

    let mut best: Option<KModesOutcome> = None;
    let mut restart_wss = Vec::with_capacity(config.restarts);
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64 + 1);
        let modes = initial_modes(points, &distinct, k, n_categories, config.init, &mut rng);
        let outcome = lloyd(points, modes, n_categories, config.max_iter);
        restart_wss.push(outcome.wss);
        let better = best.as_ref().map(|b| outcome.wss < b.wss).unwrap_or(true);
        if better {
            best = Some(outcome);
        }
    }
    let mut outcome = best.unwrap();
    outcome.restart_wss = restart_wss;
    Ok(outcome)
}

fn initial_modes(
    points: &[Vec<usize>],
    distinct: &[Vec<usize>],
    k: usize,
    n_categories: usize,
    init: KModesInit,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    match init {
        KModesInit::Random => {
            // Partial Fisher-Yates over the distinct vectors.
            let mut indices: Vec<usize> = (0..distinct.len()).collect();
            for i in 0..k {
                let j = rng.random_range(i..indices.len());
                indices.swap(i, j);
            }
            indices[..k].iter().map(|&i| distinct[i].clone()).collect()
        }
        KModesInit::Frequency => {
            let len = points[0].len();
            let mut freq = vec![vec![0usize; n_categories]; len];
            for point in points {
                for (p, &c) in point.iter().enumerate() {
                    freq[p][c] += 1;
                }
            }
            let mut used: Vec<usize> = Vec::with_capacity(k);
            let mut modes = Vec::with_capacity(k);
            for _ in 0..k {
                let sampled: Vec<usize> = (0..len)
                    .map(|p| {
                        let total: usize = freq[p].iter().sum();
                        let mut draw = rng.random_range(0..total);
                        for (c, &f) in freq[p].iter().enumerate() {
                            if draw < f {
                                return c;
                            }
                            draw -= f;
                        }
                        n_categories - 1
                    })
                    .collect();
                // Snap to the nearest distinct vector not already chosen.
                let mut best_idx = None;
                let mut best_dist = usize::MAX;
                for (i, cand) in distinct.iter().enumerate() {
                    if used.contains(&i) {
                        continue;
                    }
                    let d = hamming(&sampled, cand);
                    if d < best_dist {
                        best_dist = d;
                        best_idx = Some(i);
                    }
                }
                let idx = best_idx.expect("k <= distinct count");
                used.push(idx);
                modes.push(distinct[idx].clone());
            }
            modes
        }
    }
}

fn lloyd(
    points: &[Vec<usize>],
    mut modes: Vec<Vec<usize>>,
    n_categories: usize,
    max_iter: usize,
) -> KModesOutcome {
    let k = modes.len();
    let n = points.len();
    let len = points[0].len();
    let mut assignment = vec![usize::MAX; n];
    let mut wss_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // Assignment step; ties to the lowest cluster index.
        let mut changed = false;
        let mut wss = 0usize;
        for (i, point) in points.iter().enumerate() {
            let mut best_c = 0;
            let mut best_d = hamming(point, &modes[0]);
            for (c, mode) in modes.iter().enumerate().skip(1) {
                let d = hamming(point, mode);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if assignment[i] != best_c {
                changed = true;
                assignment[i] = best_c;
            }
            wss += best_d;
        }

        // Revive empty clusters from the current farthest point.
        let mut sizes = vec![0usize; k];
        for &c in &assignment {
            sizes[c] += 1;
        }
        let mut revived = false;
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .max_by_key(|&i| (hamming(&points[i], &modes[assignment[i]]), std::cmp::Reverse(i)))
                .unwrap();
            modes[c] = points[far].clone();
            sizes[assignment[far]] -= 1;
            assignment[far] = c;
            sizes[c] = 1;
            revived = true;
        }
        if revived {
            // Distances changed; recompute the running cost for the trace.
            wss = (0..n).map(|i| hamming(&points[i], &modes[assignment[i]])).sum();
            changed = true;
        }
        wss_trace.push(wss as f64);

        if !changed && iterations > 0 {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }

        // Update step: positionwise majority, ties to the lowest category.
        for c in 0..k {
            if sizes[c] == 0 {
                continue;
            }
            for p in 0..len {
                let mut counts = vec![0usize; n_categories];
                for (i, point) in points.iter().enumerate() {
                    if assignment[i] == c {
                        counts[point[p]] += 1;
                    }
                }
                let mut best_cat = 0;
                for cat in 1..n_categories {
                    if counts[cat] > counts[best_cat] {
                        best_cat = cat;
                    }
                }
                modes[c][p] = best_cat;
            }
        }
        iterations += 1;
    }

    let wss = *wss_trace.last().unwrap();
    KModesOutcome {
        modes,
        assignment,
        wss,
        wss_trace,
        restart_wss: Vec::new(),
        iterations,
        converged,
    }
}
