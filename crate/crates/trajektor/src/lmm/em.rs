//! Maximum likelihood fitting by expectation–maximization, with restarts,
//! plus AIC/BIC model selection.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::binning::ObservationMatrix;
use crate::error::{Error, Result};
use crate::lmm::forward::{backward_into, forward_into, loglik_from_scales, FbWorkspace};
use crate::lmm::LatentMarkovModel;

/// Initialization of the restart models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// All rows drawn from a flat Dirichlet.
    Random,
    /// Emission rows perturb the empirical label frequencies; transitions
    /// start diagonal-heavy.
    Spread,
}

/// EM fitting controls.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Absolute log-likelihood gain below which a restart stops.
    pub tol: f64,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            restarts: 10,
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
            init: InitStrategy::Random,
        }
    }
}

/// Outcome of [`em_fit`]: the best restart's model and bookkeeping for all
/// restarts.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: LatentMarkovModel,
    /// Log-likelihood of `model` on the fitted data.
    pub loglik: f64,
    /// EM updates applied in the winning restart.
    pub iterations: usize,
    pub converged: bool,
    /// Final log-likelihood of each restart.
    pub restart_logliks: Vec<f64>,
    /// Per-iteration log-likelihood of each restart.
    pub restart_traces: Vec<Vec<f64>>,
    pub seed: u64,
    /// Set when the state count exceeds the number of distinct observed
    /// sequences; the fit still runs but states cannot all be identified.
    pub degenerate: bool,
}

/// Fit a `k`-state model to the summarized observation rows.
///
/// All restarts run to completion; the one with the highest final
/// log-likelihood wins (ties keep the earliest restart).
pub fn em_fit(obs: &ObservationMatrix, k: usize, config: &EmConfig) -> Result<FitResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("state count must be positive".into()));
    }
    if obs.n_users() == 0 {
        return Err(Error::EmptyInput);
    }
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    let n_labels = obs.n_labels();
    let distinct = {
        let mut rows: Vec<&[crate::corpus::Label]> =
            (0..obs.n_users()).map(|u| obs.row(u)).collect();
        rows.sort();
        rows.dedup();
        rows.len()
    };
    let degenerate = k > distinct;

    let mut best: Option<RestartOutcome> = None;
    let mut restart_logliks = Vec::with_capacity(config.restarts);
    let mut restart_traces = Vec::with_capacity(config.restarts);
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64 + 1);
        let init = initial_model(obs, k, n_labels, config.init, &mut rng);
        let outcome = run_restart(obs, init, config);
        restart_logliks.push(outcome.loglik);
        restart_traces.push(outcome.trace.clone());
        let better = best
            .as_ref()
            .map(|b| outcome.loglik > b.loglik)
            .unwrap_or(true);
        if better {
            best = Some(outcome);
        }
    }
    let winner = best.unwrap();
    Ok(FitResult {
        model: winner.model,
        loglik: winner.loglik,
        iterations: winner.iterations,
        converged: winner.converged,
        restart_logliks,
        restart_traces,
        seed: config.seed,
        degenerate,
    })
}

struct RestartOutcome {
    model: LatentMarkovModel,
    loglik: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn run_restart(obs: &ObservationMatrix, init: LatentMarkovModel, config: &EmConfig) -> RestartOutcome {
    let k = init.n_states();
    let n_labels = init.n_labels();
    let mut model = init;
    let mut ws = FbWorkspace::default();
    let mut stats = SufficientStats::new(k, n_labels);
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let loglik = e_step(&model, obs, &mut ws, &mut stats);
        trace.push(loglik);
        if !loglik.is_finite() {
            break;
        }
        if prev.is_finite() && loglik - prev < config.tol {
            converged = true;
            break;
        }
        if iterations == config.max_iter {
            break;
        }
        model = m_step(&stats, model);
        iterations += 1;
        prev = loglik;
    }
    RestartOutcome {
        model,
        loglik: *trace.last().unwrap(),
        iterations,
        converged,
        trace,
    }
}

struct SufficientStats {
    k: usize,
    n_labels: usize,
    /// Expected initial-state counts.
    pi_acc: Vec<f64>,
    /// Expected transition counts, `i * k + j`.
    trans_acc: Vec<f64>,
    /// Expected state occupancy over the first T-1 steps.
    trans_den: Vec<f64>,
    /// Expected per-state label counts, `i * n_labels + l`.
    emit_acc: Vec<f64>,
    /// Expected state occupancy over all steps.
    emit_den: Vec<f64>,
    /// Scratch for the xi accumulation.
    weights: Vec<f64>,
}

impl SufficientStats {
    fn new(k: usize, n_labels: usize) -> Self {
        SufficientStats {
            k,
            n_labels,
            pi_acc: vec![0.0; k],
            trans_acc: vec![0.0; k * k],
            trans_den: vec![0.0; k],
            emit_acc: vec![0.0; k * n_labels],
            emit_den: vec![0.0; k],
            weights: vec![0.0; k],
        }
    }

    fn reset(&mut self) {
        for buf in [
            &mut self.pi_acc,
            &mut self.trans_acc,
            &mut self.trans_den,
            &mut self.emit_acc,
            &mut self.emit_den,
        ] {
            buf.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// One E-step over every user, accumulating sufficient statistics in place.
/// The log-likelihood is summed with Kahan compensation so that convergence
/// checks stay meaningful at corpus scale.
fn e_step(
    model: &LatentMarkovModel,
    obs: &ObservationMatrix,
    ws: &mut FbWorkspace,
    stats: &mut SufficientStats,
) -> f64 {
    let k = stats.k;
    stats.reset();
    ws.prepare(model);
    let mut total = 0.0f64;
    let mut comp = 0.0f64;
    let mut impossible = false;
    for u in 0..obs.n_users() {
        let seq = obs.row(u);
        let t_len = seq.len();
        if forward_into(model, seq, ws).is_err() {
            impossible = true;
            continue;
        }
        backward_into(model, seq, ws);
        let user_ll = loglik_from_scales(&ws.scales[..t_len]);
        let y = user_ll - comp;
        let t = total + y;
        comp = (t - total) - y;
        total = t;

        // State occupancy.
        for t in 0..t_len {
            let label = seq[t].index();
            let base = t * k;
            for i in 0..k {
                let g = ws.alpha[base + i] * ws.beta[base + i];
                stats.emit_acc[i * stats.n_labels + label] += g;
                stats.emit_den[i] += g;
                if t == 0 {
                    stats.pi_acc[i] += g;
                }
                if t + 1 < t_len {
                    stats.trans_den[i] += g;
                }
            }
        }
        // Expected transitions: xi_t(i,j) = alpha_t(i) a_ij w_j with
        // w_j = b_j(y_{t+1}) beta_{t+1}(j) / c_{t+1}.
        for t in 0..t_len.saturating_sub(1) {
            let y_next = seq[t + 1].index();
            let inv_scale = 1.0 / ws.scales[t + 1];
            let next_base = (t + 1) * k;
            for j in 0..k {
                stats.weights[j] = ws.emission(j, y_next) * ws.beta[next_base + j] * inv_scale;
            }
            let base = t * k;
            for i in 0..k {
                let a_ti = ws.alpha[base + i];
                if a_ti == 0.0 {
                    continue;
                }
                let row = i * k;
                for j in 0..k {
                    stats.trans_acc[row + j] += a_ti * ws.trans[row + j] * stats.weights[j];
                }
            }
        }
    }
    if impossible {
        f64::NEG_INFINITY
    } else {
        total
    }
}

fn m_step(stats: &SufficientStats, previous: LatentMarkovModel) -> LatentMarkovModel {
    let k = stats.k;
    let n_labels = stats.n_labels;
    let normalize = |row: &[f64], fallback: &[f64]| -> Vec<f64> {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter().map(|v| v / sum).collect()
        } else {
            // A state with no expected occupancy carries no information;
            // keep its previous row.
            fallback.to_vec()
        }
    };
    let pi = normalize(&stats.pi_acc, previous.initial());
    let transitions = (0..k)
        .map(|i| normalize(&stats.trans_acc[i * k..(i + 1) * k], &previous.transitions()[i]))
        .collect();
    let emissions = (0..k)
        .map(|i| {
            normalize(
                &stats.emit_acc[i * n_labels..(i + 1) * n_labels],
                &previous.emissions()[i],
            )
        })
        .collect();
    LatentMarkovModel::new(pi, transitions, emissions)
        .expect("normalized EM update is stochastic")
}

fn initial_model(
    obs: &ObservationMatrix,
    k: usize,
    n_labels: usize,
    init: InitStrategy,
    rng: &mut ChaCha8Rng,
) -> LatentMarkovModel {
    let dirichlet = |len: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..len)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    };
    match init {
        InitStrategy::Random => {
            let pi = dirichlet(k, rng);
            let transitions = (0..k).map(|_| dirichlet(k, rng)).collect();
            let emissions = (0..k).map(|_| dirichlet(n_labels, rng)).collect();
            LatentMarkovModel::new(pi, transitions, emissions).unwrap()
        }
        InitStrategy::Spread => {
            let mut freq = vec![0.0f64; n_labels];
            let mut total = 0.0;
            for u in 0..obs.n_users() {
                for l in obs.row(u) {
                    freq[l.index()] += 1.0;
                    total += 1.0;
                }
            }
            for f in freq.iter_mut() {
                // Smoothing keeps unseen labels reachable.
                *f = (*f + 1.0) / (total + n_labels as f64);
            }
            let emissions = (0..k)
                .map(|_| {
                    let row: Vec<f64> = freq
                        .iter()
                        .map(|f| f * rng.random_range(0.5..1.5))
                        .collect();
                    let sum: f64 = row.iter().sum();
                    row.into_iter().map(|v| v / sum).collect()
                })
                .collect();
            let transitions = (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| {
                            if k == 1 {
                                1.0
                            } else if i == j {
                                0.8
                            } else {
                                0.2 / (k - 1) as f64
                            }
                        })
                        .collect()
                })
                .collect();
            let pi = vec![1.0 / k as f64; k];
            LatentMarkovModel::new(pi, transitions, emissions).unwrap()
        }
    }
}

/// AIC and BIC for a fit, with the free-parameter count used by both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationCriteria {
    pub params: usize,
    pub aic: f64,
    pub bic: f64,
}

/// Compute AIC and BIC. Free parameters: `K-1` initial probabilities,
/// `K(K-1)` transitions, and `K(L-1)` emissions.
pub fn information_criteria(fit: &FitResult, n_users: usize) -> Result<InformationCriteria> {
    if n_users < 1 {
        return Err(Error::InvalidArgument(
            "information criteria need at least one user".into(),
        ));
    }
    let k = fit.model.n_states();
    let l = fit.model.n_labels();
    let params = (k - 1) + k * (k - 1) + k * (l - 1);
    let aic = 2.0 * params as f64 - 2.0 * fit.loglik;
    let bic = params as f64 * (n_users as f64).ln() - 2.0 * fit.loglik;
    Ok(InformationCriteria { params, aic, bic })
}
