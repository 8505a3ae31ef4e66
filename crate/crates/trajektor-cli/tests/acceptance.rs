//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (visible with `--nocapture`).
//!
//! Run with `cargo test -p trajektor-cli --test acceptance`.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use trajektor::binning::{window_sizes, ObservationMatrix};
use trajektor::corpus::{filter_bot_like, EventRecord, EventSet, Label, SpanPolicy};
use trajektor::lmm::{
    align_states, em_fit, generate, information_criteria, log_likelihood, path_log_probability,
    viterbi, EmConfig, InitStrategy, LatentMarkovModel,
};
use trajektor::metrics::{gini, tscore, CohortScope, Grouping};
use trajektor::stats::{kruskal_wallis, wilcoxon_rank_sum, TestMethod};
use trajektor::synth::{generate_typed_corpus, SynthCorpusConfig};
use trajektor::typing::{adjusted_rand_index, kmodes, KModesConfig};

use trajektor_cli::config::PipelineConfig;
use trajektor_cli::pipeline;

/// Published reference model: behavioral probabilities per state (emissions)
/// and transition probabilities. One emission row sums to 0.99 in print and
/// is rescaled.
fn reference_model() -> LatentMarkovModel {
    LatentMarkovModel::from_rounded_rows(
        vec![1.0, 1.0, 1.0],
        vec![
            vec![0.99, 0.01, 0.00],
            vec![0.03, 0.96, 0.01],
            vec![0.02, 0.03, 0.95],
        ],
        vec![
            vec![0.95, 0.03, 0.02],
            vec![0.45, 0.32, 0.22],
            vec![0.06, 0.13, 0.81],
        ],
    )
    .unwrap()
}

fn random_model(k: usize, n_labels: usize, rng: &mut ChaCha8Rng) -> LatentMarkovModel {
    let mut row = |len: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..len).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    };
    let pi = row(k);
    let transitions = (0..k).map(|_| row(k)).collect();
    let emissions = (0..k).map(|_| row(n_labels)).collect();
    LatentMarkovModel::new(pi, transitions, emissions).unwrap()
}

/// Exhaustive path-sum likelihood oracle.
fn brute_force_loglik(model: &LatentMarkovModel, seq: &[Label]) -> f64 {
    let k = model.n_states();
    let t_len = seq.len();
    let mut total = 0.0;
    for code in 0..(k as u64).pow(t_len as u32) {
        let mut c = code;
        let mut prob = 1.0;
        let mut prev = usize::MAX;
        for t in 0..t_len {
            let state = (c % k as u64) as usize;
            c /= k as u64;
            prob *= if t == 0 {
                model.initial()[state]
            } else {
                model.transitions()[prev][state]
            } * model.emission(state, seq[t]);
            prev = state;
        }
        total += prob;
    }
    total.ln()
}

/// Exhaustive max-path oracle.
fn brute_force_best_path(model: &LatentMarkovModel, seq: &[Label]) -> f64 {
    let k = model.n_states();
    let t_len = seq.len();
    let mut best = f64::NEG_INFINITY;
    for code in 0..(k as u64).pow(t_len as u32) {
        let mut c = code;
        let mut path = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            path.push((c % k as u64) as usize);
            c /= k as u64;
        }
        let score = path_log_probability(model, seq, &path);
        if score > best {
            best = score;
        }
    }
    best
}

#[test]
fn criterion_01_parameter_recovery() {
    let started = Instant::now();
    let truth = reference_model();
    let data = generate(&truth, 3000, 100, 20_240_401).unwrap();
    // Spread initialization suits the sticky-chain regime; every restart
    // then converges well inside the runtime budget.
    let fit = em_fit(
        &data.observations,
        3,
        &EmConfig {
            restarts: 10,
            seed: 7,
            init: InitStrategy::Spread,
            ..EmConfig::default()
        },
    )
    .unwrap();
    let perm = align_states(&fit.model, &truth).unwrap();
    let aligned = fit.model.permuted(&perm);
    let mut max_err: f64 = 0.0;
    for s in 0..3 {
        for l in 0..3 {
            max_err = max_err.max((aligned.emissions()[s][l] - truth.emissions()[s][l]).abs());
        }
        for j in 0..3 {
            max_err = max_err.max((aligned.transitions()[s][j] - truth.transitions()[s][j]).abs());
        }
    }
    let elapsed = started.elapsed();
    assert!(
        max_err <= 0.05,
        "criterion 1 FAIL: max parameter error {max_err:.4} > 0.05"
    );
    assert!(
        elapsed.as_secs() < 60,
        "criterion 1 FAIL: runtime {elapsed:?} >= 60 s"
    );
    println!(
        "[acceptance] criterion 1 (parameter recovery): PASS  max|err|={max_err:.4}, {:.1} s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_02_em_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for dataset in 0..20 {
        let k_true = 2 + dataset % 3;
        let model = random_model(k_true, 3, &mut rng);
        let data = generate(&model, 200, 20, 1000 + dataset as u64).unwrap();
        let k_fit = 2 + (dataset / 3) % 3;
        let fit = em_fit(
            &data.observations,
            k_fit,
            &EmConfig {
                restarts: 3,
                max_iter: 200,
                seed: dataset as u64,
                ..EmConfig::default()
            },
        )
        .unwrap();
        for trace in &fit.restart_traces {
            for pair in trace.windows(2) {
                let drop = pair[0] - pair[1];
                worst = worst.max(drop);
                assert!(
                    drop <= 1e-8,
                    "criterion 2 FAIL: loglik dropped by {drop} (dataset {dataset})"
                );
            }
        }
    }
    println!(
        "[acceptance] criterion 2 (EM monotonicity): PASS  worst per-iteration drop {worst:.2e} <= 1e-8"
    );
}

#[test]
fn criterion_03_exact_inference_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_fwd: f64 = 0.0;
    let mut max_vit: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=3);
        let t = rng.random_range(1..=6usize);
        let model = random_model(k, 3, &mut rng);
        let seq: Vec<Label> = (0..t).map(|_| Label(rng.random_range(0..3u8))).collect();

        let fwd = log_likelihood(&model, &seq);
        let fwd_oracle = brute_force_loglik(&model, &seq);
        max_fwd = max_fwd.max((fwd - fwd_oracle).abs());

        let path = viterbi(&model, &seq).unwrap();
        let vit = path_log_probability(&model, &seq, &path);
        let vit_oracle = brute_force_best_path(&model, &seq);
        max_vit = max_vit.max((vit - vit_oracle).abs());
    }
    assert!(
        max_fwd < 1e-9,
        "criterion 3 FAIL: forward loglik off by {max_fwd}"
    );
    assert!(
        max_vit < 1e-9,
        "criterion 3 FAIL: viterbi path probability off by {max_vit}"
    );
    println!(
        "[acceptance] criterion 3 (exact inference): PASS  forward err {max_fwd:.2e}, viterbi err {max_vit:.2e} over 100 models"
    );
}

#[test]
fn criterion_04_model_selection_by_bic() {
    let truth = reference_model();
    let data = generate(&truth, 3000, 100, 20_240_401).unwrap();
    let mut bics = Vec::new();
    for k in 1..=6 {
        let fit = em_fit(
            &data.observations,
            k,
            &EmConfig {
                restarts: 4,
                max_iter: 250,
                tol: 1e-5,
                seed: 40 + k as u64,
                init: InitStrategy::Spread,
                ..EmConfig::default()
            },
        )
        .unwrap();
        let ic = information_criteria(&fit, data.observations.n_users()).unwrap();
        bics.push((k, ic.bic));
    }
    let best = bics
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
        .0;
    assert_eq!(
        best, 3,
        "criterion 4 FAIL: BIC minimized at K={best}, expected 3 (curve: {bics:?})"
    );
    println!(
        "[acceptance] criterion 4 (model selection): PASS  BIC minimum at K=3 over K=1..6"
    );
}

#[test]
fn criterion_05_clustering_recovery_and_elbow() {
    let periods = 100;
    let per_type = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let archetype = |a: usize, p: usize| -> usize {
        match a {
            0 => 0,                                  // stable low
            1 => 2,                                  // stable high
            2 => 1,                                  // stable mixed
            3 => (p * 3) / periods,                  // escalating
            _ => 2 - (p * 3) / periods,              // de-escalating
        }
    };
    let mut points = Vec::new();
    let mut planted = Vec::new();
    for a in 0..5 {
        for _ in 0..per_type {
            let mut v: Vec<usize> = (0..periods).map(|p| archetype(a, p)).collect();
            for slot in v.iter_mut() {
                if rng.random::<f64>() < 0.10 {
                    *slot = rng.random_range(0..3);
                }
            }
            points.push(v);
            planted.push(a);
        }
    }
    let config = KModesConfig {
        restarts: 10,
        seed: 55,
        ..KModesConfig::default()
    };
    let outcome = kmodes(&points, 5, &config).unwrap();
    let ari = adjusted_rand_index(&planted, &outcome.assignment);
    assert!(ari > 0.95, "criterion 5 FAIL: ARI {ari:.4} <= 0.95");

    // WSS curve over k=2..12; elbow = largest curvature (second difference).
    let mut curve = Vec::new();
    for k in 2..=12usize {
        let out = kmodes(&points, k, &config).unwrap();
        curve.push(out.wss);
    }
    let mut elbow = 0usize;
    let mut best_curvature = f64::NEG_INFINITY;
    for i in 1..curve.len() - 1 {
        let curvature = curve[i - 1] - 2.0 * curve[i] + curve[i + 1];
        if curvature > best_curvature {
            best_curvature = curvature;
            elbow = i + 2;
        }
    }
    assert!(
        (5..=8).contains(&elbow),
        "criterion 5 FAIL: WSS elbow at k={elbow}, expected 5..8 (curve {curve:?})"
    );
    println!(
        "[acceptance] criterion 5 (clustering recovery): PASS  ARI={ari:.4}, elbow at k={elbow}"
    );
}

#[test]
fn criterion_06_metric_oracles() {
    // Exact known value.
    assert_eq!(gini(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.25);

    // Pairwise O(n^2) oracle over 1,000 random vectors.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut max_err: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..64);
        let values: Vec<f64> = (0..n)
            .map(|_| (rng.random::<f64>() * 100.0).floor())
            .collect();
        if values.iter().all(|&v| v == 0.0) {
            continue;
        }
        let fast = gini(&values).unwrap();
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut pair_sum = 0.0;
        for a in &values {
            for b in &values {
                pair_sum += (a - b).abs();
            }
        }
        let oracle = pair_sum / (2.0 * (n * n) as f64 * mean);
        max_err = max_err.max((fast - oracle).abs());
    }
    assert!(
        max_err < 1e-12,
        "criterion 6 FAIL: gini off pairwise oracle by {max_err}"
    );

    // Weighted-mean identity on every cell of randomized runs.
    let mut checked_cells = 0usize;
    for round in 0..20 {
        let corpus = generate_typed_corpus(&SynthCorpusConfig {
            users: 60,
            periods: 10,
            seed: 600 + round,
            ..SynthCorpusConfig::default()
        })
        .unwrap();
        let bins = trajektor::binning::build_bins(&corpus.events, 10).unwrap();
        let vocab = trajektor::corpus::LabelVocabulary::default();
        let obs = trajektor::binning::summarize(
            &corpus.events,
            &bins,
            trajektor::binning::SummaryRule::MaxClass,
            &vocab,
        )
        .unwrap();
        // Random partition of users into three groups.
        let mut rng = ChaCha8Rng::seed_from_u64(round);
        let mut buckets: Vec<Vec<String>> = vec![Vec::new(); 3];
        for user in obs.users() {
            buckets[rng.random_range(0..3usize)].push(user.clone());
        }
        let grouping = Grouping::new(
            buckets
                .into_iter()
                .enumerate()
                .filter(|(_, b)| !b.is_empty())
                .map(|(i, b)| (format!("g{i}"), b))
                .collect(),
        )
        .unwrap();
        let series = tscore(&obs, &grouping, CohortScope::AllUsers).unwrap();
        let total = obs.n_users() as f64;
        for w in 0..series.window_count() {
            for l in 0..series.n_labels() {
                if series.cohort_mean(w, l) > 0.0 {
                    let mut weighted = 0.0;
                    for g in 0..series.groups().len() {
                        weighted += series.group_sizes()[g] as f64 / total
                            * series.score(g, w, l).unwrap();
                    }
                    assert!(
                        (weighted - 100.0).abs() < 1e-9,
                        "criterion 6 FAIL: weighted mean {weighted} != 100 at ({w},{l})"
                    );
                    checked_cells += 1;
                } else {
                    for g in 0..series.groups().len() {
                        assert!(series.score(g, w, l).is_none());
                    }
                }
            }
        }
    }
    println!(
        "[acceptance] criterion 6 (metric oracles): PASS  gini err {max_err:.2e}, identity on {checked_cells} cells"
    );
}

#[test]
fn criterion_07_statistics_oracles() {
    // Kruskal-Wallis hand value.
    let kw = kruskal_wallis(&[
        vec![1.0, 2.0, 3.0],
        vec![4.0, 5.0, 6.0],
        vec![7.0, 8.0, 9.0],
    ])
    .unwrap();
    assert!(
        (kw.statistic - 7.2).abs() < 1e-9,
        "criterion 7 FAIL: H = {} != 7.2",
        kw.statistic
    );

    // Exact Wilcoxon vs enumeration for every size pair with m+n <= 10.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pairs_checked = 0usize;
    for m in 1..=9usize {
        for n in 1..=(10 - m) {
            for _ in 0..5 {
                // Tie-free samples.
                let mut pool: Vec<f64> = Vec::new();
                while pool.len() < m + n {
                    let v = rng.random::<f64>();
                    if !pool.contains(&v) {
                        pool.push(v);
                    }
                }
                let x = pool[..m].to_vec();
                let y = pool[m..].to_vec();
                let fast = wilcoxon_rank_sum(&x, &y).unwrap();
                assert_eq!(fast.method, TestMethod::WilcoxonExact);
                let oracle = enumeration_wilcoxon_p(&x, &y);
                assert!(
                    (fast.p_value - oracle).abs() < 1e-12,
                    "criterion 7 FAIL: m={m} n={n}: exact {} vs enumeration {}",
                    fast.p_value,
                    oracle
                );
                pairs_checked += 1;
            }
        }
    }

    // Null rejection rate at alpha = 0.05 over 10,000 simulations of two
    // same-distribution discrete samples.
    let mut rejections = 0usize;
    let simulations = 10_000;
    for _ in 0..simulations {
        let x: Vec<f64> = (0..25).map(|_| rng.random_range(0..20) as f64).collect();
        let y: Vec<f64> = (0..25).map(|_| rng.random_range(0..20) as f64).collect();
        let result = wilcoxon_rank_sum(&x, &y).unwrap();
        if result.p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / simulations as f64;
    assert!(
        (0.03..=0.07).contains(&rate),
        "criterion 7 FAIL: null rejection rate {rate} outside [0.03, 0.07]"
    );
    println!(
        "[acceptance] criterion 7 (statistics oracles): PASS  H=7.2, {pairs_checked} exact pairs, null rate {rate:.4}"
    );
}

/// Enumeration oracle for the two-sided exact Wilcoxon p-value.
fn enumeration_wilcoxon_p(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len();
    let n = y.len();
    let mut pooled: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let observed_u: f64 = pooled
        .iter()
        .enumerate()
        .filter(|(_, (_, is_x))| *is_x)
        .map(|(i, _)| (i + 1) as f64)
        .sum::<f64>()
        - (m * (m + 1)) as f64 / 2.0;
    let max_u = (m * n) as f64;
    let u_min = observed_u.min(max_u - observed_u);
    let total = m + n;
    let mut lower = 0u64;
    let mut upper = 0u64;
    let mut count = 0u64;
    // Walk all C(total, m) selections by bitmask.
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let mut w = 0.0;
        for i in 0..total {
            if mask & (1 << i) != 0 {
                w += (i + 1) as f64;
            }
        }
        let u = w - (m * (m + 1)) as f64 / 2.0;
        if u <= u_min + 1e-12 {
            lower += 1;
        }
        if u >= max_u - u_min - 1e-12 {
            upper += 1;
        }
        count += 1;
    }
    ((lower + upper) as f64 / count as f64).min(1.0)
}

#[test]
fn criterion_08_proportion_reproduction() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus_dir).unwrap();
    let corpus = generate_typed_corpus(&SynthCorpusConfig {
        users: 1000,
        periods: 60,
        seed: 42,
        ..SynthCorpusConfig::default()
    })
    .unwrap();
    let events_path = corpus_dir.join("events.csv");
    let vocab = trajektor::corpus::LabelVocabulary::default();
    corpus
        .events
        .write_csv(std::fs::File::create(&events_path).unwrap(), &vocab)
        .unwrap();

    let mut config = PipelineConfig::default();
    for (key, value) in [
        ("input", events_path.display().to_string()),
        ("periods", "60".to_string()),
        ("wss_k_max", "8".to_string()),
        ("slope_threshold", "2.0".to_string()),
        ("seed", "42".to_string()),
    ] {
        config.apply(key, &value).unwrap();
    }
    let out = dir.path().join("run");
    let manifest = pipeline::cmd_run(&config, &out).unwrap();
    assert_eq!(manifest.stages.len(), 13, "criterion 8 FAIL: expected 13 stages");

    let assignment = trajektor::typing::TypeAssignment::read_csv(
        std::io::BufReader::new(std::fs::File::open(out.join(pipeline::TYPES)).unwrap()),
    )
    .unwrap();
    let total = assignment.assignments.len() as f64;
    let mut worst_pp: f64 = 0.0;
    for (label, planted_count) in &corpus.planted_counts {
        let assigned = assignment
            .assignments
            .values()
            .filter(|(l, _, _)| l == label)
            .count();
        let diff_pp = (assigned as f64 - *planted_count as f64) / total * 100.0;
        worst_pp = worst_pp.max(diff_pp.abs());
        assert!(
            diff_pp.abs() <= 1.0,
            "criterion 8 FAIL: type {label} share off by {diff_pp:.2} pp"
        );
    }

    // The weighted-mean identity must hold on every defined scored cell of
    // this run as well.
    let obs = ObservationMatrix::read_csv(
        std::io::BufReader::new(std::fs::File::open(out.join(pipeline::OBSERVATIONS)).unwrap()),
        std::io::BufReader::new(std::fs::File::open(out.join(pipeline::COUNTS)).unwrap()),
        &vocab,
    )
    .unwrap();
    let grouping = pipeline::type_grouping(&assignment).unwrap();
    let series = tscore(&obs, &grouping, CohortScope::AllUsers).unwrap();
    let users_total = obs.n_users() as f64;
    for w in 0..series.window_count() {
        for l in 0..series.n_labels() {
            if series.cohort_mean(w, l) > 0.0 {
                let weighted: f64 = (0..series.groups().len())
                    .map(|g| {
                        series.group_sizes()[g] as f64 / users_total
                            * series.score(g, w, l).unwrap()
                    })
                    .sum();
                assert!((weighted - 100.0).abs() < 1e-9);
            }
        }
    }
    println!(
        "[acceptance] criterion 8 (proportion reproduction): PASS  worst share error {worst_pp:.2} pp over 7 types"
    );
}

#[test]
fn criterion_09_run_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_typed_corpus(&SynthCorpusConfig {
        users: 400,
        periods: 30,
        seed: 9,
        ..SynthCorpusConfig::default()
    })
    .unwrap();
    let events_path = dir.path().join("events.csv");
    let vocab = trajektor::corpus::LabelVocabulary::default();
    corpus
        .events
        .write_csv(std::fs::File::create(&events_path).unwrap(), &vocab)
        .unwrap();

    let mut config = PipelineConfig::default();
    for (key, value) in [
        ("input", events_path.display().to_string()),
        ("periods", "30".to_string()),
        ("wss_k_max", "6".to_string()),
        ("slope_threshold", "3.0".to_string()),
        ("seed", "1234".to_string()),
    ] {
        config.apply(key, &value).unwrap();
    }
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let manifest_a = pipeline::cmd_run(&config, &out_a).unwrap();
    let manifest_b = pipeline::cmd_run(&config, &out_b).unwrap();

    let json_a = serde_json::to_string(&manifest_a).unwrap();
    let json_b = serde_json::to_string(&manifest_b).unwrap();
    assert_eq!(json_a, json_b, "criterion 9 FAIL: manifests differ");

    let manifest_bytes_a = std::fs::read(out_a.join("run_manifest.json")).unwrap();
    let manifest_bytes_b = std::fs::read(out_b.join("run_manifest.json")).unwrap();
    assert_eq!(
        manifest_bytes_a, manifest_bytes_b,
        "criterion 9 FAIL: manifest files differ"
    );

    let mut artifacts = 0usize;
    for stage in &manifest_a.stages {
        for artifact in &stage.artifacts {
            let a = std::fs::read(out_a.join(&artifact.path)).unwrap();
            let b = std::fs::read(out_b.join(&artifact.path)).unwrap();
            assert_eq!(
                a, b,
                "criterion 9 FAIL: artifact {} differs between runs",
                artifact.path
            );
            artifacts += 1;
        }
    }
    println!(
        "[acceptance] criterion 9 (determinism): PASS  {artifacts} artifacts byte-identical across reruns"
    );
}

#[test]
fn criterion_10_filter_and_binning_contracts() {
    // 14,600 events over a 365-day span is exactly 40/day: kept.
    let span = (0i64, 365 * 86_400);
    let make_user = |user: &str, count: usize| -> Vec<EventRecord> {
        (0..count)
            .map(|i| EventRecord {
                user_id: user.to_string(),
                timestamp: (i as i64 * 2_000) % (365 * 86_400),
                label: Label(0),
            })
            .collect()
    };
    let mut events = make_user("edge", 14_600);
    events.extend(make_user("quiet", 100));
    let es = EventSet::from_events(events, Some(span)).unwrap();
    let (_, removed) = filter_bot_like(&es, 40.0, SpanPolicy::FullSpan).unwrap();
    assert!(
        removed.is_empty(),
        "criterion 10 FAIL: rate exactly 40/day was removed"
    );

    let mut events = make_user("edge", 14_601);
    events.extend(make_user("quiet", 100));
    let es = EventSet::from_events(events, Some(span)).unwrap();
    let (_, removed) = filter_bot_like(&es, 40.0, SpanPolicy::FullSpan).unwrap();
    assert_eq!(
        removed.len(),
        1,
        "criterion 10 FAIL: 14,601 events over 365 days not removed"
    );
    assert_eq!(removed[0].user_id, "edge");

    // Window sizes: sum to N, pairwise difference at most 1.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0usize;
    let mut cases: Vec<(usize, usize)> = vec![
        (1, 1),
        (10, 2),
        (10, 3),
        (100, 7),
        (5_221_256, 100),
    ];
    for _ in 0..500 {
        let n = rng.random_range(1..200_000usize);
        let p = rng.random_range(1..=n.min(500));
        cases.push((n, p));
    }
    for (n, p) in cases {
        let sizes = window_sizes(n, p);
        assert_eq!(sizes.iter().sum::<usize>(), n, "criterion 10 FAIL: sizes sum");
        let min = *sizes.iter().min().unwrap();
        let max = *sizes.iter().max().unwrap();
        assert!(max - min <= 1, "criterion 10 FAIL: sizes differ by {}", max - min);
        checked += 1;
    }
    println!(
        "[acceptance] criterion 10 (filter/binning contracts): PASS  boundary kept/removed correct, {checked} window layouts balanced"
    );
}
