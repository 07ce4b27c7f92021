//! Acceptance suite: one test per acceptance criterion, each printing a
//! single PASS/FAIL line (run with `--nocapture` to see them live).
//!
//! Heavy stream batches (20 seeded repetitions each) are shared between
//! criteria through lazily computed statics, so e.g. the recurrent-Sea
//! ensemble runs serve the detection, gap, and false-alarm checks at once.

use std::sync::LazyLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use driftvae::config::ExperimentConfig;
use driftvae::drift;
use driftvae::eval::{drift_delays, PrequentialMetrics, ScoreWindow};
use driftvae::nn::LossKind;
use driftvae::runner::run_single;
use driftvae::vae::{VaeConfig, VaeModel};

const REPS: usize = 20;
const MASTER_SEED: u64 = 42;
const DETECTION_HORIZON: u64 = 1000;

/// Slim per-repetition view retained by the shared batches.
struct RunStats {
    gmean: Option<f64>,
    gmean_by_step: Vec<Option<f64>>,
    alarms: Vec<u64>,
    drift_times: Vec<u64>,
    train_steps: Vec<u64>,
}

fn run_batch(label: &str, cfg: &ExperimentConfig) -> Vec<RunStats> {
    let started = Instant::now();
    let mut out = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let r = run_single(cfg, rep).expect("repetition runs");
        let mut train_steps: Vec<u64> = r.train_events.iter().map(|&(t, _)| t).collect();
        train_steps.dedup();
        out.push(RunStats {
            gmean: r.whole_run.gmean,
            gmean_by_step: r.rows.iter().map(|row| row.gmean).collect(),
            alarms: r.alarms,
            drift_times: r.drift_times.clone(),
            train_steps,
        });
    }
    eprintln!(
        "[batch] {label}: {} reps in {:.1} s",
        cfg.repetitions,
        started.elapsed().as_secs_f64()
    );
    out
}

fn parse(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).expect("valid acceptance config")
}

fn synthetic_cfg(generator: &str, mode: &str, schedule: Option<&str>, length: u64) -> ExperimentConfig {
    let (hidden, epochs, loss) = match generator {
        "sea" => ("[64, 8]", 10, "bce"),
        "sine" => ("[8]", 10, "bce"),
        "circle" => ("[8]", 50, "mse"),
        "vib" => ("[8]", 1, "mse"),
        other => panic!("unknown generator {other}"),
    };
    let schedule_field = schedule
        .map(|s| format!(", \"drift_schedule\": {s}"))
        .unwrap_or_default();
    parse(&format!(
        r#"{{
            "stream": {{ "generator": "{generator}", "length": {length},
                        "anomaly_rate": 0.01{schedule_field} }},
            "engine": {{ "mode": "{mode}" }},
            "model": {{ "hidden": {hidden}, "latent": 8, "epochs": {epochs}, "loss": "{loss}" }},
            "pretrain_size": 2000,
            "repetitions": {REPS},
            "seed": {MASTER_SEED}
        }}"#
    ))
}

static SEA_ESDD: LazyLock<Vec<RunStats>> =
    LazyLock::new(|| run_batch("sea esdd", &synthetic_cfg("sea", "esdd", None, 20_000)));
static SEA_BASELINE: LazyLock<Vec<RunStats>> =
    LazyLock::new(|| run_batch("sea baseline", &synthetic_cfg("sea", "baseline", None, 20_000)));
static SINE_ESDD: LazyLock<Vec<RunStats>> =
    LazyLock::new(|| run_batch("sine esdd", &synthetic_cfg("sine", "esdd", None, 20_000)));
static SINE_BASELINE: LazyLock<Vec<RunStats>> =
    LazyLock::new(|| run_batch("sine baseline", &synthetic_cfg("sine", "baseline", None, 20_000)));
static CIRCLE_ESDD: LazyLock<Vec<RunStats>> =
    LazyLock::new(|| run_batch("circle esdd", &synthetic_cfg("circle", "esdd", None, 20_000)));
static CIRCLE_BASELINE: LazyLock<Vec<RunStats>> = LazyLock::new(|| {
    run_batch("circle baseline", &synthetic_cfg("circle", "baseline", None, 20_000))
});
static VIB_ESDD: LazyLock<Vec<RunStats>> =
    LazyLock::new(|| run_batch("vib esdd", &synthetic_cfg("vib", "esdd", None, 20_000)));
static VIB_BASELINE: LazyLock<Vec<RunStats>> =
    LazyLock::new(|| run_batch("vib baseline", &synthetic_cfg("vib", "baseline", None, 20_000)));
static SEA_SINGLE_DRIFT: LazyLock<Vec<RunStats>> = LazyLock::new(|| {
    run_batch(
        "sea single-drift esdd",
        &synthetic_cfg("sea", "esdd", Some(r#"[ { "at": 10000, "kind": "abrupt" } ]"#), 20_000),
    )
});
/// Forest-style surrogate: a 10-dimensional stream whose normal class
/// abruptly changes scale at t = 10000 while staying inside the
/// pretraining feature range (Forest's drift regroups classes within a
/// persistent feature distribution; a surrogate that drifts outside the
/// normalizer's range would measure clamping, not recovery). Normals are
/// N(0,1)¹⁰ before the drift and N(0,0.5²)¹⁰ after; anomalies stay at
/// N(1.5,1)¹⁰ throughout — hard anomalies (≈4.7σ Mahalanobis), so the
/// pre-drift level sits near 0.91 like a real high-dimensional benchmark
/// rather than at a ceiling-effect 0.99. Streams are materialized as
/// labeled CSV files and run through the ordinary CSV path, one file per
/// repetition.
static FOREST_SURROGATE: LazyLock<Vec<RunStats>> = LazyLock::new(|| {
    let started = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let mut out = Vec::with_capacity(REPS);
    for rep in 0..REPS {
        let path = dir.path().join(format!("surrogate_{rep}.csv"));
        write_surrogate_csv(&path, driftvae::config::mix_seed(0x4242, rep as u64));
        let cfg = parse(&format!(
            r#"{{
                "stream": {{ "generator": "csv", "csv_path": {path:?}, "length": 20000,
                            "drift_schedule": [ {{ "at": 10000, "kind": "abrupt" }} ] }},
                "engine": {{ "mode": "esdd" }},
                "model": {{ "hidden": [64], "latent": 8, "epochs": 10, "loss": "mse" }},
                "pretrain_size": 2000,
                "repetitions": {REPS},
                "seed": {MASTER_SEED}
            }}"#
        ));
        let r = run_single(&cfg, rep).expect("surrogate rep runs");
        let mut train_steps: Vec<u64> = r.train_events.iter().map(|&(t, _)| t).collect();
        train_steps.dedup();
        out.push(RunStats {
            gmean: r.whole_run.gmean,
            gmean_by_step: r.rows.iter().map(|row| row.gmean).collect(),
            alarms: r.alarms,
            drift_times: r.drift_times.clone(),
            train_steps,
        });
    }
    eprintln!(
        "[batch] forest-style surrogate esdd: {REPS} reps in {:.1} s",
        started.elapsed().as_secs_f64()
    );
    out
});

fn write_surrogate_csv(path: &std::path::Path, seed: u64) {
    fn draw(rng: &mut ChaCha12Rng, mean: f64, std: f64, label: u8, text: &mut String) {
        for _ in 0..10 {
            let noise: f64 = StandardNormal.sample(rng);
            text.push_str(&format!("{},", mean + std * noise));
        }
        text.push_str(&format!("{label}\n"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut text = String::with_capacity(24_000 * 80);
    let header: Vec<String> = (0..10).map(|j| format!("f{j}")).collect();
    text.push_str(&header.join(","));
    text.push_str(",label\n");
    // Pretraining head: pre-drift normals only.
    for _ in 0..2000 {
        draw(&mut rng, 0.0, 1.0, 0, &mut text);
    }
    // Stream: the normal scale halves abruptly at step 10000.
    for t in 1..=20_000u64 {
        let anomalous = rng.random::<f64>() < 0.01;
        if anomalous {
            draw(&mut rng, 1.5, 1.0, 1, &mut text);
        } else if t < 10_000 {
            draw(&mut rng, 0.0, 1.0, 0, &mut text);
        } else {
            draw(&mut rng, 0.0, 0.5, 0, &mut text);
        }
    }
    std::fs::write(path, text).expect("surrogate csv written");
}
static SEA_ONEDD: LazyLock<Vec<RunStats>> =
    LazyLock::new(|| run_batch("sea one-dd", &synthetic_cfg("sea", "onedd", None, 20_000)));

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {verdict} — {detail}");
    eprintln!("criterion {criterion}: {verdict} — {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Central differences are invalid when a leaky-ReLU pre-activation sits
/// within the step of its kink; such draws are rejected up front (before
/// any gradient is evaluated) and redrawn.
fn kink_free(model: &VaeModel, x: &[f64], eps: &[f64], fd_step: f64) -> bool {
    let margin = 10.0 * fd_step;
    let clear = |net: &driftvae::nn::Mlp, input: &[f64]| {
        let (_, cache) = net.forward(input).unwrap();
        net.layers()
            .iter()
            .zip(cache.preactivations())
            .all(|(layer, zs)| {
                layer.spec.activation != driftvae::nn::Activation::LeakyRelu
                    || zs.iter().all(|z| z.abs() > margin)
            })
    };
    if !clear(model.encoder(), x) {
        return false;
    }
    let (mu, log_var) = model.encode(x).unwrap();
    let z: Vec<f64> = mu
        .iter()
        .zip(log_var.iter().zip(eps.iter()))
        .map(|(&m, (&lv, &e))| m + (lv / 2.0).exp() * e)
        .collect();
    clear(model.decoder(), &z)
}

// Criterion 1 — analytic VAE gradients (fixed latent noise) match central
// finite differences within 1e-4 for every architecture shape at reduced
// width, 20 random inputs each, in under a minute.
#[test]
fn criterion_1_vae_gradient_correctness() {
    let started = Instant::now();
    // Table-2 hidden-layer shapes, widths capped at 128.
    let shapes: [(&[usize], LossKind); 6] = [
        (&[64, 8], LossKind::Bce),  // sea
        (&[8], LossKind::Bce),      // sine / circle / vib
        (&[64, 32], LossKind::Mse), // fraud
        (&[96, 48], LossKind::Bce), // image rows, reduced below 128
        (&[64], LossKind::Mse),     // forest
        (&[96], LossKind::Mse),     // 128-wide row, reduced
    ];
    let input_dim = 8;
    let latent = 8;
    // In the 1e-5 regime the check is roundoff-dominated for saturated
    // cross-entropy terms; 1e-4 keeps truncation negligible while shrinking
    // that noise an order of magnitude.
    let fd_step = 1e-4;
    let mut worst_overall = 0.0f64;
    let mut rng = ChaCha12Rng::seed_from_u64(1001);
    for (hidden, loss) in shapes {
        let mut checked = 0;
        while checked < 20 {
            let cfg = VaeConfig {
                input_dim,
                hidden: hidden.to_vec(),
                latent_dim: latent,
                beta: 1.0,
                loss,
                epochs: 1,
                batch_size: 1,
                learning_rate: 0.001,
                input_noise_std: 0.0,
            };
            let model = VaeModel::new(cfg, &mut rng).unwrap();
            let x: Vec<f64> = (0..input_dim).map(|_| rng.random::<f64>()).collect();
            let eps: Vec<f64> = (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect();
            if !kink_free(&model, &x, &eps, fd_step) {
                continue;
            }
            checked += 1;
            let err = model.grad_check(&x, &eps, fd_step).unwrap();
            assert!(
                err < 1e-4,
                "shape {hidden:?} ({loss:?}): max relative error {err}"
            );
            worst_overall = worst_overall.max(err);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        "1 (gradient correctness)",
        worst_overall < 1e-4 && elapsed < 60.0,
        &format!("worst relative error {worst_overall:.2e} over 6 shapes × 20 inputs in {elapsed:.1} s"),
    );
}

/// Standard normal density integral over [0, a] by adaptive Simpson; the
/// independent oracle for the implementation's p-values.
fn phi_integral(a: f64) -> f64 {
    fn density(x: f64) -> f64 {
        (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
    fn simpson(f: fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let mid = (lo + hi) / 2.0;
        (hi - lo) / 6.0 * (f(lo) + 4.0 * f(mid) + f(hi))
    }
    fn adaptive(f: fn(f64) -> f64, lo: f64, hi: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let mid = (lo + hi) / 2.0;
        let left = simpson(f, lo, mid);
        let right = simpson(f, mid, hi);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            adaptive(f, lo, mid, left, tol / 2.0, depth - 1)
                + adaptive(f, mid, hi, right, tol / 2.0, depth - 1)
        }
    }
    adaptive(density, 0.0, a, simpson(density, 0.0, a), 1e-13, 40)
}

fn p_value_oracle(z: f64) -> f64 {
    (1.0 - 2.0 * phi_integral(z.abs())).min(1.0)
}

/// Pair-count oracle for the U statistics: `a < b` counts 1, ties ½.
fn u_brute(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut u_ref = 0.0;
    let mut u_mov = 0.0;
    for &x in a {
        for &y in b {
            if x < y {
                u_ref += 1.0;
            } else if y < x {
                u_mov += 1.0;
            } else {
                u_ref += 0.5;
                u_mov += 0.5;
            }
        }
    }
    (u_ref, u_mov)
}

// Criterion 2 — U statistics equal the brute-force pair count exactly on
// 1000 random small window pairs; p-values match quadrature within 1e-9.
#[test]
fn criterion_2_mann_whitney_exactness() {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(2002);
    let mut worst_p_gap = 0.0f64;
    for case in 0..1000 {
        let n = 1 + (rng.random::<u32>() % 8) as usize;
        let m = 1 + (rng.random::<u32>() % 8) as usize;
        // Coarse value grid so ties are frequent.
        let a: Vec<f64> = (0..n).map(|_| (rng.random::<u32>() % 5) as f64).collect();
        let b: Vec<f64> = (0..m).map(|_| (rng.random::<u32>() % 5) as f64).collect();
        let (u_ref, u_mov) = drift::mann_whitney_u(&a, &b).unwrap();
        let (br, bm) = u_brute(&a, &b);
        assert_eq!(u_ref, br, "case {case}: U_ref mismatch");
        assert_eq!(u_mov, bm, "case {case}: U_mov mismatch");

        let pooled_ties = {
            let mut all = a.clone();
            all.extend_from_slice(&b);
            all.sort_by(f64::total_cmp);
            let mut term = 0.0;
            let mut i = 0;
            while i < all.len() {
                let mut j = i;
                while j + 1 < all.len() && all[j + 1] == all[i] {
                    j += 1;
                }
                let c = (j - i + 1) as f64;
                if c > 1.0 {
                    term += c * c * c - c;
                }
                i = j + 1;
            }
            term
        };
        let constants = drift::TestConstants::from_samples(n, m, pooled_ties);
        let z = drift::z_value(u_ref.min(u_mov), constants);
        let gap = (drift::p_value(z) - p_value_oracle(z)).abs();
        worst_p_gap = worst_p_gap.max(gap);
        assert!(gap < 1e-9, "case {case}: p-value gap {gap}");
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        "2 (rank-test exactness)",
        elapsed < 10.0,
        &format!("1000 pairs exact, worst p-value gap {worst_p_gap:.2e}, in {elapsed:.2} s"),
    );
}

// Criterion 3 — on recurrent Sea (severe), the ensemble alarm fires within
// 1000 steps of each true drift in ≥ 18/20 runs and ≥ 18/20 runs have zero
// pre-drift false alarms.
#[test]
fn criterion_3_sea_drift_detection() {
    let runs = &*SEA_ESDD;
    let mut detected_both = 0;
    let mut clean_pre_drift = 0;
    for r in runs {
        let delays = drift_delays(&r.alarms, &r.drift_times, DETECTION_HORIZON);
        if delays.delays.iter().all(Option::is_some) {
            detected_both += 1;
        }
        if r.alarms.iter().all(|&a| a >= r.drift_times[0]) {
            clean_pre_drift += 1;
        }
    }
    report(
        "3 (sea drift detection)",
        detected_both >= 18 && clean_pre_drift >= 18,
        &format!(
            "both drifts caught within {DETECTION_HORIZON} steps in {detected_both}/20 runs; \
             zero pre-drift false alarms in {clean_pre_drift}/20 runs"
        ),
    );
}

fn window_mean(stats: &RunStats, lo: u64, hi: u64) -> Option<f64> {
    let lo = lo as usize;
    let hi = (hi as usize).min(stats.gmean_by_step.len());
    if lo >= hi {
        return None;
    }
    let vals: Vec<f64> = stats.gmean_by_step[lo..hi].iter().copied().flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Post-reset recovery on one batch: G-mean over the 1000 steps after the
/// second post-alarm incremental update must reach the pre-drift level
/// minus the tolerance.
fn recovery_count(runs: &[RunStats], drift_at: u64) -> (usize, Vec<String>) {
    let mut recovered = 0;
    let mut notes = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let Some(pre) = window_mean(r, drift_at - 1000, drift_at) else {
            notes.push(format!("rep {i}: no pre-drift metric"));
            continue;
        };
        let Some(&alarm) = r.alarms.iter().find(|&&a| a >= drift_at) else {
            notes.push(format!("rep {i}: drift never detected"));
            continue;
        };
        let updates: Vec<u64> = r.train_steps.iter().copied().filter(|&t| t > alarm).collect();
        let Some(&second_update) = updates.get(1) else {
            notes.push(format!("rep {i}: fewer than two post-alarm updates"));
            continue;
        };
        let Some(post) = window_mean(r, second_update, second_update + 1000) else {
            notes.push(format!("rep {i}: no post-update metric"));
            continue;
        };
        if post + 0.05 >= pre {
            recovered += 1;
        } else {
            notes.push(format!("rep {i}: pre {pre:.3} vs post {post:.3}"));
        }
    }
    (recovered, notes)
}

// Criterion 4 — after the post-alarm reset, performance returns to within
// 0.05 of the pre-drift level by the second incremental update in ≥ 15/20
// runs, on single-drift Sea and on a higher-dimensional abrupt surrogate.
#[test]
fn criterion_4_post_reset_recovery() {
    let (sea, sea_notes) = recovery_count(&SEA_SINGLE_DRIFT, 10_000);
    let (forest, forest_notes) = recovery_count(&FOREST_SURROGATE, 10_000);
    report(
        "4 (post-reset recovery)",
        sea >= 15 && forest >= 15,
        &format!(
            "recovered within two updates in {sea}/20 sea runs and {forest}/20 surrogate runs \
             (issues: sea {sea_notes:?}, surrogate {forest_notes:?})"
        ),
    );
}

// Criterion 5 — the full method beats the frozen baseline on whole-run
// G-mean by ≥ 0.10 (sea, sine, circle) and ≥ 0.03 (vib). The paper-value
// bands (±0.07) are advisory and reported without failing the test.
#[test]
fn criterion_5_ensemble_benefit() {
    let cases: [(&str, &LazyLock<Vec<RunStats>>, &LazyLock<Vec<RunStats>>, f64, f64); 4] = [
        ("sea", &SEA_ESDD, &SEA_BASELINE, 0.10, 0.868),
        ("sine", &SINE_ESDD, &SINE_BASELINE, 0.10, 0.791),
        ("circle", &CIRCLE_ESDD, &CIRCLE_BASELINE, 0.10, 0.760),
        ("vib", &VIB_ESDD, &VIB_BASELINE, 0.03, 0.945),
    ];
    let mut all_pass = true;
    let mut details = Vec::new();
    for (name, full, base, min_gap, paper) in cases {
        let full_mean = mean(full.iter().filter_map(|r| r.gmean));
        let base_mean = mean(base.iter().filter_map(|r| r.gmean));
        let gap = full_mean - base_mean;
        let gap_ok = gap >= min_gap;
        all_pass &= gap_ok;
        let band = (full_mean - paper).abs() <= 0.07;
        details.push(format!(
            "{name}: full {full_mean:.3} vs baseline {base_mean:.3}, gap {gap:+.3} \
             (need ≥ {min_gap}) {}; advisory band ±0.07 around {paper}: {}",
            if gap_ok { "ok" } else { "FAIL" },
            if band { "inside" } else { "outside (advisory only)" }
        ));
    }
    report("5 (ensemble benefit)", all_pass, &details.join(" | "));
}

fn runs_with_false_alarm(runs: &[RunStats]) -> usize {
    runs.iter()
        .filter(|r| {
            !drift_delays(&r.alarms, &r.drift_times, DETECTION_HORIZON)
                .false_alarms
                .is_empty()
        })
        .count()
}

// Criterion 6 — a single shared drift detector produces at least one false
// ensemble alarm across 20 recurrent-Sea runs, while the full detector
// ensemble stays clean in ≥ 18/20 runs.
#[test]
fn criterion_6_drift_vote_ablation() {
    let one_dd_false = runs_with_false_alarm(&SEA_ONEDD);
    let esdd_clean = REPS - runs_with_false_alarm(&SEA_ESDD);
    report(
        "6 (drift-vote ablation)",
        one_dd_false >= 1 && esdd_clean >= 18,
        &format!(
            "one-DD runs with ≥1 false alarm: {one_dd_false}/20; \
             full-ensemble runs with none: {esdd_clean}/20"
        ),
    );
}

// Criterion 7 — metric plumbing: rank-sum PAUC equals the brute-force
// double sum exactly on 1000 random windows, the fading G-mean identity
// holds at every step, and the prequential accumulators reproduce a
// hand-stepped fixture.
#[test]
fn criterion_7_metric_correctness() {
    let mut rng = ChaCha12Rng::seed_from_u64(7007);
    for case in 0..1000 {
        let n = 2 + (rng.random::<u32>() % 199) as usize;
        let mut w = ScoreWindow::new(n);
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            let score = (rng.random::<u32>() % 32) as f64 / 4.0;
            let label = u8::from(rng.random::<f64>() < 0.25);
            w.push(score, label);
            items.push((score, label));
        }
        let pos: Vec<f64> = items.iter().filter(|i| i.1 == 1).map(|i| i.0).collect();
        let neg: Vec<f64> = items.iter().filter(|i| i.1 == 0).map(|i| i.0).collect();
        let brute = if pos.is_empty() || neg.is_empty() {
            None
        } else {
            let mut wins = 0.0;
            for &p in &pos {
                for &q in &neg {
                    if p > q {
                        wins += 1.0;
                    }
                }
            }
            Some(wins / (pos.len() as f64 * neg.len() as f64))
        };
        assert_eq!(w.pauc(), brute, "case {case}: pauc mismatch");
    }

    // Fading G-mean identity against independently stepped accumulators.
    let alpha = 0.99;
    let mut metrics = PrequentialMetrics::new(alpha);
    let (mut sp, mut bp, mut sn, mut bn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for step in 0..2000 {
        let y = u8::from(rng.random::<f64>() < 0.05);
        let y_hat = u8::from(rng.random::<f64>() < 0.2);
        metrics.update(y, y_hat);
        if y == 1 {
            sp = f64::from(y_hat == 1) + alpha * sp;
            bp = 1.0 + alpha * bp;
        } else {
            sn = f64::from(y_hat == 0) + alpha * sn;
            bn = 1.0 + alpha * bn;
        }
        let recall = (bp > 0.0).then(|| sp / bp);
        let specificity = (bn > 0.0).then(|| sn / bn);
        assert_eq!(metrics.recall(), recall, "step {step}");
        assert_eq!(metrics.specificity(), specificity, "step {step}");
        if let (Some(r), Some(s)) = (recall, specificity) {
            let g = metrics.gmean().unwrap();
            assert!((g * g - r * s).abs() < 1e-14, "step {step}: identity gap");
        }
    }

    // 10-step hand fixture (recall only updates on y = 1).
    let mut fixture = PrequentialMetrics::new(0.5);
    for (y, yh) in [(1, 1), (0, 0), (1, 0), (0, 1), (1, 1), (0, 0), (0, 0), (1, 1), (1, 0), (0, 0)]
    {
        fixture.update(y, yh);
    }
    let a: f64 = 0.5;
    let expect_recall = (a.powi(4) + a.powi(2) + a) / (1.0 + a + a.powi(2) + a.powi(3) + a.powi(4));
    assert!((fixture.recall().unwrap() - expect_recall).abs() < 1e-15);

    report(
        "7 (metric correctness)",
        true,
        "1000 PAUC windows exact; fading identities and 10-step fixture reproduced",
    );
}

// Criterion 8 — identical config and master seed give byte-identical trace
// files on a T=2000 smoke stream, in under a minute.
#[test]
fn criterion_8_determinism() {
    let started = Instant::now();
    let cfg = parse(&format!(
        r#"{{
            "stream": {{ "generator": "sea", "length": 2000, "anomaly_rate": 0.01,
                        "drift_schedule": [ {{ "at": 1000, "kind": "abrupt" }} ] }},
            "engine": {{ "w_train": 500, "gamma": 300, "w_drift_min": 100,
                        "w_drift_max": 120, "expiry_time": 100, "mode": "esdd",
                        "ensemble_size": 10, "p_thre": 1, "d_thre": 10,
                        "p_warn": 0.01, "p_alarm": 0.001,
                        "threshold": {{ "kind": "adaptive" }},
                        "ref_init": "stream", "min_retrain": 64 }},
            "model": {{ "hidden": [64, 8], "latent": 8, "epochs": 5, "loss": "bce" }},
            "pretrain_size": 400,
            "repetitions": 2,
            "seed": {MASTER_SEED}
        }}"#
    ));
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = driftvae::runner::run_experiment(&cfg, Some(dir_a.path())).unwrap();
    let b = driftvae::runner::run_experiment(&cfg, Some(dir_b.path())).unwrap();
    let mut identical = true;
    for (pa, pb) in a.trace_paths.iter().zip(b.trace_paths.iter()) {
        identical &= std::fs::read(pa).unwrap() == std::fs::read(pb).unwrap();
    }
    identical &=
        std::fs::read(&a.summary_path).unwrap() == std::fs::read(&b.summary_path).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    report(
        "8 (determinism)",
        identical && elapsed < 60.0,
        &format!(
            "two invocations byte-identical across {} trace files + summary in {elapsed:.1} s",
            a.trace_paths.len()
        ),
    );
}

// Criterion 9 — on stationary Sine (severe), the adaptive mean+std
// threshold is within 0.05 of the best fixed percentile over 20 seeds.
#[test]
fn criterion_9_threshold_ablation() {
    let threshold_cfg = |threshold: &str| {
        parse(&format!(
            r#"{{
                "stream": {{ "generator": "sine", "length": 10000, "anomaly_rate": 0.01,
                            "drift_schedule": [] }},
                "engine": {{ "mode": "vaepp", "threshold": {threshold} }},
                "model": {{ "hidden": [8], "latent": 8, "epochs": 10, "loss": "bce" }},
                "pretrain_size": 2000,
                "repetitions": {REPS},
                "seed": {MASTER_SEED}
            }}"#
        ))
    };
    let batch_mean = |label: &str, threshold: &str| {
        let runs = run_batch(label, &threshold_cfg(threshold));
        mean(runs.iter().filter_map(|r| r.gmean))
    };
    let adaptive = batch_mean("stationary sine adaptive", r#"{ "kind": "adaptive" }"#);
    let mut fixed = Vec::new();
    for b in [60.0, 80.0, 90.0, 95.0] {
        let m = batch_mean(
            &format!("stationary sine percentile {b}"),
            &format!(r#"{{ "kind": "percentile", "b": {b} }}"#),
        );
        fixed.push((b, m));
    }
    let (best_b, best) = fixed
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    report(
        "9 (threshold ablation)",
        adaptive >= best - 0.05,
        &format!(
            "adaptive {adaptive:.3} vs best fixed percentile b={best_b} at {best:.3} \
             (all fixed: {fixed:?})"
        ),
    );
}
