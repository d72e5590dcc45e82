//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its runtime. The heavy fixtures (6-9) retrain hundreds of models; run
//! with `cargo test --test acceptance -- --nocapture` to watch progress.

use std::io::Write as IoWrite;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use fairaudit_core::accountant::{
    calibrate_sigma, epsilon_for_sigma, rdp_subsampled_gaussian, DEFAULT_ORDERS, DPSGD_SHAPE,
    SIGMA_TOLERANCE,
};
use fairaudit_core::audit::{
    apply_accuracy, guesses_from_trace, guesses_per_round, guesses_per_round_group,
    optimal_threshold, run_alooa, run_looa, AuditMethod, AuditPlan, AuditTrace, Direction,
    ThresholdRule,
};
use fairaudit_core::dataio::{load_idx, subsample_per_class, synth_blobs, Dataset, SplitPlan};
use fairaudit_core::exec::ExecPolicy;
use fairaudit_core::model::{
    self, forward_loss, init_params, per_sample_grad, ModelParams, ModelSpec,
};
use fairaudit_core::rng::stream_rng;
use fairaudit_core::special::chi2_sf;
use fairaudit_core::stats::{grc_correlation, kruskal_wallis, risk_report, RiskReport};
use fairaudit_core::train::{
    clip_gradient, l2_norm, record_grc, train, train_dpsgd, train_dpsgds, train_sgd, Algorithm,
    GrcAccumulator, GroupDenominator, TrainConfig,
};

fn pass(criterion: &str, started: Instant) {
    println!("[{criterion}] PASS ({:.1}s)", started.elapsed().as_secs_f64());
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness: per architecture, 100 random probe points with
//    central finite differences on 20 random coordinates each.

fn grad_check(spec: &ModelSpec, probes: usize, coords: usize, tol: f64, seed: u64) {
    let mut rng = stream_rng(seed, 0);
    let d = spec.input_dim();
    for probe in 0..probes {
        let params = init_params(spec, rng.gen()).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y = rng.gen_range(0..spec.num_classes);
        let grad = per_sample_grad(&params, &x, y).unwrap();
        for _ in 0..coords {
            let idx = rng.gen_range(0..params.theta.len());
            let h = 1e-5;
            let mut plus = params.clone();
            plus.theta[idx] += h;
            let mut minus = params.clone();
            minus.theta[idx] -= h;
            let numeric = (forward_loss(&plus, &x, y).unwrap()
                - forward_loss(&minus, &x, y).unwrap())
                / (2.0 * h);
            let denom = grad[idx].abs().max(numeric.abs()).max(1e-3);
            let rel = (grad[idx] - numeric).abs() / denom;
            assert!(
                rel < tol,
                "{:?} probe {probe} coord {idx}: analytic {} numeric {} rel {rel:.3e}",
                spec.arch,
                grad[idx],
                numeric
            );
        }
    }
}

#[test]
fn criterion_01_gradient_correctness() {
    let t = Instant::now();
    grad_check(&ModelSpec::lr(vec![9], 4), 100, 20, 1e-6, 101);
    grad_check(
        &ModelSpec::mlp(vec![7], 3).with_hidden(12),
        100,
        20,
        1e-6,
        102,
    );
    grad_check(&ModelSpec::cnn(vec![1, 12, 12], 3), 100, 20, 1e-5, 103);
    pass("criterion 1: gradient correctness", t);
}

// ---------------------------------------------------------------------------
// 2. Clip contracts.

#[test]
fn criterion_02_clip_contracts() {
    let t = Instant::now();
    // Norm bound holds within 1e-12 and under-bound gradients are untouched.
    let mut rng = stream_rng(201, 0);
    for _ in 0..500 {
        let dim = rng.gen_range(1..40);
        let mut g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let bound = rng.gen_range(0.01..15.0);
        let before: Vec<u64> = g.iter().map(|v| v.to_bits()).collect();
        let norm = clip_gradient(&mut g, bound);
        assert!(l2_norm(&g) <= bound + 1e-12);
        if norm <= bound {
            let after: Vec<u64> = g.iter().map(|v| v.to_bits()).collect();
            assert_eq!(before, after);
        }
    }

    // DP-SGD-S: every logged group bound obeys C^k <= tau * C_prev, with the
    // literal persistent bound carrying across iterations.
    let ds = synth_blobs(40, 3, 6, 3.0, 0.1, 202).unwrap();
    let split = SplitPlan {
        train_indices: (0..ds.len()).collect(),
        test_indices: vec![],
        audit_indices: vec![],
    };
    let cfg = TrainConfig {
        algorithm: Algorithm::DpSgdS,
        noise_multiplier: Some(0.5),
        epochs: 6,
        batch_size: 64,
        scale_bound: 2.0,
        seed: 203,
        persist_clip_bound: true,
        ..TrainConfig::default()
    };
    let art = train_dpsgds(&ds, &split, &ModelSpec::lr(vec![6], 3), &cfg).unwrap();
    let mut prev = cfg.clip_bound;
    let mut checked = 0;
    for rec in art.iterations.iter().filter(|r| !r.skipped) {
        for &ck in &rec.clip_per_group {
            assert!(
                ck <= cfg.scale_bound * prev + 1e-12,
                "iteration {}: C^k {ck} > tau * C_prev {}",
                rec.iteration,
                cfg.scale_bound * prev
            );
        }
        assert_eq!(
            rec.clip_used.unwrap(),
            rec.clip_per_group
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        );
        prev = rec.clip_used.unwrap();
        checked += 1;
    }
    assert!(checked > 0);
    pass("criterion 2: clip contracts", t);
}

// ---------------------------------------------------------------------------
// 3. Degeneracy equivalence: DP-SGD(sigma = 0, C = inf) reproduces SGD
//    bit-for-bit. Batch size is pinned to the training-set size so the
//    nominal divisor (DP-SGD) and the realized one (SGD) coincide.

#[test]
fn criterion_03_degeneracy_equivalence() {
    let t = Instant::now();
    let ds = synth_blobs(30, 2, 6, 10.0, 0.1, 301).unwrap();
    let split = SplitPlan {
        train_indices: (0..ds.len()).collect(),
        test_indices: vec![],
        audit_indices: vec![],
    };
    let spec = ModelSpec::lr(vec![6], 2);
    let base = TrainConfig {
        epochs: 5,
        batch_size: split.num_train(),
        seed: 302,
        ..TrainConfig::default()
    };
    let sgd = train_sgd(&ds, &split, &spec, &base).unwrap();
    let dp = train_dpsgd(
        &ds,
        &split,
        &spec,
        &TrainConfig {
            algorithm: Algorithm::DpSgd,
            noise_multiplier: Some(0.0),
            clip_bound: f64::INFINITY,
            ..base
        },
    )
    .unwrap();
    let a: Vec<u64> = sgd.params.theta.iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = dp.params.theta.iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b, "trajectories diverged");
    pass("criterion 3: degeneracy equivalence", t);
}

// ---------------------------------------------------------------------------
// 4. Accountant.

#[test]
fn criterion_04_accountant() {
    let t = Instant::now();
    // q = 1 grid equals alpha / (2 sigma^2) to 1e-9.
    for &alpha in DEFAULT_ORDERS.iter() {
        for &sigma in &[0.5, 1.0, 2.0, 5.0] {
            let got = rdp_subsampled_gaussian(1.0, sigma, alpha).unwrap();
            assert!((got - alpha / (2.0 * sigma * sigma)).abs() < 1e-9);
        }
    }
    // Subsampled alpha = 2 matches the independent closed form
    // ln(1 + q^2 (e^{1/sigma^2} - 1)) to relative error 1e-6.
    for &(q, sigma) in &[(0.01, 1.0), (0.0256, 0.77), (0.1, 1.5), (0.6, 3.0)] {
        let oracle = (q * q * (1.0f64 / (sigma * sigma)).exp_m1()).ln_1p();
        let got = rdp_subsampled_gaussian(q, sigma, 2.0).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-6, "q={q} sigma={sigma}");
    }
    // Calibration bracket contract.
    let target = 10.0;
    let sigma = calibrate_sigma(target, 1e-5, 0.0256, 782, &DPSGD_SHAPE).unwrap();
    let eps = epsilon_for_sigma(sigma, 1e-5, 0.0256, 782, &DPSGD_SHAPE).unwrap();
    assert!(eps <= target);
    let eps_below =
        epsilon_for_sigma(sigma - 2.0 * SIGMA_TOLERANCE, 1e-5, 0.0256, 782, &DPSGD_SHAPE).unwrap();
    assert!(eps_below >= target);
    // Monotonicity grid: nonincreasing in sigma, nondecreasing in q, and
    // subsampling never exceeds the q = 1 value.
    for &alpha in &[2.0, 3.0, 8.0, 64.0, 256.0] {
        let mut prev = f64::INFINITY;
        for &sigma in &[0.4, 0.8, 1.6, 3.2, 6.4] {
            let v = rdp_subsampled_gaussian(0.05, sigma, alpha).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
        let mut prev = 0.0;
        for &q in &[0.01, 0.05, 0.25, 0.75, 1.0] {
            let v = rdp_subsampled_gaussian(q, 1.3, alpha).unwrap();
            assert!(v + 1e-12 >= prev);
            prev = v;
        }
        assert!(
            rdp_subsampled_gaussian(0.3, 1.3, alpha).unwrap()
                <= rdp_subsampled_gaussian(1.0, 1.3, alpha).unwrap() + 1e-12
        );
    }
    pass("criterion 4: accountant", t);
}

// ---------------------------------------------------------------------------
// 5. Threshold optimality: the sweep matches exhaustive enumeration over
//    all real thresholds (midpoint argument) exactly, on 1000 random
//    fixtures of up to 40 scores.

fn enumerate_best(scores: &[f64], statuses: &[bool], rule: ThresholdRule) -> f64 {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
    candidates.extend_from_slice(&sorted);
    for w in sorted.windows(2) {
        candidates.push(0.5 * (w[0] + w[1]));
    }
    let dirs: &[Direction] = match rule {
        ThresholdRule::LowerLossMember => &[Direction::LowerIsMember],
        ThresholdRule::PaperLiteralGe => &[Direction::HigherOrEqualIsMember],
        ThresholdRule::BidirectionalBest => {
            &[Direction::LowerIsMember, Direction::HigherOrEqualIsMember]
        }
    };
    let mut best = 0usize;
    for &beta in &candidates {
        for &dir in dirs {
            let hits = scores
                .iter()
                .zip(statuses)
                .filter(|(&s, &h)| dir.guess(s, beta) == h)
                .count();
            best = best.max(hits);
        }
    }
    best as f64 / scores.len() as f64
}

#[test]
fn criterion_05_threshold_optimality() {
    let t = Instant::now();
    let mut rng = stream_rng(501, 0);
    for fixture in 0..1000 {
        let n = rng.gen_range(1..=40);
        let gridded: bool = rng.gen();
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if gridded {
                    rng.gen_range(0..6) as f64 / 5.0
                } else {
                    rng.gen_range(0.0..3.0)
                }
            })
            .collect();
        let statuses: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        for rule in [
            ThresholdRule::LowerLossMember,
            ThresholdRule::PaperLiteralGe,
            ThresholdRule::BidirectionalBest,
        ] {
            let choice = optimal_threshold(&scores, &statuses, rule).unwrap();
            let oracle = enumerate_best(&scores, &statuses, rule);
            assert_eq!(
                (choice.accuracy * n as f64).round() as usize,
                (oracle * n as f64).round() as usize,
                "fixture {fixture} rule {rule:?}"
            );
            // the returned threshold must itself achieve the reported value
            assert_eq!(apply_accuracy(&scores, &statuses, &choice), choice.accuracy);
        }
    }
    pass("criterion 5: threshold optimality", t);
}

// ---------------------------------------------------------------------------
// 6. Leave-one-out vs approximate game: the mean absolute per-sample
//    accuracy difference shrinks strictly across 2R in {40, 200, 400} and
//    the group-wise Kruskal-Wallis test finds no group structure.

fn per_sample_acc(trace: &AuditTrace, rule: ThresholdRule) -> Vec<f64> {
    let gm = guesses_from_trace(trace, rule).unwrap();
    (0..trace.num_cols())
        .map(|c| {
            let hits = (0..trace.num_rows())
                .filter(|&r| gm.guess(r, c) == trace.is_member(r, c))
                .count();
            hits as f64 / trace.num_rows() as f64
        })
        .collect()
}

#[test]
fn criterion_06_alooa_looa_convergence() {
    let t = Instant::now();
    let rule = ThresholdRule::LowerLossMember;
    let mut strict_ok = 0;
    let mut kw_ok = 0;
    let seeds = 5u64;
    for seed in 0..seeds {
        let ds = synth_blobs(50, 4, 12, 2.0, 0.1, 500 + seed).unwrap();
        let mut audit_ids = Vec::new();
        for k in 0..4 {
            audit_ids.extend((0..ds.len()).filter(|&i| ds.groups[i] == k).take(5));
        }
        audit_ids.sort_unstable();
        let split = SplitPlan {
            train_indices: (0..ds.len()).collect(),
            test_indices: vec![],
            audit_indices: audit_ids.clone(),
        };
        let tc = TrainConfig {
            algorithm: Algorithm::Sgd,
            epochs: 20,
            batch_size: ds.len(),
            learning_rate: 0.1,
            seed: 0,
            ..TrainConfig::default()
        };
        let spec = ModelSpec::lr(vec![12], 4);
        let plan = AuditPlan {
            method: AuditMethod::Alooa,
            rounds: 200,
            target_index: None,
            master_seed: 700 + seed,
            train_config: tc.clone(),
            model_spec: spec.clone(),
            threshold_rule: rule,
        };
        let alooa = run_alooa(&ds, &split, &plan, ExecPolicy::default()).unwrap();

        let looa_traces: Vec<AuditTrace> = audit_ids
            .iter()
            .enumerate()
            .map(|(ti, &target)| {
                let lplan = AuditPlan {
                    method: AuditMethod::Looa,
                    rounds: 200,
                    target_index: Some(target),
                    master_seed: 900 + seed * 1000 + ti as u64,
                    train_config: tc.clone(),
                    model_spec: spec.clone(),
                    threshold_rule: rule,
                };
                run_looa(&ds, &split, &lplan, ExecPolicy::default()).unwrap()
            })
            .collect();

        let mut mean_abs = Vec::new();
        let mut final_diffs = Vec::new();
        for rounds in [20usize, 100, 200] {
            let a_acc = per_sample_acc(&alooa.prefix(rounds), rule);
            let diffs: Vec<f64> = looa_traces
                .iter()
                .zip(&a_acc)
                .map(|(lt, &a)| per_sample_acc(&lt.prefix(rounds), rule)[0] - a)
                .collect();
            mean_abs.push(diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64);
            if rounds == 200 {
                final_diffs = diffs;
            }
        }
        println!(
            "  seed {seed}: mean |diff| at 2R=40/200/400 = {:.4}/{:.4}/{:.4}",
            mean_abs[0], mean_abs[1], mean_abs[2]
        );
        if mean_abs[0] > mean_abs[1] && mean_abs[1] > mean_abs[2] {
            strict_ok += 1;
        }
        let groups: Vec<usize> = audit_ids.iter().map(|&i| ds.groups[i]).collect();
        let (_, p) = kruskal_wallis(&final_diffs, &groups).unwrap();
        if p > 0.05 {
            kw_ok += 1;
        }
    }
    assert!(strict_ok >= 4, "strict decrease in {strict_ok}/5 seeds");
    assert!(kw_ok >= 4, "KW p > 0.05 in {kw_ok}/5 seeds");
    pass("criterion 6: approximate game converges to leave-one-out", t);
}

// ---------------------------------------------------------------------------
// 7. Auditing-method ordering on an image corpus: per-sample thresholds
//    reveal more group-risk spread than per-round or per-round-per-group
//    thresholds, on identical traces.

/// Synthetic 28x28 grayscale corpus in IDX format: each class is a fixed
/// smooth multi-bump prototype, samples add class-specific pixel noise.
/// Higher classes are noisier, hence harder and more memorizable.
fn write_synthetic_idx(
    dir: &std::path::Path,
    per_class: usize,
    seed: u64,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut rng = stream_rng(seed, 0x77);
    let (h, w) = (28usize, 28usize);
    let mut prototypes = Vec::new();
    for _class in 0..10 {
        let mut proto = vec![0.0f64; h * w];
        for _ in 0..4 {
            let ci = rng.gen_range(6.0..22.0);
            let cj = rng.gen_range(6.0..22.0);
            let r: f64 = rng.gen_range(2.5..5.0);
            let amp = rng.gen_range(0.5..1.0);
            for i in 0..h {
                for j in 0..w {
                    let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    proto[i * w + j] += amp * (-d2 / (2.0 * r * r)).exp();
                }
            }
        }
        let max = proto.iter().cloned().fold(0.0f64, f64::max).max(1e-9);
        for v in proto.iter_mut() {
            *v = 0.85 * *v / max;
        }
        prototypes.push(proto);
    }
    let n = per_class * 10;
    let mut images: Vec<u8> = Vec::with_capacity(n * h * w);
    let mut labels: Vec<u8> = Vec::with_capacity(n);
    for class in 0..10usize {
        let noise_level = 0.22 + 0.075 * class as f64;
        for _ in 0..per_class {
            for p in &prototypes[class] {
                let z: f64 = rng.sample(StandardNormal);
                let v = (p + noise_level * z).clamp(0.0, 1.0);
                images.push((v * 255.0).round() as u8);
            }
            labels.push(class as u8);
        }
    }
    let img_path = dir.join("synth-images-idx3-ubyte");
    let lbl_path = dir.join("synth-labels-idx1-ubyte");
    let mut f = std::fs::File::create(&img_path).unwrap();
    f.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
    f.write_all(&(n as u32).to_be_bytes()).unwrap();
    f.write_all(&(h as u32).to_be_bytes()).unwrap();
    f.write_all(&(w as u32).to_be_bytes()).unwrap();
    f.write_all(&images).unwrap();
    let mut f = std::fs::File::create(&lbl_path).unwrap();
    f.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
    f.write_all(&(n as u32).to_be_bytes()).unwrap();
    f.write_all(&labels).unwrap();
    (img_path, lbl_path)
}

#[test]
fn criterion_07_auditing_method_ordering() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = write_synthetic_idx(dir.path(), 150, 711);
    let full = load_idx(&img, &lbl).unwrap();
    let ds = subsample_per_class(&full, 100, 712).unwrap();
    assert_eq!(ds.len(), 1000);
    let split = SplitPlan::random(ds.len(), 0.8, None, 713).unwrap();
    let spec = ModelSpec::cnn(vec![1, 28, 28], 10);
    let plan = AuditPlan {
        method: AuditMethod::Alooa,
        rounds: 50, // 2R = 100
        target_index: None,
        master_seed: 714,
        train_config: TrainConfig {
            algorithm: Algorithm::Sgd,
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.1,
            seed: 0,
            ..TrainConfig::default()
        },
        model_spec: spec,
        threshold_rule: ThresholdRule::LowerLossMember,
    };
    let trace = run_alooa(&ds, &split, &plan, ExecPolicy::default()).unwrap();

    // Identical trace, three threshold adversaries.
    let alooa = risk_report(
        &guesses_from_trace(&trace, plan.threshold_rule).unwrap(),
        &trace,
        &ds,
    )
    .unwrap();
    let ga = risk_report(
        &guesses_per_round(&trace, plan.threshold_rule).unwrap(),
        &trace,
        &ds,
    )
    .unwrap();
    let gba = risk_report(
        &guesses_per_round_group(&trace, &ds, plan.threshold_rule).unwrap(),
        &trace,
        &ds,
    )
    .unwrap();
    println!(
        "  delta: per-sample {:.2}, per-round {:.2}, per-round-group {:.2} (points)",
        100.0 * alooa.delta,
        100.0 * ga.delta,
        100.0 * gba.delta
    );
    assert!(
        alooa.delta > ga.delta,
        "per-sample delta {} must exceed per-round delta {}",
        alooa.delta,
        ga.delta
    );
    assert!(
        alooa.delta > gba.delta,
        "per-sample delta {} must exceed per-round-group delta {}",
        alooa.delta,
        gba.delta
    );
    pass("criterion 7: auditing-method ordering", t);
}

// ---------------------------------------------------------------------------
// 8 + 9. Mitigation ordering and gradient-contribution correlation, on a
// shared fixture: binary-label blobs whose per-group feature clouds are
// scaled up with the group index, making high-index groups the dominant
// gradient contributors and their mislabeled records strong canaries.

struct MitigationRuns {
    /// delta per algorithm per seed, percent.
    delta: Vec<[f64; 3]>,
    /// test accuracy per algorithm per seed, percent.
    accuracy: Vec<[f64; 3]>,
    /// Spearman rho between training GRC and audited group advantage (SGD).
    sgd_rho: Vec<f64>,
}

fn scaled_blobs(
    n_per_group: usize,
    num_groups: usize,
    dims: usize,
    margin: f64,
    scale_step: f64,
    label_noise: f64,
    seed: u64,
) -> Dataset {
    let mut feat = stream_rng(seed, 0x21);
    let mut lab = stream_rng(seed, 0x22);
    let n = n_per_group * num_groups;
    let mut features = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for k in 0..num_groups {
        let s = 1.0 + scale_step * k as f64;
        for i in 0..n_per_group {
            let class = i % 2;
            let mean0 = if class == 1 { margin } else { -margin };
            for dim in 0..dims {
                let z: f64 = feat.sample(StandardNormal);
                features.push(s * (if dim == 0 { mean0 + z } else { z }));
            }
            let mut label = class;
            if lab.gen::<f64>() < label_noise {
                label = 1 - label;
            }
            labels.push(label);
            groups.push(k);
        }
    }
    Dataset::new(
        "scaled-blobs".into(),
        features,
        labels,
        groups,
        2,
        num_groups,
        vec![dims],
    )
    .unwrap()
}

fn mitigation_runs() -> &'static MitigationRuns {
    static RUNS: OnceLock<MitigationRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut delta = Vec::new();
        let mut accuracy = Vec::new();
        let mut sgd_rho = Vec::new();
        for seed in 0..5u64 {
            let ds = scaled_blobs(150, 5, 8, 1.5, 1.0, 0.15, 1000 + seed);
            let split = SplitPlan::random(ds.len(), 0.8, None, 2000 + seed).unwrap();
            let spec = ModelSpec::lr(vec![8], 2);
            let mut deltas = [0.0f64; 3];
            let mut accs = [0.0f64; 3];
            for (ai, alg) in [Algorithm::Sgd, Algorithm::DpSgd, Algorithm::DpSgdS]
                .into_iter()
                .enumerate()
            {
                // The literal carried-over clip bound grows geometrically
                // (up to tau per iteration), so mitigation runs reset it
                // each iteration.
                let tc = TrainConfig {
                    algorithm: alg,
                    epochs: 30,
                    batch_size: split.num_train(),
                    learning_rate: 0.2,
                    clip_bound: 10.0,
                    noise_multiplier: None,
                    scale_bound: 2.0,
                    target: if alg == Algorithm::Sgd {
                        None
                    } else {
                        Some((10.0, 1e-5))
                    },
                    seed: 0,
                    persist_clip_bound: false,
                    group_denominator: GroupDenominator::FullDataset,
                };

                // Accuracy from one full-split training; GRC from the same
                // run but with minibatches, where the contribution ratio is
                // well conditioned.
                let mut full_cfg = tc.clone();
                full_cfg.seed = 3000 + seed;
                let art = train(&ds, &split, &spec, &full_cfg).unwrap();
                accs[ai] =
                    100.0 * model::accuracy(&art.params, &ds, &split.test_indices).unwrap();

                let plan = AuditPlan {
                    method: AuditMethod::Alooa,
                    rounds: 100, // 2R = 200
                    target_index: None,
                    master_seed: 4000 + seed,
                    train_config: tc.clone(),
                    model_spec: spec.clone(),
                    threshold_rule: ThresholdRule::LowerLossMember,
                };
                let trace = run_alooa(&ds, &split, &plan, ExecPolicy::default()).unwrap();
                let report: RiskReport = risk_report(
                    &guesses_from_trace(&trace, plan.threshold_rule).unwrap(),
                    &trace,
                    &ds,
                )
                .unwrap();
                deltas[ai] = 100.0 * report.delta;

                if alg == Algorithm::Sgd {
                    let mut grc_cfg = tc.clone();
                    grc_cfg.seed = 3000 + seed;
                    grc_cfg.batch_size = 128;
                    let grc_art = train(&ds, &split, &spec, &grc_cfg).unwrap();
                    let adv: Vec<f64> = report
                        .adv_by_group
                        .iter()
                        .map(|a| a.expect("every group is audited"))
                        .collect();
                    let corr = grc_correlation(&grc_art.grc, &adv).unwrap();
                    sgd_rho.push(corr.spearman.expect("non-constant vectors"));
                }
            }
            println!(
                "  seed {seed}: delta sgd/dpsgd/dpsgds = {:.2}/{:.2}/{:.2}, acc = {:.1}/{:.1}/{:.1}",
                deltas[0], deltas[1], deltas[2], accs[0], accs[1], accs[2]
            );
            delta.push(deltas);
            accuracy.push(accs);
        }
        MitigationRuns {
            delta,
            accuracy,
            sgd_rho,
        }
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

#[test]
fn criterion_08_mitigation_ordering() {
    let t = Instant::now();
    let runs = mitigation_runs();
    let mut sgd: Vec<f64> = runs.delta.iter().map(|d| d[0]).collect();
    let mut dpsgd: Vec<f64> = runs.delta.iter().map(|d| d[1]).collect();
    let mut dpsgds: Vec<f64> = runs.delta.iter().map(|d| d[2]).collect();
    let (m_sgd, m_dpsgd, m_dpsgds) = (median(&mut sgd), median(&mut dpsgd), median(&mut dpsgds));
    println!("  median delta: sgd {m_sgd:.2}, dpsgd {m_dpsgd:.2}, dpsgds {m_dpsgds:.2}");
    assert!(
        m_dpsgds < m_dpsgd,
        "median delta dpsgds {m_dpsgds:.2} must be below dpsgd {m_dpsgd:.2}"
    );
    assert!(
        m_dpsgd < m_sgd,
        "median delta dpsgd {m_dpsgd:.2} must be below sgd {m_sgd:.2}"
    );

    let mut acc_dpsgd: Vec<f64> = runs.accuracy.iter().map(|a| a[1]).collect();
    let mut acc_dpsgds: Vec<f64> = runs.accuracy.iter().map(|a| a[2]).collect();
    let drop = median(&mut acc_dpsgd) - median(&mut acc_dpsgds);
    println!("  median accuracy drop dpsgds vs dpsgd: {drop:.2} points");
    assert!(drop <= 4.0, "accuracy drop {drop:.2} exceeds 4 points");
    pass("criterion 8: mitigation ordering", t);
}

#[test]
fn criterion_09_group_relative_contribution() {
    let t = Instant::now();
    // Single-group value equals |B| / |D| exactly.
    let mut acc = GrcAccumulator::new(1);
    let grads = vec![vec![0.3, -1.2, 0.5], vec![2.0, 0.1, -0.4], vec![1.1, 1.1, 1.1]];
    assert!(record_grc(&grads, &[0, 0, 0], &[7], &mut acc));
    assert!((acc.means()[0] - 3.0 / 7.0).abs() < 1e-12);

    // Contribution-risk correlation on the mitigation fixture (SGD runs).
    let runs = mitigation_runs();
    let positive = runs.sgd_rho.iter().filter(|&&r| r > 0.0).count();
    println!("  sgd rho by seed: {:?}", runs.sgd_rho);
    assert!(
        positive >= 4,
        "rho > 0 in only {positive}/5 seeds: {:?}",
        runs.sgd_rho
    );
    pass("criterion 9: group relative contribution", t);
}

// ---------------------------------------------------------------------------
// 10. Statistics battery.

#[test]
fn criterion_10_statistics() {
    let t = Instant::now();
    // Kruskal-Wallis hand example: {1,2,3} vs {4,5,6} gives H = 27/7.
    let (h, p) = kruskal_wallis(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0, 0, 0, 1, 1, 1]).unwrap();
    assert!((h - 27.0 / 7.0).abs() < 1e-12);
    // chi-square survival reference values (dof, x, p) from standard tables
    for &(x, dof, want) in &[
        (27.0 / 7.0, 1, 0.049535),
        (3.841, 1, 0.050044),
        (5.991, 2, 0.050035),
        (7.815, 3, 0.049977),
        (2.0, 2, 0.367879),
    ] {
        let got = chi2_sf(x, dof);
        assert!((got - want).abs() < 1e-4, "chi2_sf({x}, {dof}) = {got}");
    }
    assert!((p - 0.049535).abs() < 1e-4);
    // Identical groups return (0, 1).
    let (h0, p0) = kruskal_wallis(&[2.0; 10], &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]).unwrap();
    assert_eq!((h0, p0), (0.0, 1.0));

    // Outcome-fairness fixture with hand-computed confusion arithmetic:
    // group 0 labels (1,1,0,0) predictions (1,0,0,1); group 1 labels
    // (1,0,0,0) predictions (1,1,0,0). A one-feature model reproduces the
    // predictions exactly when the feature encodes them.
    let features: Vec<f64> = vec![1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0];
    let labels = vec![1, 1, 0, 0, 1, 0, 0, 0];
    let groups = vec![0, 0, 0, 0, 1, 1, 1, 1];
    let ds = Dataset::new("fixture".into(), features, labels, groups, 2, 2, vec![1]).unwrap();
    // logits = (-5x, +5x): predicts 1 iff x > 0
    let params = ModelParams::new(ModelSpec::lr(vec![1], 2), vec![-5.0, 5.0, 0.0, 0.0]).unwrap();
    let idx: Vec<usize> = (0..8).collect();
    let report = fairaudit_core::stats::outcome_fairness(&params, &ds, &idx).unwrap();
    // group 0: acc 1/2, pos-rate 1/2, TPR 1/2, FPR 1/2
    // group 1: acc 3/4, pos-rate 1/2, TPR 1,   FPR 1/3
    assert!((report.accuracy_parity.unwrap() - 0.25).abs() < 1e-12);
    assert!((report.demographic_parity.unwrap() - 0.0).abs() < 1e-12);
    assert!((report.equal_opportunity.unwrap() - 0.5).abs() < 1e-12);
    assert!((report.equalized_odds.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    pass("criterion 10: statistics", t);
}

// ---------------------------------------------------------------------------
// 11 lives in the CLI crate's acceptance suite (byte-identical artifacts
// across reruns of identical configurations, end to end through the binary).
