use fairaudit_core::audit::*;
use fairaudit_core::dataio::*;
use fairaudit_core::exec::ExecPolicy;
use fairaudit_core::model::{self, ModelSpec};
use fairaudit_core::rng::stream_rng;
use fairaudit_core::stats::*;
use fairaudit_core::train::*;
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;

/// Synthetic 28x28 grayscale corpus in IDX format: each class is a fixed
/// smooth multi-bump prototype; samples add class-specific pixel noise.
/// Higher classes are noisier, hence harder and more memorizable.
fn write_synthetic_idx(dir: &std::path::Path, per_class: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut rng = stream_rng(seed, 0x77);
    let (h, w) = (28usize, 28usize);
    // per class: 4 gaussian bump images; every sample mixes them with
    // random weights, so each image has its own learnable structure
    let mut class_bumps: Vec<Vec<Vec<f64>>> = Vec::new();
    for _class in 0..10 {
        let mut bumps = Vec::new();
        for _ in 0..4 {
            let ci = rng.gen_range(6.0..22.0);
            let cj = rng.gen_range(6.0..22.0);
            let r: f64 = rng.gen_range(2.5..5.0);
            let mut bump = vec![0.0f64; h * w];
            for i in 0..h {
                for j in 0..w {
                    let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    bump[i * w + j] = (-d2 / (2.0 * r * r)).exp();
                }
            }
            bumps.push(bump);
        }
        class_bumps.push(bumps);
    }

    let n = per_class * 10;
    let mut images: Vec<u8> = Vec::with_capacity(n * h * w);
    let mut labels: Vec<u8> = Vec::with_capacity(n);
    for class in 0..10usize {
        let noise_level = 0.15;
        let flip_prob = 0.02 * class as f64;
        for _ in 0..per_class {
            let mut weights: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
            let wsum: f64 = weights.iter().sum();
            for wgt in weights.iter_mut() {
                *wgt /= wsum;
            }
            let mut proto = vec![0.0f64; h * w];
            for (g, bump) in class_bumps[class].iter().enumerate() {
                for (pv, bv) in proto.iter_mut().zip(bump) {
                    *pv += weights[g] * bv;
                }
            }
            let max = proto.iter().cloned().fold(0.0f64, f64::max).max(1e-9);
            for p in proto.iter() {
                let z: f64 = rng.sample(StandardNormal);
                let v = (0.85 * p / max + noise_level * z).clamp(0.0, 1.0);
                images.push((v * 255.0).round() as u8);
            }
            let mut label = class as u8;
            if rng.gen::<f64>() < flip_prob {
                label = ((class + 1 + rng.gen_range(0..9)) % 10) as u8;
            }
            labels.push(label);
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

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let rounds: usize = a.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let lr: f64 = a.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let epochs: usize = a.get(3).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed: u64 = a.get(4).and_then(|s| s.parse().ok()).unwrap_or(11);

    let dir = std::env::temp_dir().join("fairaudit-tune7");
    std::fs::create_dir_all(&dir).unwrap();
    let t0 = std::time::Instant::now();
    let (img, lbl) = write_synthetic_idx(&dir, 150, seed);
    let full = load_idx(&img, &lbl).unwrap();
    let ds = subsample_per_class(&full, 100, seed + 1).unwrap();
    println!("dataset n={} built in {:.1?}", ds.len(), t0.elapsed());

    let split = SplitPlan::random(ds.len(), 0.8, None, seed + 2).unwrap();
    let spec = ModelSpec::cnn(vec![1, 28, 28], 10);
    let tc = TrainConfig {
        algorithm: Algorithm::Sgd,
        epochs,
        batch_size: 32,
        learning_rate: lr,
        seed: seed + 3,
        ..TrainConfig::default()
    };

    // cost + utility of one training run on the full split
    let t1 = std::time::Instant::now();
    let art = train(&ds, &split, &spec, &tc).unwrap();
    let train_acc = model::accuracy(&art.params, &ds, &split.train_indices).unwrap();
    let test_acc = model::accuracy(&art.params, &ds, &split.test_indices).unwrap();
    println!(
        "one full-split training: {:.1?}, train acc {:.1}%, test acc {:.1}%",
        t1.elapsed(),
        100.0 * train_acc,
        100.0 * test_acc
    );

    let plan = AuditPlan {
        method: AuditMethod::Alooa,
        rounds,
        target_index: None,
        master_seed: seed + 4,
        train_config: tc,
        model_spec: spec,
        threshold_rule: ThresholdRule::LowerLossMember,
    };
    let t2 = std::time::Instant::now();
    let trace = run_alooa(&ds, &split, &plan, ExecPolicy::default()).unwrap();
    println!("{rounds} audit rounds in {:.1?}", t2.elapsed());

    let per_sample = guesses_from_trace(&trace, plan.threshold_rule).unwrap();
    let per_round = guesses_per_round(&trace, plan.threshold_rule).unwrap();
    let per_group = guesses_per_round_group(&trace, &ds, plan.threshold_rule).unwrap();
    for (name, gm) in [("alooa", &per_sample), ("ga", &per_round), ("gba", &per_group)] {
        let rr = risk_report(gm, &trace, &ds).unwrap();
        let adv: Vec<String> = rr
            .adv_by_group
            .iter()
            .map(|x| format!("{:.1}", 100.0 * x.unwrap_or(f64::NAN)))
            .collect();
        println!("{name}: delta {:.2} adv [{}]", 100.0 * rr.delta, adv.join(","));
    }
}
