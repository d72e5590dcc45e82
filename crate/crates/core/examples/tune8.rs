use fairaudit_core::audit::*;
use fairaudit_core::dataio::*;
use fairaudit_core::exec::ExecPolicy;
use fairaudit_core::model::{self, ModelSpec};
use fairaudit_core::rng::stream_rng;
use fairaudit_core::stats::*;
use fairaudit_core::train::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Binary classification; group k's whole feature cloud (class mean and
/// spread) is scaled by 1 + scale_step * k, so intrinsic difficulty is
/// uniform while gradient norms grow with k.
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
    Dataset::new("scaled-blobs".into(), features, labels, groups, 2, num_groups, vec![dims])
        .unwrap()
}

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let np: usize = a.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let d: usize = a.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let margin: f64 = a.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.2);
    let step: f64 = a.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let noise: f64 = a.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let rounds: usize = a.get(6).and_then(|s| s.parse().ok()).unwrap_or(100);
    let seeds: u64 = a.get(7).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lr: f64 = a.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let epochs: usize = a.get(9).and_then(|s| s.parse().ok()).unwrap_or(20);

    for seed in 0..seeds {
        let ds = scaled_blobs(np, 5, d, margin, step, noise, 1000 + seed);
        let split = SplitPlan::random(ds.len(), 0.8, None, 2000 + seed).unwrap();
        let spec = ModelSpec::lr(vec![d], 2);
        for alg in [Algorithm::Sgd, Algorithm::DpSgd, Algorithm::DpSgdS] {
            let t0 = std::time::Instant::now();
            let tc = TrainConfig {
                algorithm: alg,
                epochs,
                batch_size: split.num_train(),
                learning_rate: lr,
                clip_bound: 10.0,
                noise_multiplier: None,
                scale_bound: 2.0,
                target: if alg == Algorithm::Sgd { None } else { Some((10.0, 1e-5)) },
                seed: 0,
                persist_clip_bound: false,
                group_denominator: GroupDenominator::FullDataset,
            };
            let mut full_cfg = tc.clone();
            full_cfg.seed = 3000 + seed;
            let grc_batch: usize = std::env::var("GRCB").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
            if grc_batch > 0 {
                full_cfg.batch_size = grc_batch;
            }
            let art = train(&ds, &split, &spec, &full_cfg).unwrap();
            let test_acc = model::accuracy(&art.params, &ds, &split.test_indices).unwrap();

            let plan = AuditPlan {
                method: AuditMethod::Alooa,
                rounds,
                target_index: None,
                master_seed: 4000 + seed,
                train_config: tc.clone(),
                model_spec: spec.clone(),
                threshold_rule: ThresholdRule::LowerLossMember,
            };
            let trace = run_alooa(&ds, &split, &plan, ExecPolicy::default()).unwrap();
            let gm = guesses_from_trace(&trace, plan.threshold_rule).unwrap();
            let rr = risk_report(&gm, &trace, &ds).unwrap();
            let adv: Vec<String> = rr
                .adv_by_group
                .iter()
                .map(|x| format!("{:.1}", 100.0 * x.unwrap_or(f64::NAN)))
                .collect();
            let rho = grc_correlation(
                &art.grc,
                &rr.adv_by_group.iter().map(|x| x.unwrap()).collect::<Vec<_>>(),
            )
            .unwrap();
            let ck_info = if alg == Algorithm::DpSgdS {
                let last = art.iterations.iter().filter(|r| !r.skipped).last().unwrap();
                format!(
                    " Ck={:?}",
                    last.clip_per_group
                        .iter()
                        .map(|c| (c * 10.0).round() / 10.0)
                        .collect::<Vec<f64>>()
                )
            } else {
                String::new()
            };
            println!(
                "seed{seed} {alg:?}: acc {:.1}% delta {:.2} adv [{}] grc {:?} rho {:.2}{} ({:.0?})",
                100.0 * test_acc,
                100.0 * rr.delta,
                adv.join(","),
                art.grc.iter().map(|g| (g * 100.0).round() / 100.0).collect::<Vec<f64>>(),
                rho.spearman.unwrap_or(f64::NAN),
                ck_info,
                t0.elapsed()
            );
        }
    }
}
