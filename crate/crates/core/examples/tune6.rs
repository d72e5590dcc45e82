use fairaudit_core::audit::*;
use fairaudit_core::dataio::*;
use fairaudit_core::exec::ExecPolicy;
use fairaudit_core::model::ModelSpec;
use fairaudit_core::stats::*;
use fairaudit_core::train::*;

fn acc_per_sample(trace: &AuditTrace, rule: ThresholdRule) -> Vec<f64> {
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

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let np: usize = a.get(1).and_then(|s| s.parse().ok()).unwrap_or(25);
    let d: usize = a.get(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let sep: f64 = a.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let noise: f64 = a.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let lr: f64 = a.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let epochs: usize = a.get(6).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seeds: u64 = a.get(7).and_then(|s| s.parse().ok()).unwrap_or(5);

    let rule = ThresholdRule::LowerLossMember;
    for seed in 0..seeds {
        let t0 = std::time::Instant::now();
        let ds = synth_blobs(np, 4, d, sep, noise, 500 + seed).unwrap();
        // audit 5 per group
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
            epochs,
            batch_size: ds.len(),
            learning_rate: lr,
            seed: 0,
            ..TrainConfig::default()
        };
        let spec = ModelSpec::lr(vec![d], 4);
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

        // LOOA per audited sample: columns assembled per target
        let mut looa_cols: Vec<AuditTrace> = Vec::new();
        for (ti, &target) in audit_ids.iter().enumerate() {
            let lplan = AuditPlan {
                method: AuditMethod::Looa,
                rounds: 200,
                target_index: Some(target),
                master_seed: 900 + seed * 1000 + ti as u64,
                train_config: tc.clone(),
                model_spec: spec.clone(),
                threshold_rule: rule,
            };
            looa_cols.push(run_looa(&ds, &split, &lplan, ExecPolicy::default()).unwrap());
        }

        let mut diffs_at = Vec::new();
        for checkpoint in [20usize, 100, 200] {
            let a_acc = acc_per_sample(&alooa.prefix(checkpoint), rule);
            let l_acc: Vec<f64> = looa_cols
                .iter()
                .map(|t| acc_per_sample(&t.prefix(checkpoint), rule)[0])
                .collect();
            let diffs: Vec<f64> = l_acc.iter().zip(&a_acc).map(|(&l, &x)| l - x).collect();
            let mean_abs = diffs.iter().map(|v| v.abs()).sum::<f64>() / diffs.len() as f64;
            diffs_at.push((checkpoint, mean_abs, diffs));
        }
        let groups: Vec<usize> = audit_ids.iter().map(|&i| ds.groups[i]).collect();
        let (h, p) = kruskal_wallis(&diffs_at[2].2, &groups).unwrap();
        println!(
            "seed{seed}: d40 {:.4} d200 {:.4} d400 {:.4} strict_dec {} KW H {:.3} p {:.3} ({:.0?})",
            diffs_at[0].1,
            diffs_at[1].1,
            diffs_at[2].1,
            diffs_at[0].1 > diffs_at[1].1 && diffs_at[1].1 > diffs_at[2].1,
            h,
            p,
            t0.elapsed()
        );
    }
}
