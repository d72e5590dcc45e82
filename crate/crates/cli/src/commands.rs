//! The five pipeline commands: gen-data, train, audit, compare, report.
//!
//! Every output file embeds the config digest and master seed. The report
//! command only reads artifacts produced by earlier commands; it never
//! retrains or re-audits.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use fairaudit_core::audit::{
    self, guesses_from_trace, guesses_per_round, guesses_per_round_group, read_trace, run_alooa,
    run_ga, run_gba, run_looa, write_guesses_csv, write_trace, AuditMethod, AuditPlan, AuditTrace,
    GuessMatrix,
};
use fairaudit_core::dataio::{
    load_container, load_csv, load_idx, save_container, subsample_per_class, synth_blobs, Dataset,
    SplitPlan,
};
use fairaudit_core::model::{self, ModelSpec, CNN_CONVENTION};
use fairaudit_core::stats::{
    self, compare_traces, grc_correlation, kruskal_wallis, outcome_fairness, risk_report,
    RiskReport,
};
use fairaudit_core::train::{self, iteration_log_to_csv};

use crate::config::ExperimentConfig;
use crate::CliError;

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CliError::Data(format!(
            "cannot create output dir {}: {e}",
            cfg.output_dir.display()
        ))
    })
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn digest_comment(cfg: &ExperimentConfig) -> String {
    format!(
        "# config_digest={} master_seed={}\n",
        cfg.digest(),
        cfg.master_seed
    )
}

/// Build or load the dataset the configuration describes. Commands after
/// gen-data prefer the materialized container in the output directory.
pub fn resolve_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let container_stem = cfg.output_dir.join("data");
    if cfg.dataset.source != "container" && container_stem.with_extension("bin").exists() {
        return Ok(load_container(&container_stem)?);
    }
    build_dataset(cfg)
}

fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let d = &cfg.dataset;
    let missing = |what: &str| CliError::Config(format!("dataset.{what} required for this source"));
    let ds = match d.source.as_str() {
        "synth" => synth_blobs(
            d.n_per_group.ok_or_else(|| missing("n_per_group"))?,
            d.groups.ok_or_else(|| missing("groups"))?,
            d.dims.ok_or_else(|| missing("dims"))?,
            d.separation.unwrap_or(1.0),
            d.label_noise.unwrap_or(0.0),
            cfg.master_seed,
        )?,
        "idx" => load_idx(
            d.images.as_ref().ok_or_else(|| missing("images"))?,
            d.labels_file.as_ref().ok_or_else(|| missing("labels_file"))?,
        )?,
        "csv" => load_csv(
            d.path.as_ref().ok_or_else(|| missing("path"))?,
            d.label_column.as_ref().ok_or_else(|| missing("label_column"))?,
            d.group_column.as_ref().ok_or_else(|| missing("group_column"))?,
        )?,
        "container" => load_container(d.stem.as_ref().ok_or_else(|| missing("stem"))?)?,
        other => return Err(CliError::Config(format!("unknown dataset source '{other}'"))),
    };
    if d.per_class > 0 {
        Ok(subsample_per_class(&ds, d.per_class, cfg.master_seed)?)
    } else {
        Ok(ds)
    }
}

pub fn split_for(cfg: &ExperimentConfig, n: usize) -> Result<SplitPlan, CliError> {
    let m = if cfg.split.audit_samples == 0 {
        None
    } else {
        Some(cfg.split.audit_samples)
    };
    Ok(SplitPlan::random(
        n,
        cfg.split.train_fraction,
        m,
        cfg.master_seed,
    )?)
}

pub fn model_spec_for(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ModelSpec, CliError> {
    let arch = cfg.arch()?;
    let spec = match arch {
        model::Arch::Lr => ModelSpec::lr(vec![ds.dim()], ds.num_classes),
        model::Arch::Mlp => {
            ModelSpec::mlp(vec![ds.dim()], ds.num_classes).with_hidden(cfg.model.hidden)
        }
        model::Arch::Cnn => {
            if ds.feature_shape.len() != 3 {
                return Err(CliError::Config(format!(
                    "cnn needs [channels, height, width] data, got shape {:?}",
                    ds.feature_shape
                )));
            }
            ModelSpec::cnn(ds.feature_shape.clone(), ds.num_classes)
        }
    };
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}

fn audit_plan_for(cfg: &ExperimentConfig, ds: &Dataset) -> Result<AuditPlan, CliError> {
    Ok(AuditPlan {
        method: cfg.audit_method()?,
        rounds: cfg.audit.rounds,
        target_index: cfg.audit.target_index,
        master_seed: cfg.master_seed,
        train_config: cfg.train_config()?,
        model_spec: model_spec_for(cfg, ds)?,
        threshold_rule: cfg.threshold_rule()?,
    })
}

// ---------------------------------------------------------------------------

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg)?;
    let ds = build_dataset(cfg)?;
    let stem = cfg.output_dir.join("data");
    save_container(&ds, &stem)?;
    // The sidecar JSON produced by save_container is the metadata file;
    // append the provenance line alongside it.
    let prov = cfg.output_dir.join("data.provenance.json");
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "config_digest": cfg.digest(),
        "master_seed": cfg.master_seed,
        "source": cfg.dataset.source,
    }))
    .expect("json");
    write_text(&prov, &text)?;
    println!(
        "wrote {} ({} records): n={} d={} L={} K={}",
        stem.with_extension("bin").display(),
        ds.len(),
        ds.len(),
        ds.dim(),
        ds.num_classes,
        ds.num_groups
    );
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg)?;
    let ds = resolve_dataset(cfg)?;
    let split = split_for(cfg, ds.len())?;
    let spec = model_spec_for(cfg, &ds)?;
    let train_cfg = cfg.train_config()?;

    let artifacts = train::train(&ds, &split, &spec, &train_cfg)?;

    let meta = serde_json::json!({
        "config_digest": cfg.digest(),
        "master_seed": cfg.master_seed,
        "algorithm": cfg.train.algorithm,
    });
    model::save_params(&artifacts.params, &cfg.output_dir.join("model.params"), &meta)?;

    let mut iter_csv = digest_comment(cfg);
    iter_csv.push_str(&iteration_log_to_csv(&artifacts.iterations));
    write_text(&cfg.output_dir.join("iterations.csv"), &iter_csv)?;

    let mut grc_csv = digest_comment(cfg);
    grc_csv.push_str("group,grc\n");
    for (g, v) in artifacts.grc.iter().enumerate() {
        grc_csv.push_str(&format!("{g},{v}\n"));
    }
    write_text(&cfg.output_dir.join("grc.csv"), &grc_csv)?;

    if let Some(ledger) = &artifacts.ledger {
        let wrapped = serde_json::json!({
            "config_digest": cfg.digest(),
            "master_seed": cfg.master_seed,
            "ledger": ledger,
        });
        write_text(
            &cfg.output_dir.join("ledger.json"),
            &serde_json::to_string_pretty(&wrapped).expect("json"),
        )?;
    }

    let train_acc = model::accuracy(&artifacts.params, &ds, &split.train_indices)?;
    print!("train accuracy {:.2}%", 100.0 * train_acc);
    if !split.test_indices.is_empty() {
        let test_acc = model::accuracy(&artifacts.params, &ds, &split.test_indices)?;
        print!(", test accuracy {:.2}%", 100.0 * test_acc);
    }
    match &artifacts.ledger {
        Some(ledger) => println!(
            ", epsilon {:.4} at delta {:.0e} (sigma {})",
            ledger.epsilon.unwrap_or(f64::NAN),
            ledger.delta.unwrap_or(f64::NAN),
            artifacts.noise_multiplier.unwrap_or(f64::NAN)
        ),
        None => println!(),
    }
    Ok(())
}

fn derive_guesses(
    trace: &AuditTrace,
    ds: &Dataset,
    rule: audit::ThresholdRule,
) -> Result<GuessMatrix, CliError> {
    Ok(match trace.method {
        AuditMethod::Alooa | AuditMethod::Looa => guesses_from_trace(trace, rule)?,
        AuditMethod::Ga => guesses_per_round(trace, rule)?,
        AuditMethod::Gba => guesses_per_round_group(trace, ds, rule)?,
    })
}

fn risk_csv(cfg: &ExperimentConfig, report: &RiskReport, ds: &Dataset) -> String {
    let mut out = digest_comment(cfg);
    out.push_str("group,audited,adv,adv_pct\n");
    for (g, adv) in report.adv_by_group.iter().enumerate() {
        match adv {
            Some(a) => out.push_str(&format!(
                "{g},{},{a},{:.2}\n",
                report.group_counts[g],
                100.0 * a
            )),
            None => out.push_str(&format!("{g},0,,\n")),
        }
    }
    let _ = ds;
    out
}

pub fn cmd_audit(cfg: &ExperimentConfig) -> Result<(), CliError> {
    ensure_output_dir(cfg)?;
    let ds = resolve_dataset(cfg)?;
    let split = split_for(cfg, ds.len())?;
    let plan = audit_plan_for(cfg, &ds)?;
    let exec = cfg.exec_policy();

    let (trace, guesses) = match plan.method {
        AuditMethod::Alooa => {
            let trace = run_alooa(&ds, &split, &plan, exec)?;
            let guesses = guesses_from_trace(&trace, plan.threshold_rule)?;
            (trace, guesses)
        }
        AuditMethod::Looa => {
            let trace = run_looa(&ds, &split, &plan, exec)?;
            let guesses = guesses_from_trace(&trace, plan.threshold_rule)?;
            (trace, guesses)
        }
        AuditMethod::Ga => run_ga(&ds, &split, &plan, exec)?,
        AuditMethod::Gba => run_gba(&ds, &split, &plan, exec)?,
    };

    let digest = cfg.digest();
    write_trace(&trace, &plan, &cfg.output_dir.join("trace"), Some(&digest))?;
    let col_groups: Vec<usize> = trace.sample_ids.iter().map(|&i| ds.groups[i]).collect();
    write_guesses_csv(
        &trace,
        &guesses,
        Some(&col_groups),
        &cfg.output_dir.join("guesses.csv"),
        Some(&digest),
        cfg.master_seed,
    )?;

    let report = risk_report(&guesses, &trace, &ds)?;
    let wrapped = serde_json::json!({
        "config_digest": digest,
        "master_seed": cfg.master_seed,
        "report": report,
    });
    write_text(
        &cfg.output_dir.join("risk_report.json"),
        &serde_json::to_string_pretty(&wrapped).expect("json"),
    )?;
    write_text(
        &cfg.output_dir.join("risk_report.csv"),
        &risk_csv(cfg, &report, &ds),
    )?;

    println!(
        "{} audit: {} samples x {} trials, delta = {:.2} points",
        plan.method,
        trace.num_cols(),
        trace.num_rows(),
        100.0 * report.delta
    );
    for (g, adv) in report.adv_by_group.iter().enumerate() {
        match adv {
            Some(a) => println!("  group {g}: adv {:.2} ({} samples)", 100.0 * a, report.group_counts[g]),
            None => println!("  group {g}: no audited samples"),
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ComparisonBundle {
    config_digest: String,
    master_seed: u64,
    trace_a: String,
    trace_b: String,
    mean_abs_diff: f64,
    mean_signed_diff: f64,
    kruskal_wallis_h: f64,
    kruskal_wallis_p: f64,
    group_mean_diff: Vec<Option<f64>>,
}

pub fn cmd_compare(
    cfg: &ExperimentConfig,
    trace_a: &Path,
    trace_b: &Path,
) -> Result<(), CliError> {
    ensure_output_dir(cfg)?;
    let ds = resolve_dataset(cfg)?;
    let (ta, sa) = read_trace(trace_a)?;
    let (tb, sb) = read_trace(trace_b)?;
    if ta.sample_ids != tb.sample_ids {
        return Err(CliError::Data(
            "traces cover different sample ids and cannot be compared".into(),
        ));
    }

    let ga = derive_guesses(&ta, &ds, sa.plan.threshold_rule)?;
    let gb = derive_guesses(&tb, &ds, sb.plan.threshold_rule)?;
    let ra = risk_report(&ga, &ta, &ds)?;
    let rb = risk_report(&gb, &tb, &ds)?;
    let cmp = compare_traces(&ra, &rb)?;

    let groups: Vec<usize> = ta.sample_ids.iter().map(|&i| ds.groups[i]).collect();
    let (h, p) = kruskal_wallis(&cmp.per_sample_diff, &groups)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let k = ds.num_groups;
    let mut sums = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for (&g, &d) in groups.iter().zip(&cmp.per_sample_diff) {
        sums[g] += d;
        counts[g] += 1;
    }
    let group_mean_diff: Vec<Option<f64>> = (0..k)
        .map(|g| (counts[g] > 0).then(|| sums[g] / counts[g] as f64))
        .collect();

    let bundle = ComparisonBundle {
        config_digest: cfg.digest(),
        master_seed: cfg.master_seed,
        trace_a: trace_a.display().to_string(),
        trace_b: trace_b.display().to_string(),
        mean_abs_diff: cmp.mean_abs_diff,
        mean_signed_diff: cmp.mean_signed_diff,
        kruskal_wallis_h: h,
        kruskal_wallis_p: p,
        group_mean_diff,
    };
    write_text(
        &cfg.output_dir.join("comparison.json"),
        &serde_json::to_string_pretty(&bundle).expect("json"),
    )?;

    let mut csv = digest_comment(cfg);
    csv.push_str("sample_id,group,acc_a,acc_b,diff\n");
    for (i, &sid) in cmp.sample_ids.iter().enumerate() {
        csv.push_str(&format!(
            "{sid},{},{},{},{}\n",
            groups[i], ra.acc[i], rb.acc[i], cmp.per_sample_diff[i]
        ));
    }
    write_text(&cfg.output_dir.join("compare_per_sample.csv"), &csv)?;

    println!(
        "mean |diff| {:.4}, mean signed diff {:+.4}, Kruskal-Wallis H {:.4} p {:.4}",
        cmp.mean_abs_diff, cmp.mean_signed_diff, h, p
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportBundle {
    config_digest: String,
    master_seed: u64,
    dataset: DatasetSummary,
    model: ModelSummary,
    /// Test-set classification accuracy, percent.
    accuracy: Option<f64>,
    train_accuracy: f64,
    /// Group privacy risk parity (max - min group advantage), percent.
    delta: f64,
    /// Per-group advantage, percent; null for groups with no audited samples.
    adv_by_group: Vec<Option<f64>>,
    group_counts: Vec<usize>,
    excluded_groups: Vec<usize>,
    audit_method: String,
    audit_trials: usize,
    grc: Option<Vec<f64>>,
    grc_spearman: Option<f64>,
    grc_pearson: Option<f64>,
    fairness: Option<stats::FairnessReport>,
    privacy: Option<serde_json::Value>,
}

#[derive(Debug, Serialize)]
struct DatasetSummary {
    name: String,
    n: usize,
    dim: usize,
    num_classes: usize,
    num_groups: usize,
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    arch: String,
    convention: Option<String>,
}

pub fn cmd_report(cfg: &ExperimentConfig, per_sample: bool) -> Result<(), CliError> {
    let ds = resolve_dataset(cfg)?;
    let split = split_for(cfg, ds.len())?;

    let trace_stem = cfg.output_dir.join("trace");
    if !trace_stem.with_extension("csv").exists() {
        return Err(CliError::Data(format!(
            "missing artifact: {} (run the audit command first)",
            trace_stem.with_extension("csv").display()
        )));
    }
    let (trace, sidecar) = read_trace(&trace_stem)?;
    let guesses = derive_guesses(&trace, &ds, sidecar.plan.threshold_rule)?;
    let risk = risk_report(&guesses, &trace, &ds)?;

    let params_path = cfg.output_dir.join("model.params");
    if !params_path.exists() {
        return Err(CliError::Data(format!(
            "missing artifact: {} (run the train command first)",
            params_path.display()
        )));
    }
    let (params, _meta) = model::load_params(&params_path)?;

    let grc = read_grc_csv(&cfg.output_dir.join("grc.csv"))?;
    let ledger_path = cfg.output_dir.join("ledger.json");
    let privacy: Option<serde_json::Value> = if ledger_path.exists() {
        let text = fs::read_to_string(&ledger_path)
            .map_err(|e| CliError::Data(format!("cannot read ledger: {e}")))?;
        Some(
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| CliError::Data(format!("ledger decode: {e}")))?["ledger"]
                .clone(),
        )
    } else {
        None
    };

    let train_accuracy = model::accuracy(&params, &ds, &split.train_indices)?;
    let accuracy = if split.test_indices.is_empty() {
        None
    } else {
        Some(100.0 * model::accuracy(&params, &ds, &split.test_indices)?)
    };
    let fairness = if split.test_indices.is_empty() {
        None
    } else {
        Some(outcome_fairness(&params, &ds, &split.test_indices)?)
    };

    // Correlation over groups present in both vectors.
    let (grc_spearman, grc_pearson) = match &grc {
        Some(grc_vec) => {
            let pairs: Vec<(f64, f64)> = risk
                .adv_by_group
                .iter()
                .enumerate()
                .filter_map(|(g, adv)| adv.map(|a| (grc_vec[g], a)))
                .collect();
            if pairs.len() >= 2 {
                let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let corr = grc_correlation(&xs, &ys).map_err(|e| CliError::Data(e.to_string()))?;
                (corr.spearman, corr.pearson)
            } else {
                (None, None)
            }
        }
        None => (None, None),
    };

    let bundle = ReportBundle {
        config_digest: cfg.digest(),
        master_seed: cfg.master_seed,
        dataset: DatasetSummary {
            name: ds.name.clone(),
            n: ds.len(),
            dim: ds.dim(),
            num_classes: ds.num_classes,
            num_groups: ds.num_groups,
        },
        model: ModelSummary {
            arch: cfg.model.arch.clone(),
            convention: (cfg.arch()? == model::Arch::Cnn).then(|| CNN_CONVENTION.to_string()),
        },
        accuracy,
        train_accuracy: 100.0 * train_accuracy,
        delta: 100.0 * risk.delta,
        adv_by_group: risk
            .adv_by_group
            .iter()
            .map(|a| a.map(|v| 100.0 * v))
            .collect(),
        group_counts: risk.group_counts.clone(),
        excluded_groups: risk.excluded_groups.clone(),
        audit_method: trace.method.to_string(),
        audit_trials: trace.num_rows(),
        grc: grc.clone(),
        grc_spearman,
        grc_pearson,
        fairness,
        privacy,
    };
    write_text(
        &cfg.output_dir.join("report.json"),
        &serde_json::to_string_pretty(&bundle).expect("json"),
    )?;

    // Flat CSV: summary key/value rows, then one row per group.
    let mut csv = digest_comment(cfg);
    csv.push_str("section,key,value\n");
    if let Some(acc) = bundle.accuracy {
        csv.push_str(&format!("summary,accuracy_pct,{acc:.2}\n"));
    }
    csv.push_str(&format!("summary,train_accuracy_pct,{:.2}\n", bundle.train_accuracy));
    csv.push_str(&format!("summary,delta_pct,{:.2}\n", bundle.delta));
    if let Some(p) = &bundle.privacy {
        if let Some(eps) = p["epsilon"].as_f64() {
            csv.push_str(&format!("summary,epsilon,{eps:.4}\n"));
        }
    }
    if let Some(rho) = bundle.grc_spearman {
        csv.push_str(&format!("summary,grc_spearman,{rho:.4}\n"));
    }
    if let Some(f) = &bundle.fairness {
        for (key, v) in [
            ("accuracy_parity", f.accuracy_parity),
            ("demographic_parity", f.demographic_parity),
            ("equal_opportunity", f.equal_opportunity),
            ("equalized_odds", f.equalized_odds),
        ] {
            if let Some(v) = v {
                csv.push_str(&format!("summary,{key},{v:.4}\n"));
            }
        }
    }
    for (g, adv) in bundle.adv_by_group.iter().enumerate() {
        if let Some(a) = adv {
            csv.push_str(&format!("group,{g},adv_pct={a:.2}"));
            if let Some(grc_vec) = &bundle.grc {
                csv.push_str(&format!(";grc={:.6}", grc_vec[g]));
            }
            csv.push('\n');
        }
    }
    write_text(&cfg.output_dir.join("report.csv"), &csv)?;

    if per_sample {
        let mut csv = digest_comment(cfg);
        csv.push_str("sample_id,group,acc,adv\n");
        for (i, &sid) in risk.sample_ids.iter().enumerate() {
            csv.push_str(&format!(
                "{sid},{},{},{}\n",
                risk.sample_groups[i], risk.acc[i], risk.adv[i]
            ));
        }
        write_text(&cfg.output_dir.join("report_samples.csv"), &csv)?;
    }

    let mut line = format!(
        "report: delta {:.2} points, {} audit, {} trials",
        bundle.delta, bundle.audit_method, bundle.audit_trials
    );
    if let Some(acc) = bundle.accuracy {
        line.push_str(&format!(", test accuracy {acc:.2}%"));
    }
    println!("{line}");
    std::io::stdout().flush().ok();
    Ok(())
}

fn read_grc_csv(path: &Path) -> Result<Option<Vec<f64>>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("group,") || line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let _group = parts.next();
        let v: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Data(format!("bad grc row '{line}'")))?;
        values.push(v);
    }
    Ok(Some(values))
}
