//! Trace and guess files.
//!
//! A trace is a CSV with columns (round, model_half, sample_id, loss,
//! is_member) plus a JSON sidecar holding the plan, seeds, and config
//! digest. Losses are written with Rust's shortest round-trippable float
//! formatting, so a reloaded trace is bit-identical and rerunning an
//! identical config reproduces the file byte for byte. Lines starting with
//! `#` are comments (used to embed the digest and master seed).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AuditError, AuditPlan, AuditTrace, GuessMatrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub plan: AuditPlan,
    pub sample_ids: Vec<usize>,
    pub round_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> AuditError + '_ {
    move |source| AuditError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write `<stem>.csv` and `<stem>.json` for a trace.
pub fn write_trace(
    trace: &AuditTrace,
    plan: &AuditPlan,
    stem: &Path,
    config_digest: Option<&str>,
) -> Result<(), AuditError> {
    let csv_path = stem.with_extension("csv");
    let mut w = BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?);
    if let Some(digest) = config_digest {
        writeln!(
            w,
            "# config_digest={digest} master_seed={}",
            plan.master_seed
        )
        .map_err(io_err(&csv_path))?;
    }
    writeln!(w, "round,model_half,sample_id,loss,is_member").map_err(io_err(&csv_path))?;
    for r in 0..trace.rounds {
        for half in 0..2usize {
            let row = 2 * r + half;
            for (c, &sid) in trace.sample_ids.iter().enumerate() {
                writeln!(
                    w,
                    "{r},{half},{sid},{},{}",
                    trace.loss(row, c),
                    u8::from(trace.is_member(row, c))
                )
                .map_err(io_err(&csv_path))?;
            }
        }
    }
    w.flush().map_err(io_err(&csv_path))?;

    let sidecar = TraceSidecar {
        plan: plan.clone(),
        sample_ids: trace.sample_ids.clone(),
        round_seeds: trace.round_seeds.clone(),
        config_digest: config_digest.map(str::to_string),
    };
    let json_path = stem.with_extension("json");
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| AuditError::Format(format!("sidecar encode: {e}")))?;
    std::fs::write(&json_path, json).map_err(io_err(&json_path))?;
    Ok(())
}

/// Read back `<stem>.csv` + `<stem>.json`.
pub fn read_trace(stem: &Path) -> Result<(AuditTrace, TraceSidecar), AuditError> {
    let json_path = stem.with_extension("json");
    let json = std::fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
    let sidecar: TraceSidecar = serde_json::from_str(&json)
        .map_err(|e| AuditError::Format(format!("sidecar decode: {e}")))?;

    let csv_path = stem.with_extension("csv");
    let reader = BufReader::new(File::open(&csv_path).map_err(io_err(&csv_path))?);
    let m = sidecar.sample_ids.len();
    let rounds = sidecar.plan.rounds;
    let mut losses = vec![0.0f64; 2 * rounds * m];
    let mut membership = vec![false; 2 * rounds * m];
    let mut filled = vec![false; 2 * rounds * m];

    let col_of: std::collections::HashMap<usize, usize> = sidecar
        .sample_ids
        .iter()
        .enumerate()
        .map(|(c, &sid)| (sid, c))
        .collect();

    let mut saw_header = false;
    for (ln, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&csv_path))?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(AuditError::Format(format!(
                "trace line {ln}: expected 5 fields, got {}",
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize, AuditError> {
            s.parse()
                .map_err(|_| AuditError::Format(format!("trace line {ln}: bad {what} '{s}'")))
        };
        let r = parse(fields[0], "round")?;
        let half = parse(fields[1], "model_half")?;
        let sid = parse(fields[2], "sample_id")?;
        let loss: f64 = fields[3]
            .parse()
            .map_err(|_| AuditError::Format(format!("trace line {ln}: bad loss")))?;
        let member = fields[4] == "1";
        let col = *col_of.get(&sid).ok_or_else(|| {
            AuditError::Format(format!("trace line {ln}: unknown sample_id {sid}"))
        })?;
        if r >= rounds || half > 1 {
            return Err(AuditError::Format(format!(
                "trace line {ln}: round {r} half {half} out of range"
            )));
        }
        let idx = (2 * r + half) * m + col;
        losses[idx] = loss;
        membership[idx] = member;
        filled[idx] = true;
    }
    if !filled.iter().all(|&f| f) {
        return Err(AuditError::Format("trace file is missing rows".into()));
    }

    let trace = AuditTrace {
        method: sidecar.plan.method,
        rounds,
        sample_ids: sidecar.sample_ids.clone(),
        losses,
        membership,
        round_seeds: sidecar.round_seeds.clone(),
    };
    Ok((trace, sidecar))
}

/// Write guesses mirroring the trace layout, each row carrying the
/// threshold unit that produced it. `col_groups` maps trace columns to
/// group labels and is required when any threshold is group-scoped.
pub fn write_guesses_csv(
    trace: &AuditTrace,
    guesses: &GuessMatrix,
    col_groups: Option<&[usize]>,
    path: &Path,
    config_digest: Option<&str>,
    master_seed: u64,
) -> Result<(), AuditError> {
    use super::ThresholdScope;

    let cols = trace.num_cols();
    // Resolve the governing threshold unit for each (row, col).
    let mut unit_for = vec![usize::MAX; trace.num_rows() * cols];
    for (u, unit) in guesses.thresholds.iter().enumerate() {
        match unit.scope {
            ThresholdScope::Sample { column } => {
                for row in 0..trace.num_rows() {
                    unit_for[row * cols + column] = u;
                }
            }
            ThresholdScope::Round { row } => {
                for col in 0..cols {
                    unit_for[row * cols + col] = u;
                }
            }
            ThresholdScope::RoundGroup { row, group } => {
                let col_groups = col_groups.ok_or_else(|| {
                    AuditError::Contract(
                        "group-scoped thresholds need the column group mapping".into(),
                    )
                })?;
                for col in 0..cols {
                    if col_groups[col] == group {
                        unit_for[row * cols + col] = u;
                    }
                }
            }
        }
    }
    if unit_for.iter().any(|&u| u == usize::MAX) {
        return Err(AuditError::Contract(
            "guess matrix has trials not covered by any threshold unit".into(),
        ));
    }

    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    if let Some(digest) = config_digest {
        writeln!(w, "# config_digest={digest} master_seed={master_seed}").map_err(io_err(path))?;
    }
    for warning in &guesses.warnings {
        writeln!(w, "# warning: {warning}").map_err(io_err(path))?;
    }
    writeln!(w, "round,model_half,sample_id,guess,beta,direction").map_err(io_err(path))?;
    for r in 0..trace.rounds {
        for half in 0..2usize {
            let row = 2 * r + half;
            for (c, &sid) in trace.sample_ids.iter().enumerate() {
                let unit = &guesses.thresholds[unit_for[row * cols + c]];
                let dir = match unit.direction {
                    super::Direction::LowerIsMember => "lower-is-member",
                    super::Direction::HigherOrEqualIsMember => "higher-or-equal-is-member",
                };
                writeln!(
                    w,
                    "{r},{half},{sid},{},{},{dir}",
                    u8::from(guesses.guess(row, c)),
                    unit.beta
                )
                .map_err(io_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
