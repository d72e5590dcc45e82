//! Membership-inference auditing games.
//!
//! Four games are supported. All of them retrain models on coin-flipped
//! inclusion splits of the audited set Z and record per-sample losses into
//! a (2R x m) trace; they differ in how the adversary derives thresholds:
//!
//! - per-sample thresholds over each column (the approximate worst-case
//!   game, and the classic leave-one-out game when m = 1);
//! - one global threshold per round-row;
//! - one threshold per round-row per group.
//!
//! Rounds are independent tasks over immutable data and run on the worker
//! pool; trace assembly is positional, so parallel and sequential execution
//! produce identical traces.

mod io;
mod threshold;

pub use io::{read_trace, write_guesses_csv, write_trace, TraceSidecar};
pub use threshold::{
    apply_accuracy, optimal_threshold, Direction, ThresholdChoice, ThresholdRule,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Dataset, SplitPlan};
use crate::exec::{self, ExecPolicy};
use crate::model::{self, ModelError, ModelSpec};
use crate::rng::{mix, stream_rng};
use crate::train::{self, TrainConfig, TrainError};

use rand::Rng;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("contract error: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("round {round} failed after retry (seed {seed}): {source}")]
    Round {
        round: usize,
        seed: u64,
        #[source]
        source: TrainError,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditMethod {
    Ga,
    Gba,
    Looa,
    Alooa,
}

impl std::fmt::Display for AuditMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AuditMethod::Ga => write!(f, "ga"),
            AuditMethod::Gba => write!(f, "gba"),
            AuditMethod::Looa => write!(f, "looa"),
            AuditMethod::Alooa => write!(f, "alooa"),
        }
    }
}

/// Everything one auditing run needs besides the data and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPlan {
    pub method: AuditMethod,
    /// Number of rounds R; every audited sample accrues 2R trials.
    pub rounds: usize,
    /// The single audited record (dataset index), leave-one-out only.
    pub target_index: Option<usize>,
    pub master_seed: u64,
    pub train_config: TrainConfig,
    pub model_spec: ModelSpec,
    pub threshold_rule: ThresholdRule,
}

impl AuditPlan {
    fn validate(&self, split: &SplitPlan) -> Result<(), AuditError> {
        if self.rounds == 0 {
            return Err(AuditError::Config("need at least one round".into()));
        }
        match self.method {
            AuditMethod::Looa => {
                let t = self.target_index.ok_or_else(|| {
                    AuditError::Config("leave-one-out needs exactly one target_index".into())
                })?;
                if !split.train_indices.contains(&t) {
                    return Err(AuditError::Config(format!(
                        "target index {t} is not a training record"
                    )));
                }
            }
            _ => {
                if split.audit_indices.is_empty() {
                    return Err(AuditError::Config("audit set Z is empty".into()));
                }
            }
        }
        Ok(())
    }
}

/// The (2R x m) loss matrix O and membership matrix H produced by a game.
///
/// Row 2r holds the first model of round r, row 2r+1 its complement;
/// `membership[row][col]` is true iff the column's record was in that
/// model's training set.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditTrace {
    pub method: AuditMethod,
    pub rounds: usize,
    pub sample_ids: Vec<usize>,
    pub losses: Vec<f64>,
    pub membership: Vec<bool>,
    pub round_seeds: Vec<u64>,
}

impl AuditTrace {
    pub fn num_rows(&self) -> usize {
        2 * self.rounds
    }

    pub fn num_cols(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn loss(&self, row: usize, col: usize) -> f64 {
        self.losses[row * self.num_cols() + col]
    }

    pub fn is_member(&self, row: usize, col: usize) -> bool {
        self.membership[row * self.num_cols() + col]
    }

    pub fn column_scores(&self, col: usize) -> Vec<f64> {
        (0..self.num_rows()).map(|r| self.loss(r, col)).collect()
    }

    pub fn column_statuses(&self, col: usize) -> Vec<bool> {
        (0..self.num_rows())
            .map(|r| self.is_member(r, col))
            .collect()
    }

    /// The first `rounds` rounds as a standalone trace (an auditor that
    /// stopped early).
    pub fn prefix(&self, rounds: usize) -> AuditTrace {
        assert!(rounds <= self.rounds, "prefix longer than trace");
        let cols = self.num_cols();
        AuditTrace {
            method: self.method,
            rounds,
            sample_ids: self.sample_ids.clone(),
            losses: self.losses[..2 * rounds * cols].to_vec(),
            membership: self.membership[..2 * rounds * cols].to_vec(),
            round_seeds: self.round_seeds[..rounds].to_vec(),
        }
    }

    fn assert_finite(&self) -> Result<(), AuditError> {
        if self.losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(AuditError::Contract(
                "trace contains non-finite or negative losses".into(),
            ));
        }
        Ok(())
    }
}

/// Where a threshold applies within a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scope")]
pub enum ThresholdScope {
    /// One threshold per audited sample (column), fitted on all its trials.
    Sample { column: usize },
    /// One threshold per trace row, fitted on that round's m samples.
    Round { row: usize },
    /// One threshold per trace row per group.
    RoundGroup { row: usize, group: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdUnit {
    #[serde(flatten)]
    pub scope: ThresholdScope,
    pub beta: f64,
    pub direction: Direction,
    pub accuracy: f64,
}

/// Membership guesses aligned with a trace, plus the thresholds behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct GuessMatrix {
    pub guesses: Vec<bool>,
    pub num_cols: usize,
    pub thresholds: Vec<ThresholdUnit>,
    pub warnings: Vec<String>,
}

impl GuessMatrix {
    pub fn guess(&self, row: usize, col: usize) -> bool {
        self.guesses[row * self.num_cols + col]
    }
}

struct RoundOutput {
    h: Vec<bool>,
    losses_first: Vec<f64>,
    losses_second: Vec<f64>,
    seed: u64,
}

/// Train one model on `train_indices` with a round-derived seed, retrying
/// once with a perturbed seed before giving up.
fn train_round_model(
    ds: &Dataset,
    train_indices: Vec<usize>,
    plan: &AuditPlan,
    seed: u64,
    round: usize,
) -> Result<model::ModelParams, AuditError> {
    let split = SplitPlan {
        train_indices,
        test_indices: Vec::new(),
        audit_indices: Vec::new(),
    };
    let mut cfg = plan.train_config.clone();
    cfg.seed = seed;
    match train::train(ds, &split, &plan.model_spec, &cfg) {
        Ok(art) => Ok(art.params),
        Err(_first) => {
            // Retry once with a perturbed seed; a lost round would bias the
            // 2R accounting, so only abort if the retry also fails.
            cfg.seed = mix(seed, 0xfa11_bacc);
            train::train(ds, &split, &plan.model_spec, &cfg)
                .map(|art| art.params)
                .map_err(|source| AuditError::Round {
                    round,
                    seed: cfg.seed,
                    source,
                })
        }
    }
}

fn losses_for(
    params: &model::ModelParams,
    ds: &Dataset,
    sample_ids: &[usize],
) -> Result<Vec<f64>, AuditError> {
    sample_ids
        .iter()
        .map(|&i| model::forward_loss(params, ds.row(i), ds.labels[i]).map_err(AuditError::from))
        .collect()
}

/// One round of the inclusion-split game: flip a fair coin per audited
/// sample, train the two complementary models, record losses of every
/// audited sample under both.
fn split_round(
    ds: &Dataset,
    split: &SplitPlan,
    plan: &AuditPlan,
    round: usize,
) -> Result<RoundOutput, AuditError> {
    let round_seed = mix(plan.master_seed, round as u64);
    let mut rng = stream_rng(round_seed, 0);
    let z = &split.audit_indices;
    let h: Vec<bool> = (0..z.len()).map(|_| rng.gen::<bool>()).collect();
    let z_pos: std::collections::HashMap<usize, usize> =
        z.iter().enumerate().map(|(pos, &i)| (i, pos)).collect();

    // First model excludes samples with h = 0, so h_i is its membership bit;
    // the second model excludes h = 1.
    let train_first: Vec<usize> = split
        .train_indices
        .iter()
        .copied()
        .filter(|i| z_pos.get(i).map_or(true, |&pos| h[pos]))
        .collect();
    let train_second: Vec<usize> = split
        .train_indices
        .iter()
        .copied()
        .filter(|i| z_pos.get(i).map_or(true, |&pos| !h[pos]))
        .collect();

    let f_first = train_round_model(ds, train_first, plan, mix(round_seed, 1), round)?;
    let f_second = train_round_model(ds, train_second, plan, mix(round_seed, 2), round)?;
    Ok(RoundOutput {
        h,
        losses_first: losses_for(&f_first, ds, z)?,
        losses_second: losses_for(&f_second, ds, z)?,
        seed: round_seed,
    })
}

/// One leave-one-out round: the first model excludes the target, the second
/// is trained on the full training set.
fn looa_round(
    ds: &Dataset,
    split: &SplitPlan,
    plan: &AuditPlan,
    target: usize,
    round: usize,
) -> Result<RoundOutput, AuditError> {
    let round_seed = mix(plan.master_seed, round as u64);
    let without: Vec<usize> = split
        .train_indices
        .iter()
        .copied()
        .filter(|&i| i != target)
        .collect();
    let f_out = train_round_model(ds, without, plan, mix(round_seed, 1), round)?;
    let f_in = train_round_model(
        ds,
        split.train_indices.clone(),
        plan,
        mix(round_seed, 2),
        round,
    )?;
    Ok(RoundOutput {
        h: vec![false],
        losses_first: losses_for(&f_out, ds, &[target])?,
        losses_second: losses_for(&f_in, ds, &[target])?,
        seed: round_seed,
    })
}

fn assemble_trace(
    method: AuditMethod,
    rounds: usize,
    sample_ids: Vec<usize>,
    outputs: Vec<RoundOutput>,
) -> Result<AuditTrace, AuditError> {
    let m = sample_ids.len();
    let mut losses = Vec::with_capacity(2 * rounds * m);
    let mut membership = Vec::with_capacity(2 * rounds * m);
    let mut round_seeds = Vec::with_capacity(rounds);
    for out in outputs {
        losses.extend_from_slice(&out.losses_first);
        losses.extend_from_slice(&out.losses_second);
        membership.extend_from_slice(&out.h);
        membership.extend(out.h.iter().map(|&b| !b));
        round_seeds.push(out.seed);
    }
    let trace = AuditTrace {
        method,
        rounds,
        sample_ids,
        losses,
        membership,
        round_seeds,
    };
    trace.assert_finite()?;
    Ok(trace)
}

fn run_split_trace(
    ds: &Dataset,
    split: &SplitPlan,
    plan: &AuditPlan,
    exec: ExecPolicy,
) -> Result<AuditTrace, AuditError> {
    plan.validate(split)?;
    let outputs = exec::run_indexed(exec, plan.rounds, |r| split_round(ds, split, plan, r))?;
    assemble_trace(
        plan.method,
        plan.rounds,
        split.audit_indices.clone(),
        outputs,
    )
}

/// The approximate worst-case game: per-round random inclusion masks over
/// the m audited records, two complementary models per round.
pub fn run_alooa(
    ds: &Dataset,
    split: &SplitPlan,
    plan: &AuditPlan,
    exec: ExecPolicy,
) -> Result<AuditTrace, AuditError> {
    if plan.method != AuditMethod::Alooa {
        return Err(AuditError::Config("run_alooa requires method alooa".into()));
    }
    run_split_trace(ds, split, plan, exec)
}

/// The leave-one-out game for a single target record.
pub fn run_looa(
    ds: &Dataset,
    split: &SplitPlan,
    plan: &AuditPlan,
    exec: ExecPolicy,
) -> Result<AuditTrace, AuditError> {
    if plan.method != AuditMethod::Looa {
        return Err(AuditError::Config("run_looa requires method looa".into()));
    }
    plan.validate(split)?;
    let target = plan.target_index.unwrap();
    let outputs = exec::run_indexed(exec, plan.rounds, |r| looa_round(ds, split, plan, target, r))?;
    assemble_trace(plan.method, plan.rounds, vec![target], outputs)
}

/// The global-threshold game: same trace generation, one threshold per round.
pub fn run_ga(
    ds: &Dataset,
    split: &SplitPlan,
    plan: &AuditPlan,
    exec: ExecPolicy,
) -> Result<(AuditTrace, GuessMatrix), AuditError> {
    if plan.method != AuditMethod::Ga {
        return Err(AuditError::Config("run_ga requires method ga".into()));
    }
    let trace = run_split_trace(ds, split, plan, exec)?;
    let guesses = guesses_per_round(&trace, plan.threshold_rule)?;
    Ok((trace, guesses))
}

/// The group-threshold game: same trace generation, one threshold per round
/// per group.
pub fn run_gba(
    ds: &Dataset,
    split: &SplitPlan,
    plan: &AuditPlan,
    exec: ExecPolicy,
) -> Result<(AuditTrace, GuessMatrix), AuditError> {
    if plan.method != AuditMethod::Gba {
        return Err(AuditError::Config("run_gba requires method gba".into()));
    }
    let trace = run_split_trace(ds, split, plan, exec)?;
    let guesses = guesses_per_round_group(&trace, ds, plan.threshold_rule)?;
    Ok((trace, guesses))
}

/// Per-sample thresholds: one (beta, direction) per column, fitted on that
/// sample's 2R trials. The per-sample adversary for ALOOA and LOOA traces.
pub fn guesses_from_trace(
    trace: &AuditTrace,
    rule: ThresholdRule,
) -> Result<GuessMatrix, AuditError> {
    let rows = trace.num_rows();
    let cols = trace.num_cols();
    let mut guesses = vec![false; rows * cols];
    let mut thresholds = Vec::with_capacity(cols);
    for col in 0..cols {
        let scores = trace.column_scores(col);
        let statuses = trace.column_statuses(col);
        let choice = optimal_threshold(&scores, &statuses, rule)?;
        for row in 0..rows {
            guesses[row * cols + col] = choice.direction.guess(scores[row], choice.beta);
        }
        thresholds.push(ThresholdUnit {
            scope: ThresholdScope::Sample { column: col },
            beta: choice.beta,
            direction: choice.direction,
            accuracy: choice.accuracy,
        });
    }
    Ok(GuessMatrix {
        guesses,
        num_cols: cols,
        thresholds,
        warnings: Vec::new(),
    })
}

/// One global threshold per trace row, fitted on that round's m samples.
pub fn guesses_per_round(
    trace: &AuditTrace,
    rule: ThresholdRule,
) -> Result<GuessMatrix, AuditError> {
    let rows = trace.num_rows();
    let cols = trace.num_cols();
    let mut guesses = vec![false; rows * cols];
    let mut thresholds = Vec::with_capacity(rows);
    for row in 0..rows {
        let scores: Vec<f64> = (0..cols).map(|c| trace.loss(row, c)).collect();
        let statuses: Vec<bool> = (0..cols).map(|c| trace.is_member(row, c)).collect();
        let choice = optimal_threshold(&scores, &statuses, rule)?;
        for col in 0..cols {
            guesses[row * cols + col] = choice.direction.guess(scores[col], choice.beta);
        }
        thresholds.push(ThresholdUnit {
            scope: ThresholdScope::Round { row },
            beta: choice.beta,
            direction: choice.direction,
            accuracy: choice.accuracy,
        });
    }
    Ok(GuessMatrix {
        guesses,
        num_cols: cols,
        thresholds,
        warnings: Vec::new(),
    })
}

/// One threshold per trace row per group.
///
/// A group with no audited samples has no columns to guess; it is reported
/// as a warning (its guesses would fall back to the round's global
/// threshold if it ever had columns).
pub fn guesses_per_round_group(
    trace: &AuditTrace,
    ds: &Dataset,
    rule: ThresholdRule,
) -> Result<GuessMatrix, AuditError> {
    let rows = trace.num_rows();
    let cols = trace.num_cols();
    let k = ds.num_groups;
    let col_group: Vec<usize> = trace.sample_ids.iter().map(|&i| ds.groups[i]).collect();
    let mut group_cols: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (c, &g) in col_group.iter().enumerate() {
        group_cols[g].push(c);
    }
    let mut warnings = Vec::new();
    for (g, cs) in group_cols.iter().enumerate() {
        if cs.is_empty() {
            warnings.push(format!(
                "group {g} has no audited samples; its guesses would use the global round threshold"
            ));
        }
    }

    let mut guesses = vec![false; rows * cols];
    let mut thresholds = Vec::new();
    for row in 0..rows {
        for (g, cs) in group_cols.iter().enumerate() {
            if cs.is_empty() {
                continue;
            }
            let scores: Vec<f64> = cs.iter().map(|&c| trace.loss(row, c)).collect();
            let statuses: Vec<bool> = cs.iter().map(|&c| trace.is_member(row, c)).collect();
            let choice = optimal_threshold(&scores, &statuses, rule)?;
            for (&c, &s) in cs.iter().zip(&scores) {
                guesses[row * cols + c] = choice.direction.guess(s, choice.beta);
            }
            thresholds.push(ThresholdUnit {
                scope: ThresholdScope::RoundGroup { row, group: g },
                beta: choice.beta,
                direction: choice.direction,
                accuracy: choice.accuracy,
            });
        }
    }
    Ok(GuessMatrix {
        guesses,
        num_cols: cols,
        thresholds,
        warnings,
    })
}
