//! Training loops: plain SGD, DP-SGD (per-sample clipping plus Gaussian
//! noise), and DP-SGD-S (group-adaptive clipping bounds estimated from
//! noisy gradient-norm statistics), all over the same Poisson batch
//! sampler so trajectories are comparable across algorithms.
//!
//! One training run is single-threaded and deterministic in its config
//! seed; only the per-sample gradient computation inside a batch fans out
//! to worker threads, and those results are folded in index order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{
    self, AccountantError, PrivacyLedger, SigmaEntry, DPSGDS_SHAPE, DPSGD_SHAPE, SIGMA1_RATIO,
};
use crate::dataio::{Dataset, SplitPlan};
use crate::exec;
use crate::model::{self, ModelError, ModelParams, ModelSpec};
use crate::rng::{stream, stream_rng};

/// Denominator norms below this are treated as +infinity ratios.
const NORM_FLOOR: f64 = 1e-12;

/// Delta used for ledger finalization when no target pair is configured.
pub const DEFAULT_REPORT_DELTA: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error("training diverged: non-finite parameters at iteration {iteration}")]
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    DpSgd,
    DpSgdS,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Sgd => write!(f, "sgd"),
            Algorithm::DpSgd => write!(f, "dpsgd"),
            Algorithm::DpSgdS => write!(f, "dpsgds"),
        }
    }
}

/// Which population count divides the group gradient sum in the DP-SGD-S
/// bound estimate: the group size in the full training set (the literal
/// pseudocode) or the group count realized in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupDenominator {
    FullDataset,
    BatchCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Clipping bound C (DP-SGD) / initial bound (DP-SGD-S).
    pub clip_bound: f64,
    /// Noise multiplier: sigma for DP-SGD, sigma2 for DP-SGD-S (sigma1 is
    /// fixed at 10 * sigma2). Mutually exclusive with `target`.
    pub noise_multiplier: Option<f64>,
    /// Scale bound tau >= 1 limiting how far a group bound may move.
    pub scale_bound: f64,
    /// Target (epsilon, delta); the noise multiplier is then calibrated.
    pub target: Option<(f64, f64)>,
    pub seed: u64,
    /// Whether the max-of-group-bounds reassignment of C carries into the
    /// next iteration (the literal pseudocode) or C resets each iteration.
    /// The literal reading lets C grow by up to a factor of tau per
    /// iteration, so long runs normally want this off.
    pub persist_clip_bound: bool,
    pub group_denominator: GroupDenominator,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.1,
            clip_bound: 10.0,
            noise_multiplier: None,
            scale_bound: 2.0,
            target: None,
            seed: 0,
            persist_clip_bound: true,
            group_denominator: GroupDenominator::FullDataset,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() {
            return Err(TrainError::Config("learning_rate must be finite".into()));
        }
        if self.clip_bound <= 0.0 {
            return Err(TrainError::Config("clip_bound must be positive".into()));
        }
        if self.scale_bound < 1.0 {
            return Err(TrainError::Config(format!(
                "scale_bound must be >= 1, got {}",
                self.scale_bound
            )));
        }
        if self.algorithm != Algorithm::Sgd {
            match (self.noise_multiplier, self.target) {
                (Some(_), Some(_)) => {
                    return Err(TrainError::Config(
                        "noise_multiplier and target (epsilon, delta) are mutually exclusive"
                            .into(),
                    ))
                }
                (None, None) => {
                    return Err(TrainError::Config(
                        "DP training needs a noise_multiplier or a target (epsilon, delta)"
                            .into(),
                    ))
                }
                (Some(s), None) if s < 0.0 => {
                    return Err(TrainError::Config("noise_multiplier must be >= 0".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Per-iteration log record; the CSV form of this is the training log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub realized_batch: usize,
    pub skipped: bool,
    /// Group clipping bounds C^k (DP-SGD-S only, otherwise empty).
    pub clip_per_group: Vec<f64>,
    /// Bound multiplying the noise: C for DP-SGD, max_k C^k for DP-SGD-S.
    pub clip_used: Option<f64>,
    pub grad_norm_min: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    /// Groups whose bound-estimate denominator fell below the floor this
    /// iteration (their ratio was treated as +infinity).
    pub capped_groups: Vec<usize>,
    /// Whether the iteration entered the GRC running means.
    pub grc_included: bool,
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub params: ModelParams,
    /// Group relative contribution, one entry per group.
    pub grc: Vec<f64>,
    pub ledger: Option<PrivacyLedger>,
    pub iterations: Vec<IterationRecord>,
    /// Resolved noise multiplier (sigma, or sigma2 for DP-SGD-S).
    pub noise_multiplier: Option<f64>,
}

/// Running per-group mean of the relative-contribution ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct GrcAccumulator {
    sums: Vec<f64>,
    count: usize,
}

impl GrcAccumulator {
    pub fn new(num_groups: usize) -> Self {
        Self {
            sums: vec![0.0; num_groups],
            count: 0,
        }
    }

    pub fn means(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.sums.len()];
        }
        self.sums.iter().map(|s| s / self.count as f64).collect()
    }
}

/// Record one iteration's group contribution ratios from raw (unclipped)
/// per-sample gradients.
///
/// ratio_k = || sum_{i in B, group k} g_i / |D^k| || / || sum_B g_i / |B| ||,
/// with |D^k| the group size in the full training set. Groups absent from
/// the batch contribute 0. Returns false (excluding the iteration from all
/// groups' means) when the whole-batch gradient norm is below the floor.
pub fn record_grc(
    batch_grads: &[Vec<f64>],
    batch_groups: &[usize],
    group_sizes: &[usize],
    acc: &mut GrcAccumulator,
) -> bool {
    assert_eq!(batch_grads.len(), batch_groups.len());
    assert_eq!(group_sizes.len(), acc.sums.len());
    if batch_grads.is_empty() {
        return false;
    }
    let dim = batch_grads[0].len();
    let k = group_sizes.len();
    let mut whole = vec![0.0f64; dim];
    let mut per_group = vec![0.0f64; k * dim];
    for (g, &grp) in batch_grads.iter().zip(batch_groups) {
        let gslice = &mut per_group[grp * dim..(grp + 1) * dim];
        for ((w, pg), &v) in whole.iter_mut().zip(gslice.iter_mut()).zip(g.iter()) {
            *w += v;
            *pg += v;
        }
    }
    let denom = l2_norm(&whole) / batch_grads.len() as f64;
    if denom < NORM_FLOOR {
        return false;
    }
    for grp in 0..k {
        let ratio = if group_sizes[grp] == 0 {
            0.0
        } else {
            let num = l2_norm(&per_group[grp * dim..(grp + 1) * dim]) / group_sizes[grp] as f64;
            num / denom
        };
        acc.sums[grp] += ratio;
    }
    acc.count += 1;
    true
}

/// Scale `g` down to the given L2 bound if it exceeds it; gradients already
/// under the bound are left untouched bit-for-bit. Returns the original norm.
pub fn clip_gradient(g: &mut [f64], bound: f64) -> f64 {
    let norm = l2_norm(g);
    if norm > bound {
        let factor = bound / norm;
        for v in g.iter_mut() {
            *v *= factor;
        }
    }
    norm
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn add_scaled(dst: &mut [f64], src: &[f64], factor: f64) {
    if factor == 1.0 {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    } else {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += factor * s;
        }
    }
}

/// Callers skip this entirely when the multiplier is zero, so a zero-noise
/// run consumes exactly the same RNG stream as plain SGD and an infinite
/// clip bound can never poison the product.
fn add_gaussian_noise(dst: &mut [f64], std_dev: f64, rng: &mut ChaCha8Rng) {
    debug_assert!(std_dev > 0.0);
    for d in dst.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *d += std_dev * z;
    }
}

/// Poisson batch: each index enters independently with probability `q`.
/// For q >= 1 all indices are taken without consuming randomness.
fn poisson_sample(rng: &mut ChaCha8Rng, n: usize, q: f64) -> Vec<usize> {
    if q >= 1.0 {
        return (0..n).collect();
    }
    (0..n).filter(|_| rng.gen::<f64>() < q).collect()
}

pub fn train_sgd(
    ds: &Dataset,
    split: &SplitPlan,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainArtifacts, TrainError> {
    if cfg.algorithm != Algorithm::Sgd {
        return Err(TrainError::Config("train_sgd requires algorithm sgd".into()));
    }
    train(ds, split, spec, cfg)
}

pub fn train_dpsgd(
    ds: &Dataset,
    split: &SplitPlan,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainArtifacts, TrainError> {
    if cfg.algorithm != Algorithm::DpSgd {
        return Err(TrainError::Config(
            "train_dpsgd requires algorithm dpsgd".into(),
        ));
    }
    train(ds, split, spec, cfg)
}

pub fn train_dpsgds(
    ds: &Dataset,
    split: &SplitPlan,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainArtifacts, TrainError> {
    if cfg.algorithm != Algorithm::DpSgdS {
        return Err(TrainError::Config(
            "train_dpsgds requires algorithm dpsgds".into(),
        ));
    }
    train(ds, split, spec, cfg)
}

/// Train on the split's training indices under the configured algorithm.
pub fn train(
    ds: &Dataset,
    split: &SplitPlan,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainArtifacts, TrainError> {
    cfg.validate()?;
    spec.validate()?;
    let n_train = split.train_indices.len();
    if n_train == 0 {
        return Err(TrainError::Config("empty training split".into()));
    }

    let q = (cfg.batch_size as f64 / n_train as f64).min(1.0);
    let iters_per_epoch = n_train.div_ceil(cfg.batch_size);
    let total_iters = cfg.epochs * iters_per_epoch;

    // Resolve the noise multiplier: given directly, or calibrated against
    // the target budget for this run's (q, T) and mechanism shape.
    let (sigma, report_delta) = match cfg.algorithm {
        Algorithm::Sgd => (None, DEFAULT_REPORT_DELTA),
        _ => match (cfg.noise_multiplier, cfg.target) {
            (Some(s), None) => (Some(s), DEFAULT_REPORT_DELTA),
            (None, Some((eps, delta))) => {
                let shape: &[(f64, usize)] = match cfg.algorithm {
                    Algorithm::DpSgd => &DPSGD_SHAPE,
                    Algorithm::DpSgdS => &DPSGDS_SHAPE,
                    Algorithm::Sgd => unreachable!(),
                };
                let s = accountant::calibrate_sigma(eps, delta, q, total_iters, shape)?;
                (Some(s), delta)
            }
            _ => unreachable!("checked by validate"),
        },
    };

    let mut params = model::init_params(spec, crate::rng::mix(cfg.seed, stream::INIT))?;
    let mut rng = stream_rng(cfg.seed, stream::TRAIN);
    let dim = params.theta.len();
    let k_groups = ds.num_groups;
    let group_sizes = ds.group_sizes(&split.train_indices);
    let mut grc = GrcAccumulator::new(k_groups);
    let mut iterations = Vec::with_capacity(total_iters);
    // DP-SGD-S: the working bound, possibly persisted across iterations.
    let mut current_bound = cfg.clip_bound;

    for t in 0..total_iters {
        let batch = poisson_sample(&mut rng, n_train, q);
        if batch.is_empty() {
            iterations.push(IterationRecord {
                iteration: t,
                realized_batch: 0,
                skipped: true,
                clip_per_group: Vec::new(),
                clip_used: None,
                grad_norm_min: 0.0,
                grad_norm_mean: 0.0,
                grad_norm_max: 0.0,
                capped_groups: Vec::new(),
                grc_included: false,
            });
            continue;
        }
        let realized = batch.len();

        // Raw per-sample gradients, computed in parallel but kept in batch
        // order so every later fold is deterministic.
        let grads: Vec<Vec<f64>> = {
            let params_ref = &params;
            let result: Result<Vec<Vec<f64>>, ModelError> = exec::map_slice(&batch, |&bi| {
                let idx = split.train_indices[bi];
                model::per_sample_grad(params_ref, ds.row(idx), ds.labels[idx])
            })
            .into_iter()
            .collect();
            result?
        };
        let batch_groups: Vec<usize> = batch
            .iter()
            .map(|&bi| ds.groups[split.train_indices[bi]])
            .collect();

        let norms: Vec<f64> = grads.iter().map(|g| l2_norm(g)).collect();
        let (mut nmin, mut nmax, mut nsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &n in &norms {
            nmin = nmin.min(n);
            nmax = nmax.max(n);
            nsum += n;
        }

        let grc_included = record_grc(&grads, &batch_groups, &group_sizes, &mut grc);

        let mut update = vec![0.0f64; dim];
        let mut clip_per_group = Vec::new();
        let mut clip_used = None;
        let mut capped_groups = Vec::new();

        match cfg.algorithm {
            Algorithm::Sgd => {
                for g in &grads {
                    add_scaled(&mut update, g, 1.0);
                }
                scale(&mut update, 1.0 / realized as f64);
            }
            Algorithm::DpSgd => {
                let c = cfg.clip_bound;
                let s = sigma.unwrap();
                for (g, &norm) in grads.iter().zip(&norms) {
                    let factor = if norm > c { c / norm } else { 1.0 };
                    add_scaled(&mut update, g, factor);
                }
                if s > 0.0 {
                    add_gaussian_noise(&mut update, s * c, &mut rng);
                }
                scale(&mut update, 1.0 / cfg.batch_size as f64);
                clip_used = Some(c);
            }
            Algorithm::DpSgdS => {
                let sigma2 = sigma.unwrap();
                let sigma1 = SIGMA1_RATIO * sigma2;
                let tau = cfg.scale_bound;

                // Unit-clipped sums: one whole-batch vector and one per group.
                let mut unit_whole = vec![0.0f64; dim];
                let mut unit_group = vec![0.0f64; k_groups * dim];
                let mut batch_group_counts = vec![0usize; k_groups];
                for ((g, &norm), &grp) in grads.iter().zip(&norms).zip(&batch_groups) {
                    let factor = if norm > 1.0 { 1.0 / norm } else { 1.0 };
                    add_scaled(&mut unit_whole, g, factor);
                    add_scaled(&mut unit_group[grp * dim..(grp + 1) * dim], g, factor);
                    batch_group_counts[grp] += 1;
                }

                // Shared numerator: one noise draw, reused for every group.
                if sigma1 > 0.0 {
                    add_gaussian_noise(&mut unit_whole, sigma1, &mut rng);
                }
                let numerator = l2_norm(&unit_whole) / cfg.batch_size as f64;

                let mut bounds = vec![0.0f64; k_groups];
                for grp in 0..k_groups {
                    let noisy = {
                        let mut s = unit_group[grp * dim..(grp + 1) * dim].to_vec();
                        if sigma1 > 0.0 {
                            add_gaussian_noise(&mut s, sigma1, &mut rng);
                        }
                        s
                    };
                    let denom_count = match cfg.group_denominator {
                        GroupDenominator::FullDataset => group_sizes[grp],
                        GroupDenominator::BatchCount => batch_group_counts[grp],
                    };
                    let denominator = if denom_count == 0 {
                        0.0
                    } else {
                        l2_norm(&noisy) / denom_count as f64
                    };
                    bounds[grp] = if denominator < NORM_FLOOR {
                        capped_groups.push(grp);
                        tau * current_bound
                    } else {
                        current_bound * tau.min(numerator / denominator)
                    };
                }

                // Re-clip the raw gradients with their group's bound.
                for ((g, &norm), &grp) in grads.iter().zip(&norms).zip(&batch_groups) {
                    let b = bounds[grp];
                    let factor = if norm > b { b / norm } else { 1.0 };
                    add_scaled(&mut update, g, factor);
                }

                // Noise scales with the largest group bound, which also
                // becomes the working bound when persistence is on.
                let noise_bound = bounds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if sigma2 > 0.0 {
                    add_gaussian_noise(&mut update, sigma2 * noise_bound, &mut rng);
                }
                scale(&mut update, 1.0 / cfg.batch_size as f64);

                clip_per_group = bounds;
                clip_used = Some(noise_bound);
                if cfg.persist_clip_bound {
                    current_bound = noise_bound;
                }
            }
        }

        for (p, &u) in params.theta.iter_mut().zip(&update) {
            *p -= cfg.learning_rate * u;
        }
        if !params.is_finite() {
            return Err(TrainError::NonFinite { iteration: t });
        }

        iterations.push(IterationRecord {
            iteration: t,
            realized_batch: realized,
            skipped: false,
            clip_per_group,
            clip_used,
            grad_norm_min: nmin,
            grad_norm_mean: nsum / realized as f64,
            grad_norm_max: nmax,
            capped_groups,
            grc_included,
        });
    }

    // Privacy ledger: composed over the nominal step count, regardless of
    // skipped-empty batches (each Poisson draw is one mechanism release).
    let ledger = match (cfg.algorithm, sigma) {
        (Algorithm::Sgd, _) => None,
        (_, Some(s)) if s > 0.0 => {
            let mut ledger = PrivacyLedger::new(q);
            let entries: Vec<SigmaEntry> = match cfg.algorithm {
                Algorithm::DpSgd => vec![SigmaEntry {
                    sigma: s,
                    mechanisms_per_step: 1,
                }],
                Algorithm::DpSgdS => vec![
                    SigmaEntry {
                        sigma: SIGMA1_RATIO * s,
                        mechanisms_per_step: 2,
                    },
                    SigmaEntry {
                        sigma: s,
                        mechanisms_per_step: 1,
                    },
                ],
                Algorithm::Sgd => unreachable!(),
            };
            accountant::compose(&mut ledger, total_iters, &entries)?;
            ledger.finalize(report_delta)?;
            Some(ledger)
        }
        // sigma = 0 carries no guarantee worth accounting.
        _ => None,
    };

    Ok(TrainArtifacts {
        params,
        grc: grc.means(),
        ledger,
        iterations,
        noise_multiplier: sigma,
    })
}

#[inline]
fn scale(v: &mut [f64], factor: f64) {
    for x in v.iter_mut() {
        *x *= factor;
    }
}

/// The iteration log as CSV (one row per iteration, group bounds pipe-joined).
pub fn iteration_log_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from(
        "iteration,realized_batch,skipped,clip_used,clip_per_group,\
         grad_norm_min,grad_norm_mean,grad_norm_max,capped_groups,grc_included\n",
    );
    for r in records {
        let bounds = r
            .clip_per_group
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join("|");
        let capped = r
            .capped_groups
            .iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join("|");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.realized_batch,
            r.skipped,
            r.clip_used.map(|c| c.to_string()).unwrap_or_default(),
            bounds,
            r.grad_norm_min,
            r.grad_norm_mean,
            r.grad_norm_max,
            capped,
            r.grc_included,
        ));
    }
    out
}
