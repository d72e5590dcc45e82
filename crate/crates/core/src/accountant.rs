//! Rényi-DP accounting for subsampled Gaussian mechanisms.
//!
//! Per-step RDP is exact at integer orders via the binomial expansion of
//! the sampled Gaussian mechanism, evaluated in log domain. Fractional
//! orders take the larger of the two neighboring integer values, which is
//! conservative since RDP is nondecreasing in the order. Composition is
//! additive over steps and mechanisms; conversion to (epsilon, delta) uses
//! the classic bound eps = min_alpha [ rdp(alpha) + ln(1/delta)/(alpha-1) ].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{ln_binomial, log_sum_exp};

/// Default RDP order grid, recorded in every ledger.
pub const DEFAULT_ORDERS: [f64; 15] = [
    1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0,
];

/// DP-SGD-S fixes the bound-estimation noise at ten times the gradient
/// noise, so only one multiplier is ever searched.
pub const SIGMA1_RATIO: f64 = 10.0;

/// Calibration search bracket and tolerance for the noise multiplier.
pub const SIGMA_BRACKET: (f64, f64) = (0.3, 100.0);
pub const SIGMA_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum AccountantError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(
        "calibration error: target eps {target} unreachable; achievable range \
         [{eps_at_max_sigma:.4}, {eps_at_min_sigma:.4}] for sigma in [{:.2}, {:.2}]",
        SIGMA_BRACKET.0,
        SIGMA_BRACKET.1
    )]
    Calibration {
        target: f64,
        eps_at_max_sigma: f64,
        eps_at_min_sigma: f64,
    },
}

/// One noise source released per step: a multiplier and how many
/// unit-sensitivity mechanisms it covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEntry {
    pub sigma: f64,
    pub mechanisms_per_step: usize,
}

/// Accumulated RDP over a fixed order grid, plus the final conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub orders: Vec<f64>,
    pub rdp: Vec<f64>,
    pub steps: usize,
    pub q: f64,
    pub sigma_entries: Vec<SigmaEntry>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}

impl PrivacyLedger {
    pub fn new(q: f64) -> Self {
        Self::with_orders(DEFAULT_ORDERS.to_vec(), q)
    }

    pub fn with_orders(orders: Vec<f64>, q: f64) -> Self {
        let n = orders.len();
        Self {
            orders,
            rdp: vec![0.0; n],
            steps: 0,
            q,
            sigma_entries: Vec::new(),
            epsilon: None,
            delta: None,
        }
    }

    /// Compute and record epsilon at the given delta.
    pub fn finalize(&mut self, delta: f64) -> Result<f64, AccountantError> {
        let eps = to_eps_delta(self, delta)?;
        self.epsilon = Some(eps);
        self.delta = Some(delta);
        Ok(eps)
    }
}

/// RDP of one subsampled Gaussian release at order `alpha`.
///
/// For q = 1 this is the plain Gaussian value alpha / (2 sigma^2).
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> Result<f64, AccountantError> {
    if alpha <= 1.0 {
        return Err(AccountantError::Domain(format!(
            "RDP order must exceed 1, got {alpha}"
        )));
    }
    if !(0.0..=1.0).contains(&q) || q == 0.0 {
        return Err(AccountantError::Domain(format!(
            "sampling rate must be in (0, 1], got {q}"
        )));
    }
    if sigma <= 0.0 {
        return Err(AccountantError::Domain(format!(
            "noise multiplier must be positive, got {sigma}"
        )));
    }
    let gaussian = alpha / (2.0 * sigma * sigma);
    if q == 1.0 {
        return Ok(gaussian);
    }
    if alpha.fract() == 0.0 {
        return Ok(rdp_integer_order(q, sigma, alpha as u64));
    }
    // Fractional order: the larger neighboring integer value is an upper
    // bound (Renyi divergence is nondecreasing in the order), and so is the
    // unsubsampled Gaussian value at this order (amplification); take the
    // tighter of the two so subsampling never reports more than q = 1 would.
    let hi = rdp_integer_order(q, sigma, alpha.ceil() as u64);
    let lo_order = alpha.floor() as u64;
    let conservative = if lo_order < 2 {
        hi
    } else {
        rdp_integer_order(q, sigma, lo_order).max(hi)
    };
    Ok(conservative.min(gaussian))
}

// Binomial expansion at integer order, log domain:
//   (alpha-1) * rdp = ln sum_{j=0}^{alpha} C(alpha,j) (1-q)^(alpha-j) q^j
//                     exp(j(j-1) / (2 sigma^2))
fn rdp_integer_order(q: f64, sigma: f64, alpha: u64) -> f64 {
    debug_assert!(alpha >= 2);
    let ln_q = q.ln();
    let ln_1mq = (1.0 - q).ln();
    let s2 = 2.0 * sigma * sigma;
    let terms: Vec<f64> = (0..=alpha)
        .map(|j| {
            let jf = j as f64;
            ln_binomial(alpha, j) + (alpha - j) as f64 * ln_1mq + jf * ln_q + jf * (jf - 1.0) / s2
        })
        .collect();
    let log_moment = log_sum_exp(&terms);
    // The moment is >= 1 (j=0 and j=1 terms alone sum to (1-q)^a + a q (1-q)^(a-1) <= 1),
    // but floating point can land a hair below ln(1) = 0.
    log_moment.max(0.0) / (alpha as f64 - 1.0)
}

/// Accumulate `steps` composed steps of the given per-step mechanisms.
pub fn compose(
    ledger: &mut PrivacyLedger,
    steps: usize,
    entries: &[SigmaEntry],
) -> Result<(), AccountantError> {
    for i in 0..ledger.orders.len() {
        let alpha = ledger.orders[i];
        let mut per_step = 0.0;
        for e in entries {
            per_step += e.mechanisms_per_step as f64
                * rdp_subsampled_gaussian(ledger.q, e.sigma, alpha)?;
        }
        ledger.rdp[i] += steps as f64 * per_step;
    }
    ledger.steps += steps;
    for e in entries {
        if !ledger.sigma_entries.contains(e) {
            ledger.sigma_entries.push(*e);
        }
    }
    Ok(())
}

/// Convert accumulated RDP to epsilon at the given delta.
pub fn to_eps_delta(ledger: &PrivacyLedger, delta: f64) -> Result<f64, AccountantError> {
    if ledger.orders.is_empty() {
        return Err(AccountantError::Config("empty RDP order grid".into()));
    }
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(AccountantError::Domain(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let ln_inv_delta = (1.0 / delta).ln();
    let eps = ledger
        .orders
        .iter()
        .zip(&ledger.rdp)
        .map(|(&a, &r)| r + ln_inv_delta / (a - 1.0))
        .fold(f64::INFINITY, f64::min);
    Ok(eps)
}

/// Epsilon of `steps` composed steps at sampling rate `q`, where each step
/// releases `shape` mechanisms with multipliers `ratio * sigma`.
pub fn epsilon_for_sigma(
    sigma: f64,
    delta: f64,
    q: f64,
    steps: usize,
    shape: &[(f64, usize)],
) -> Result<f64, AccountantError> {
    let mut ledger = PrivacyLedger::new(q);
    let entries: Vec<SigmaEntry> = shape
        .iter()
        .map(|&(ratio, mechs)| SigmaEntry {
            sigma: ratio * sigma,
            mechanisms_per_step: mechs,
        })
        .collect();
    compose(&mut ledger, steps, &entries)?;
    to_eps_delta(&ledger, delta)
}

/// Per-step mechanism shape for plain DP-SGD: one gradient release.
pub const DPSGD_SHAPE: [(f64, usize); 1] = [(1.0, 1)];

/// Per-step shape for DP-SGD-S: the whole-batch norm estimate plus the
/// group norm estimates (a parallel composition counted as one more
/// unit-sensitivity release) at sigma1 = 10 sigma2, and the gradient at
/// sigma2. The searched multiplier is sigma2.
pub const DPSGDS_SHAPE: [(f64, usize); 2] = [(SIGMA1_RATIO, 2), (1.0, 1)];

/// Smallest noise multiplier (within the bracket, to 1e-3) whose composed
/// epsilon meets the target.
pub fn calibrate_sigma(
    target_eps: f64,
    delta: f64,
    q: f64,
    steps: usize,
    shape: &[(f64, usize)],
) -> Result<f64, AccountantError> {
    if target_eps <= 0.0 {
        return Err(AccountantError::Domain(format!(
            "target epsilon must be positive, got {target_eps}"
        )));
    }
    let (mut lo, mut hi) = SIGMA_BRACKET;
    let eps_at_max = epsilon_for_sigma(hi, delta, q, steps, shape)?;
    if eps_at_max > target_eps {
        let eps_at_min = epsilon_for_sigma(lo, delta, q, steps, shape)?;
        return Err(AccountantError::Calibration {
            target: target_eps,
            eps_at_max_sigma: eps_at_max,
            eps_at_min_sigma: eps_at_min,
        });
    }
    if epsilon_for_sigma(lo, delta, q, steps, shape)? <= target_eps {
        return Ok(lo);
    }
    while hi - lo > SIGMA_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if epsilon_for_sigma(mid, delta, q, steps, shape)? <= target_eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
