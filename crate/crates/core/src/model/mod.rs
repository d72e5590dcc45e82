//! Three fixed architectures (LR, MLP, CNN) over 64-bit floats with exact
//! per-sample gradients via hand-written reverse-mode differentiation.
//!
//! All functions here are pure: given the same parameters and input they
//! return identical outputs, with no hidden state, so they are safe to call
//! concurrently from audit workers.

mod cnn;
mod snapshot;

pub use snapshot::{load_params, save_params};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{mix, stream_rng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("contract error: input has {got} features, spec expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("contract error: label {label} out of range [0, {num_classes})")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lr,
    Mlp,
    Cnn,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Lr => write!(f, "lr"),
            Arch::Mlp => write!(f, "mlp"),
            Arch::Cnn => write!(f, "cnn"),
        }
    }
}

pub const DEFAULT_MLP_HIDDEN: usize = 256;

/// Which network to build and its input/output dimensions.
///
/// The CNN topology is fixed: conv 16 filters 5x5 -> maxpool 2x2 -> conv 32
/// filters 4x4 -> maxpool 2x2 -> dense 32 -> dense L, tanh activations.
/// Convolutions are valid-padding stride 1; pooling is 2x2 stride 2 with
/// floor division, except that a dimension of 1 passes through. This
/// convention is part of every report, since it pins the flattened size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    /// Hidden width, MLP only.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    DEFAULT_MLP_HIDDEN
}

/// One-line description of the CNN shape convention, for reports.
pub const CNN_CONVENTION: &str =
    "conv valid stride 1; maxpool 2x2 stride 2 floor, dims of 1 pass through";

impl ModelSpec {
    pub fn lr(input_shape: Vec<usize>, num_classes: usize) -> Self {
        Self {
            arch: Arch::Lr,
            input_shape,
            num_classes,
            hidden: DEFAULT_MLP_HIDDEN,
        }
    }

    pub fn mlp(input_shape: Vec<usize>, num_classes: usize) -> Self {
        Self {
            arch: Arch::Mlp,
            input_shape,
            num_classes,
            hidden: DEFAULT_MLP_HIDDEN,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn cnn(input_shape: Vec<usize>, num_classes: usize) -> Self {
        Self {
            arch: Arch::Cnn,
            input_shape,
            num_classes,
            hidden: DEFAULT_MLP_HIDDEN,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec("need at least 2 classes".into()));
        }
        if self.input_dim() == 0 {
            return Err(ModelError::InvalidSpec("empty input shape".into()));
        }
        match self.arch {
            Arch::Lr => Ok(()),
            Arch::Mlp => {
                if self.hidden == 0 {
                    Err(ModelError::InvalidSpec("MLP hidden width is 0".into()))
               } else {
                    Ok(())
                }
            }
            Arch::Cnn => cnn::CnnDims::from_spec(self).map(|_| ()),
        }
    }

    /// Total parameter count P.
    pub fn param_count(&self) -> usize {
        let d = self.input_dim();
        let l = self.num_classes;
        match self.arch {
            Arch::Lr => d * l + l,
            Arch::Mlp => d * self.hidden + self.hidden + self.hidden * l + l,
            Arch::Cnn => cnn::CnnDims::from_spec(self)
                .map(|dims| dims.param_count())
                .unwrap_or(0),
        }
    }
}

/// A flat parameter vector bound to its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn new(spec: ModelSpec, theta: Vec<f64>) -> Result<Self, ModelError> {
        spec.validate()?;
        let expected = spec.param_count();
        if theta.len() != expected {
            return Err(ModelError::InvalidSpec(format!(
                "theta has {} entries, spec requires {expected}",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidSpec("theta contains NaN or Inf".into()));
        }
        Ok(Self { spec, theta })
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

/// Initialize parameters: weights uniform in [-a, a] with a = sqrt(1/fan_in)
/// per layer, biases zero. Deterministic under `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams, ModelError> {
    spec.validate()?;
    let mut rng = stream_rng(seed, mix(0x6d6f_64656c, 0)); // model init stream
    let mut theta = vec![0.0f64; spec.param_count()];
    let d = spec.input_dim();
    let l = spec.num_classes;

    let mut fill_uniform = |slice: &mut [f64], fan_in: usize| {
        let a = (1.0 / fan_in as f64).sqrt();
        for v in slice.iter_mut() {
            *v = rng.gen_range(-a..=a);
        }
    };

    match spec.arch {
        Arch::Lr => {
            fill_uniform(&mut theta[..d * l], d);
        }
        Arch::Mlp => {
            let h = spec.hidden;
            let (w1_end, b1_end) = (d * h, d * h + h);
            fill_uniform(&mut theta[..w1_end], d);
            let w2_end = b1_end + h * l;
            fill_uniform(&mut theta[b1_end..w2_end], h);
        }
        Arch::Cnn => {
            let dims = cnn::CnnDims::from_spec(spec)?;
            dims.init_weights(&mut theta, &mut fill_uniform);
        }
    }
    ModelParams::new(spec.clone(), theta)
}

fn check_input(spec: &ModelSpec, x: &[f64], y: Option<usize>) -> Result<(), ModelError> {
    let expected = spec.input_dim();
    if x.len() != expected {
        return Err(ModelError::ShapeMismatch {
            expected,
            got: x.len(),
        });
    }
    if let Some(y) = y {
        if y >= spec.num_classes {
            return Err(ModelError::LabelOutOfRange {
                label: y,
                num_classes: spec.num_classes,
            });
        }
    }
    Ok(())
}

/// Class logits for one input.
pub fn logits(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_input(&params.spec, x, None)?;
    Ok(match params.spec.arch {
        Arch::Lr => lr_logits(params, x),
        Arch::Mlp => mlp_forward(params, x).logits,
        Arch::Cnn => cnn::forward(params, x).logits,
    })
}

/// Softmax cross-entropy loss (natural log), stabilized by max-subtraction.
pub fn forward_loss(params: &ModelParams, x: &[f64], y: usize) -> Result<f64, ModelError> {
    check_input(&params.spec, x, Some(y))?;
    let z = match params.spec.arch {
        Arch::Lr => lr_logits(params, x),
        Arch::Mlp => mlp_forward(params, x).logits,
        Arch::Cnn => cnn::forward(params, x).logits,
    };
    Ok(cross_entropy(&z, y))
}

/// Exact gradient of [`forward_loss`] with respect to the flat parameter
/// vector.
pub fn per_sample_grad(params: &ModelParams, x: &[f64], y: usize) -> Result<Vec<f64>, ModelError> {
    check_input(&params.spec, x, Some(y))?;
    Ok(match params.spec.arch {
        Arch::Lr => lr_grad(params, x, y),
        Arch::Mlp => mlp_grad(params, x, y),
        Arch::Cnn => cnn::grad(params, x, y),
    })
}

/// Predicted class: argmax of logits, ties broken toward the smallest index.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize, ModelError> {
    let z = logits(params, x)?;
    let mut best = 0usize;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Fraction of the given records predicted correctly.
pub fn accuracy(
    params: &ModelParams,
    ds: &crate::dataio::Dataset,
    indices: &[usize],
) -> Result<f64, ModelError> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for &i in indices {
        if predict(params, ds.row(i))? == ds.labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}

pub(crate) fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
    sum.ln() - (logits[y] - m)
}

/// softmax(logits) - onehot(y), the gradient of cross-entropy w.r.t. logits.
pub(crate) fn softmax_minus_onehot(logits: &[f64], y: usize) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut d: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    d[y] -= 1.0;
    d
}

// ---------------------------------------------------------------------------
// LR: logits = W x + b, W stored row-major [L, d], then b [L].

fn lr_logits(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let d = params.spec.input_dim();
    let l = params.spec.num_classes;
    let w = &params.theta[..l * d];
    let b = &params.theta[l * d..];
    (0..l)
        .map(|c| {
            let row = &w[c * d..(c + 1) * d];
            b[c] + dot(row, x)
        })
        .collect()
}

fn lr_grad(params: &ModelParams, x: &[f64], y: usize) -> Vec<f64> {
    let d = params.spec.input_dim();
    let l = params.spec.num_classes;
    let z = lr_logits(params, x);
    let dz = softmax_minus_onehot(&z, y);
    let mut grad = vec![0.0f64; params.theta.len()];
    for c in 0..l {
        let g = dz[c];
        let row = &mut grad[c * d..(c + 1) * d];
        for (gr, &xv) in row.iter_mut().zip(x) {
            *gr = g * xv;
        }
        grad[l * d + c] = g;
    }
    grad
}

// ---------------------------------------------------------------------------
// MLP: x -> hidden (tanh) -> logits.
// Layout: w1 [h, d], b1 [h], w2 [L, h], b2 [L].

struct MlpActivations {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn mlp_forward(params: &ModelParams, x: &[f64]) -> MlpActivations {
    let d = params.spec.input_dim();
    let h = params.spec.hidden;
    let l = params.spec.num_classes;
    let (w1, rest) = params.theta.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(l * h);

    let hidden: Vec<f64> = (0..h)
        .map(|j| (b1[j] + dot(&w1[j * d..(j + 1) * d], x)).tanh())
        .collect();
    let logits: Vec<f64> = (0..l)
        .map(|c| b2[c] + dot(&w2[c * h..(c + 1) * h], &hidden))
        .collect();
    MlpActivations { hidden, logits }
}

fn mlp_grad(params: &ModelParams, x: &[f64], y: usize) -> Vec<f64> {
    let d = params.spec.input_dim();
    let h = params.spec.hidden;
    let l = params.spec.num_classes;
    let acts = mlp_forward(params, x);
    let dz2 = softmax_minus_onehot(&acts.logits, y);

    let w2_off = h * d + h;
    let w2 = &params.theta[w2_off..w2_off + l * h];

    let mut grad = vec![0.0f64; params.theta.len()];

    // Output layer and backprop into hidden activations.
    let mut d_hidden = vec![0.0f64; h];
    for c in 0..l {
        let g = dz2[c];
        let gw2 = &mut grad[w2_off + c * h..w2_off + (c + 1) * h];
        let w2row = &w2[c * h..(c + 1) * h];
        for j in 0..h {
            gw2[j] = g * acts.hidden[j];
            d_hidden[j] += g * w2row[j];
        }
        grad[w2_off + l * h + c] = g;
    }

    // Hidden layer through tanh.
    for j in 0..h {
        let a = acts.hidden[j];
        let dz1 = d_hidden[j] * (1.0 - a * a);
        let gw1 = &mut grad[j * d..(j + 1) * d];
        for (gr, &xv) in gw1.iter_mut().zip(x) {
            *gr = dz1 * xv;
        }
        grad[h * d + j] = dz1;
    }
    grad
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&u, &v)| u * v).sum()
}
