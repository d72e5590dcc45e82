//! Fixed CNN topology: conv(16, 5x5) -> pool -> conv(32, 4x4) -> pool ->
//! dense 32 -> dense L, tanh activations throughout the hidden layers.
//!
//! The forward and backward passes are written as shift-and-scale loops
//! (scalar weight times a contiguous input row) so the hot paths stay
//! cache-friendly at audit scale.

use super::{softmax_minus_onehot, ModelError, ModelParams, ModelSpec};

const C1_FILTERS: usize = 16;
const C1_K: usize = 5;
const C2_FILTERS: usize = 32;
const C2_K: usize = 4;
const FC1_UNITS: usize = 32;

/// 2x2 stride-2 max pool output size: floor division, but a dimension of 1
/// passes through (the window covers what exists).
fn pool_out(d: usize) -> usize {
    if d <= 1 {
        d
    } else {
        d / 2
    }
}

/// All derived sizes and parameter offsets for one input shape.
#[derive(Debug, Clone, Copy)]
pub(super) struct CnnDims {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    c1_h: usize,
    c1_w: usize,
    p1_h: usize,
    p1_w: usize,
    c2_h: usize,
    c2_w: usize,
    p2_h: usize,
    p2_w: usize,
    flat: usize,
    classes: usize,
    // flat-theta offsets
    c1_w_off: usize,
    c1_b_off: usize,
    c2_w_off: usize,
    c2_b_off: usize,
    fc1_w_off: usize,
    fc1_b_off: usize,
    fc2_w_off: usize,
    fc2_b_off: usize,
    total: usize,
}

impl CnnDims {
    pub(super) fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        if spec.input_shape.len() != 3 {
            return Err(ModelError::InvalidSpec(format!(
                "CNN input shape must be [channels, height, width], got {:?}",
                spec.input_shape
            )));
        }
        let (in_c, in_h, in_w) = (
            spec.input_shape[0],
            spec.input_shape[1],
            spec.input_shape[2],
        );
        if in_c == 0 || in_h < C1_K || in_w < C1_K {
            return Err(ModelError::InvalidSpec(format!(
                "CNN input {in_c}x{in_h}x{in_w} too small for a 5x5 convolution"
            )));
        }
        let c1_h = in_h - C1_K + 1;
        let c1_w = in_w - C1_K + 1;
        let p1_h = pool_out(c1_h);
        let p1_w = pool_out(c1_w);
        if p1_h < C2_K || p1_w < C2_K {
            return Err(ModelError::InvalidSpec(format!(
                "pooled map {p1_h}x{p1_w} too small for a 4x4 convolution"
            )));
        }
        let c2_h = p1_h - C2_K + 1;
        let c2_w = p1_w - C2_K + 1;
        let p2_h = pool_out(c2_h);
        let p2_w = pool_out(c2_w);
        let flat = C2_FILTERS * p2_h * p2_w;
        let classes = spec.num_classes;

        let c1_w_off = 0;
        let c1_b_off = c1_w_off + C1_FILTERS * in_c * C1_K * C1_K;
        let c2_w_off = c1_b_off + C1_FILTERS;
        let c2_b_off = c2_w_off + C2_FILTERS * C1_FILTERS * C2_K * C2_K;
        let fc1_w_off = c2_b_off + C2_FILTERS;
        let fc1_b_off = fc1_w_off + FC1_UNITS * flat;
        let fc2_w_off = fc1_b_off + FC1_UNITS;
        let fc2_b_off = fc2_w_off + classes * FC1_UNITS;
        let total = fc2_b_off + classes;

        Ok(Self {
            in_c,
            in_h,
            in_w,
            c1_h,
            c1_w,
            p1_h,
            p1_w,
            c2_h,
            c2_w,
            p2_h,
            p2_w,
            flat,
            classes,
            c1_w_off,
            c1_b_off,
            c2_w_off,
            c2_b_off,
            fc1_w_off,
            fc1_b_off,
            fc2_w_off,
            fc2_b_off,
            total,
        })
    }

    pub(super) fn param_count(&self) -> usize {
        self.total
    }

    pub(super) fn init_weights(
        &self,
        theta: &mut [f64],
        fill_uniform: &mut impl FnMut(&mut [f64], usize),
    ) {
        fill_uniform(
            &mut theta[self.c1_w_off..self.c1_b_off],
            self.in_c * C1_K * C1_K,
        );
        fill_uniform(
            &mut theta[self.c2_w_off..self.c2_b_off],
            C1_FILTERS * C2_K * C2_K,
        );
        fill_uniform(&mut theta[self.fc1_w_off..self.fc1_b_off], self.flat);
        fill_uniform(&mut theta[self.fc2_w_off..self.fc2_b_off], FC1_UNITS);
    }
}

pub(super) struct CnnActivations {
    a1: Vec<f64>,        // tanh(conv1), [16, c1_h, c1_w]
    p1: Vec<f64>,        // pooled, [16, p1_h, p1_w]
    p1_src: Vec<usize>,  // argmax source index into a1
    a2: Vec<f64>,        // tanh(conv2), [32, c2_h, c2_w]
    p2: Vec<f64>,        // pooled = flattened input to fc1
    p2_src: Vec<usize>,  // argmax source index into a2
    fc1: Vec<f64>,       // tanh(fc1)
    pub logits: Vec<f64>,
}

/// out[o] += w * shifted window of inp[c], for every filter tap.
fn conv_forward(
    inp: &[f64],
    in_h: usize,
    in_w: usize,
    in_c: usize,
    weights: &[f64],
    bias: &[f64],
    k: usize,
    out: &mut [f64],
    out_h: usize,
    out_w: usize,
    out_c: usize,
) {
    for o in 0..out_c {
        let dst = &mut out[o * out_h * out_w..(o + 1) * out_h * out_w];
        dst.fill(bias[o]);
        for c in 0..in_c {
            let src_plane = &inp[c * in_h * in_w..(c + 1) * in_h * in_w];
            let w_base = (o * in_c + c) * k * k;
            for u in 0..k {
                for v in 0..k {
                    let w = weights[w_base + u * k + v];
                    for i in 0..out_h {
                        let src = &src_plane[(i + u) * in_w + v..(i + u) * in_w + v + out_w];
                        let row = &mut dst[i * out_w..(i + 1) * out_w];
                        for (r, s) in row.iter_mut().zip(src) {
                            *r += w * s;
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max pool with argmax memo; first maximum wins ties.
fn maxpool_forward(
    inp: &[f64],
    in_h: usize,
    in_w: usize,
    channels: usize,
    out: &mut [f64],
    src_idx: &mut [usize],
    out_h: usize,
    out_w: usize,
) {
    for c in 0..channels {
        let plane = &inp[c * in_h * in_w..(c + 1) * in_h * in_w];
        for pi in 0..out_h {
            for pj in 0..out_w {
                let i0 = pi * 2;
                let j0 = pj * 2;
                let mut best = plane[i0 * in_w + j0];
                let mut best_at = i0 * in_w + j0;
                for di in 0..2usize {
                    for dj in 0..2usize {
                        let (i, j) = (i0 + di, j0 + dj);
                        if i < in_h && j < in_w {
                            let v = plane[i * in_w + j];
                            if v > best {
                                best = v;
                                best_at = i * in_w + j;
                            }
                        }
                    }
                }
                out[c * out_h * out_w + pi * out_w + pj] = best;
                src_idx[c * out_h * out_w + pi * out_w + pj] = c * in_h * in_w + best_at;
            }
        }
    }
}

pub(super) fn forward_with_dims(params: &ModelParams, x: &[f64], d: &CnnDims) -> CnnActivations {
    let theta = &params.theta;

    let mut a1 = vec![0.0f64; C1_FILTERS * d.c1_h * d.c1_w];
    conv_forward(
        x,
        d.in_h,
        d.in_w,
        d.in_c,
        &theta[d.c1_w_off..d.c1_b_off],
        &theta[d.c1_b_off..d.c2_w_off],
        C1_K,
        &mut a1,
        d.c1_h,
        d.c1_w,
        C1_FILTERS,
    );
    for v in a1.iter_mut() {
        *v = v.tanh();
    }

    let mut p1 = vec![0.0f64; C1_FILTERS * d.p1_h * d.p1_w];
    let mut p1_src = vec![0usize; p1.len()];
    maxpool_forward(&a1, d.c1_h, d.c1_w, C1_FILTERS, &mut p1, &mut p1_src, d.p1_h, d.p1_w);

    let mut a2 = vec![0.0f64; C2_FILTERS * d.c2_h * d.c2_w];
    conv_forward(
        &p1,
        d.p1_h,
        d.p1_w,
        C1_FILTERS,
        &theta[d.c2_w_off..d.c2_b_off],
        &theta[d.c2_b_off..d.fc1_w_off],
        C2_K,
        &mut a2,
        d.c2_h,
        d.c2_w,
        C2_FILTERS,
    );
    for v in a2.iter_mut() {
        *v = v.tanh();
    }

    let mut p2 = vec![0.0f64; d.flat];
    let mut p2_src = vec![0usize; d.flat];
    maxpool_forward(&a2, d.c2_h, d.c2_w, C2_FILTERS, &mut p2, &mut p2_src, d.p2_h, d.p2_w);

    let fc1_w = &theta[d.fc1_w_off..d.fc1_b_off];
    let fc1_b = &theta[d.fc1_b_off..d.fc2_w_off];
    let fc1: Vec<f64> = (0..FC1_UNITS)
        .map(|h| {
            let row = &fc1_w[h * d.flat..(h + 1) * d.flat];
            (fc1_b[h] + row.iter().zip(&p2).map(|(&w, &v)| w * v).sum::<f64>()).tanh()
        })
        .collect();

    let fc2_w = &theta[d.fc2_w_off..d.fc2_b_off];
    let fc2_b = &theta[d.fc2_b_off..];
    let logits: Vec<f64> = (0..d.classes)
        .map(|c| {
            let row = &fc2_w[c * FC1_UNITS..(c + 1) * FC1_UNITS];
            fc2_b[c] + row.iter().zip(&fc1).map(|(&w, &v)| w * v).sum::<f64>()
        })
        .collect();

    CnnActivations {
        a1,
        p1,
        p1_src,
        a2,
        p2,
        p2_src,
        fc1,
        logits,
    }
}

pub(super) fn forward(params: &ModelParams, x: &[f64]) -> CnnActivations {
    let d = CnnDims::from_spec(&params.spec).expect("validated spec");
    forward_with_dims(params, x, &d)
}

pub(super) fn grad(params: &ModelParams, x: &[f64], y: usize) -> Vec<f64> {
    let d = CnnDims::from_spec(&params.spec).expect("validated spec");
    let acts = forward_with_dims(params, x, &d);
    let theta = &params.theta;
    let mut grad = vec![0.0f64; theta.len()];

    // Output layer.
    let dz_out = softmax_minus_onehot(&acts.logits, y);
    let fc2_w = &theta[d.fc2_w_off..d.fc2_b_off];
    let mut d_fc1 = vec![0.0f64; FC1_UNITS];
    for c in 0..d.classes {
        let g = dz_out[c];
        let grow = &mut grad[d.fc2_w_off + c * FC1_UNITS..d.fc2_w_off + (c + 1) * FC1_UNITS];
        let wrow = &fc2_w[c * FC1_UNITS..(c + 1) * FC1_UNITS];
        for h in 0..FC1_UNITS {
            grow[h] = g * acts.fc1[h];
            d_fc1[h] += g * wrow[h];
        }
        grad[d.fc2_b_off + c] = g;
    }

    // fc1 through tanh, back into the flattened pool output.
    let fc1_w = &theta[d.fc1_w_off..d.fc1_b_off];
    let mut d_p2 = vec![0.0f64; d.flat];
    for h in 0..FC1_UNITS {
        let a = acts.fc1[h];
        let dz = d_fc1[h] * (1.0 - a * a);
        let grow = &mut grad[d.fc1_w_off + h * d.flat..d.fc1_w_off + (h + 1) * d.flat];
        let wrow = &fc1_w[h * d.flat..(h + 1) * d.flat];
        for f in 0..d.flat {
            grow[f] = dz * acts.p2[f];
            d_p2[f] += dz * wrow[f];
        }
        grad[d.fc1_b_off + h] = dz;
    }

    // Unpool into conv2 activations, then through tanh.
    let mut dz2 = vec![0.0f64; C2_FILTERS * d.c2_h * d.c2_w];
    for (f, &src) in acts.p2_src.iter().enumerate() {
        dz2[src] += d_p2[f];
    }
    for (dz, &a) in dz2.iter_mut().zip(&acts.a2) {
        *dz *= 1.0 - a * a;
    }

    // conv2 weight/bias gradients and backprop into the pooled map p1.
    let c2_w = &theta[d.c2_w_off..d.c2_b_off];
    let mut d_p1 = vec![0.0f64; C1_FILTERS * d.p1_h * d.p1_w];
    for o in 0..C2_FILTERS {
        let dz_plane = &dz2[o * d.c2_h * d.c2_w..(o + 1) * d.c2_h * d.c2_w];
        grad[d.c2_b_off + o] = dz_plane.iter().sum();
        for c in 0..C1_FILTERS {
            let src_plane = &acts.p1[c * d.p1_h * d.p1_w..(c + 1) * d.p1_h * d.p1_w];
            let dst_plane = &mut d_p1[c * d.p1_h * d.p1_w..(c + 1) * d.p1_h * d.p1_w];
            let w_base = (o * C1_FILTERS + c) * C2_K * C2_K;
            for u in 0..C2_K {
                for v in 0..C2_K {
                    let w = c2_w[w_base + u * C2_K + v];
                    let mut wg = 0.0f64;
                    for i in 0..d.c2_h {
                        let dzrow = &dz_plane[i * d.c2_w..(i + 1) * d.c2_w];
                        let srow = &src_plane[(i + u) * d.p1_w + v..(i + u) * d.p1_w + v + d.c2_w];
                        let drow =
                            &mut dst_plane[(i + u) * d.p1_w + v..(i + u) * d.p1_w + v + d.c2_w];
                        for j in 0..d.c2_w {
                            wg += dzrow[j] * srow[j];
                            drow[j] += w * dzrow[j];
                        }
                    }
                    grad[d.c2_w_off + w_base + u * C2_K + v] = wg;
                }
            }
        }
    }

    // Unpool into conv1 activations, then through tanh.
    let mut dz1 = vec![0.0f64; C1_FILTERS * d.c1_h * d.c1_w];
    for (f, &src) in acts.p1_src.iter().enumerate() {
        dz1[src] += d_p1[f];
    }
    for (dz, &a) in dz1.iter_mut().zip(&acts.a1) {
        *dz *= 1.0 - a * a;
    }

    // conv1 weight/bias gradients (no input gradient needed).
    for o in 0..C1_FILTERS {
        let dz_plane = &dz1[o * d.c1_h * d.c1_w..(o + 1) * d.c1_h * d.c1_w];
        grad[d.c1_b_off + o] = dz_plane.iter().sum();
        for c in 0..d.in_c {
            let src_plane = &x[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
            let w_base = (o * d.in_c + c) * C1_K * C1_K;
            for u in 0..C1_K {
                for v in 0..C1_K {
                    let mut wg = 0.0f64;
                    for i in 0..d.c1_h {
                        let dzrow = &dz_plane[i * d.c1_w..(i + 1) * d.c1_w];
                        let srow = &src_plane[(i + u) * d.in_w + v..(i + u) * d.in_w + v + d.c1_w];
                        for j in 0..d.c1_w {
                            wg += dzrow[j] * srow[j];
                        }
                    }
                    grad[d.c1_w_off + w_base + u * C1_K + v] = wg;
                }
            }
        }
    }

    grad
}
