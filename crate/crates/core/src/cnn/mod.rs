//! Small convolutional network classifying byte-class images as benign or
//! malicious.
//!
//! Architecture (input 6x64x64, one channel per byte class):
//! conv 8@3x3 same -> ReLU -> 2x2 max-pool -> conv 16@3x3 same -> ReLU ->
//! 2x2 max-pool -> flatten -> dense 64 -> ReLU -> dense 2 -> softmax.
//! All arithmetic is f64 and every random draw comes from a recorded seed,
//! so training runs are bit-reproducible.

mod io;
mod train;

pub use io::{load_model, save_model, ModelIoError};
pub use train::{backward, train, Gradients, TrainConfig, TrainError};

use crate::hilbert::VisImage;
use crate::label::Label;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const IN_CHANNELS: usize = 6;
pub const CONV1_FILTERS: usize = 8;
pub const CONV2_FILTERS: usize = 16;
pub const KERNEL: usize = 3;
pub const HIDDEN: usize = 64;
pub const CLASSES: usize = 2;
/// Spatial side of the standard input (Hilbert order 6).
pub const INPUT_SIDE: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CnnError {
    #[error("image order {found} does not match the required order {expected}")]
    WrongOrder { expected: u32, found: u32 },
    #[error("tensor shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Dense row-major numeric array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let expect: usize = shape.iter().product();
        assert_eq!(data.len(), expect, "tensor data does not match shape");
        debug_assert!(data.iter().all(|v| v.is_finite()), "tensor holds non-finite values");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// One-hot encode an order-6 image: channel `c` is 1.0 where the cell's
/// class index is `c`. Channel order: Null, Printable, Control, Extended,
/// Full, Padding.
pub fn encode_input(img: &VisImage) -> Result<Tensor, CnnError> {
    if img.order() != 6 {
        return Err(CnnError::WrongOrder { expected: 6, found: img.order() });
    }
    let side = img.side() as usize;
    let plane = side * side;
    let mut data = vec![0.0f64; IN_CHANNELS * plane];
    for (i, &class) in img.cells().iter().enumerate() {
        data[class.index() * plane + i] = 1.0;
    }
    Ok(Tensor::new(vec![IN_CHANNELS, side, side], data))
}

/// Classifier parameters. `input_side` is 64 for the standard model; the
/// reduced variants used by gradient checks shrink only the dense1 block.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    input_side: usize,
    pub(crate) conv1_w: Vec<f64>,
    pub(crate) conv1_b: Vec<f64>,
    pub(crate) conv2_w: Vec<f64>,
    pub(crate) conv2_b: Vec<f64>,
    pub(crate) dense1_w: Vec<f64>,
    pub(crate) dense1_b: Vec<f64>,
    pub(crate) dense2_w: Vec<f64>,
    pub(crate) dense2_b: Vec<f64>,
    rng_seed: u64,
}

impl CnnModel {
    /// He-uniform initialization of the standard 6x64x64 model.
    pub fn new(seed: u64) -> Self {
        Self::with_input_side(INPUT_SIDE, seed)
    }

    /// Initialize for an arbitrary input side (must be a multiple of 4).
    pub fn with_input_side(input_side: usize, seed: u64) -> Self {
        assert!(input_side >= 4 && input_side.is_multiple_of(4), "input side must be a positive multiple of 4");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = Self::flat_len(input_side);
        let conv1_w = he_uniform(&mut rng, CONV1_FILTERS * IN_CHANNELS * KERNEL * KERNEL, IN_CHANNELS * KERNEL * KERNEL);
        let conv2_w = he_uniform(&mut rng, CONV2_FILTERS * CONV1_FILTERS * KERNEL * KERNEL, CONV1_FILTERS * KERNEL * KERNEL);
        let dense1_w = he_uniform(&mut rng, HIDDEN * flat, flat);
        let dense2_w = he_uniform(&mut rng, CLASSES * HIDDEN, HIDDEN);
        CnnModel {
            input_side,
            conv1_w,
            conv1_b: vec![0.0; CONV1_FILTERS],
            conv2_w,
            conv2_b: vec![0.0; CONV2_FILTERS],
            dense1_w,
            dense1_b: vec![0.0; HIDDEN],
            dense2_w,
            dense2_b: vec![0.0; CLASSES],
            rng_seed: seed,
        }
    }

    /// All-zero parameters (test fixture; softmax of zero logits is (0.5, 0.5)).
    pub fn zeroed(input_side: usize) -> Self {
        let mut m = Self::with_input_side(input_side, 0);
        for block in m.param_blocks_mut() {
            block.fill(0.0);
        }
        m
    }

    pub(crate) fn flat_len(input_side: usize) -> usize {
        let pooled = input_side / 4;
        CONV2_FILTERS * pooled * pooled
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub(crate) fn param_blocks(&self) -> [&Vec<f64>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense1_w,
            &self.dense1_b,
            &self.dense2_w,
            &self.dense2_b,
        ]
    }

    pub(crate) fn param_blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
        ]
    }

    /// Total parameter count across all blocks.
    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    /// Read parameter `i` in block order (conv1.w, conv1.b, ..., dense2.b).
    pub fn param(&self, mut i: usize) -> f64 {
        for block in self.param_blocks() {
            if i < block.len() {
                return block[i];
            }
            i -= block.len();
        }
        panic!("parameter index out of range");
    }

    /// Overwrite parameter `i` in block order.
    pub fn set_param(&mut self, mut i: usize, value: f64) {
        for block in self.param_blocks_mut() {
            if i < block.len() {
                block[i] = value;
                return;
            }
            i -= block.len();
        }
        panic!("parameter index out of range");
    }

    /// True when every parameter equals the other model's, bit for bit.
    pub fn params_bit_equal(&self, other: &CnnModel) -> bool {
        self.input_side == other.input_side
            && self
                .param_blocks()
                .iter()
                .zip(other.param_blocks())
                .all(|(a, b)| {
                    a.len() == b.len()
                        && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

/// y += w * x, elementwise.
#[inline]
fn axpy(y: &mut [f64], x: &[f64], w: f64) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += w * *b;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 3x3 same-padding convolution, accumulated per (filter, channel, tap) as
/// shifted row operations.
pub(crate) fn conv_forward(
    input: &[f64],
    c_in: usize,
    side: usize,
    weights: &[f64],
    biases: &[f64],
    f_out: usize,
) -> Vec<f64> {
    let plane = side * side;
    let mut out = vec![0.0f64; f_out * plane];
    for f in 0..f_out {
        let ob = f * plane;
        out[ob..ob + plane].fill(biases[f]);
        for c in 0..c_in {
            let ib = c * plane;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let w = weights[((f * c_in + c) * KERNEL + ky) * KERNEL + kx];
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (side as isize - dy.max(0)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (side as isize - dx.max(0)) as usize;
                    for y in y0..y1 {
                        let in_row = ib + (y as isize + dy) as usize * side;
                        let out_row = ob + y * side;
                        let src_start = (in_row as isize + dx + x0 as isize) as usize;
                        let src = &input[src_start..src_start + (x1 - x0)];
                        axpy(&mut out[out_row + x0..out_row + x1], src, w);
                    }
                }
            }
        }
    }
    out
}

/// Fused ReLU + 2x2 max-pool. Returns pooled values and, per pooled cell,
/// the flat in-plane index of the winning cell (first occurrence on ties).
pub(crate) fn relu_pool_forward(pre: &[f64], channels: usize, side: usize) -> (Vec<f64>, Vec<u32>) {
    let half = side / 2;
    let plane = side * side;
    let mut out = vec![0.0f64; channels * half * half];
    let mut idx = vec![0u32; channels * half * half];
    for c in 0..channels {
        let ib = c * plane;
        let pb = c * half * half;
        for py in 0..half {
            for px in 0..half {
                let base = 2 * py * side + 2 * px;
                let candidates = [base, base + 1, base + side, base + side + 1];
                let mut best = f64::NEG_INFINITY;
                let mut best_i = candidates[0];
                for &ci in &candidates {
                    let v = pre[ib + ci].max(0.0);
                    if v > best {
                        best = v;
                        best_i = ci;
                    }
                }
                out[pb + py * half + px] = best;
                idx[pb + py * half + px] = best_i as u32;
            }
        }
    }
    (out, idx)
}

pub(crate) fn dense_forward(input: &[f64], weights: &[f64], biases: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = input.len();
    (0..n_out)
        .map(|j| biases[j] + dot(&weights[j * n_in..(j + 1) * n_in], input))
        .collect()
}

pub(crate) fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Intermediate activations kept for backpropagation.
pub(crate) struct ForwardPass {
    pub conv1_pre: Vec<f64>,
    pub pool1_out: Vec<f64>,
    pub pool1_idx: Vec<u32>,
    pub conv2_pre: Vec<f64>,
    pub pool2_out: Vec<f64>,
    pub pool2_idx: Vec<u32>,
    pub dense1_pre: Vec<f64>,
    pub probs: [f64; 2],
}

pub(crate) fn check_input_shape(model: &CnnModel, x: &Tensor) -> Result<(), CnnError> {
    let expected = vec![IN_CHANNELS, model.input_side, model.input_side];
    if x.shape() != expected.as_slice() {
        return Err(CnnError::ShapeMismatch { expected, found: x.shape().to_vec() });
    }
    Ok(())
}

pub(crate) fn forward_full(model: &CnnModel, x: &Tensor) -> Result<ForwardPass, CnnError> {
    check_input_shape(model, x)?;
    let s = model.input_side;
    let conv1_pre = conv_forward(x.data(), IN_CHANNELS, s, &model.conv1_w, &model.conv1_b, CONV1_FILTERS);
    let (pool1_out, pool1_idx) = relu_pool_forward(&conv1_pre, CONV1_FILTERS, s);
    let conv2_pre = conv_forward(&pool1_out, CONV1_FILTERS, s / 2, &model.conv2_w, &model.conv2_b, CONV2_FILTERS);
    let (pool2_out, pool2_idx) = relu_pool_forward(&conv2_pre, CONV2_FILTERS, s / 2);
    let dense1_pre = dense_forward(&pool2_out, &model.dense1_w, &model.dense1_b, HIDDEN);
    let hidden: Vec<f64> = dense1_pre.iter().map(|&v| v.max(0.0)).collect();
    let logits = dense_forward(&hidden, &model.dense2_w, &model.dense2_b, CLASSES);
    let probs = softmax2(&logits);
    Ok(ForwardPass {
        conv1_pre,
        pool1_out,
        pool1_idx,
        conv2_pre,
        pool2_out,
        pool2_idx,
        dense1_pre,
        probs,
    })
}

/// Run the network; returns `(p_benign, p_malicious)`.
pub fn forward(model: &CnnModel, x: &Tensor) -> Result<(f64, f64), CnnError> {
    let pass = forward_full(model, x)?;
    Ok((pass.probs[0], pass.probs[1]))
}

/// Cross-entropy of the true class, with the probability clipped at 1e-12.
/// A NaN probability propagates (f64::max would silently discard it).
pub fn loss(probs: (f64, f64), label: Label) -> f64 {
    let p = match label {
        Label::Benign => probs.0,
        Label::Malicious => probs.1,
    };
    if p.is_nan() {
        return f64::NAN;
    }
    -(p.max(1e-12)).ln()
}

/// Threshold rule: malicious iff `p_malicious >= threshold` (inclusive).
pub fn classify(model: &CnnModel, img: &VisImage, threshold: f64) -> Result<(Label, f64), CnnError> {
    let x = encode_input(img)?;
    let (_, p_malicious) = forward(model, &x)?;
    let label = if p_malicious >= threshold {
        Label::Malicious
    } else {
        Label::Benign
    };
    Ok((label, p_malicious))
}
