//! Backpropagation and mini-batch SGD training.

use super::*;
use crate::label::Label;

/// Minimum labeled samples per class before training is allowed.
pub const MIN_SAMPLES_PER_CLASS: usize = 30;

/// Gradient (or velocity) buffers congruent to [`CnnModel`]'s parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub dense1_w: Vec<f64>,
    pub dense1_b: Vec<f64>,
    pub dense2_w: Vec<f64>,
    pub dense2_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        let blocks = model.param_blocks();
        Gradients {
            conv1_w: vec![0.0; blocks[0].len()],
            conv1_b: vec![0.0; blocks[1].len()],
            conv2_w: vec![0.0; blocks[2].len()],
            conv2_b: vec![0.0; blocks[3].len()],
            dense1_w: vec![0.0; blocks[4].len()],
            dense1_b: vec![0.0; blocks[5].len()],
            dense2_w: vec![0.0; blocks[6].len()],
            dense2_b: vec![0.0; blocks[7].len()],
        }
    }

    pub fn blocks(&self) -> [&Vec<f64>; 8] {
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

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
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

    /// Read gradient `i` in block order, mirroring [`CnnModel::param`].
    pub fn get(&self, mut i: usize) -> f64 {
        for block in self.blocks() {
            if i < block.len() {
                return block[i];
            }
            i -= block.len();
        }
        panic!("gradient index out of range");
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (mine, theirs) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += scale * *b;
            }
        }
    }

    /// v = momentum * v + scale * g
    fn momentum_update(&mut self, grads: &Gradients, momentum: f64, scale: f64) {
        for (v, g) in self.blocks_mut().into_iter().zip(grads.blocks()) {
            for (a, b) in v.iter_mut().zip(g) {
                *a = momentum * *a + scale * *b;
            }
        }
    }
}

impl CnnModel {
    fn apply_step(&mut self, velocity: &Gradients, learning_rate: f64) {
        for (p, v) in self.param_blocks_mut().into_iter().zip(velocity.blocks()) {
            for (a, b) in p.iter_mut().zip(v) {
                *a -= learning_rate * *b;
            }
        }
    }
}

/// Backward pass of a 3x3 same-padding convolution. Returns weight and bias
/// gradients and (optionally) the gradient w.r.t. the layer input.
fn conv_backward(
    dout: &[f64],
    input: &[f64],
    c_in: usize,
    side: usize,
    weights: &[f64],
    f_out: usize,
    want_dinput: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = side * side;
    let mut dweights = vec![0.0f64; f_out * c_in * KERNEL * KERNEL];
    let mut dbiases = vec![0.0f64; f_out];
    let mut dinput = vec![0.0f64; if want_dinput { c_in * plane } else { 0 }];
    for (f, dbias) in dbiases.iter_mut().enumerate() {
        let ob = f * plane;
        *dbias = dout[ob..ob + plane].iter().sum();
        for c in 0..c_in {
            let ib = c * plane;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((f * c_in + c) * KERNEL + ky) * KERNEL + kx;
                    let w = weights[widx];
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (side as isize - dy.max(0)) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (side as isize - dx.max(0)) as usize;
                    let mut acc = 0.0f64;
                    for y in y0..y1 {
                        let in_row = ib + (y as isize + dy) as usize * side;
                        let out_row = ob + y * side;
                        let src_start = (in_row as isize + dx + x0 as isize) as usize;
                        let dslice = &dout[out_row + x0..out_row + x1];
                        acc += dot(&input[src_start..src_start + dslice.len()], dslice);
                        if want_dinput {
                            axpy(&mut dinput[src_start..src_start + dslice.len()], dslice, w);
                        }
                    }
                    dweights[widx] = acc;
                }
            }
        }
    }
    (dweights, dbiases, dinput)
}

/// Route pooled gradients back to the winning cells, gated by the ReLU mask.
fn relu_pool_backward(
    d_pooled: &[f64],
    idx: &[u32],
    pre: &[f64],
    channels: usize,
    side: usize,
) -> Vec<f64> {
    let half = side / 2;
    let plane = side * side;
    let pooled_plane = half * half;
    let mut dpre = vec![0.0f64; channels * plane];
    for c in 0..channels {
        for p in 0..pooled_plane {
            let cell = idx[c * pooled_plane + p] as usize;
            if pre[c * plane + cell] > 0.0 {
                dpre[c * plane + cell] += d_pooled[c * pooled_plane + p];
            }
        }
    }
    dpre
}

fn dense_backward(
    dout: &[f64],
    input: &[f64],
    weights: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_in = input.len();
    let n_out = dout.len();
    let mut dweights = vec![0.0f64; n_out * n_in];
    let mut dinput = vec![0.0f64; n_in];
    for j in 0..n_out {
        let g = dout[j];
        axpy(&mut dweights[j * n_in..(j + 1) * n_in], input, g);
        axpy(&mut dinput, &weights[j * n_in..(j + 1) * n_in], g);
    }
    (dweights, dout.to_vec(), dinput)
}

/// Loss and exact analytic gradients of the loss w.r.t. every parameter,
/// for one labeled sample.
pub fn loss_and_gradients(
    model: &CnnModel,
    x: &Tensor,
    label: Label,
) -> Result<(f64, Gradients), CnnError> {
    let s = model.input_side();
    let pass = forward_full(model, x)?;
    let sample_loss = loss((pass.probs[0], pass.probs[1]), label);

    // Softmax + cross-entropy collapses to probs - onehot.
    let mut dlogits = [pass.probs[0], pass.probs[1]];
    match label {
        Label::Benign => dlogits[0] -= 1.0,
        Label::Malicious => dlogits[1] -= 1.0,
    }

    let hidden: Vec<f64> = pass.dense1_pre.iter().map(|&v| v.max(0.0)).collect();
    let (dense2_w, dense2_b, dhidden) = dense_backward(&dlogits, &hidden, &model.dense2_w);
    let dhidden_pre: Vec<f64> = dhidden
        .iter()
        .zip(&pass.dense1_pre)
        .map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 })
        .collect();
    let (dense1_w, dense1_b, dflat) = dense_backward(&dhidden_pre, &pass.pool2_out, &model.dense1_w);

    let dconv2_pre = relu_pool_backward(&dflat, &pass.pool2_idx, &pass.conv2_pre, CONV2_FILTERS, s / 2);
    let (conv2_w, conv2_b, dpool1) = conv_backward(
        &dconv2_pre,
        &pass.pool1_out,
        CONV1_FILTERS,
        s / 2,
        &model.conv2_w,
        CONV2_FILTERS,
        true,
    );
    let dconv1_pre = relu_pool_backward(&dpool1, &pass.pool1_idx, &pass.conv1_pre, CONV1_FILTERS, s);
    let (conv1_w, conv1_b, _) = conv_backward(
        &dconv1_pre,
        x.data(),
        IN_CHANNELS,
        s,
        &model.conv1_w,
        CONV1_FILTERS,
        false,
    );

    Ok((
        sample_loss,
        Gradients {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
        },
    ))
}

/// Analytic gradients of the per-sample loss.
pub fn backward(model: &CnnModel, x: &Tensor, label: Label) -> Result<Gradients, CnnError> {
    loss_and_gradients(model, x, label).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Mini-batch steps to run.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 500,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{found} {label} sample(s) but training requires at least {required} per class")]
    TooFewSamples {
        label: Label,
        found: usize,
        required: usize,
    },
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, trace: Vec<f64> },
}

/// Mini-batch SGD with momentum. Each iteration reshuffles the sample order
/// with the config's seeded RNG and takes the leading batch; given the same
/// seed and data order the result is bit-identical across runs.
pub fn train(
    mut model: CnnModel,
    data: &[(Tensor, Label)],
    cfg: &TrainConfig,
) -> Result<(CnnModel, Vec<f64>), TrainError> {
    assert!(cfg.iterations >= 1, "iterations must be >= 1");
    assert!(cfg.batch_size >= 1, "batch_size must be >= 1");
    assert!(cfg.learning_rate > 0.0, "learning_rate must be positive");
    assert!((0.0..1.0).contains(&cfg.momentum), "momentum must be in [0,1)");
    for label in [Label::Benign, Label::Malicious] {
        let found = data.iter().filter(|(_, l)| *l == label).count();
        if found < MIN_SAMPLES_PER_CLASS {
            return Err(TrainError::TooFewSamples {
                label,
                found,
                required: MIN_SAMPLES_PER_CLASS,
            });
        }
    }
    for (x, _) in data {
        check_input_shape(&model, x).expect("training tensor shape matches model input");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = Gradients::zeros_like(&model);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for iteration in 0..cfg.iterations {
        order.shuffle(&mut rng);
        let batch = &order[..cfg.batch_size.min(data.len())];
        let mut accum = Gradients::zeros_like(&model);
        let mut batch_loss = 0.0f64;
        for &i in batch {
            let (x, label) = &data[i];
            let (sample_loss, grads) =
                loss_and_gradients(&model, x, *label).expect("shapes validated above");
            batch_loss += sample_loss;
            accum.add_scaled(&grads, 1.0);
        }
        let inv = 1.0 / batch.len() as f64;
        batch_loss *= inv;
        trace.push(batch_loss);
        if !batch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { iteration, trace });
        }
        velocity.momentum_update(&accum, cfg.momentum, inv);
        model.apply_step(&velocity, cfg.learning_rate);
    }
    Ok((model, trace))
}
