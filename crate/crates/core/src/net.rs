//! Feed-forward acoustic model with manual forward/backward passes.
//!
//! The production-size network is 5 fully-connected blocks of width 64
//! (linear -> batch norm -> sigmoid) followed by a linear projection to the
//! class logits, fed with 247-dim stacked MFCC vectors. Sizes are carried
//! in [`ArchDescriptor`] so tests can run miniature variants.
//!
//! Forward and backward are pure given a model snapshot: training-mode
//! forward computes batch statistics but does not fold them into the
//! running estimates; the trainer applies [`AcousticModel::update_running_stats`]
//! explicitly between batches. Double precision throughout.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{CoreError, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ArchDescriptor {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub n_classes: usize,
}

impl ArchDescriptor {
    /// The production keyword-spotter shape: 247 -> 5 x 64 -> K.
    pub fn keyword_spotter(n_classes: usize) -> Self {
        Self {
            input_dim: 247,
            hidden_width: 64,
            hidden_layers: 5,
            n_classes,
        }
    }
}

/// One hidden block: linear -> batch norm -> sigmoid.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    /// out x in.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gain: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    pub arch: ArchDescriptor,
    pub blocks: Vec<DenseBlock>,
    /// K x width, no batch norm or activation after it.
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Bumped on every parameter mutation; guards against stale caches.
    revision: u64,
}

/// Activations captured by a training-mode forward pass.
pub struct ForwardCache {
    revision: u64,
    input: Array2<f64>,
    blocks: Vec<BlockCache>,
}

struct BlockCache {
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    inv_std: Array1<f64>,
    xhat: Array2<f64>,
    activated: Array2<f64>,
}

/// Parameter gradients, mirroring the trainable tensors of the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub blocks: Vec<BlockGrads>,
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gain: Array1<f64>,
    pub shift: Array1<f64>,
}

fn sigmoid_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp()));
}

impl AcousticModel {
    /// Seeded initialization: weights uniform in +-sqrt(6/(fan_in+fan_out)),
    /// biases and batch-norm shifts zero, gains one.
    pub fn init<R: Rng>(arch: ArchDescriptor, rng: &mut R) -> Self {
        let mut dims = Vec::with_capacity(arch.hidden_layers + 1);
        let mut prev = arch.input_dim;
        for _ in 0..arch.hidden_layers {
            dims.push((prev, arch.hidden_width));
            prev = arch.hidden_width;
        }
        let blocks = dims
            .iter()
            .map(|&(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                DenseBlock {
                    weight,
                    bias: Array1::zeros(fan_out),
                    gain: Array1::ones(fan_out),
                    shift: Array1::zeros(fan_out),
                    running_mean: Array1::zeros(fan_out),
                    running_var: Array1::ones(fan_out),
                }
            })
            .collect();
        let bound = (6.0 / (prev + arch.n_classes) as f64).sqrt();
        let out_weight =
            Array2::from_shape_fn((arch.n_classes, prev), |_| rng.random_range(-bound..bound));
        Self {
            arch,
            blocks,
            out_weight,
            out_bias: Array1::zeros(arch.n_classes),
            bn_eps: BN_EPS,
            bn_momentum: BN_MOMENTUM,
            revision: 0,
        }
    }

    /// Assemble a model from explicit tensors (used by the checkpoint
    /// loader). Shapes are trusted; `arch` must describe them.
    pub fn from_parts(
        arch: ArchDescriptor,
        blocks: Vec<DenseBlock>,
        out_weight: Array2<f64>,
        out_bias: Array1<f64>,
        bn_eps: f64,
        bn_momentum: f64,
    ) -> Self {
        Self {
            arch,
            blocks,
            out_weight,
            out_bias,
            bn_eps,
            bn_momentum,
            revision: 1,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Mark the parameters as mutated (called by whoever edits them
    /// directly, e.g. the checkpoint loader).
    pub fn bump_revision(&mut self) {
        self.revision += 1;
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.nrows() == 0 {
            return Err(CoreError::EmptyBatch);
        }
        if input.ncols() != self.arch.input_dim {
            return Err(CoreError::ShapeMismatch {
                layer: "input".into(),
                expected: format!("width {}", self.arch.input_dim),
                got: format!("width {}", input.ncols()),
            });
        }
        Ok(())
    }

    /// Training-mode forward: batch-statistics normalization, activations
    /// cached for [`Self::backward`].
    pub fn forward_train(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&input)?;
        let n = input.nrows() as f64;
        let mut x = input.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let a = x.dot(&block.weight.t()) + &block.bias;
            let batch_mean = a.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &a - &batch_mean;
            let batch_var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
            let inv_std = batch_var.mapv(|v| 1.0 / (v + self.bn_eps).sqrt());
            let xhat = &centered * &inv_std;
            let mut y = &xhat * &block.gain + &block.shift;
            sigmoid_inplace(&mut y);
            caches.push(BlockCache {
                batch_mean,
                batch_var,
                inv_std,
                xhat,
                activated: y.clone(),
            });
            x = y;
        }
        let logits = x.dot(&self.out_weight.t()) + &self.out_bias;
        Ok((
            logits,
            ForwardCache {
                revision: self.revision,
                input: input.to_owned(),
                blocks: caches,
            },
        ))
    }

    /// Inference-mode forward: running-statistics normalization, no cache.
    pub fn forward_infer(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut x = input.to_owned();
        for block in &self.blocks {
            let a = x.dot(&block.weight.t()) + &block.bias;
            let inv_std = block.running_var.mapv(|v| 1.0 / (v + self.bn_eps).sqrt());
            let xhat = (&a - &block.running_mean) * &inv_std;
            let mut y = &xhat * &block.gain + &block.shift;
            sigmoid_inplace(&mut y);
            x = y;
        }
        Ok(x.dot(&self.out_weight.t()) + &self.out_bias)
    }

    /// Fold the batch statistics of a cached forward pass into the running
    /// estimates: `running <- (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let m = self.bn_momentum;
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            block.running_mean =
                block.running_mean.mapv(|v| v * (1.0 - m)) + c.batch_mean.mapv(|v| v * m);
            block.running_var =
                block.running_var.mapv(|v| v * (1.0 - m)) + c.batch_var.mapv(|v| v * m);
        }
    }

    /// Exact gradients of the composed function, including the batch-norm
    /// batch-statistics terms. Returns parameter gradients and the gradient
    /// with respect to the model input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        logit_grads: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.revision != self.revision {
            return Err(CoreError::ShapeMismatch {
                layer: "cache".into(),
                expected: format!("model revision {}", self.revision),
                got: format!("cache revision {}", cache.revision),
            });
        }
        let n_frames = cache.input.nrows();
        if logit_grads.nrows() != n_frames || logit_grads.ncols() != self.arch.n_classes {
            return Err(CoreError::ShapeMismatch {
                layer: "logit_grads".into(),
                expected: format!("{} x {}", n_frames, self.arch.n_classes),
                got: format!("{} x {}", logit_grads.nrows(), logit_grads.ncols()),
            });
        }

        let last = cache
            .blocks
            .last()
            .map(|c| c.activated.view())
            .unwrap_or_else(|| cache.input.view());
        let out_weight_grad = logit_grads.t().dot(&last);
        let out_bias_grad = logit_grads.sum_axis(Axis(0));
        let mut dx = logit_grads.dot(&self.out_weight);

        let n = n_frames as f64;
        let mut block_grads = vec![
            BlockGrads {
                weight: Array2::zeros((0, 0)),
                bias: Array1::zeros(0),
                gain: Array1::zeros(0),
                shift: Array1::zeros(0),
            };
            self.blocks.len()
        ];
        for idx in (0..self.blocks.len()).rev() {
            let block = &self.blocks[idx];
            let c = &cache.blocks[idx];
            // through the sigmoid
            let dy = dx * &(c.activated.mapv(|s| s * (1.0 - s)));
            // batch-norm affine
            let gain_grad = (&dy * &c.xhat).sum_axis(Axis(0));
            let shift_grad = dy.sum_axis(Axis(0));
            let dxhat = &dy * &block.gain;
            // batch-norm normalization, including the mean/variance paths
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let da = (dxhat.mapv(|v| v * n) - &sum_dxhat - &c.xhat * &sum_dxhat_xhat)
                * &c.inv_std.mapv(|v| v / n);
            // linear
            let input = if idx == 0 {
                cache.input.view()
            } else {
                cache.blocks[idx - 1].activated.view()
            };
            block_grads[idx] = BlockGrads {
                weight: da.t().dot(&input),
                bias: da.sum_axis(Axis(0)),
                gain: gain_grad,
                shift: shift_grad,
            };
            dx = da.dot(&block.weight);
        }

        Ok((
            Gradients {
                blocks: block_grads,
                out_weight: out_weight_grad,
                out_bias: out_bias_grad,
            },
            dx,
        ))
    }

    /// Number of trainable parameters (running stats excluded).
    pub fn param_count(&self) -> usize {
        let mut n = self.out_weight.len() + self.out_bias.len();
        for b in &self.blocks {
            n += b.weight.len() + b.bias.len() + b.gain.len() + b.shift.len();
        }
        n
    }

    /// Flatten trainable parameters in declared order: per block weight
    /// (row-major), bias, gain, shift; then output weight and bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            flat.extend(b.weight.iter());
            flat.extend(b.bias.iter());
            flat.extend(b.gain.iter());
            flat.extend(b.shift.iter());
        }
        flat.extend(self.out_weight.iter());
        flat.extend(self.out_bias.iter());
        flat
    }

    /// Inverse of [`Self::to_flat`]; bumps the revision.
    pub fn from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CoreError::ShapeMismatch {
                layer: "from_flat".into(),
                expected: format!("{} params", self.param_count()),
                got: format!("{}", flat.len()),
            });
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for b in &mut self.blocks {
            take(b.weight.as_slice_mut().expect("contiguous"));
            take(b.bias.as_slice_mut().expect("contiguous"));
            take(b.gain.as_slice_mut().expect("contiguous"));
            take(b.shift.as_slice_mut().expect("contiguous"));
        }
        take(self.out_weight.as_slice_mut().expect("contiguous"));
        take(self.out_bias.as_slice_mut().expect("contiguous"));
        self.revision += 1;
        Ok(())
    }
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for b in &self.blocks {
            flat.extend(b.weight.iter());
            flat.extend(b.bias.iter());
            flat.extend(b.gain.iter());
            flat.extend(b.shift.iter());
        }
        flat.extend(self.out_weight.iter());
        flat.extend(self.out_bias.iter());
        flat
    }
}

/// Adam optimizer state over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, beta1: f64, beta2: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1,
            beta2,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update on the model's flattened parameters.
pub fn adam_step(
    model: &mut AcousticModel,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let mut params = model.to_flat();
    let grad_flat = grads.to_flat();
    if grad_flat.len() != params.len() || state.m.len() != params.len() {
        return Err(CoreError::ShapeMismatch {
            layer: "adam".into(),
            expected: format!("{} params", params.len()),
            got: format!("{} grads, {} state", grad_flat.len(), state.m.len()),
        });
    }
    state.t += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad_flat[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    model.from_flat(&params)
}
