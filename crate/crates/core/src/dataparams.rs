//! Learnable logit-scaling temperatures ("data parameters") and the scaled
//! cross-entropy loss.
//!
//! Every training frame gets a positive temperature `sigma* = sigma_class[y]
//! + sigma_inst[i]` formed from the frame's target class `y` and utterance
//! `i` (either family can be disabled). All logits of the frame are divided
//! by the same `sigma*` before the softmax, so the temperature cannot be
//! absorbed into the model weights and instead modulates how strongly the
//! frame contributes to the weight gradients. The temperatures themselves
//! are optimized by SGD in log space, with an l2 penalty on `log sigma*`
//! pulling them back toward the plain softmax at `sigma* = 1`.
//!
//! Inference never sees the temperatures; evaluation uses the ordinary
//! softmax.

use std::io::Write as IoWrite;

use ndarray::{Array2, ArrayView2};

use crate::error::{CoreError, Result};

/// Clip range for class temperatures, value domain.
pub const CLASS_SIGMA_MIN: f64 = 0.05;
pub const CLASS_SIGMA_MAX: f64 = 20.0;
/// Clip range for instance temperatures, value domain.
pub const INSTANCE_SIGMA_MIN: f64 = 1e-4;
pub const INSTANCE_SIGMA_MAX: f64 = 20.0;

/// Per-class and per-utterance temperatures plus their SGD state.
///
/// Values are stored in the value domain so that clipping lands exactly on
/// the range bounds; the update rule still optimizes `log sigma` (the step
/// is applied as `sigma <- exp(log sigma - lr * g_log)`), which keeps the
/// parameters positive by construction.
#[derive(Debug, Clone)]
pub struct DataParameterStore {
    class_sigma: Vec<f64>,
    instance_sigma: Vec<f64>,
    class_enabled: bool,
    instance_enabled: bool,
    momentum: f64,
    class_velocity: Vec<f64>,
    instance_velocity: Vec<f64>,
    /// Updates skipped because a non-finite gradient reached them.
    skipped_updates: u64,
}

impl DataParameterStore {
    pub fn new(
        n_classes: usize,
        n_instances: usize,
        class_enabled: bool,
        instance_enabled: bool,
        class_init: f64,
        instance_init: f64,
    ) -> Result<Self> {
        if class_enabled && !(CLASS_SIGMA_MIN..=CLASS_SIGMA_MAX).contains(&class_init) {
            return Err(CoreError::InvalidConfig(format!(
                "class sigma init {class_init} outside [{CLASS_SIGMA_MIN}, {CLASS_SIGMA_MAX}]"
            )));
        }
        if instance_enabled && !(INSTANCE_SIGMA_MIN..=INSTANCE_SIGMA_MAX).contains(&instance_init) {
            return Err(CoreError::InvalidConfig(format!(
                "instance sigma init {instance_init} outside [{INSTANCE_SIGMA_MIN}, {INSTANCE_SIGMA_MAX}]"
            )));
        }
        Ok(Self {
            class_sigma: vec![class_init; n_classes],
            instance_sigma: vec![instance_init; n_instances],
            class_enabled,
            instance_enabled,
            momentum: 0.0,
            class_velocity: Vec::new(),
            instance_velocity: Vec::new(),
            skipped_updates: 0,
        })
    }

    /// Plain SGD by default; a positive coefficient turns on momentum.
    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn n_classes(&self) -> usize {
        self.class_sigma.len()
    }

    pub fn n_instances(&self) -> usize {
        self.instance_sigma.len()
    }

    pub fn class_enabled(&self) -> bool {
        self.class_enabled
    }

    pub fn instance_enabled(&self) -> bool {
        self.instance_enabled
    }

    pub fn class_sigmas(&self) -> &[f64] {
        &self.class_sigma
    }

    pub fn instance_sigmas(&self) -> &[f64] {
        &self.instance_sigma
    }

    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates
    }

    /// The temperature for a frame with target `class_id` in utterance
    /// `instance_id`: sum of the enabled families, or exactly 1 when both
    /// are disabled.
    pub fn effective_sigma(&self, class_id: usize, instance_id: usize) -> Result<f64> {
        let mut sigma = 0.0;
        if self.class_enabled {
            sigma += *self
                .class_sigma
                .get(class_id)
                .ok_or(CoreError::IndexOutOfRange {
                    kind: "class",
                    id: class_id,
                    len: self.class_sigma.len(),
                })?;
        }
        if self.instance_enabled {
            sigma += *self
                .instance_sigma
                .get(instance_id)
                .ok_or(CoreError::IndexOutOfRange {
                    kind: "instance",
                    id: instance_id,
                    len: self.instance_sigma.len(),
                })?;
        }
        if !self.class_enabled && !self.instance_enabled {
            sigma = 1.0;
        }
        Ok(sigma)
    }

    /// One SGD step in log space from per-frame temperature gradients.
    ///
    /// Per enabled family, the log-domain gradient of an entry is
    /// `sigma_entry * (sum of frame grads + wd * sum of 2*ln(sigma*)/sigma*)`
    /// where both sums run over the entry's frame occurrences in the batch.
    /// After the step the value-domain sigma is clamped to the family's clip
    /// range. Entries not present in the batch are left untouched, as are
    /// entries whose total gradient is exactly zero. A non-finite gradient
    /// skips the entry and bumps [`Self::skipped_updates`].
    pub fn update(
        &mut self,
        frames: &[SigmaFrameGrad],
        class_lr: f64,
        instance_lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let mut class_grad = vec![
            0.0;
            if self.class_enabled {
                self.class_sigma.len()
            } else {
                0
            }
        ];
        let mut class_reg = vec![0.0; class_grad.len()];
        let mut class_seen = vec![false; class_grad.len()];
        let mut inst_grad = vec![
            0.0;
            if self.instance_enabled {
                self.instance_sigma.len()
            } else {
                0
            }
        ];
        let mut inst_reg = vec![0.0; inst_grad.len()];
        let mut inst_seen = vec![false; inst_grad.len()];

        for f in frames {
            let sigma_star = self.effective_sigma(f.class, f.instance)?;
            // d/d(sigma*) of (ln sigma*)^2, accrued once per frame occurrence.
            let reg = 2.0 * sigma_star.ln() / sigma_star;
            if self.class_enabled {
                class_grad[f.class] += f.grad;
                class_reg[f.class] += reg;
                class_seen[f.class] = true;
            }
            if self.instance_enabled {
                inst_grad[f.instance] += f.grad;
                inst_reg[f.instance] += reg;
                inst_seen[f.instance] = true;
            }
        }

        if self.class_enabled {
            if self.momentum > 0.0 && self.class_velocity.is_empty() {
                self.class_velocity = vec![0.0; self.class_sigma.len()];
            }
            for k in 0..self.class_sigma.len() {
                if !class_seen[k] {
                    continue;
                }
                let g_value = class_grad[k] + weight_decay * class_reg[k];
                let g_log = self.class_sigma[k] * g_value;
                if !g_log.is_finite() {
                    self.skipped_updates += 1;
                    continue;
                }
                let step = if self.momentum > 0.0 {
                    self.class_velocity[k] = self.momentum * self.class_velocity[k] + g_log;
                    class_lr * self.class_velocity[k]
                } else {
                    class_lr * g_log
                };
                if step == 0.0 {
                    continue;
                }
                let updated = (self.class_sigma[k].ln() - step).exp();
                self.class_sigma[k] = updated.clamp(CLASS_SIGMA_MIN, CLASS_SIGMA_MAX);
            }
        }

        if self.instance_enabled {
            if self.momentum > 0.0 && self.instance_velocity.is_empty() {
                self.instance_velocity = vec![0.0; self.instance_sigma.len()];
            }
            for i in 0..self.instance_sigma.len() {
                if !inst_seen[i] {
                    continue;
                }
                let g_value = inst_grad[i] + weight_decay * inst_reg[i];
                let g_log = self.instance_sigma[i] * g_value;
                if !g_log.is_finite() {
                    self.skipped_updates += 1;
                    continue;
                }
                let step = if self.momentum > 0.0 {
                    self.instance_velocity[i] = self.momentum * self.instance_velocity[i] + g_log;
                    instance_lr * self.instance_velocity[i]
                } else {
                    instance_lr * g_log
                };
                if step == 0.0 {
                    continue;
                }
                let updated = (self.instance_sigma[i].ln() - step).exp();
                self.instance_sigma[i] = updated.clamp(INSTANCE_SIGMA_MIN, INSTANCE_SIGMA_MAX);
            }
        }

        Ok(())
    }

    /// Append this store as snapshot rows `epoch,kind,id,sigma_value`.
    /// Instance rows are labeled with the utterance ids when provided
    /// (one per store entry, in order), otherwise with the raw indices.
    pub fn write_snapshot_rows<W: IoWrite>(
        &self,
        epoch: usize,
        instance_ids: Option<&[u64]>,
        w: &mut W,
    ) -> Result<()> {
        if self.class_enabled {
            for (id, sigma) in self.class_sigma.iter().enumerate() {
                writeln!(w, "{epoch},class,{id},{sigma}")?;
            }
        }
        if self.instance_enabled {
            for (idx, sigma) in self.instance_sigma.iter().enumerate() {
                let id = instance_ids.map(|ids| ids[idx]).unwrap_or(idx as u64);
                writeln!(w, "{epoch},instance,{id},{sigma}")?;
            }
        }
        Ok(())
    }
}

/// Gradient of the batch loss with respect to one frame's temperature.
#[derive(Debug, Clone, Copy)]
pub struct SigmaFrameGrad {
    /// Target class of the frame.
    pub class: usize,
    /// Utterance index of the frame.
    pub instance: usize,
    /// d(loss)/d(sigma*) for this frame, value domain.
    pub grad: f64,
}

/// Loss and gradients of a minibatch under per-frame temperatures.
#[derive(Debug, Clone)]
pub struct ScaledLossResult {
    /// Mean per-frame cross entropy over the minibatch.
    pub loss: f64,
    /// d(loss)/d(logits), one length-K row per frame (mean reduction
    /// included).
    pub logit_grads: Array2<f64>,
    /// d(loss)/d(sigma*) per frame, value domain (mean reduction included).
    pub sigma_star_grads: Vec<f64>,
    /// The temperature each frame was scaled by.
    pub per_frame_sigma_star: Vec<f64>,
    /// Frames whose non-target probability mass underflowed to zero.
    pub saturated_frames: usize,
}

fn check_frame(logits: &[f64], sigma_star: f64) -> Result<()> {
    if logits.len() < 2 {
        return Err(CoreError::InvalidConfig(format!(
            "need at least 2 classes, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(CoreError::NonFinite("logits".into()));
    }
    if sigma_star <= 0.0 || !sigma_star.is_finite() || sigma_star.is_nan() {
        return Err(CoreError::NonFinite(format!("sigma* = {sigma_star}")));
    }
    Ok(())
}

/// exp-normalized probabilities of `logits / sigma_star`, max-subtracted.
pub fn scaled_softmax(logits: &[f64], sigma_star: f64) -> Result<Vec<f64>> {
    check_frame(logits, sigma_star)?;
    let scaled: Vec<f64> = logits.iter().map(|z| z / sigma_star).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / sum).collect())
}

/// Per-frame pieces shared by the loss and the temperature gradient.
struct FrameSoftmax {
    probs: Vec<f64>,
    /// -ln p_target via the log-sum-exp form.
    neg_log_p: f64,
    /// Non-target probability mass, summed directly so it stays positive
    /// even when p_target rounds to 1.
    nontarget_mass: f64,
    /// Weighted mean of non-target logits under the q-distribution; NaN
    /// when the mass underflowed.
    nontarget_mean_logit: f64,
}

fn frame_softmax(logits: &[f64], target: usize, sigma_star: f64) -> Result<FrameSoftmax> {
    check_frame(logits, sigma_star)?;
    if target >= logits.len() {
        return Err(CoreError::IndexOutOfRange {
            kind: "class",
            id: target,
            len: logits.len(),
        });
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / sigma_star).collect();
    let mut argmax = 0;
    for (j, &s) in scaled.iter().enumerate() {
        if s > scaled[argmax] {
            argmax = j;
        }
    }
    let max = scaled[argmax];
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    // exps[argmax] is exactly 1; summing the tail separately keeps the loss
    // accurate even when the softmax saturates (ln(1 + tail) vs ln of a
    // rounded sum)
    let tail: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != argmax)
        .map(|(_, &e)| e)
        .sum();
    let sum = 1.0 + tail;
    let neg_log_p = tail.ln_1p() + (max - scaled[target]);

    let mut mass_unnorm = 0.0;
    let mut weighted = 0.0;
    for (j, &e) in exps.iter().enumerate() {
        if j != target {
            mass_unnorm += e;
            weighted += e * logits[j];
        }
    }
    let nontarget_mean_logit = weighted / mass_unnorm;
    Ok(FrameSoftmax {
        probs: exps.iter().map(|e| e / sum).collect(),
        neg_log_p,
        nontarget_mass: mass_unnorm / sum,
        nontarget_mean_logit,
    })
}

/// The q-distribution: softmax posteriors restricted to non-target classes
/// and renormalized. `None` when the non-target mass underflowed to zero.
pub fn q_distribution(logits: &[f64], target: usize, sigma_star: f64) -> Result<Option<Vec<f64>>> {
    let fs = frame_softmax(logits, target, sigma_star)?;
    if fs.nontarget_mass == 0.0 {
        return Ok(None);
    }
    Ok(Some(
        fs.probs
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                if j == target {
                    0.0
                } else {
                    p / fs.nontarget_mass
                }
            })
            .collect(),
    ))
}

/// Gradient of the per-frame cross entropy `-ln p_target` with respect to
/// its temperature:
///
/// `(1 - p_y) / sigma*^2 * (z_y - sum_{j != y} q_j z_j)`.
///
/// Descent therefore raises the temperature of frames whose target logit
/// sits below the q-weighted mean of the competing logits, and lowers it
/// otherwise. Returns the gradient and a saturation flag; when the
/// non-target mass underflows to zero the exact limit 0 is returned with
/// the flag set.
pub fn sigma_gradient(logits: &[f64], target: usize, sigma_star: f64) -> Result<(f64, bool)> {
    let fs = frame_softmax(logits, target, sigma_star)?;
    if fs.nontarget_mass == 0.0 {
        return Ok((0.0, true));
    }
    let bracket = logits[target] - fs.nontarget_mean_logit;
    Ok((
        fs.nontarget_mass * bracket / (sigma_star * sigma_star),
        false,
    ))
}

/// Mean scaled cross entropy of a minibatch of frames, with analytic
/// gradients for the logits and the per-frame temperatures.
///
/// `logits` is frames x K; `targets` and `sigma_stars` hold one entry per
/// frame. Gradients carry the mean reduction: each per-frame term is
/// divided by the number of frames in the batch.
pub fn dp_cross_entropy(
    logits: ArrayView2<f64>,
    targets: &[usize],
    sigma_stars: &[f64],
) -> Result<ScaledLossResult> {
    let n = logits.nrows();
    let k = logits.ncols();
    if n == 0 {
        return Err(CoreError::EmptyBatch);
    }
    if targets.len() != n || sigma_stars.len() != n {
        return Err(CoreError::ShapeMismatch {
            layer: "dp_cross_entropy".into(),
            expected: format!("{n} targets and sigmas"),
            got: format!("{} targets, {} sigmas", targets.len(), sigma_stars.len()),
        });
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut logit_grads = Array2::zeros((n, k));
    let mut sigma_star_grads = vec![0.0; n];
    let mut saturated_frames = 0;

    for f in 0..n {
        let row = logits.row(f);
        let row = row.as_slice().expect("contiguous logits row");
        let target = targets[f];
        let sigma_star = sigma_stars[f];
        let fs = frame_softmax(row, target, sigma_star)?;
        loss += fs.neg_log_p;

        for j in 0..k {
            let indicator = if j == target { 1.0 } else { 0.0 };
            logit_grads[[f, j]] = (fs.probs[j] - indicator) / sigma_star * inv_n;
        }

        if fs.nontarget_mass == 0.0 {
            saturated_frames += 1;
            sigma_star_grads[f] = 0.0;
        } else {
            let bracket = row[target] - fs.nontarget_mean_logit;
            sigma_star_grads[f] = fs.nontarget_mass * bracket / (sigma_star * sigma_star) * inv_n;
        }
    }

    Ok(ScaledLossResult {
        loss: loss * inv_n,
        logit_grads,
        sigma_star_grads,
        per_frame_sigma_star: sigma_stars.to_vec(),
        saturated_frames,
    })
}
