//! Multicondition training loop.
//!
//! Dual optimizers: Adam on the model weights, plain SGD in log space on
//! the data parameters. Minibatches group whole utterances (256 by
//! default) and flatten their frames; the loss is the frame mean, so
//! batches of different frame counts are comparable. The cross-validation
//! loss (plain softmax, inference-mode batch norm) drives a 0.5 plateau
//! decay of the model learning rate after 2 non-improving epochs and early
//! stopping after 9; neither ever touches the data-parameter learning
//! rates. Everything is deterministic given the master seed.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, Utterance};
use crate::dataparams::{dp_cross_entropy, DataParameterStore, SigmaFrameGrad};
use crate::error::{CoreError, Result};
use crate::eval::SigmaSnapshot;
use crate::features::{stack_context, FrameSpec, MfccExtractor};
use crate::net::{adam_step, AcousticModel, AdamState, ArchDescriptor};
use crate::rng::{substream, substream_indexed};

/// Which data-parameter families are learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Class,
    Instance,
    Joint,
}

impl Mode {
    pub fn class_enabled(&self) -> bool {
        matches!(self, Mode::Class | Mode::Joint)
    }

    pub fn instance_enabled(&self) -> bool {
        matches!(self, Mode::Instance | Mode::Joint)
    }
}

/// Which hyperparameter row the defaults come from: models trained on
/// clean data use gentler instance settings than multicondition ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Clean,
    Noisy,
}

/// Learning rates, initial values and weight decay for the data
/// parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataParamConfig {
    pub class_lr: f64,
    pub class_init: f64,
    pub instance_lr: f64,
    pub instance_init: f64,
    pub weight_decay: f64,
}

impl DataParamConfig {
    /// Tuned defaults per training-data kind and mode.
    pub fn defaults(data: DataKind, mode: Mode) -> Self {
        let (class_lr, class_init, instance_lr, instance_init, weight_decay) = match (data, mode) {
            (_, Mode::Baseline) => (0.0, 1.0, 0.0, 1.0, 0.0),
            (DataKind::Clean, Mode::Class) => (0.001, 1.0, 0.0, 1.0, 0.01),
            (DataKind::Clean, Mode::Instance) => (0.0, 1.0, 0.001, 1.0, 0.01),
            (DataKind::Clean, Mode::Joint) => (0.001, 1.0, 0.1, 0.01, 0.01),
            (DataKind::Noisy, Mode::Class) => (0.001, 1.0, 0.0, 1.0, 0.01),
            (DataKind::Noisy, Mode::Instance) => (0.0, 1.0, 0.01, 1.0, 0.1),
            (DataKind::Noisy, Mode::Joint) => (0.001, 1.0, 1.0, 0.1, 0.01),
        };
        Self {
            class_lr,
            class_init,
            instance_lr,
            instance_init,
            weight_decay,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub data_kind: DataKind,
    pub data_params: DataParamConfig,
    pub model_lr: f64,
    pub betas: (f64, f64),
    /// Halve the model lr after this many consecutive non-improving epochs.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Stop after this many consecutive non-improving epochs.
    pub early_stop_patience: usize,
    pub batch_utterances: usize,
    pub max_epochs: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: Mode, data_kind: DataKind, seed: u64) -> Self {
        Self {
            mode,
            data_kind,
            data_params: DataParamConfig::defaults(data_kind, mode),
            model_lr: 0.01,
            betas: (0.9, 0.999),
            plateau_patience: 2,
            plateau_factor: 0.5,
            early_stop_patience: 9,
            batch_utterances: 256,
            max_epochs: 40,
            hidden_width: 64,
            hidden_layers: 5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_lr.is_nan() || self.model_lr <= 0.0 {
            return Err(CoreError::InvalidConfig("model_lr must be positive".into()));
        }
        if self.batch_utterances == 0 || self.max_epochs == 0 {
            return Err(CoreError::InvalidConfig(
                "batch size and epochs must be positive".into(),
            ));
        }
        if self.mode.class_enabled()
            && (self.data_params.class_lr.is_nan() || self.data_params.class_lr < 0.0)
        {
            return Err(CoreError::InvalidConfig(
                "class lr must be non-negative".into(),
            ));
        }
        if self.mode.instance_enabled()
            && (self.data_params.instance_lr.is_nan() || self.data_params.instance_lr < 0.0)
        {
            return Err(CoreError::InvalidConfig(
                "instance lr must be non-negative".into(),
            ));
        }
        if self.mode == Mode::Joint {
            let init_sum = self.data_params.class_init + self.data_params.instance_init;
            if !(0.9..=1.1).contains(&init_sum) {
                return Err(CoreError::InvalidConfig(format!(
                    "joint-mode sigma inits sum to {init_sum}, expected within [0.9, 1.1]"
                )));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub cv_loss: f64,
    pub model_lr: f64,
    pub stopped_early: bool,
}

pub struct TrainOutcome {
    pub model: AcousticModel,
    pub store: DataParameterStore,
    /// Utterance id per instance-parameter index.
    pub instance_ids: Vec<u64>,
    pub log: Vec<EpochLog>,
    pub sigma_snapshots: Vec<SigmaSnapshot>,
}

/// MFCC frames per utterance id, computed once and shared across runs.
pub struct FeatureCache {
    frames: HashMap<u64, Array2<f64>>,
}

impl FeatureCache {
    pub fn build(corpus: &Corpus, frame_spec: &FrameSpec) -> Result<Self> {
        let extractor = MfccExtractor::new(*frame_spec)?;
        let frames: Vec<(u64, Array2<f64>)> = corpus
            .utterances
            .par_iter()
            .map(|u| Ok((u.id, extractor.mfcc(&u.samples)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            frames: frames.into_iter().collect(),
        })
    }

    pub fn get(&self, id: u64) -> Option<&Array2<f64>> {
        self.frames.get(&id)
    }
}

/// The seeded utterance visit order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream_indexed(seed, "shuffle", epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Stacked input matrix, per-frame targets and per-frame utterance indices
/// for a batch of utterances. `instance_idx` holds one store index per
/// utterance, in batch order.
pub fn assemble_batch(
    utts: &[&Utterance],
    cache: &FeatureCache,
    frame_spec: &FrameSpec,
    instance_idx: &[usize],
) -> Result<(Array2<f64>, Vec<usize>, Vec<usize>)> {
    let total_frames: usize = utts.iter().map(|u| u.frame_labels.len()).sum();
    let dim = frame_spec.stacked_dim();
    let mut input = Array2::zeros((total_frames, dim));
    let mut targets = Vec::with_capacity(total_frames);
    let mut frame_instance = Vec::with_capacity(total_frames);
    let mut row = 0;
    for (k, u) in utts.iter().enumerate() {
        let mfcc = cache
            .get(u.id)
            .ok_or_else(|| CoreError::IdMismatch(format!("utterance {} not in cache", u.id)))?;
        let stacked = stack_context(mfcc.view(), frame_spec)?;
        if stacked.nrows() != u.frame_labels.len() {
            return Err(CoreError::ShapeMismatch {
                layer: format!("utterance {}", u.id),
                expected: format!("{} labeled frames", u.frame_labels.len()),
                got: format!("{} feature frames", stacked.nrows()),
            });
        }
        input
            .slice_mut(ndarray::s![row..row + stacked.nrows(), ..])
            .assign(&stacked);
        targets.extend_from_slice(&u.frame_labels);
        frame_instance.extend(std::iter::repeat_n(instance_idx[k], u.frame_labels.len()));
        row += stacked.nrows();
    }
    Ok((input, targets, frame_instance))
}

/// Mean per-frame cross entropy of a split under the plain softmax and
/// inference-mode batch norm.
pub fn split_loss(
    model: &AcousticModel,
    corpus: &Corpus,
    cache: &FeatureCache,
    frame_spec: &FrameSpec,
    split: Split,
) -> Result<f64> {
    let mut total = 0.0;
    let mut frames = 0usize;
    for u in corpus.split_utterances(split) {
        let mfcc = cache
            .get(u.id)
            .ok_or_else(|| CoreError::IdMismatch(format!("utterance {} not in cache", u.id)))?;
        let stacked = stack_context(mfcc.view(), frame_spec)?;
        let logits = model.forward_infer(stacked.view())?;
        let sigmas = vec![1.0; u.frame_labels.len()];
        let res = dp_cross_entropy(logits.view(), &u.frame_labels, &sigmas)?;
        total += res.loss * u.frame_labels.len() as f64;
        frames += u.frame_labels.len();
    }
    if frames == 0 {
        return Err(CoreError::EmptyBatch);
    }
    Ok(total / frames as f64)
}

/// Cross-validation loss; plain softmax, running batch-norm statistics.
pub fn cv_loss(
    model: &AcousticModel,
    corpus: &Corpus,
    cache: &FeatureCache,
    frame_spec: &FrameSpec,
) -> Result<f64> {
    split_loss(model, corpus, cache, frame_spec, Split::Cv)
}

pub fn train(
    config: &TrainConfig,
    corpus: &Corpus,
    frame_spec: &FrameSpec,
    cache: &FeatureCache,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut train_utts: Vec<&Utterance> = corpus.split_utterances(Split::Train).collect();
    train_utts.sort_by_key(|u| u.id);
    if train_utts.is_empty() {
        return Err(CoreError::InvalidConfig("no train split".into()));
    }
    if corpus.split_utterances(Split::Cv).next().is_none() {
        return Err(CoreError::InvalidConfig("no cv split".into()));
    }
    let instance_ids: Vec<u64> = train_utts.iter().map(|u| u.id).collect();
    let instance_index_of: HashMap<u64, usize> = instance_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();

    let arch = ArchDescriptor {
        input_dim: frame_spec.stacked_dim(),
        hidden_width: config.hidden_width,
        hidden_layers: config.hidden_layers,
        n_classes: corpus.n_classes,
    };
    let mut init_rng = substream(config.seed, "model-init");
    let mut model = AcousticModel::init(arch, &mut init_rng);
    let mut adam = AdamState::new(model.param_count(), config.betas.0, config.betas.1);

    let mut store = DataParameterStore::new(
        corpus.n_classes,
        train_utts.len(),
        config.mode.class_enabled(),
        config.mode.instance_enabled(),
        config.data_params.class_init,
        config.data_params.instance_init,
    )?;

    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    let mut model_lr = config.model_lr;
    let mut best_cv = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let mut plateau_bad = 0usize;

    for epoch in 0..config.max_epochs {
        let order = epoch_order(config.seed, epoch, train_utts.len());
        let mut epoch_loss = 0.0;
        let mut epoch_frames = 0usize;

        for (batch_no, chunk) in order.chunks(config.batch_utterances).enumerate() {
            let utts: Vec<&Utterance> = chunk.iter().map(|&i| train_utts[i]).collect();
            let inst_idx: Vec<usize> = utts.iter().map(|u| instance_index_of[&u.id]).collect();
            let (input, targets, frame_instance) =
                assemble_batch(&utts, cache, frame_spec, &inst_idx)?;

            let sigmas: Vec<f64> = if config.mode == Mode::Baseline {
                vec![1.0; targets.len()]
            } else {
                targets
                    .iter()
                    .zip(&frame_instance)
                    .map(|(&t, &i)| store.effective_sigma(t, i))
                    .collect::<Result<_>>()?
            };

            let (logits, fwd_cache) = model.forward_train(input.view())?;
            let res = dp_cross_entropy(logits.view(), &targets, &sigmas)?;
            if !res.loss.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    batch: batch_no,
                    detail: format!("loss {} over {} frames", res.loss, targets.len()),
                });
            }
            let (grads, _) = model.backward(&fwd_cache, res.logit_grads.view())?;
            model.update_running_stats(&fwd_cache);
            adam_step(&mut model, &grads, &mut adam, model_lr)?;

            if config.mode != Mode::Baseline {
                let frame_grads: Vec<SigmaFrameGrad> = targets
                    .iter()
                    .zip(&frame_instance)
                    .zip(&res.sigma_star_grads)
                    .map(|((&class, &instance), &grad)| SigmaFrameGrad {
                        class,
                        instance,
                        grad,
                    })
                    .collect();
                store.update(
                    &frame_grads,
                    config.data_params.class_lr,
                    config.data_params.instance_lr,
                    config.data_params.weight_decay,
                )?;
            }

            epoch_loss += res.loss * targets.len() as f64;
            epoch_frames += targets.len();
        }

        let cv = cv_loss(&model, corpus, cache, frame_spec)?;

        if config.mode != Mode::Baseline {
            snapshots.push(SigmaSnapshot {
                epoch,
                class: if config.mode.class_enabled() {
                    store.class_sigmas().to_vec()
                } else {
                    Vec::new()
                },
                instance: if config.mode.instance_enabled() {
                    instance_ids
                        .iter()
                        .zip(store.instance_sigmas())
                        .map(|(&id, &s)| (id, s))
                        .collect()
                } else {
                    Vec::new()
                },
            });
        }

        let improved = cv < best_cv;
        if improved {
            best_cv = cv;
            bad_epochs = 0;
            plateau_bad = 0;
        } else {
            bad_epochs += 1;
            plateau_bad += 1;
        }
        let stopping = bad_epochs >= config.early_stop_patience;

        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / epoch_frames as f64,
            cv_loss: cv,
            model_lr,
            stopped_early: stopping,
        };
        on_epoch(&entry);
        log.push(entry);

        if stopping {
            break;
        }
        if plateau_bad >= config.plateau_patience {
            model_lr *= config.plateau_factor;
            plateau_bad = 0;
        }
    }

    Ok(TrainOutcome {
        model,
        store,
        instance_ids,
        log,
        sigma_snapshots: snapshots,
    })
}
