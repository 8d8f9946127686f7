//! Training library for a small always-on keyword spotter whose acoustic
//! model is trained with learnable logit-scaling temperatures ("data
//! parameters") per target class and per training utterance.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`corpus`]: synthetic labeled keyword corpus plus multicondition
//!   augmentation (impulse-response convolution, additive noise at a target
//!   SNR drawn uniformly from \[-10, 10) dB).
//! * [`features`]: 13-dim MFCC extraction and ±9-frame context stacking
//!   into 247-dim input vectors.
//! * [`net`]: a 5×64 fully-connected acoustic model with batch norm and
//!   sigmoid activations, manual forward/backward, and an Adam optimizer.
//! * [`dataparams`]: the temperature store, the scaled-softmax loss, its
//!   analytic gradients, and the SGD-in-log-space update rule.
//! * [`trainer`]: multicondition training loop with dual optimizers,
//!   plateau learning-rate decay, early stopping, and seeded determinism.
//! * [`kws`]: DNN-HMM keyword scoring via a log-domain forward pass over
//!   the keyword state sequence.
//! * [`eval`]: FRR at a fixed false-alarms-per-hour operating point, DET
//!   curves, and temperature-distribution reports.
//! * [`io`]: the versioned binary container for checkpoints and feature
//!   matrices, RIFF float WAV codec, and CSV/JSONL helpers.

pub mod corpus;
pub mod dataparams;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod kws;
pub mod net;
pub mod rng;
pub mod trainer;

pub use corpus::{Corpus, NoiseBank, Provenance, Split, TargetInventory, Utterance};
pub use dataparams::{DataParameterStore, ScaledLossResult, SigmaFrameGrad};
pub use error::{CoreError, Result};
pub use eval::DetectionTrial;
pub use features::FrameSpec;
pub use kws::KeywordHmm;
pub use net::{AcousticModel, AdamState, ArchDescriptor};
pub use trainer::{DataKind, Mode, TrainConfig, TrainOutcome};
