//! Shared fixtures for the criterion benches.

use ndarray::Array2;
use rand::Rng;

use dpkws_core::corpus::TargetInventory;
use dpkws_core::kws::KeywordHmm;
use dpkws_core::net::{AcousticModel, ArchDescriptor};
use dpkws_core::rng::substream;

pub fn production_size_model() -> AcousticModel {
    let arch = ArchDescriptor::keyword_spotter(TargetInventory::standard().n_classes());
    let mut rng = substream(7, "bench-init");
    AcousticModel::init(arch, &mut rng)
}

pub fn random_frames(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = substream(seed, "bench-frames");
    Array2::from_shape_fn((n, dim), |_| rng.random_range(-2.0..2.0))
}

pub fn random_posteriors(t: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = substream(seed, "bench-posteriors");
    let mut p = Array2::from_shape_fn((t, k), |_| rng.random_range(0.01..1.0f64));
    for mut row in p.rows_mut() {
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

pub fn standard_hmm() -> KeywordHmm {
    let inventory = TargetInventory::standard();
    let self_loops = vec![0.8; inventory.n_keyword_states()];
    KeywordHmm::from_self_loops(
        inventory.keyword_state_sequence(),
        &self_loops,
        vec![inventory.silence_class(), inventory.other_speech_class()],
    )
    .expect("valid hmm")
}
