//! Waveform synthesis for the labeled corpus and the noise bank.
//!
//! Each keyword phone state is a distinct tone texture, so frame labels are
//! known by construction. "Other speech" filler uses a separate frequency
//! family and silence is near-zero noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::features::FrameSpec;

use super::TargetInventory;

/// A planned stretch of samples owned by one class.
#[derive(Debug, Clone, Copy)]
pub(super) struct Segment {
    pub class: usize,
    pub frames: usize,
}

/// Tone frequency for a keyword state: 18 distinct, mel-resolvable tones.
fn keyword_state_freq(state: usize) -> f64 {
    500.0 + state as f64 * 180.0
}

/// Frequencies reserved for "other speech" filler, interleaved between the
/// keyword tones so the classes stay distinct but share the band.
fn other_speech_freq<R: Rng>(rng: &mut R) -> f64 {
    410.0 + rng.random_range(0..18) as f64 * 180.0
}

pub(super) fn synthesize_segments<R: Rng>(
    segments: &[Segment],
    inventory: &TargetInventory,
    frame_spec: &FrameSpec,
    rng: &mut R,
) -> (Vec<f32>, Vec<usize>) {
    let hop = frame_spec.hop_samples();
    let win = frame_spec.window_samples();
    let total_frames: usize = segments.iter().map(|s| s.frames).sum();
    let total_samples = total_frames * hop + (win - hop);
    let sr = frame_spec.sample_rate as f64;
    let normal = Normal::new(0.0, 1.0).expect("valid normal");

    let mut samples = Vec::with_capacity(total_samples);
    let mut owner = Vec::with_capacity(total_samples);
    for seg in segments {
        let n = seg.frames * hop;
        if seg.class == inventory.silence_class() {
            for _ in 0..n {
                samples.push((1e-4 * normal.sample(rng)) as f32);
                owner.push(seg.class);
            }
        } else {
            let freq = if seg.class == inventory.other_speech_class() {
                other_speech_freq(rng)
            } else {
                keyword_state_freq(seg.class)
            };
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let amp: f64 = rng.random_range(0.18..0.3);
            for i in 0..n {
                let t = i as f64 / sr;
                let tone = amp * (std::f64::consts::TAU * freq * t + phase).sin();
                let hiss = 0.01 * normal.sample(rng);
                samples.push((tone + hiss) as f32);
                owner.push(seg.class);
            }
        }
    }
    // tail to complete the last analysis window, owned by the last segment
    let last_class = segments.last().map(|s| s.class).unwrap_or(0);
    while samples.len() < total_samples {
        samples.push((1e-4 * normal.sample(rng)) as f32);
        owner.push(last_class);
    }

    // label each frame by the class owning its center sample
    let n_frames = frame_spec.frame_count(samples.len());
    debug_assert_eq!(n_frames, total_frames);
    let labels = (0..n_frames)
        .map(|f| owner[(f * hop + win / 2).min(owner.len() - 1)])
        .collect();
    (samples, labels)
}

/// The synthetic noise families standing in for household recordings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Hum,
    Machinery,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Hum,
        NoiseKind::Machinery,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Hum => "hum",
            NoiseKind::Machinery => "machinery",
        }
    }
}

pub(super) fn synthesize_noise_clip<R: Rng>(
    kind: NoiseKind,
    samples: usize,
    sample_rate: u32,
    rng: &mut R,
) -> Vec<f32> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let sr = sample_rate as f64;
    match kind {
        NoiseKind::White => (0..samples)
            .map(|_| (0.3 * normal.sample(rng)) as f32)
            .collect(),
        NoiseKind::Pink => {
            // Voss-ish: one-pole lowpassed white stacked with white
            let mut lp = 0.0;
            (0..samples)
                .map(|_| {
                    let w: f64 = normal.sample(rng);
                    lp = 0.97 * lp + 0.03 * w;
                    (0.15 * w + 6.0 * lp * 0.15) as f32
                })
                .collect()
        }
        NoiseKind::Hum => {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (0..samples)
                .map(|i| {
                    let t = i as f64 / sr;
                    let fundamental = (std::f64::consts::TAU * 50.0 * t + phase).sin();
                    let h3 = 0.5 * (std::f64::consts::TAU * 150.0 * t + phase).sin();
                    let h5 = 0.25 * (std::f64::consts::TAU * 250.0 * t + phase).sin();
                    let w: f64 = 0.05 * normal.sample(rng);
                    (0.25 * (fundamental + h3 + h5) + w) as f32
                })
                .collect()
        }
        NoiseKind::Machinery => {
            // amplitude-modulated band of white noise
            let mod_hz: f64 = rng.random_range(4.0..14.0);
            (0..samples)
                .map(|i| {
                    let t = i as f64 / sr;
                    let envelope = 0.6 + 0.4 * (std::f64::consts::TAU * mod_hz * t).sin();
                    let w: f64 = normal.sample(rng);
                    (0.3 * envelope * w) as f32
                })
                .collect()
        }
    }
}
