//! Synthetic labeled keyword corpus and multicondition augmentation.
//!
//! Positives embed the 6-phone (18-state) keyword tone sequence surrounded
//! by silence and "other speech" filler; negatives contain filler only.
//! Multicondition augmentation appends one noisy copy per utterance:
//! a synthetic room impulse response is convolved with a noise-bank clip,
//! the result scaled to a target SNR drawn uniformly from [-10, 10) dB and
//! added to the clean waveform. Everything is a pure function of the seed.

mod mix;
mod synth;

pub use mix::{fft_convolve, measure_snr_db, mix_at_snr, synth_rir, MixResult};
pub use synth::NoiseKind;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::FrameSpec;
use crate::io::{read_wav_f32_mono, write_wav_f32_mono};
use crate::rng::{substream, substream_indexed};

use synth::Segment;

pub const SNR_RANGE_DB: (f64, f64) = (-10.0, 10.0);
pub const RIR_DECAY_RANGE_S: (f64, f64) = (0.2, 0.6);
pub const CV_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Cv,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Noisy { snr_db: f64, noise_kind: String },
}

impl Provenance {
    pub fn is_noisy(&self) -> bool {
        matches!(self, Provenance::Noisy { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    /// Stable id; training indexes instance parameters by it.
    pub id: u64,
    pub samples: Vec<f32>,
    /// One class index per MFCC frame.
    pub frame_labels: Vec<usize>,
    pub is_positive: bool,
    pub provenance: Provenance,
    pub split: Split,
    /// For noisy copies, the id of the clean source utterance.
    pub clean_source_id: Option<u64>,
}

impl Utterance {
    pub fn duration_seconds(&self, sample_rate: u32) -> f64 {
        self.samples.len() as f64 / sample_rate as f64
    }
}

/// The fixed class layout: 18 keyword states (3 per phone), one silence /
/// non-speech class and one other-speech class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetInventory {
    pub keyword_phones: usize,
    pub states_per_phone: usize,
}

impl TargetInventory {
    pub fn standard() -> Self {
        Self {
            keyword_phones: 6,
            states_per_phone: 3,
        }
    }

    pub fn n_keyword_states(&self) -> usize {
        self.keyword_phones * self.states_per_phone
    }

    pub fn silence_class(&self) -> usize {
        self.n_keyword_states()
    }

    pub fn other_speech_class(&self) -> usize {
        self.n_keyword_states() + 1
    }

    pub fn n_classes(&self) -> usize {
        self.n_keyword_states() + 2
    }

    /// The keyword path in order: phone-major, state-minor.
    pub fn keyword_state_sequence(&self) -> Vec<usize> {
        (0..self.n_keyword_states()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub n_classes: usize,
    pub sample_rate: u32,
}

impl Corpus {
    pub fn split_utterances(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn next_id(&self) -> u64 {
        self.utterances.iter().map(|u| u.id + 1).max().unwrap_or(0)
    }

    /// Append another corpus; panics on id collisions in debug builds.
    pub fn concat(mut self, other: Corpus) -> Corpus {
        debug_assert_eq!(self.sample_rate, other.sample_rate);
        debug_assert_eq!(self.n_classes, other.n_classes);
        self.utterances.extend(other.utterances);
        self
    }
}

/// Durations (in frames) used to assemble utterances.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeywordSpec {
    /// Frames per keyword state, inclusive range.
    pub state_frames: (usize, usize),
    /// Frames per filler ("other speech") segment.
    pub filler_frames: (usize, usize),
    /// Frames of silence at each utterance boundary.
    pub silence_frames: (usize, usize),
    /// Filler segments on each side of the keyword / in a negative.
    pub filler_segments: (usize, usize),
}

impl Default for KeywordSpec {
    fn default() -> Self {
        Self {
            state_frames: (3, 8),
            filler_frames: (4, 10),
            silence_frames: (3, 6),
            filler_segments: (1, 3),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub positives: usize,
    pub negatives: usize,
}

fn draw(rng: &mut impl Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

/// Deterministically synthesize a labeled corpus: `counts.positives`
/// keyword utterances followed by `counts.negatives` filler-only ones,
/// with ids `id_base..`.
pub fn generate_corpus(
    seed: u64,
    counts: CorpusCounts,
    keyword_spec: &KeywordSpec,
    frame_spec: &FrameSpec,
    split: Split,
    id_base: u64,
) -> Result<Corpus> {
    frame_spec.validate()?;
    let inventory = TargetInventory::standard();
    let total = counts.positives + counts.negatives;
    let utterances: Vec<Utterance> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rng = substream_indexed(seed, "utterance", idx as u64);
            let positive = idx < counts.positives;
            let mut segments = Vec::new();
            segments.push(Segment {
                class: inventory.silence_class(),
                frames: draw(&mut rng, keyword_spec.silence_frames),
            });
            if positive {
                for _ in 0..draw(&mut rng, keyword_spec.filler_segments) {
                    segments.push(Segment {
                        class: inventory.other_speech_class(),
                        frames: draw(&mut rng, keyword_spec.filler_frames),
                    });
                }
                for state in inventory.keyword_state_sequence() {
                    segments.push(Segment {
                        class: state,
                        frames: draw(&mut rng, keyword_spec.state_frames),
                    });
                }
                for _ in 0..draw(&mut rng, keyword_spec.filler_segments) {
                    segments.push(Segment {
                        class: inventory.other_speech_class(),
                        frames: draw(&mut rng, keyword_spec.filler_frames),
                    });
                }
            } else {
                let n_fillers = draw(&mut rng, keyword_spec.filler_segments).max(1);
                for _ in 0..n_fillers {
                    segments.push(Segment {
                        class: inventory.other_speech_class(),
                        frames: draw(&mut rng, keyword_spec.filler_frames),
                    });
                }
            }
            segments.push(Segment {
                class: inventory.silence_class(),
                frames: draw(&mut rng, keyword_spec.silence_frames),
            });

            let (samples, frame_labels) =
                synth::synthesize_segments(&segments, &inventory, frame_spec, &mut rng);
            Utterance {
                id: id_base + idx as u64,
                samples,
                frame_labels,
                is_positive: positive,
                provenance: Provenance::Clean,
                split,
                clean_source_id: None,
            }
        })
        .collect();

    Ok(Corpus {
        utterances,
        n_classes: inventory.n_classes(),
        sample_rate: frame_spec.sample_rate,
    })
}

/// A set of synthesized noise clips, looped as needed during mixing.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    pub clips: Vec<(NoiseKind, Vec<f32>)>,
}

impl NoiseBank {
    pub fn synthesize(
        seed: u64,
        clips_per_kind: usize,
        clip_seconds: f64,
        sample_rate: u32,
    ) -> Self {
        let samples = (clip_seconds * sample_rate as f64) as usize;
        let mut clips = Vec::new();
        for (k, kind) in NoiseKind::ALL.iter().enumerate() {
            for c in 0..clips_per_kind {
                let mut rng =
                    substream_indexed(seed, "noise-bank", (k * clips_per_kind + c) as u64);
                clips.push((
                    *kind,
                    synth::synthesize_noise_clip(*kind, samples, sample_rate, &mut rng),
                ));
            }
        }
        Self { clips }
    }
}

/// Append one noisy copy of every utterance (fresh ids, same labels and
/// split), then move ~`cv_fraction` of the train utterances to the cv
/// split. Each copy's SNR is drawn uniformly from [-10, 10) dB and its
/// impulse-response decay from [0.2, 0.6) s.
pub fn build_multicondition(
    corpus: Corpus,
    bank: &NoiseBank,
    seed: u64,
    cv_fraction: f64,
) -> Result<Corpus> {
    if corpus.utterances.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let id_base = corpus.next_id();
    let sample_rate = corpus.sample_rate;
    let noisy: Vec<Utterance> = corpus
        .utterances
        .par_iter()
        .enumerate()
        .map(|(idx, clean)| -> Result<Utterance> {
            let mut rng = substream_indexed(seed, "augment", clean.id);
            let (kind, clip) = &bank.clips[rng.random_range(0..bank.clips.len())];
            let offset = rng.random_range(0..clip.len());
            let decay = rng.random_range(RIR_DECAY_RANGE_S.0..RIR_DECAY_RANGE_S.1);
            let rir = synth_rir(&mut rng, decay, sample_rate);
            let snr_db = rng.random_range(SNR_RANGE_DB.0..SNR_RANGE_DB.1);
            let mixed = mix_at_snr(&clean.samples, clip, &rir, snr_db, offset)?;
            Ok(Utterance {
                id: id_base + idx as u64,
                samples: mixed.noisy,
                frame_labels: clean.frame_labels.clone(),
                is_positive: clean.is_positive,
                provenance: Provenance::Noisy {
                    snr_db,
                    noise_kind: kind.name().to_string(),
                },
                split: clean.split,
                clean_source_id: Some(clean.id),
            })
        })
        .collect::<Result<_>>()?;

    let mut out = corpus;
    out.utterances.extend(noisy);
    carve_cv_split(&mut out, cv_fraction, seed);
    Ok(out)
}

/// Move a seeded ~`fraction` of the train utterances to the cv split.
pub fn carve_cv_split(corpus: &mut Corpus, fraction: f64, seed: u64) {
    let mut train_idx: Vec<usize> = corpus
        .utterances
        .iter()
        .enumerate()
        .filter(|(_, u)| u.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if train_idx.is_empty() || fraction <= 0.0 {
        return;
    }
    let n_cv = ((train_idx.len() as f64 * fraction).ceil() as usize).min(train_idx.len());
    let mut rng = substream(seed, "cv-split");
    train_idx.shuffle(&mut rng);
    for &i in train_idx.iter().take(n_cv) {
        corpus.utterances[i].split = Split::Cv;
    }
}

/// Two-tone toy corpus for curriculum experiments: single-segment
/// utterances of class 0 or 1, with `label_noise_frac` of the train
/// utterances relabeled to the wrong class. Returns the corpus and a flag
/// per utterance marking the label-noised ones.
pub fn two_class_corpus(
    seed: u64,
    n_per_class: usize,
    label_noise_frac: f64,
    frame_spec: &FrameSpec,
) -> Result<(Corpus, Vec<bool>)> {
    use rand_distr::{Distribution, Normal};
    frame_spec.validate()?;
    let hop = frame_spec.hop_samples();
    let win = frame_spec.window_samples();
    let sr = frame_spec.sample_rate as f64;
    let total = 2 * n_per_class;

    let mut utterances: Vec<Utterance> = (0..total)
        .map(|idx| {
            let mut rng = substream_indexed(seed, "two-class", idx as u64);
            let class = idx % 2;
            let freq = if class == 0 { 700.0 } else { 1900.0 };
            let frames = rng.random_range(30..=50);
            let n = frames * hop + (win - hop);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let normal = Normal::new(0.0, 1.0).expect("valid normal");
            let samples: Vec<f32> = (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let tone = 0.25 * (std::f64::consts::TAU * freq * t + phase).sin();
                    (tone + 0.02 * normal.sample(&mut rng)) as f32
                })
                .collect();
            Utterance {
                id: idx as u64,
                samples,
                frame_labels: vec![class; frames],
                is_positive: class == 0,
                provenance: Provenance::Clean,
                split: Split::Train,
                clean_source_id: None,
            }
        })
        .collect();

    // label noise on a seeded subset of the train utterances
    let mut noisy_flags = vec![false; total];
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = substream(seed, "two-class-noise");
    order.shuffle(&mut rng);
    let n_noisy = (total as f64 * label_noise_frac).round() as usize;
    for &i in order.iter().take(n_noisy) {
        let wrong = 1 - utterances[i].frame_labels[0];
        utterances[i].frame_labels.fill(wrong);
        noisy_flags[i] = true;
    }

    let mut corpus = Corpus {
        utterances,
        n_classes: 2,
        sample_rate: frame_spec.sample_rate,
    };
    carve_cv_split(&mut corpus, 0.1, seed);
    Ok((corpus, noisy_flags))
}

/// One manifest line, without the audio payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub path: String,
    pub split: Split,
    pub is_positive: bool,
    pub provenance: Provenance,
    pub frame_label_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_source_id: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    sample_rate: u32,
    n_classes: usize,
}

/// Write `manifest.jsonl`, `corpus.json`, and per-utterance wav/label files.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("wav"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?);
    for u in &corpus.utterances {
        let wav_rel = format!("wav/{:06}.wav", u.id);
        let label_rel = format!("labels/{:06}.json", u.id);
        write_wav_f32_mono(&dir.join(&wav_rel), corpus.sample_rate, &u.samples)?;
        serde_json::to_writer(fs::File::create(dir.join(&label_rel))?, &u.frame_labels)?;
        let row = ManifestEntry {
            id: u.id,
            path: wav_rel,
            split: u.split,
            is_positive: u.is_positive,
            provenance: u.provenance.clone(),
            frame_label_path: label_rel,
            clean_source_id: u.clean_source_id,
        };
        serde_json::to_writer(&mut manifest, &row)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    serde_json::to_writer_pretty(
        fs::File::create(dir.join("corpus.json"))?,
        &CorpusMeta {
            sample_rate: corpus.sample_rate,
            n_classes: corpus.n_classes,
        },
    )?;
    Ok(())
}

/// Read just the manifest rows (no audio or labels).
pub fn load_manifest_entries(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let manifest = BufReader::new(fs::File::open(dir.join("manifest.jsonl"))?);
    let mut entries = Vec::new();
    for line in manifest.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok(entries)
}

/// Load a corpus written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let meta: CorpusMeta = serde_json::from_reader(fs::File::open(dir.join("corpus.json"))?)?;
    let manifest = BufReader::new(fs::File::open(dir.join("manifest.jsonl"))?);
    let mut utterances = Vec::new();
    for line in manifest.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestEntry = serde_json::from_str(&line)?;
        let (sr, samples) = read_wav_f32_mono(&dir.join(&row.path))?;
        if sr != meta.sample_rate {
            return Err(CoreError::Container(format!(
                "utterance {} sample rate {sr} != corpus rate {}",
                row.id, meta.sample_rate
            )));
        }
        let frame_labels: Vec<usize> =
            serde_json::from_reader(fs::File::open(dir.join(&row.frame_label_path))?)?;
        utterances.push(Utterance {
            id: row.id,
            samples,
            frame_labels,
            is_positive: row.is_positive,
            provenance: row.provenance,
            split: row.split,
            clean_source_id: row.clean_source_id,
        });
    }
    Ok(Corpus {
        utterances,
        n_classes: meta.n_classes,
        sample_rate: meta.sample_rate,
    })
}
