//! Detection metrics and temperature-distribution reports.
//!
//! The operating point follows keyword-spotting convention: pick the
//! smallest detection threshold whose false-alarm rate (false alarms per
//! hour of negative audio) stays at or below the target, then report the
//! false-reject ratio of the positives at that threshold.

use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::dataparams::scaled_softmax;
use crate::error::{CoreError, Result};
use crate::features::{stack_context, FrameSpec, MfccExtractor};
use crate::kws::{keyword_score, KeywordHmm, ScoringMode};
use crate::net::AcousticModel;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectionTrial {
    pub utterance_id: u64,
    pub score: f64,
    pub is_positive: bool,
    /// Contributes to false-alarm hours when the trial is negative.
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrrResult {
    pub frr: f64,
    pub threshold: f64,
    /// False alarms per hour actually achieved at the threshold.
    pub fa_per_hour: f64,
    /// Set when no observed score meets the target and the threshold was
    /// pushed above every score (rejecting everything).
    pub unreachable: bool,
}

fn validate_trials(trials: &[DetectionTrial]) -> Result<f64> {
    let n_pos = trials.iter().filter(|t| t.is_positive).count();
    let n_neg = trials.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::InvalidConfig(
            "need at least one positive and one negative trial".into(),
        ));
    }
    if trials
        .iter()
        .any(|t| t.score.is_nan() || t.score == f64::INFINITY)
    {
        return Err(CoreError::NonFinite("trial score".into()));
    }
    if trials
        .iter()
        .any(|t| t.duration_seconds.is_nan() || t.duration_seconds <= 0.0)
    {
        return Err(CoreError::InvalidConfig(
            "trial durations must be positive".into(),
        ));
    }
    let neg_hours: f64 = trials
        .iter()
        .filter(|t| !t.is_positive)
        .map(|t| t.duration_seconds / 3600.0)
        .sum();
    Ok(neg_hours)
}

/// Threshold and FRR at a fixed false-alarm rate.
///
/// The threshold is the smallest observed score whose false-alarm rate
/// (negatives scoring at or above it, per negative hour) does not exceed
/// `fa_per_hour`. Ties between equal scores are handled atomically, toward
/// the stricter threshold. When even the highest observed score alarms too
/// often, everything is rejected: FRR 1 at an infinite threshold, flagged.
pub fn frr_at_fa_rate(trials: &[DetectionTrial], fa_per_hour: f64) -> Result<FrrResult> {
    let neg_hours = validate_trials(trials)?;

    let mut neg_scores: Vec<f64> = trials
        .iter()
        .filter(|t| !t.is_positive)
        .map(|t| t.score)
        .collect();
    neg_scores.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));

    let mut candidates: Vec<f64> = trials.iter().map(|t| t.score).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));
    candidates.dedup();

    let fa_rate_at = |threshold: f64| -> f64 {
        // negatives with score >= threshold
        let below = neg_scores.partition_point(|&s| s < threshold);
        (neg_scores.len() - below) as f64 / neg_hours
    };

    let chosen = candidates
        .iter()
        .copied()
        .find(|&c| fa_rate_at(c) <= fa_per_hour);
    let (threshold, unreachable) = match chosen {
        Some(c) => (c, false),
        None => (f64::INFINITY, true),
    };

    let n_pos = trials.iter().filter(|t| t.is_positive).count();
    let rejected = trials
        .iter()
        .filter(|t| t.is_positive && t.score < threshold)
        .count();
    Ok(FrrResult {
        frr: rejected as f64 / n_pos as f64,
        threshold,
        fa_per_hour: if unreachable {
            0.0
        } else {
            fa_rate_at(threshold)
        },
        unreachable,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DetPoint {
    pub fa_per_hour: f64,
    pub frr: f64,
    pub threshold: f64,
}

/// FRR over a log-spaced sweep of false-alarm targets. Always includes the
/// 10 FA/hr operating point; `frr` is non-increasing in `fa_per_hour`.
pub fn det_curve(trials: &[DetectionTrial], n_points: usize) -> Result<Vec<DetPoint>> {
    let neg_hours = validate_trials(trials)?;
    let n_neg = trials.iter().filter(|t| !t.is_positive).count();
    let lo = (1.0 / neg_hours).min(10.0);
    let hi = (n_neg as f64 / neg_hours).max(10.0);
    let mut targets: Vec<f64> = (0..n_points.max(2))
        .map(|i| {
            let f = i as f64 / (n_points.max(2) - 1) as f64;
            lo * (hi / lo).powf(f)
        })
        .collect();
    targets.push(10.0);
    targets.sort_by(|a, b| a.partial_cmp(b).expect("finite targets"));
    targets.dedup();

    targets
        .into_iter()
        .map(|fa| {
            let r = frr_at_fa_rate(trials, fa)?;
            Ok(DetPoint {
                fa_per_hour: fa,
                frr: r.frr,
                threshold: r.threshold,
            })
        })
        .collect()
}

/// One per-epoch snapshot of the temperature store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaSnapshot {
    pub epoch: usize,
    /// Class sigmas by class index; empty when the family is disabled.
    pub class: Vec<f64>,
    /// `(utterance_id, sigma)` pairs; empty when disabled.
    pub instance: Vec<(u64, f64)>,
}

/// Per-epoch distribution statistics mirroring the training diagnostics:
/// median/std/min/max over class sigmas, and mean/std of instance sigmas
/// split by clean/noisy provenance.
#[derive(Debug, Clone, Serialize)]
pub struct EpochSigmaStats {
    pub epoch: usize,
    pub class_median: Option<f64>,
    pub class_std: Option<f64>,
    pub class_min: Option<f64>,
    pub class_max: Option<f64>,
    pub inst_clean_mean: Option<f64>,
    pub inst_clean_std: Option<f64>,
    pub inst_noisy_mean: Option<f64>,
    pub inst_noisy_std: Option<f64>,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Reduce snapshots to per-epoch statistics. Provenance from the manifest
/// is used only here, to split the instance distribution into its clean
/// and noisy halves.
pub fn sigma_distribution_report(
    snapshots: &[SigmaSnapshot],
    corpus: &Corpus,
) -> Result<Vec<EpochSigmaStats>> {
    let noisy_by_id: HashMap<u64, bool> = corpus
        .utterances
        .iter()
        .map(|u| (u.id, u.provenance.is_noisy()))
        .collect();
    sigma_report_with_provenance(snapshots, &noisy_by_id)
}

/// Like [`sigma_distribution_report`] but fed from manifest rows, so the
/// audio never has to be loaded.
pub fn sigma_report_from_manifest(
    snapshots: &[SigmaSnapshot],
    manifest: &[crate::corpus::ManifestEntry],
) -> Result<Vec<EpochSigmaStats>> {
    let noisy_by_id: HashMap<u64, bool> = manifest
        .iter()
        .map(|e| (e.id, e.provenance.is_noisy()))
        .collect();
    sigma_report_with_provenance(snapshots, &noisy_by_id)
}

fn sigma_report_with_provenance(
    snapshots: &[SigmaSnapshot],
    noisy_by_id: &HashMap<u64, bool>,
) -> Result<Vec<EpochSigmaStats>> {
    if snapshots.is_empty() {
        return Err(CoreError::InvalidConfig("no snapshots".into()));
    }

    snapshots
        .iter()
        .map(|snap| {
            let (class_median, class_std, class_min, class_max) = if snap.class.is_empty() {
                (None, None, None, None)
            } else {
                let mut sorted = snap.class.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sigmas"));
                let (_, std) = mean_std(&sorted).expect("non-empty");
                (
                    Some(median(&sorted)),
                    Some(std),
                    Some(sorted[0]),
                    Some(sorted[sorted.len() - 1]),
                )
            };

            let mut clean = Vec::new();
            let mut noisy = Vec::new();
            for &(id, sigma) in &snap.instance {
                match noisy_by_id.get(&id) {
                    Some(true) => noisy.push(sigma),
                    Some(false) => clean.push(sigma),
                    None => {
                        return Err(CoreError::IdMismatch(format!(
                            "snapshot instance id {id} not in manifest"
                        )))
                    }
                }
            }
            let clean_stats = mean_std(&clean);
            let noisy_stats = mean_std(&noisy);
            Ok(EpochSigmaStats {
                epoch: snap.epoch,
                class_median,
                class_std,
                class_min,
                class_max,
                inst_clean_mean: clean_stats.map(|s| s.0),
                inst_clean_std: clean_stats.map(|s| s.1),
                inst_noisy_mean: noisy_stats.map(|s| s.0),
                inst_noisy_std: noisy_stats.map(|s| s.1),
            })
        })
        .collect()
}

/// Score every eval-split utterance with the inference-mode model (plain
/// softmax posteriors) and the keyword HMM.
pub fn score_eval_split(
    model: &AcousticModel,
    corpus: &Corpus,
    frame_spec: &FrameSpec,
    hmm: &KeywordHmm,
    mode: ScoringMode,
) -> Result<Vec<DetectionTrial>> {
    let extractor = MfccExtractor::new(*frame_spec)?;
    let eval: Vec<_> = corpus.split_utterances(Split::Eval).collect();
    eval.par_iter()
        .map(|u| {
            let mfcc = extractor.mfcc(&u.samples)?;
            let stacked = stack_context(mfcc.view(), frame_spec)?;
            let logits = model.forward_infer(stacked.view())?;
            let mut posteriors = Array2::zeros(logits.raw_dim());
            for (i, row) in logits.rows().into_iter().enumerate() {
                let p = scaled_softmax(row.as_slice().expect("contiguous"), 1.0)?;
                for (j, &v) in p.iter().enumerate() {
                    posteriors[[i, j]] = v;
                }
            }
            Ok(DetectionTrial {
                utterance_id: u.id,
                score: keyword_score(posteriors.view(), hmm, mode),
                is_positive: u.is_positive,
                duration_seconds: u.duration_seconds(corpus.sample_rate),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn trial(score: f64, is_positive: bool) -> DetectionTrial {
        DetectionTrial {
            utterance_id: 0,
            score,
            is_positive,
            duration_seconds: 60.0,
        }
    }

    /// Brute-force oracle: try every distinct score ascending, take the
    /// first whose false-alarm rate meets the target.
    fn brute_force_frr(trials: &[DetectionTrial], fa_per_hour: f64) -> (f64, f64, bool) {
        let neg_hours: f64 = trials
            .iter()
            .filter(|t| !t.is_positive)
            .map(|t| t.duration_seconds / 3600.0)
            .sum();
        let mut scores: Vec<f64> = trials.iter().map(|t| t.score).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        scores.dedup();
        for &theta in &scores {
            let fa = trials
                .iter()
                .filter(|t| !t.is_positive && t.score >= theta)
                .count();
            if fa as f64 / neg_hours <= fa_per_hour {
                let n_pos = trials.iter().filter(|t| t.is_positive).count();
                let rej = trials
                    .iter()
                    .filter(|t| t.is_positive && t.score < theta)
                    .count();
                return (rej as f64 / n_pos as f64, theta, false);
            }
        }
        (1.0, f64::INFINITY, true)
    }

    fn random_trials(n: usize, seed: u64) -> Vec<DetectionTrial> {
        let mut rng = crate::rng::substream(seed, "eval-test");
        (0..n)
            .map(|i| DetectionTrial {
                utterance_id: i as u64,
                // coarse grid so score ties actually occur
                score: (rng.random_range(-20..20) as f64) * 0.5,
                is_positive: rng.random_range(0..2) == 1,
                duration_seconds: rng.random_range(1.0..30.0),
            })
            .collect()
    }

    #[test]
    fn separable_scores_have_zero_frr() {
        let mut trials = Vec::new();
        for i in 0..50 {
            trials.push(trial(10.0 + i as f64, true));
            trials.push(trial(-10.0 - i as f64, false));
        }
        let r = frr_at_fa_rate(&trials, 10.0).unwrap();
        assert_eq!(r.frr, 0.0);
        assert!(!r.unreachable);
    }

    #[test]
    fn degenerate_equal_scores_reject_everything() {
        // 100 negatives of one minute each: even one alarm is 60/hr > 10/hr
        let mut trials: Vec<DetectionTrial> = (0..100).map(|_| trial(1.0, false)).collect();
        trials.push(trial(1.0, true));
        let r = frr_at_fa_rate(&trials, 10.0).unwrap();
        assert!(r.unreachable);
        assert_eq!(r.frr, 1.0);
        assert_eq!(r.threshold, f64::INFINITY);
    }

    #[test]
    fn matches_brute_force_sweep() {
        let mut checked = 0;
        for seed in 0..20 {
            let trials = random_trials(200, seed);
            if trials.iter().filter(|t| t.is_positive).count() == 0
                || trials.iter().filter(|t| !t.is_positive).count() == 0
            {
                continue;
            }
            for fa in [0.5, 2.0, 10.0, 100.0, 1e6] {
                let fast = frr_at_fa_rate(&trials, fa).unwrap();
                let (frr, theta, unreachable) = brute_force_frr(&trials, fa);
                assert_eq!(fast.frr, frr, "seed {seed} fa {fa}");
                assert_eq!(fast.threshold, theta);
                assert_eq!(fast.unreachable, unreachable);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn frr_is_monotone_in_fa_target() {
        let trials = random_trials(300, 42);
        let mut prev = f64::INFINITY;
        for fa in [0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 500.0] {
            let r = frr_at_fa_rate(&trials, fa).unwrap();
            assert!(
                r.frr <= prev,
                "frr rose from {prev} to {} at fa {fa}",
                r.frr
            );
            prev = r.frr;
        }
    }

    #[test]
    fn negatives_below_threshold_do_not_matter() {
        let mut trials = random_trials(100, 7);
        let r = frr_at_fa_rate(&trials, 10.0).unwrap();
        assert!(!r.unreachable);
        trials.push(DetectionTrial {
            utterance_id: 999,
            score: r.threshold - 1.0,
            is_positive: false,
            duration_seconds: 1e-6, // negligible hours
        });
        let r2 = frr_at_fa_rate(&trials, 10.0).unwrap();
        assert_eq!(r.threshold, r2.threshold);
        assert_eq!(r.frr, r2.frr);
    }

    #[test]
    fn det_curve_includes_operating_point_and_is_monotone() {
        let trials = random_trials(400, 13);
        let curve = det_curve(&trials, 16).unwrap();
        assert!(curve.iter().any(|p| p.fa_per_hour == 10.0));
        let at_10 = curve.iter().find(|p| p.fa_per_hour == 10.0).unwrap();
        let direct = frr_at_fa_rate(&trials, 10.0).unwrap();
        assert_eq!(at_10.frr, direct.frr);
        for w in curve.windows(2) {
            assert!(w[1].frr <= w[0].frr);
        }
    }

    #[test]
    fn rejects_invalid_trial_sets() {
        assert!(frr_at_fa_rate(&[trial(1.0, true)], 10.0).is_err());
        assert!(frr_at_fa_rate(&[trial(1.0, false)], 10.0).is_err());
        let bad = vec![trial(f64::NAN, true), trial(0.0, false)];
        assert!(frr_at_fa_rate(&bad, 10.0).is_err());
    }

    fn tone_corpus() -> Corpus {
        let fs = FrameSpec::default();
        crate::corpus::two_class_corpus(5, 4, 0.0, &fs).unwrap().0
    }

    #[test]
    fn report_startup_snapshot_has_zero_width_bands() {
        let corpus = tone_corpus();
        let ids: Vec<u64> = corpus.utterances.iter().map(|u| u.id).collect();
        let snap = SigmaSnapshot {
            epoch: 0,
            class: vec![1.0; 5],
            instance: ids.iter().map(|&id| (id, 0.01)).collect(),
        };
        let stats = sigma_distribution_report(&[snap], &corpus).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].class_median, Some(1.0));
        assert_eq!(stats[0].class_std, Some(0.0));
        assert_eq!(stats[0].class_min, Some(1.0));
        assert_eq!(stats[0].class_max, Some(1.0));
        assert_eq!(stats[0].inst_clean_mean, Some(0.01));
        assert_eq!(stats[0].inst_clean_std, Some(0.0));
        // all-clean corpus: noisy columns empty, report still valid
        assert_eq!(stats[0].inst_noisy_mean, None);
    }

    #[test]
    fn report_matches_hand_computation_and_is_permutation_invariant() {
        let corpus = tone_corpus();
        let ids: Vec<u64> = corpus.utterances.iter().map(|u| u.id).collect();
        let sigmas = [0.5, 1.5, 2.0, 4.0];
        let mut pairs: Vec<(u64, f64)> = ids
            .iter()
            .take(4)
            .zip(sigmas)
            .map(|(&id, s)| (id, s))
            .collect();
        let snap = SigmaSnapshot {
            epoch: 3,
            class: vec![0.2, 0.4, 0.9],
            instance: pairs.clone(),
        };
        let stats = sigma_distribution_report(&[snap], &corpus).unwrap();
        assert_eq!(stats[0].class_median, Some(0.4));
        // hand: mean 2.0, var (2.25 + 0.25 + 0 + 4)/4 = 1.625
        assert!((stats[0].inst_clean_mean.unwrap() - 2.0).abs() < 1e-12);
        assert!((stats[0].inst_clean_std.unwrap() - 1.625f64.sqrt()).abs() < 1e-12);

        pairs.reverse();
        let snap2 = SigmaSnapshot {
            epoch: 3,
            class: vec![0.9, 0.2, 0.4],
            instance: pairs,
        };
        let stats2 = sigma_distribution_report(&[snap2], &corpus).unwrap();
        assert_eq!(stats[0].class_median, stats2[0].class_median);
        assert_eq!(stats[0].inst_clean_mean, stats2[0].inst_clean_mean);
        assert_eq!(stats[0].inst_clean_std, stats2[0].inst_clean_std);
    }

    #[test]
    fn report_rejects_unknown_instance_id() {
        let corpus = tone_corpus();
        let snap = SigmaSnapshot {
            epoch: 0,
            class: vec![],
            instance: vec![(99_999, 1.0)],
        };
        assert!(matches!(
            sigma_distribution_report(&[snap], &corpus),
            Err(CoreError::IdMismatch(_))
        ));
    }
}
