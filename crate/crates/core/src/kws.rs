//! DNN-HMM keyword scoring.
//!
//! A strictly left-to-right HMM over the keyword phone states accumulates
//! frame posteriors into a detection score: the log-domain forward
//! likelihood of the best-endpoint keyword path, length-normalized, minus
//! the same-window background likelihood (mean log of the averaged
//! silence/other-speech posteriors). The score of an utterance is the
//! maximum over sliding windows. Higher means more keyword-like.

use ndarray::ArrayView2;

use crate::corpus::TargetInventory;
use crate::error::{CoreError, Result};

/// Floor applied to posteriors before taking logs, so degenerate one-hot
/// inputs stay finite.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

/// Sum over paths (forward) or best path (Viterbi).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    Forward,
    Viterbi,
}

#[derive(Debug, Clone)]
pub struct KeywordHmm {
    /// Class emitted by each state, in path order.
    pub state_classes: Vec<usize>,
    pub log_self: Vec<f64>,
    pub log_next: Vec<f64>,
    /// Classes pooled into the background term.
    pub background_classes: Vec<usize>,
    /// Longest window considered when sliding over an utterance.
    pub max_window: usize,
}

impl KeywordHmm {
    pub fn n_states(&self) -> usize {
        self.state_classes.len()
    }

    /// Build from explicit self-loop probabilities.
    pub fn from_self_loops(
        state_classes: Vec<usize>,
        self_loops: &[f64],
        background_classes: Vec<usize>,
    ) -> Result<Self> {
        if state_classes.len() != self_loops.len() || state_classes.is_empty() {
            return Err(CoreError::InvalidConfig(
                "state/self-loop length mismatch".into(),
            ));
        }
        if self_loops.iter().any(|&p| !(0.0..1.0).contains(&p)) {
            return Err(CoreError::InvalidConfig(
                "self-loops must be in [0, 1)".into(),
            ));
        }
        let max_window = default_max_window(self_loops);
        Ok(Self {
            log_self: self_loops.iter().map(|&p| p.ln()).collect(),
            log_next: self_loops.iter().map(|&p| (1.0 - p).ln()).collect(),
            state_classes,
            background_classes,
            max_window,
        })
    }
}

/// Three times the expected path duration, at least the state count.
fn default_max_window(self_loops: &[f64]) -> usize {
    let expected: f64 = self_loops.iter().map(|&p| 1.0 / (1.0 - p)).sum();
    ((3.0 * expected).ceil() as usize).max(self_loops.len())
}

/// Estimate self-loop probabilities from training frame labels by counting
/// consecutive-frame pairs, with add-one smoothing on the stay/exit counts.
/// Every keyword state must be observed at least once.
pub fn estimate_transitions<'a, I>(label_seqs: I, inventory: &TargetInventory) -> Result<KeywordHmm>
where
    I: IntoIterator<Item = &'a [usize]>,
{
    let n_states = inventory.n_keyword_states();
    let mut occupancy = vec![0u64; n_states];
    let mut stays = vec![0u64; n_states];
    let mut pairs = vec![0u64; n_states];
    for labels in label_seqs {
        for (i, &l) in labels.iter().enumerate() {
            if l < n_states {
                occupancy[l] += 1;
                if let Some(&next) = labels.get(i + 1) {
                    pairs[l] += 1;
                    if next == l {
                        stays[l] += 1;
                    }
                }
            }
        }
    }
    let missing: Vec<usize> = (0..n_states).filter(|&s| occupancy[s] == 0).collect();
    if !missing.is_empty() {
        return Err(CoreError::MissingStates(missing));
    }
    let self_loops: Vec<f64> = (0..n_states)
        .map(|s| (stays[s] + 1) as f64 / (pairs[s] + 2) as f64)
        .collect();
    KeywordHmm::from_self_loops(
        inventory.keyword_state_sequence(),
        &self_loops,
        vec![inventory.silence_class(), inventory.other_speech_class()],
    )
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn emission(posteriors: &ArrayView2<f64>, t: usize, class: usize) -> f64 {
    posteriors[[t, class]].max(POSTERIOR_FLOOR).ln()
}

/// Log likelihood of one fixed window: enter state 0 at the first frame,
/// end in the last state at the last frame. Forward sums over all
/// left-to-right paths; Viterbi keeps the best.
pub fn window_log_likelihood(
    posteriors: ArrayView2<f64>,
    hmm: &KeywordHmm,
    mode: ScoringMode,
) -> f64 {
    let t_len = posteriors.nrows();
    let s_len = hmm.n_states();
    if t_len < s_len {
        return f64::NEG_INFINITY;
    }
    let combine = |a: f64, b: f64| match mode {
        ScoringMode::Forward => log_sum_exp(a, b),
        ScoringMode::Viterbi => a.max(b),
    };
    let mut alpha = vec![f64::NEG_INFINITY; s_len];
    alpha[0] = emission(&posteriors, 0, hmm.state_classes[0]);
    for t in 1..t_len {
        for s in (0..s_len).rev() {
            let stay = alpha[s] + hmm.log_self[s];
            let advance = if s > 0 {
                alpha[s - 1] + hmm.log_next[s - 1]
            } else {
                f64::NEG_INFINITY
            };
            let best = combine(stay, advance);
            alpha[s] = if best == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                best + emission(&posteriors, t, hmm.state_classes[s])
            };
        }
    }
    alpha[s_len - 1]
}

/// Maximum windowed score over the utterance: for every window start, a
/// single forward sweep scores all admissible endpoints. Returns the
/// negative-infinity sentinel when the utterance is shorter than the
/// minimum keyword path.
pub fn keyword_score(posteriors: ArrayView2<f64>, hmm: &KeywordHmm, mode: ScoringMode) -> f64 {
    let t_len = posteriors.nrows();
    let s_len = hmm.n_states();
    if t_len < s_len {
        return f64::NEG_INFINITY;
    }
    let combine = |a: f64, b: f64| match mode {
        ScoringMode::Forward => log_sum_exp(a, b),
        ScoringMode::Viterbi => a.max(b),
    };

    // per-frame background log likelihood: mean of the pooled classes
    let bg: Vec<f64> = (0..t_len)
        .map(|t| {
            let mean = hmm
                .background_classes
                .iter()
                .map(|&c| posteriors[[t, c]])
                .sum::<f64>()
                / hmm.background_classes.len() as f64;
            mean.max(POSTERIOR_FLOOR).ln()
        })
        .collect();

    let mut best = f64::NEG_INFINITY;
    for start in 0..=(t_len - s_len) {
        let end_cap = (start + hmm.max_window).min(t_len);
        let mut alpha = vec![f64::NEG_INFINITY; s_len];
        alpha[0] = emission(&posteriors, start, hmm.state_classes[0]);
        let mut bg_sum = bg[start];
        #[allow(clippy::needless_range_loop)] // t also indexes the posteriors
        for t in start + 1..end_cap {
            for s in (0..s_len).rev() {
                let stay = alpha[s] + hmm.log_self[s];
                let advance = if s > 0 {
                    alpha[s - 1] + hmm.log_next[s - 1]
                } else {
                    f64::NEG_INFINITY
                };
                let b = combine(stay, advance);
                alpha[s] = if b == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    b + emission(&posteriors, t, hmm.state_classes[s])
                };
            }
            bg_sum += bg[t];
            let window_len = (t - start + 1) as f64;
            if t - start + 1 >= s_len {
                let score = (alpha[s_len - 1] - bg_sum) / window_len;
                if score > best {
                    best = score;
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn toy_hmm() -> KeywordHmm {
        KeywordHmm::from_self_loops(vec![0, 1, 2], &[0.4, 0.5, 0.3], vec![3, 4]).unwrap()
    }

    /// Brute-force path enumeration for the toy HMM.
    fn brute_force_loglik(posteriors: &Array2<f64>, hmm: &KeywordHmm, viterbi: bool) -> f64 {
        let t_len = posteriors.nrows();
        let s_len = hmm.n_states();
        // enumerate all monotone state sequences from state 0 to the last
        let mut total = f64::NEG_INFINITY;
        let mut stack: Vec<(usize, usize, f64)> = Vec::new(); // (t, state, logp)
        stack.push((0, 0, emission(&posteriors.view(), 0, hmm.state_classes[0])));
        while let Some((t, s, logp)) = stack.pop() {
            if t == t_len - 1 {
                if s == s_len - 1 {
                    total = if viterbi {
                        total.max(logp)
                    } else {
                        log_sum_exp(total, logp)
                    };
                }
                continue;
            }
            // stay
            stack.push((
                t + 1,
                s,
                logp + hmm.log_self[s] + emission(&posteriors.view(), t + 1, hmm.state_classes[s]),
            ));
            // advance
            if s + 1 < s_len {
                stack.push((
                    t + 1,
                    s + 1,
                    logp + hmm.log_next[s]
                        + emission(&posteriors.view(), t + 1, hmm.state_classes[s + 1]),
                ));
            }
        }
        total
    }

    fn random_posteriors(t: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::substream(seed, "kws-test");
        let mut p = Array2::from_shape_fn((t, k), |_| rng.random_range(0.01..1.0));
        for mut row in p.rows_mut() {
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        p
    }

    #[test]
    fn transition_probabilities_sum_to_one() {
        let hmm = toy_hmm();
        for s in 0..hmm.n_states() {
            let total = hmm.log_self[s].exp() + hmm.log_next[s].exp();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_matches_brute_force_enumeration() {
        let hmm = toy_hmm();
        for t in 3..=6 {
            for seed in 0..5 {
                let p = random_posteriors(t, 5, seed * 100 + t as u64);
                let fast = window_log_likelihood(p.view(), &hmm, ScoringMode::Forward);
                let slow = brute_force_loglik(&p, &hmm, false);
                assert!(
                    (fast - slow).abs() < 1e-9,
                    "t={t} seed={seed}: {fast} vs {slow}"
                );
                let fast_v = window_log_likelihood(p.view(), &hmm, ScoringMode::Viterbi);
                let slow_v = brute_force_loglik(&p, &hmm, true);
                assert!((fast_v - slow_v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn short_sequence_is_neg_infinity() {
        let hmm = toy_hmm();
        let p = random_posteriors(2, 5, 7);
        assert_eq!(
            window_log_likelihood(p.view(), &hmm, ScoringMode::Forward),
            f64::NEG_INFINITY
        );
        assert_eq!(
            keyword_score(p.view(), &hmm, ScoringMode::Forward),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn estimate_transitions_counts_runs() {
        let inventory = TargetInventory {
            keyword_phones: 1,
            states_per_phone: 2,
        };
        // state 0 in runs of 4, state 1 in runs of 2
        let seq: Vec<usize> = vec![0, 0, 0, 0, 1, 1, 2, 0, 0, 0, 0, 1, 1, 2];
        let hmm = estimate_transitions([seq.as_slice()], &inventory).unwrap();
        // state 0: 6 stays, 2 exits -> (6+1)/(8+2)
        assert!((hmm.log_self[0].exp() - 7.0 / 10.0).abs() < 1e-12);
        // state 1: 2 stays, 2 exits -> (2+1)/(4+2)
        assert!((hmm.log_self[1].exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_frame_states_have_near_zero_self_loop() {
        let inventory = TargetInventory {
            keyword_phones: 1,
            states_per_phone: 2,
        };
        let mut seqs = Vec::new();
        for _ in 0..50 {
            seqs.push(vec![0, 1, 2]);
        }
        let hmm = estimate_transitions(seqs.iter().map(|s| s.as_slice()), &inventory).unwrap();
        assert!(hmm.log_self[0].exp() < 0.03);
        assert!(hmm.log_self[1].exp() < 0.03);
    }

    #[test]
    fn estimate_transitions_reports_missing_states() {
        let inventory = TargetInventory {
            keyword_phones: 2,
            states_per_phone: 2,
        };
        let seq: Vec<usize> = vec![0, 1, 1];
        match estimate_transitions([seq.as_slice()], &inventory) {
            Err(CoreError::MissingStates(missing)) => assert_eq!(missing, vec![2, 3]),
            other => panic!("expected missing states, got {other:?}"),
        }
        let empty: Vec<usize> = vec![];
        assert!(estimate_transitions([empty.as_slice()], &inventory).is_err());
    }

    #[test]
    fn perfect_path_beats_uniform() {
        let hmm = toy_hmm();
        let k = 5;
        // one-hot along a valid path: 2 frames per state
        let path = [0, 0, 1, 1, 2, 2];
        let mut onehot = Array2::from_elem((path.len(), k), 0.0);
        for (t, &s) in path.iter().enumerate() {
            onehot[[t, hmm.state_classes[s]]] = 1.0;
        }
        let uniform = Array2::from_elem((path.len(), k), 1.0 / k as f64);
        let s_onehot = keyword_score(onehot.view(), &hmm, ScoringMode::Forward);
        let s_uniform = keyword_score(uniform.view(), &hmm, ScoringMode::Forward);
        assert!(s_onehot > s_uniform, "{s_onehot} vs {s_uniform}");
    }

    #[test]
    fn uniform_posteriors_score_near_zero() {
        let hmm = toy_hmm();
        let uniform = Array2::from_elem((60, 5), 0.2);
        let score = keyword_score(uniform.view(), &hmm, ScoringMode::Forward);
        // keyword and background log(1/K) cancel; the residual is the
        // per-frame share of the (sub-unit) path mass
        assert!(score <= 1e-12, "score {score}");
        assert!(score > -0.5, "score {score}");
    }

    #[test]
    fn score_invariant_to_per_frame_rescaling() {
        let hmm = toy_hmm();
        let p = random_posteriors(40, 5, 99);
        let mut rng = crate::rng::substream(100, "kws-rescale");
        let mut scaled = p.clone();
        for mut row in scaled.rows_mut() {
            let c: f64 = rng.random_range(0.2..5.0);
            row.mapv_inplace(|v| v * c);
        }
        let a = keyword_score(p.view(), &hmm, ScoringMode::Forward);
        let b = keyword_score(scaled.view(), &hmm, ScoringMode::Forward);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn raising_correct_state_posterior_never_lowers_score() {
        let hmm = toy_hmm();
        // alignment: 3 frames per state
        let alignment = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        let base = random_posteriors(alignment.len(), 5, 1234);
        let base_score = keyword_score(base.view(), &hmm, ScoringMode::Forward);
        for (t, &s) in alignment.iter().enumerate() {
            let class = hmm.state_classes[s];
            let mut boosted = base.clone();
            let p_old = boosted[[t, class]];
            let delta = 0.5 * (1.0 - p_old);
            let kappa = (1.0 - p_old - delta) / (1.0 - p_old);
            for c in 0..5 {
                if c == class {
                    boosted[[t, c]] = p_old + delta;
                } else {
                    boosted[[t, c]] *= kappa;
                }
            }
            let boosted_score = keyword_score(boosted.view(), &hmm, ScoringMode::Forward);
            assert!(
                boosted_score >= base_score - 1e-12,
                "frame {t}: {boosted_score} < {base_score}"
            );
        }
    }

    #[test]
    fn long_sequences_stay_finite() {
        let hmm = toy_hmm();
        let p = Array2::from_elem((100_000, 5), 0.2);
        let ll = window_log_likelihood(p.view(), &hmm, ScoringMode::Forward);
        assert!(ll.is_finite());
        assert!(ll < 0.0);
    }
}
