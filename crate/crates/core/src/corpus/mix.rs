//! Reverberate-then-add noise mixing at an exact target SNR.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{CoreError, Result};

/// Linear convolution via FFT, full output length `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Synthetic room impulse response: a unit direct path followed by an
/// exponentially decaying noise tail. `decay_s` is the time for the
/// envelope to fall by 60 dB; the tail is truncated there.
pub fn synth_rir<R: Rng>(rng: &mut R, decay_s: f64, sample_rate: u32) -> Vec<f64> {
    let len = ((decay_s * sample_rate as f64) as usize).max(2);
    let tau = decay_s * sample_rate as f64 / 1000f64.ln();
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rir = Vec::with_capacity(len);
    rir.push(1.0);
    for n in 1..len {
        let envelope = (-(n as f64) / tau).exp();
        rir.push(0.3 * envelope * normal.sample(rng));
    }
    rir
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * v).sum::<f64>() / x.len() as f64
}

/// `10 log10(P_signal / P_noise)` over the full extent of both slices.
pub fn measure_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_power(signal) / mean_power(noise)).log10()
}

/// Output of [`mix_at_snr`]. The stored components already include the peak
/// normalization gain, so the SNR can be re-measured from them directly.
#[derive(Debug, Clone)]
pub struct MixResult {
    /// Clean plus scaled reverberated noise, peak-normalized if needed.
    pub noisy: Vec<f32>,
    /// Clean component after peak normalization.
    pub clean_component: Vec<f64>,
    /// Scaled reverberated noise component after peak normalization.
    pub noise_component: Vec<f64>,
    /// Gain applied to the reverberated noise to hit the target SNR.
    pub noise_gain: f64,
    /// 1.0 unless the mix would have exceeded |1|.
    pub peak_gain: f64,
}

/// Convolve the noise with the impulse response, scale it so that
/// `10 log10(P_clean / P_noise) = target_snr_db` over the utterance
/// extent, and add it to the clean signal. Noise shorter than the clean
/// signal is looped starting at `loop_offset`; the result is peak
/// normalized only if a sample would exceed |1|.
pub fn mix_at_snr(
    clean: &[f32],
    noise: &[f32],
    rir: &[f64],
    target_snr_db: f64,
    loop_offset: usize,
) -> Result<MixResult> {
    if clean.is_empty() {
        return Err(CoreError::ZeroPower("clean"));
    }
    if noise.is_empty() {
        return Err(CoreError::ZeroPower("noise"));
    }
    if !target_snr_db.is_finite() {
        return Err(CoreError::NonFinite("target SNR".into()));
    }

    let clean_f64: Vec<f64> = clean.iter().map(|&v| v as f64).collect();
    let looped: Vec<f64> = (0..clean.len())
        .map(|i| noise[(loop_offset + i) % noise.len()] as f64)
        .collect();
    let reverberated: Vec<f64> = if rir.is_empty() {
        looped
    } else {
        fft_convolve(&looped, rir)[..clean.len()].to_vec()
    };

    let p_clean = mean_power(&clean_f64);
    let p_noise = mean_power(&reverberated);
    if p_clean == 0.0 {
        return Err(CoreError::ZeroPower("clean"));
    }
    if p_noise == 0.0 {
        return Err(CoreError::ZeroPower("noise"));
    }

    let noise_gain = (p_clean / (p_noise * 10f64.powf(target_snr_db / 10.0))).sqrt();
    let mut noise_component: Vec<f64> = reverberated.iter().map(|&v| v * noise_gain).collect();
    let mut clean_component = clean_f64;
    let mut mix: Vec<f64> = clean_component
        .iter()
        .zip(&noise_component)
        .map(|(&c, &n)| c + n)
        .collect();

    let peak = mix.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let peak_gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if peak_gain != 1.0 {
        for v in &mut mix {
            *v *= peak_gain;
        }
        for v in &mut clean_component {
            *v *= peak_gain;
        }
        for v in &mut noise_component {
            *v *= peak_gain;
        }
    }

    Ok(MixResult {
        noisy: mix.iter().map(|&v| v as f32).collect(),
        clean_component,
        noise_component,
        noise_gain,
        peak_gain,
    })
}
