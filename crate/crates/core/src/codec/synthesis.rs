//! Parametric synthesis of decoded acoustic vectors.
//!
//! Each frame is a harmonic series at the decoded F0 (or shaped noise when
//! unvoiced) whose amplitudes follow the mel-cepstral envelope, scaled to the
//! decoded RMS and overlap-added with the analysis window. Harmonic phases run
//! continuously across frames.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{MelEnvelope, Waveform, F0_MAX_HZ, F0_MIN_HZ};

use super::analysis::{CEPSTRUM_OFFSET, ENERGY_CHANNEL, LOG_F0_CHANNEL};
use super::AnalysisSpec;

/// Decoded log-F0 values below this are treated as unvoiced. Sits halfway
/// between the unvoiced code (0) and the lowest voiced value (`ln 50`).
pub const VOICED_LOG_F0: f64 = 1.956_011_502_714_073_5;

/// Highest harmonic is kept this far below Nyquist.
const NYQUIST_GUARD_HZ: f64 = 100.0;

/// Renders `rows` acoustic vectors (row-major, width `spec.dim()`).
pub(crate) fn synthesize(vectors: &[f64], rows: usize, spec: &AnalysisSpec) -> Waveform {
    let dim = spec.dim();
    let frame_len = spec.frame.frame_len;
    let hop = spec.frame.hop;
    let sr = spec.sample_rate_hz as f64;
    let window = spec.frame.window.coefficients(frame_len);
    let mut out = vec![0.0f64; spec.frame.signal_len(rows)];
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(frame_len);
    let mut spectrum = vec![Complex::default(); frame_len];
    let mut frame = vec![0.0f64; frame_len];
    let mut phase = 0.0f64;
    let envelope = MelEnvelope::new(spec.n_mels, spec.sample_rate_hz);
    let amp = |cep: &[f64], hz: f64| (0.5 * envelope.log_density(cep, hz)).exp();

    for (m, v) in vectors.chunks_exact(dim).take(rows).enumerate() {
        let cep = &v[CEPSTRUM_OFFSET..];
        let log_f0 = v[LOG_F0_CHANNEL] / spec.f0_weight;
        if log_f0 >= VOICED_LOG_F0 {
            let f0 = log_f0.exp().clamp(F0_MIN_HZ, F0_MAX_HZ);
            let n_harm = (((0.5 * sr - NYQUIST_GUARD_HZ) / f0).floor() as usize).max(1);
            let amps: Vec<f64> = (1..=n_harm)
                .map(|k| amp(cep, k as f64 * f0))
                .collect();
            let omega = 2.0 * PI * f0 / sr;
            for (n, x) in frame.iter_mut().enumerate() {
                let theta = phase + omega * n as f64;
                let (s1, c1) = theta.sin_cos();
                let two_c = 2.0 * c1;
                let (mut prev, mut cur) = (0.0, s1);
                let mut acc = 0.0;
                for &a in &amps {
                    acc += a * cur;
                    let next = two_c * cur - prev;
                    prev = cur;
                    cur = next;
                }
                *x = acc;
            }
            phase = (phase + omega * hop as f64).rem_euclid(2.0 * PI);
        } else {
            // noise with random phases, seeded per frame so decoding is
            // deterministic
            let mut rng = ChaCha8Rng::seed_from_u64(0x6e01_5e00 ^ m as u64);
            let half = frame_len / 2;
            for k in 0..=half {
                let mag = amp(cep, k as f64 * sr / frame_len as f64);
                let z = if k == 0 || (frame_len.is_multiple_of(2) && k == half) {
                    Complex::new(mag * if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0)
                } else {
                    Complex::from_polar(mag, rng.gen_range(0.0..2.0 * PI))
                };
                spectrum[k] = z;
                if k != 0 && k != frame_len - k {
                    spectrum[frame_len - k] = z.conj();
                }
            }
            ifft.process(&mut spectrum);
            for (x, s) in frame.iter_mut().zip(&spectrum) {
                *x = s.re;
            }
        }
        let cur_rms = (frame.iter().map(|x| x * x).sum::<f64>() / frame_len as f64).sqrt();
        let target = v[ENERGY_CHANNEL].exp();
        let gain = if cur_rms > 0.0 { target / cur_rms } else { 0.0 };
        let start = m * hop;
        for ((o, &x), &w) in out[start..start + frame_len].iter_mut().zip(&frame).zip(&window) {
            *o += x * gain * w;
        }
    }
    Waveform::new(
        out.iter().map(|&x| x.clamp(-1.0, 1.0) as f32).collect(),
        spec.sample_rate_hz,
    )
}
