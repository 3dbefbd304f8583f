//! Pitch-adaptive mel-cepstral spectral envelope.
//!
//! Per frame: power spectrum, averaged over a band of `smoothing · F0` Hz so
//! the harmonic comb blurs into an envelope, log mel energies, then DCT-II
//! coefficients `1..=n_cepstra`. [`MelEnvelope`] evaluates the inverse
//! transform at arbitrary frequencies for synthesis.

use std::f64::consts::PI;

use super::features::{hz_to_mel, PowerSpectrum};
use super::pitch::PitchTracker;
use super::{FrameSpec, MelFilterbank, ENERGY_FLOOR};

/// F0 assumed when sizing the smoothing band of unvoiced frames.
const UNVOICED_SMOOTHING_F0_HZ: f64 = 150.0;

pub(crate) struct EnvelopeAnalyzer {
    n_mels: usize,
    n_cepstra: usize,
    smoothing: f64,
    bin_hz: f64,
    fb: MelFilterbank,
    spectrum: PowerSpectrum,
    tracker: PitchTracker,
    dct: Vec<f64>,
    power: Vec<f64>,
    prefix: Vec<f64>,
    smoothed: Vec<f64>,
    mel: Vec<f64>,
}

impl EnvelopeAnalyzer {
    pub(crate) fn new(
        frame: &FrameSpec,
        n_mels: usize,
        n_cepstra: usize,
        smoothing: f64,
        sample_rate_hz: u32,
    ) -> Self {
        let n_fft = frame.frame_len.next_power_of_two();
        let bins = n_fft / 2 + 1;
        let dct = (1..=n_cepstra)
            .flat_map(|k| {
                (0..n_mels).map(move |j| {
                    (PI * k as f64 * (j as f64 + 0.5) / n_mels as f64).cos() * 2.0 / n_mels as f64
                })
            })
            .collect();
        Self {
            n_mels,
            n_cepstra,
            smoothing,
            bin_hz: sample_rate_hz as f64 / n_fft as f64,
            fb: MelFilterbank::new(n_mels, n_fft, sample_rate_hz),
            spectrum: PowerSpectrum::new(frame, n_fft),
            tracker: PitchTracker::new(frame.frame_len, sample_rate_hz),
            dct,
            power: vec![0.0; bins],
            prefix: vec![0.0; bins + 1],
            smoothed: vec![0.0; bins],
            mel: vec![0.0; n_mels],
        }
    }

    /// Writes `n_cepstra` coefficients into `out` and returns the frame's F0.
    pub(crate) fn analyze(&mut self, frame: &[f32], out: &mut [f64]) -> Option<f64> {
        self.spectrum.compute(frame, &mut self.power);
        let f0 = self.tracker.frame_f0(frame);
        let width = f0.unwrap_or(UNVOICED_SMOOTHING_F0_HZ) * self.smoothing;
        let half = (0.5 * width / self.bin_hz).round() as usize;
        let bins = self.power.len();
        for (k, &p) in self.power.iter().enumerate() {
            self.prefix[k + 1] = self.prefix[k] + p;
        }
        for (k, s) in self.smoothed.iter_mut().enumerate() {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(bins - 1);
            *s = (self.prefix[hi + 1] - self.prefix[lo]) / (hi + 1 - lo) as f64;
        }
        self.fb.apply(&self.smoothed, &mut self.mel);
        for e in self.mel.iter_mut() {
            *e = e.max(ENERGY_FLOOR).ln();
        }
        for (c, basis) in out[..self.n_cepstra].iter_mut().zip(self.dct.chunks_exact(self.n_mels)) {
            *c = basis.iter().zip(&self.mel).map(|(b, m)| b * m).sum();
        }
        f0
    }
}

/// Inverse of [`EnvelopeAnalyzer`]: log power density at a frequency, up to
/// an additive constant.
pub(crate) struct MelEnvelope {
    n_mels: usize,
    mel_step: f64,
}

impl MelEnvelope {
    pub(crate) fn new(n_mels: usize, sample_rate_hz: u32) -> Self {
        Self {
            n_mels,
            mel_step: hz_to_mel(sample_rate_hz as f64 / 2.0) / (n_mels + 1) as f64,
        }
    }

    /// Band energies grow with band width (∝ 700 + f), which is divided out
    /// to give a density.
    pub(crate) fn log_density(&self, cepstra: &[f64], hz: f64) -> f64 {
        let x = hz_to_mel(hz) / self.mel_step - 1.0;
        let m = self.n_mels as f64;
        let band: f64 = cepstra
            .iter()
            .enumerate()
            .map(|(i, &c)| c * (PI * (i + 1) as f64 * (x + 0.5) / m).cos())
            .sum();
        band - (700.0 + hz).ln()
    }
}
