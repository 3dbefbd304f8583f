//! Frame-wise F0 estimation by normalized autocorrelation.
//!
//! For a frame `x` of length `N` the normalized autocorrelation at lag `τ` is
//! `Σ x[n]x[n+τ] / sqrt(Σ x[n]² · Σ x[n+τ]²)` with both sums over the
//! `N - τ` overlapping samples. The numerator comes from one FFT; the energy
//! terms come from prefix sums.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{rms, FrameSpec, Waveform};
use crate::error::Result;

pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 500.0;
/// Minimum autocorrelation peak for a frame to count as voiced.
pub const VOICING_THRESHOLD: f64 = 0.5;
pub const VOICING_RMS_GATE: f64 = 1e-4;
/// Earliest local maximum within this fraction of the best peak wins, which
/// suppresses sub-octave picks.
const OCTAVE_TOLERANCE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct F0Curve {
    /// `Some(hz)` for voiced frames, `None` for unvoiced.
    pub f0_hz: Vec<Option<f64>>,
    pub frame_spec: FrameSpec,
}

impl F0Curve {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0_hz.iter().flatten().copied()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced().count()
    }

    pub fn median_voiced(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.voiced().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        })
    }
}

pub fn estimate_f0(waveform: &Waveform, spec: &FrameSpec) -> Result<F0Curve> {
    spec.validate()?;
    spec.num_frames(waveform.len())?;
    let mut tracker = PitchTracker::new(spec.frame_len, waveform.sample_rate_hz);
    let f0_hz = spec
        .frames(&waveform.samples)
        .map(|frame| tracker.frame_f0(frame))
        .collect();
    Ok(F0Curve {
        f0_hz,
        frame_spec: *spec,
    })
}

/// Reusable per-frame estimator; holds FFT plans and scratch buffers.
pub(crate) struct PitchTracker {
    frame_len: usize,
    sample_rate: f64,
    min_lag: usize,
    max_lag: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    centered: Vec<f64>,
    prefix: Vec<f64>,
}

impl PitchTracker {
    pub(crate) fn new(frame_len: usize, sample_rate_hz: u32) -> Self {
        let sr = sample_rate_hz as f64;
        let min_lag = (sr / F0_MAX_HZ).ceil().max(2.0) as usize;
        let max_lag = ((sr / F0_MIN_HZ).floor() as usize).min(frame_len.saturating_sub(2));
        let n_fft = (2 * frame_len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_fft);
        let ifft = planner.plan_fft_inverse(n_fft);
        let scratch_len = fft
            .get_inplace_scratch_len()
            .max(ifft.get_inplace_scratch_len());
        Self {
            frame_len,
            sample_rate: sr,
            min_lag,
            max_lag,
            fft,
            ifft,
            buf: vec![Complex::default(); n_fft],
            scratch: vec![Complex::default(); scratch_len],
            centered: vec![0.0; frame_len],
            prefix: vec![0.0; frame_len + 1],
        }
    }

    pub(crate) fn frame_f0(&mut self, frame: &[f32]) -> Option<f64> {
        debug_assert_eq!(frame.len(), self.frame_len);
        if rms(frame) < VOICING_RMS_GATE || self.min_lag >= self.max_lag {
            return None;
        }
        let r = self.normalized_autocorrelation(frame);
        pick_period(&r, self.min_lag, self.max_lag).map(|lag| {
            (self.sample_rate / lag).clamp(F0_MIN_HZ, F0_MAX_HZ)
        })
    }

    /// Normalized autocorrelation for lags `0..=max_lag + 1`.
    fn normalized_autocorrelation(&mut self, frame: &[f32]) -> Vec<f64> {
        let n = frame.len();
        let mean = frame.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        for (c, &x) in self.centered.iter_mut().zip(frame) {
            *c = x as f64 - mean;
        }
        self.prefix[0] = 0.0;
        for i in 0..n {
            self.prefix[i + 1] = self.prefix[i] + self.centered[i] * self.centered[i];
        }
        for (b, &c) in self.buf.iter_mut().zip(self.centered.iter()) {
            *b = Complex::new(c, 0.0);
        }
        for b in self.buf[n..].iter_mut() {
            *b = Complex::default();
        }
        self.fft
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for b in self.buf.iter_mut() {
            *b = Complex::new(b.norm_sqr(), 0.0);
        }
        self.ifft
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / self.buf.len() as f64;
        let top = (self.max_lag + 1).min(n - 1);
        (0..=top)
            .map(|lag| {
                let head = self.prefix[n - lag];
                let tail = self.prefix[n] - self.prefix[lag];
                let denom = (head * tail).sqrt();
                if denom <= 1e-20 {
                    0.0
                } else {
                    self.buf[lag].re * scale / denom
                }
            })
            .collect()
    }
}

/// Chooses a (fractional) period from an autocorrelation sequence, or `None`
/// when the frame is unvoiced. `r` must cover lags `0..=max_lag + 1`.
pub(crate) fn pick_period(r: &[f64], min_lag: usize, max_lag: usize) -> Option<f64> {
    let hi = max_lag.min(r.len() - 2);
    let lo = min_lag.max(1);
    let peaks: Vec<usize> = (lo..=hi)
        .filter(|&t| r[t] > r[t - 1] && r[t] >= r[t + 1])
        .collect();
    let best = peaks.iter().map(|&t| r[t]).fold(f64::NEG_INFINITY, f64::max);
    if !(best >= VOICING_THRESHOLD) {
        return None;
    }
    let lag = *peaks.iter().find(|&&t| r[t] >= OCTAVE_TOLERANCE * best)?;
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let shift = if curvature < 0.0 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(lag as f64 + shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sine(freq: f64, secs: f64, amp: f64) -> Waveform {
        let sr = 16_000u32;
        let n = (secs * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| (amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect();
        Waveform::new(samples, sr)
    }

    /// Direct O(N²) evaluation of the same normalized autocorrelation.
    fn brute_force_autocorrelation(frame: &[f32], max_lag: usize) -> Vec<f64> {
        let n = frame.len();
        let mean = frame.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        let x: Vec<f64> = frame.iter().map(|&v| v as f64 - mean).collect();
        (0..=max_lag)
            .map(|lag| {
                let mut num = 0.0;
                let mut e0 = 0.0;
                let mut e1 = 0.0;
                for i in 0..n - lag {
                    num += x[i] * x[i + lag];
                    e0 += x[i] * x[i];
                    e1 += x[i + lag] * x[i + lag];
                }
                let d = (e0 * e1).sqrt();
                if d <= 1e-20 {
                    0.0
                } else {
                    num / d
                }
            })
            .collect()
    }

    #[test]
    fn fft_autocorrelation_matches_brute_force() {
        let w = sine(220.0, 0.1, 0.6);
        let frame = &w.samples[100..500];
        let mut tracker = PitchTracker::new(400, 16_000);
        let fast = tracker.normalized_autocorrelation(frame);
        let slow = brute_force_autocorrelation(frame, fast.len() - 1);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
        // exhaustive lag search on the oracle: the first lag reaching 90% of
        // the global maximum is the sine period
        let lags = tracker.min_lag..=tracker.max_lag;
        let top = lags.clone().map(|l| slow[l]).fold(f64::MIN, f64::max);
        let first = lags.clone().find(|&l| slow[l] >= 0.9 * top).unwrap();
        let best = (first..first + 10).max_by(|&a, &b| slow[a].total_cmp(&slow[b])).unwrap();
        assert!((16_000.0 / best as f64 - 220.0).abs() < 4.0, "first={first} best={best} top={top}");
        let picked = pick_period(&fast, tracker.min_lag, tracker.max_lag).unwrap();
        assert!((picked - best as f64).abs() <= 0.5);
    }

    #[test]
    fn sine_220_median_within_3hz() {
        let curve = estimate_f0(&sine(220.0, 1.0, 0.5), &FrameSpec::semantic_default()).unwrap();
        assert_eq!(curve.len(), 49);
        let med = curve.median_voiced().unwrap();
        assert!((med - 220.0).abs() <= 3.0, "median {med}");
    }

    #[test]
    fn sine_sweep_100_to_450() {
        for f in (100..=450).step_by(50) {
            let curve =
                estimate_f0(&sine(f as f64, 0.5, 0.5), &FrameSpec::semantic_default()).unwrap();
            let med = curve.median_voiced().expect("voiced frames");
            assert!((med - f as f64).abs() <= 3.0, "f={f} median={med}");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let curve =
            estimate_f0(&Waveform::silence(8000, 16_000), &FrameSpec::semantic_default()).unwrap();
        assert_eq!(curve.voiced_count(), 0);
    }

    #[test]
    fn white_noise_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f32> = (0..32_000).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
        let curve =
            estimate_f0(&Waveform::new(samples, 16_000), &FrameSpec::semantic_default()).unwrap();
        let unvoiced = curve.len() - curve.voiced_count();
        assert!(
            unvoiced as f64 >= 0.9 * curve.len() as f64,
            "{unvoiced}/{} unvoiced",
            curve.len()
        );
    }

    #[test]
    fn voiced_values_stay_in_range() {
        let curve = estimate_f0(&sine(60.0, 0.5, 0.5), &FrameSpec::acoustic_default()).unwrap();
        for f in curve.voiced() {
            assert!((F0_MIN_HZ..=F0_MAX_HZ).contains(&f));
        }
    }
}
