use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::pitch::PitchTracker;
use super::{FrameSpec, Waveform};
use crate::error::{Error, Result};

/// Floor applied to filterbank energies and RMS values before taking logs.
pub const ENERGY_FLOOR: f64 = 1e-10;

/// Row-major `T × D` matrix of per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub dim: usize,
    pub frame_spec: FrameSpec,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, rows: usize, dim: usize, frame_spec: FrameSpec) -> Self {
        assert_eq!(data.len(), rows * dim, "feature matrix shape mismatch");
        Self {
            data,
            rows,
            dim,
            frame_spec,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    /// Stacks matrices of equal width into one training corpus.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts.first().ok_or(Error::Empty("feature corpus"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.dim != first.dim {
                return Err(Error::Incompatible(format!(
                    "feature width {} != {}",
                    p.dim, first.dim
                )));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(FeatureMatrix::new(data, rows, first.dim, first.frame_spec))
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.iter_rows() {
            for (a, &x) in m.iter_mut().zip(r) {
                *a += x;
            }
        }
        let n = self.rows.max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Triangular mel-spaced filters over the positive half of an FFT.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_fft: usize,
    /// `(first_bin, weights)` per filter.
    filters: Vec<(usize, Vec<f64>)>,
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate_hz: u32) -> Self {
        let nyquist = sample_rate_hz as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate_hz as f64 / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => {
                        let mut dense = vec![0.0; weights.last().unwrap().0 - start + 1];
                        for (k, w) in weights {
                            dense[k - start] = w;
                        }
                        (start, dense)
                    }
                    // narrower than one bin: fall back to the nearest bin
                    None => (((mid / bin_hz).round() as usize).min(n_bins - 1), vec![1.0]),
                }
            })
            .collect();
        Self { n_fft, filters }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, w), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = w
                .iter()
                .zip(&power[*start..])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

/// Windowed power-spectrum helper with a cached FFT plan.
pub(crate) struct PowerSpectrum {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl PowerSpectrum {
    pub(crate) fn new(spec: &FrameSpec, n_fft: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Self {
            window: spec.window.coefficients(spec.frame_len),
            fft,
            buf: vec![Complex::default(); n_fft],
            scratch,
        }
    }

    /// Fills `power` (length `n_fft/2 + 1`) with `|FFT(window · frame)|²`.
    pub(crate) fn compute(&mut self, frame: &[f32], power: &mut [f64]) {
        for (i, b) in self.buf.iter_mut().enumerate() {
            *b = match (frame.get(i), self.window.get(i)) {
                (Some(&x), Some(&w)) => Complex::new(x as f64 * w, 0.0),
                _ => Complex::default(),
            };
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (p, b) in power.iter_mut().zip(&self.buf) {
            *p = b.norm_sqr();
        }
    }
}

/// Log mel-filterbank energies plus one log-F0 channel per frame.
///
/// Row layout: `n_mels` values of `ln(max(E, 1e-10))`, then `ln(f0)` for voiced
/// frames or `0` for unvoiced ones.
pub fn frame_features(waveform: &Waveform, spec: &FrameSpec, n_mels: usize) -> Result<FeatureMatrix> {
    spec.validate()?;
    let rows = spec.num_frames(waveform.len())?;
    if n_mels == 0 {
        return Err(Error::Config("n_mels must be positive".into()));
    }
    let n_fft = spec.frame_len.next_power_of_two();
    let fb = MelFilterbank::new(n_mels, n_fft, waveform.sample_rate_hz);
    let mut spectrum = PowerSpectrum::new(spec, n_fft);
    let mut tracker = PitchTracker::new(spec.frame_len, waveform.sample_rate_hz);
    let mut power = vec![0.0; n_fft / 2 + 1];
    let dim = n_mels + 1;
    let mut data = vec![0.0; rows * dim];
    for (frame, row) in spec
        .frames(&waveform.samples)
        .zip(data.chunks_exact_mut(dim))
    {
        spectrum.compute(frame, &mut power);
        fb.apply(&power, &mut row[..n_mels]);
        for e in row[..n_mels].iter_mut() {
            *e = e.max(ENERGY_FLOOR).ln();
        }
        row[n_mels] = tracker.frame_f0(frame).map_or(0.0, f64::ln);
    }
    Ok(FeatureMatrix::new(data, rows, dim, *spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn one_second_gives_49_rows() {
        let w = Waveform::silence(16_000, 16_000);
        let f = frame_features(&w, &FrameSpec::new(400, 320).unwrap(), 40).unwrap();
        assert_eq!(f.rows, 49);
        assert_eq!(f.dim, 41);
    }

    #[test]
    fn silence_hits_the_floor() {
        let w = Waveform::silence(4000, 16_000);
        let f = frame_features(&w, &FrameSpec::semantic_default(), 24).unwrap();
        for r in f.iter_rows() {
            for &e in &r[..24] {
                assert_eq!(e, ENERGY_FLOOR.ln());
            }
            assert_eq!(r[24], 0.0);
        }
    }

    #[test]
    fn sine_f0_channel_tracks_log_frequency() {
        let samples: Vec<f32> = (0..16_000)
            .map(|i| (0.5 * (2.0 * PI * 220.0 * i as f64 / 16_000.0).sin()) as f32)
            .collect();
        let f = frame_features(&Waveform::new(samples, 16_000), &FrameSpec::semantic_default(), 40)
            .unwrap();
        for i in 1..f.rows - 1 {
            assert!((f.row(i)[40] - 220f64.ln()).abs() < 0.014, "row {i}");
        }
    }

    #[test]
    fn too_short_is_an_error() {
        let w = Waveform::silence(100, 16_000);
        assert!(matches!(
            frame_features(&w, &FrameSpec::semantic_default(), 40),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn filterbank_covers_every_filter() {
        let fb = MelFilterbank::new(40, 512, 16_000);
        assert_eq!(fb.n_mels(), 40);
        let power = vec![1.0; 257];
        let mut out = vec![0.0; 40];
        fb.apply(&power, &mut out);
        assert!(out.iter().all(|&e| e > 0.0));
    }
}
