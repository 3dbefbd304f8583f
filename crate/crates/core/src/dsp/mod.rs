//! Audio frontend: WAV I/O, framing, filterbank features and F0 estimation.
//!
//! Every other module goes through these helpers, so the framing arithmetic
//! (`1 + (len - frame_len) / hop`) is defined exactly once, in [`FrameSpec`].

mod envelope;
mod features;
mod pitch;
mod wav;

pub use features::{frame_features, FeatureMatrix, MelFilterbank, ENERGY_FLOOR};
pub use pitch::{estimate_f0, F0Curve, F0_MAX_HZ, F0_MIN_HZ, VOICING_RMS_GATE, VOICING_THRESHOLD};
pub use wav::{read_wav, read_wav_from, write_wav, write_wav_to};

pub(crate) use envelope::{EnvelopeAnalyzer, MelEnvelope};

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono PCM audio with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Checks the invariants every processing operation relies on.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }
}

/// Tapering function applied to each analysis frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`. The periodic Hann sums to exactly one
    /// under 50% overlap, which the codec's overlap-add synthesis relies on.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl FrameSpec {
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        let spec = Self {
            frame_len,
            hop,
            window: Window::Hann,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Semantic-encoder default: 25 ms frames, 20 ms hop at 16 kHz.
    pub fn semantic_default() -> Self {
        Self {
            frame_len: 400,
            hop: 320,
            window: Window::Hann,
        }
    }

    /// Acoustic codec default: 40 ms frames, 20 ms hop at 16 kHz.
    pub fn acoustic_default() -> Self {
        Self {
            frame_len: 640,
            hop: 320,
            window: Window::Hann,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Config(format!(
                "frame spec needs 0 < hop <= frame_len, got hop={} frame_len={}",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }

    /// Number of full frames in a signal of `num_samples` samples.
    pub fn num_frames(&self, num_samples: usize) -> Result<usize> {
        if num_samples < self.frame_len {
            return Err(Error::TooShort {
                needed: self.frame_len,
                got: num_samples,
            });
        }
        Ok(1 + (num_samples - self.frame_len) / self.hop)
    }

    /// Signal length produced by overlap-adding `num_frames` frames.
    pub fn signal_len(&self, num_frames: usize) -> usize {
        if num_frames == 0 {
            return 0;
        }
        (num_frames - 1) * self.hop + self.frame_len
    }

    /// Iterator over frame slices of `samples`. Callers validate length first.
    pub fn frames<'a>(&self, samples: &'a [f32]) -> impl Iterator<Item = &'a [f32]> + 'a {
        let frame_len = self.frame_len;
        let hop = self.hop;
        let n = if samples.len() < frame_len {
            0
        } else {
            1 + (samples.len() - frame_len) / hop
        };
        (0..n).map(move |i| &samples[i * hop..i * hop + frame_len])
    }
}

pub(crate) fn rms(frame: &[f32]) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    let ss: f64 = frame.iter().map(|&x| (x as f64) * (x as f64)).sum();
    (ss / frame.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_arithmetic() {
        let spec = FrameSpec::new(400, 320).unwrap();
        assert_eq!(spec.num_frames(16_000).unwrap(), 49);
        let spec = FrameSpec::acoustic_default();
        assert_eq!(spec.num_frames(16_000).unwrap(), 49);
        assert_eq!(spec.signal_len(49), 16_000);
        assert!(matches!(spec.num_frames(639), Err(Error::TooShort { .. })));
    }

    #[test]
    fn frame_spec_rejects_bad_hop() {
        assert!(FrameSpec::new(400, 0).is_err());
        assert!(FrameSpec::new(400, 401).is_err());
        assert!(FrameSpec::new(400, 400).is_ok());
    }

    #[test]
    fn hann_overlap_add_is_flat() {
        let w = Window::Hann.coefficients(640);
        for i in 0..320 {
            assert!((w[i] + w[i + 320] - 1.0).abs() < 1e-12);
        }
    }
}
