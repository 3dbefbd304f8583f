//! Analysis transform: waveform → per-frame `[log-RMS, w·log-F0, mel cepstrum]`.

use crate::dsp::{rms, EnvelopeAnalyzer, FeatureMatrix, Waveform, ENERGY_FLOOR};
use crate::error::{Error, Result};

use super::AnalysisSpec;

pub const ENERGY_CHANNEL: usize = 0;
pub const LOG_F0_CHANNEL: usize = 1;
pub const CEPSTRUM_OFFSET: usize = 2;

/// Spectral smoothing width in multiples of F0.
pub const ENVELOPE_SMOOTHING: f64 = 1.5;

/// Per-frame acoustic vectors of width `2 + n_cepstra`.
pub fn acoustic_frame_vectors(waveform: &Waveform, spec: &AnalysisSpec) -> Result<FeatureMatrix> {
    spec.frame.validate()?;
    if waveform.sample_rate_hz != spec.sample_rate_hz {
        return Err(Error::Incompatible(format!(
            "waveform rate {} Hz, codec expects {} Hz",
            waveform.sample_rate_hz, spec.sample_rate_hz
        )));
    }
    let rows = spec.frame.num_frames(waveform.len())?;
    let dim = spec.dim();
    let mut analyzer = EnvelopeAnalyzer::new(
        &spec.frame,
        spec.n_mels,
        spec.n_cepstra,
        ENVELOPE_SMOOTHING,
        spec.sample_rate_hz,
    );
    let mut data = vec![0.0; rows * dim];
    for (frame, row) in spec
        .frame
        .frames(&waveform.samples)
        .zip(data.chunks_exact_mut(dim))
    {
        row[ENERGY_CHANNEL] = rms(frame).max(ENERGY_FLOOR).ln();
        row[LOG_F0_CHANNEL] = analyzer
            .analyze(frame, &mut row[CEPSTRUM_OFFSET..])
            .map_or(0.0, |f0| spec.f0_weight * f0.ln());
    }
    Ok(FeatureMatrix::new(data, rows, dim, spec.frame))
}
