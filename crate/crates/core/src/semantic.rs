//! Semantic encoder: a single k-means codebook over speaker-normalized
//! spectral features.
//!
//! The frontend computes a pitch-adaptive spectral envelope per frame (the
//! power spectrum averaged over a band proportional to the frame's F0, which
//! blurs out the harmonic comb), takes log mel energies, keeps the low-order
//! mel cepstrum and removes its utterance mean. Voiced log-F0 is appended as a
//! scaled deviation from the utterance's voiced mean, unvoiced frames get 0.
//! The tokens keep content and intonation contour while discarding static
//! spectral coloring and pitch level.

use std::path::Path;

use crate::binio::{self, ByteReader, ByteWriter};
use crate::dsp::{EnvelopeAnalyzer, FeatureMatrix, FrameSpec, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest, KMeansParams};

const MAGIC: &[u8; 4] = b"SEMQ";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticFrontend {
    pub frame: FrameSpec,
    pub n_mels: usize,
    pub n_cepstra: usize,
    /// Scale applied to the log-F0 deviation channel.
    pub f0_weight: f64,
    /// Width of the spectral smoothing band, in multiples of F0.
    pub smoothing: f64,
    pub sample_rate_hz: u32,
}

impl Default for SemanticFrontend {
    fn default() -> Self {
        Self {
            frame: FrameSpec::semantic_default(),
            n_mels: 40,
            n_cepstra: 12,
            f0_weight: 6.0,
            smoothing: 1.5,
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl SemanticFrontend {
    pub fn dim(&self) -> usize {
        self.n_cepstra + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if self.n_mels == 0 || self.n_cepstra == 0 || self.n_cepstra >= self.n_mels {
            return Err(Error::Config(format!(
                "semantic frontend needs 0 < n_cepstra < n_mels, got {} and {}",
                self.n_cepstra, self.n_mels
            )));
        }
        if !(self.smoothing >= 0.0 && self.f0_weight.is_finite()) {
            return Err(Error::Config("invalid semantic smoothing or f0 weight".into()));
        }
        Ok(())
    }

    /// Normalized frame features of one utterance.
    pub fn features(&self, waveform: &Waveform) -> Result<FeatureMatrix> {
        self.validate()?;
        if waveform.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::Incompatible(format!(
                "waveform rate {} Hz, semantic encoder expects {} Hz",
                waveform.sample_rate_hz, self.sample_rate_hz
            )));
        }
        let rows = self.frame.num_frames(waveform.len())?;
        let mut analyzer = EnvelopeAnalyzer::new(
            &self.frame,
            self.n_mels,
            self.n_cepstra,
            self.smoothing,
            self.sample_rate_hz,
        );
        let dim = self.dim();
        let mut data = vec![0.0; rows * dim];
        let mut log_f0 = Vec::with_capacity(rows);
        for (frame, row) in self
            .frame
            .frames(&waveform.samples)
            .zip(data.chunks_exact_mut(dim))
        {
            log_f0.push(analyzer.analyze(frame, row).map(f64::ln));
        }

        let voiced: Vec<f64> = log_f0.iter().flatten().copied().collect();
        let f0_mean = voiced.iter().sum::<f64>() / voiced.len().max(1) as f64;
        let mut f = FeatureMatrix::new(data, rows, dim, self.frame);
        let means = f.column_means();
        for (i, lf0) in log_f0.iter().enumerate() {
            let row = f.row_mut(i);
            for (x, m) in row[..self.n_cepstra].iter_mut().zip(&means) {
                *x -= m;
            }
            row[self.n_cepstra] = lf0.map_or(0.0, |l| self.f0_weight * (l - f0_mean));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCodebook {
    /// Row-major `n_s × dim`.
    pub centroids: Vec<f64>,
    pub frontend: SemanticFrontend,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SemanticTokens {
    pub tokens: Vec<u32>,
}

impl SemanticTokens {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Fraction of positions (over the shorter length) holding equal tokens.
    pub fn agreement(&self, other: &SemanticTokens) -> f64 {
        let n = self.len().min(other.len());
        if n == 0 {
            return 0.0;
        }
        let same = self
            .tokens
            .iter()
            .zip(&other.tokens)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / n as f64
    }
}

pub fn train_semantic(
    features: &FeatureMatrix,
    n_s: usize,
    seed: u64,
    frontend: SemanticFrontend,
) -> Result<SemanticCodebook> {
    if features.dim != frontend.dim() {
        return Err(Error::Incompatible(format!(
            "features have dimension {}, frontend {}",
            features.dim,
            frontend.dim()
        )));
    }
    let mut fit = kmeans(&features.data, features.dim, &KMeansParams::new(n_s, seed))?;
    binio::round_to_f32(&mut fit.centroids);
    log::debug!(
        "semantic k-means: {} iterations, mse {:.4}",
        fit.iterations,
        fit.mse
    );
    Ok(SemanticCodebook {
        centroids: fit.centroids,
        frontend,
    })
}

pub fn tokenize(waveform: &Waveform, codebook: &SemanticCodebook) -> Result<SemanticTokens> {
    codebook.quantize(&codebook.frontend.features(waveform)?)
}

impl SemanticCodebook {
    pub fn n_s(&self) -> usize {
        self.centroids.len() / self.dim()
    }

    pub fn dim(&self) -> usize {
        self.frontend.dim()
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim()..(i + 1) * self.dim()]
    }

    /// Nearest-centroid index per row.
    pub fn quantize(&self, features: &FeatureMatrix) -> Result<SemanticTokens> {
        if features.dim != self.dim() {
            return Err(Error::Incompatible(format!(
                "features have dimension {}, codebook {}",
                features.dim,
                self.dim()
            )));
        }
        let tokens = features
            .iter_rows()
            .map(|r| nearest(r, &self.centroids, self.dim()).0 as u32)
            .collect();
        Ok(SemanticTokens { tokens })
    }

    /// Mean squared distance of rows to their nearest centroid.
    pub fn quantization_error(&self, features: &FeatureMatrix) -> f64 {
        let total: f64 = features
            .iter_rows()
            .map(|r| nearest(r, &self.centroids, self.dim()).1)
            .sum();
        total / features.rows.max(1) as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer().save(path)
    }

    pub(crate) fn to_writer(&self) -> ByteWriter {
        let mut w = ByteWriter::with_header(MAGIC, VERSION);
        w.len_u32(self.n_s());
        w.len_u32(self.dim());
        w.u32(self.frontend.sample_rate_hz);
        w.len_u32(self.frontend.frame.frame_len);
        w.len_u32(self.frontend.frame.hop);
        w.len_u32(self.frontend.n_mels);
        w.len_u32(self.frontend.n_cepstra);
        w.f64(self.frontend.f0_weight);
        w.f64(self.frontend.smoothing);
        w.f32s(&self.centroids);
        w
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::load(path)?)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "semantic model");
        let version = r.header(MAGIC)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "semantic model version {version} unsupported"
            )));
        }
        let n_s = r.usize()?;
        let dim = r.usize()?;
        let sample_rate_hz = r.u32()?;
        let frame_len = r.usize()?;
        let hop = r.usize()?;
        let n_mels = r.usize()?;
        let n_cepstra = r.usize()?;
        let f0_weight = r.f64()?;
        let smoothing = r.f64()?;
        let frontend = SemanticFrontend {
            frame: FrameSpec::new(frame_len, hop)?,
            n_mels,
            n_cepstra,
            f0_weight,
            smoothing,
            sample_rate_hz,
        };
        if n_s < 2 || frontend.dim() != dim || frontend.validate().is_err() {
            return Err(Error::Format("semantic model header is inconsistent".into()));
        }
        let centroids = r.f32s(n_s * dim)?;
        r.finish()?;
        Ok(Self {
            centroids,
            frontend,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusSpec};

    fn corpus() -> Corpus {
        Corpus::generate(&CorpusSpec {
            speakers: 4,
            utterances_per_speaker: 2,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    fn features(c: &Corpus, fe: &SemanticFrontend) -> FeatureMatrix {
        let parts: Vec<_> = c
            .utterances
            .iter()
            .map(|u| fe.features(&u.waveform).unwrap())
            .collect();
        FeatureMatrix::concat(&parts).unwrap()
    }

    #[test]
    fn normalization_centers_cepstra_and_voiced_f0() {
        let fe = SemanticFrontend::default();
        let c = corpus();
        let f = fe.features(&c.utterances[0].waveform).unwrap();
        for (j, m) in f.column_means().iter().enumerate().take(fe.n_cepstra) {
            assert!(m.abs() < 1e-9, "channel {j} mean {m}");
        }
        let voiced: Vec<f64> = f.iter_rows().map(|r| r[fe.n_cepstra]).filter(|&x| x != 0.0).collect();
        assert!(voiced.iter().sum::<f64>().abs() < 1e-6 * voiced.len() as f64);
    }

    #[test]
    fn single_centroid_is_mean_and_error_bounded() {
        let fe = SemanticFrontend::default();
        let f = features(&corpus(), &fe);
        let one = train_semantic(&f, 1, 4, fe).unwrap();
        let mean = f.column_means();
        for (a, b) in one.centroids.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        let many = train_semantic(&f, 32, 4, fe).unwrap();
        assert!(many.quantization_error(&f) <= one.quantization_error(&f));
    }

    #[test]
    fn tokenize_is_deterministic_with_framing_length() {
        let fe = SemanticFrontend::default();
        let c = corpus();
        let cb = train_semantic(&features(&c, &fe), 16, 1, fe).unwrap();
        let w = Waveform::new(c.utterances[1].waveform.samples[..16_000].to_vec(), 16_000);
        let a = tokenize(&w, &cb).unwrap();
        assert_eq!(a, tokenize(&w, &cb).unwrap());
        assert_eq!(a.len(), 49);
        assert!(a.tokens.iter().all(|&t| (t as usize) < 16));
    }

    #[test]
    fn semq_round_trip() {
        let fe = SemanticFrontend::default();
        let cb = train_semantic(&features(&corpus(), &fe), 8, 2, fe).unwrap();
        let bytes = cb.to_writer().buf;
        let back = SemanticCodebook::from_bytes(&bytes).unwrap();
        assert_eq!(back, cb);
        assert_eq!(back.to_writer().buf, bytes);
        assert!(SemanticCodebook::from_bytes(b"NACQ\x01\0\0\0").is_err());
    }
}
