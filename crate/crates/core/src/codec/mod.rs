//! Residual-vector-quantization codec over parametric acoustic frames.
//!
//! `encode` maps a waveform to a `Q × T_A` grid of codeword indices,
//! `decode` renders a grid back to audio. The first `q_coarse` rows form the
//! coarse block the autoregressive model predicts.

mod analysis;
mod synthesis;

pub use analysis::{acoustic_frame_vectors, CEPSTRUM_OFFSET, ENERGY_CHANNEL, LOG_F0_CHANNEL};
pub use synthesis::VOICED_LOG_F0;

use std::path::Path;

use crate::binio::{self, ByteReader, ByteWriter};
use crate::corpus::mix_seed;
use crate::dsp::{FeatureMatrix, FrameSpec, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest, KMeansParams};

const MAGIC: &[u8; 4] = b"NACQ";
const VERSION: u32 = 1;

pub const DEFAULT_F0_WEIGHT: f64 = 10.0;

/// Framing and dimensionality of the acoustic frame vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisSpec {
    pub frame: FrameSpec,
    pub n_mels: usize,
    pub n_cepstra: usize,
    /// Scale of the log-F0 channel relative to the other channels.
    pub f0_weight: f64,
    pub sample_rate_hz: u32,
}

impl AnalysisSpec {
    pub fn dim(&self) -> usize {
        CEPSTRUM_OFFSET + self.n_cepstra
    }
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            frame: FrameSpec::acoustic_default(),
            n_mels: 40,
            n_cepstra: 14,
            f0_weight: DEFAULT_F0_WEIGHT,
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// Row-major `size × dim`.
    pub centroids: Vec<f64>,
    pub dim: usize,
}

impl Codebook {
    pub fn new(centroids: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "codebook of {} values does not split into rows of {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite centroid entry".into()));
        }
        Ok(Self { centroids, dim })
    }

    pub fn size(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

/// Nearest centroid (ties to the lowest index) and the remaining residual.
pub fn quantize_residual(vector: &[f64], codebook: &Codebook) -> Result<(usize, Vec<f64>)> {
    if vector.len() != codebook.dim {
        return Err(Error::Incompatible(format!(
            "vector has dimension {}, codebook {}",
            vector.len(),
            codebook.dim
        )));
    }
    let (idx, _) = nearest(vector, &codebook.centroids, codebook.dim);
    let residual = vector
        .iter()
        .zip(codebook.centroid(idx))
        .map(|(v, c)| v - c)
        .collect();
    Ok((idx, residual))
}

/// Hyperparameters of [`train_rvq`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RvqParams {
    pub q: usize,
    pub q_coarse: usize,
    pub n_q: usize,
    pub seed: u64,
}

impl Default for RvqParams {
    fn default() -> Self {
        Self {
            q: 8,
            q_coarse: 2,
            n_q: 64,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqStack {
    pub codebooks: Vec<Codebook>,
    pub q_coarse: usize,
    pub analysis: AnalysisSpec,
}

/// Stage-wise k-means: stage `i` is fit to the residuals left by stages `< i`.
/// Centroids are rounded to f32 so a saved stack reloads bit-identically.
pub fn train_rvq(
    features: &FeatureMatrix,
    params: &RvqParams,
    analysis: AnalysisSpec,
) -> Result<RvqStack> {
    if params.q == 0 || params.q_coarse == 0 || params.q_coarse >= params.q.max(2) {
        return Err(Error::Config(format!(
            "need 1 <= q_coarse < q, got q={} q_coarse={}",
            params.q, params.q_coarse
        )));
    }
    if features.dim != analysis.dim() {
        return Err(Error::Incompatible(format!(
            "features have dimension {}, analysis spec {}",
            features.dim,
            analysis.dim()
        )));
    }
    let dim = features.dim;
    let mut residual = features.data.clone();
    let mut codebooks = Vec::with_capacity(params.q);
    for stage in 0..params.q {
        let kp = KMeansParams::new(params.n_q, mix_seed(&[params.seed, stage as u64]));
        let mut fit = kmeans(&residual, dim, &kp)?;
        binio::round_to_f32(&mut fit.centroids);
        let book = Codebook::new(fit.centroids, dim)?;
        for r in residual.chunks_exact_mut(dim) {
            let (idx, _) = nearest(r, &book.centroids, dim);
            for (x, c) in r.iter_mut().zip(book.centroid(idx)) {
                *x -= c;
            }
        }
        log::debug!("rvq stage {stage}: {} iterations", fit.iterations);
        codebooks.push(book);
    }
    Ok(RvqStack {
        codebooks,
        q_coarse: params.q_coarse,
        analysis,
    })
}

impl RvqStack {
    pub fn q(&self) -> usize {
        self.codebooks.len()
    }

    pub fn n_q(&self) -> usize {
        self.codebooks[0].size()
    }

    pub fn dim(&self) -> usize {
        self.analysis.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.codebooks.len();
        if q == 0 || self.q_coarse == 0 || (q > 1 && self.q_coarse >= q) {
            return Err(Error::Validation(format!(
                "inconsistent stack: q={q} q_coarse={}",
                self.q_coarse
            )));
        }
        let (n, d) = (self.codebooks[0].size(), self.dim());
        if self.codebooks.iter().any(|b| b.size() != n || b.dim != d) {
            return Err(Error::Validation(
                "codebooks differ in size or dimension".into(),
            ));
        }
        Ok(())
    }

    /// Tokenizes precomputed acoustic frame vectors.
    pub fn encode_vectors(&self, features: &FeatureMatrix) -> Result<AcousticTokens> {
        if features.dim != self.dim() {
            return Err(Error::Incompatible(format!(
                "features have dimension {}, codec expects {}",
                features.dim,
                self.dim()
            )));
        }
        let (q, t) = (self.q(), features.rows);
        let mut grid = vec![0u32; q * t];
        let mut r = vec![0.0; self.dim()];
        for (col, v) in features.iter_rows().enumerate() {
            r.copy_from_slice(v);
            for (stage, book) in self.codebooks.iter().enumerate() {
                let (idx, _) = nearest(&r, &book.centroids, book.dim);
                for (x, c) in r.iter_mut().zip(book.centroid(idx)) {
                    *x -= c;
                }
                grid[stage * t + col] = idx as u32;
            }
        }
        AcousticTokens::new(q, t, grid)
    }

    /// Sum of the centroids selected by the first `rows` grid rows, per frame.
    pub fn reconstruct(&self, tokens: &AcousticTokens, rows: usize) -> Result<FeatureMatrix> {
        tokens.check_against(self)?;
        if rows > tokens.rows() {
            return Err(Error::Validation(format!(
                "asked for {rows} codebooks, grid has {}",
                tokens.rows()
            )));
        }
        let (t, dim) = (tokens.frames(), self.dim());
        let mut data = vec![0.0; t * dim];
        for (stage, book) in self.codebooks.iter().enumerate().take(rows) {
            for (col, out) in data.chunks_exact_mut(dim).enumerate() {
                for (x, c) in out.iter_mut().zip(book.centroid(tokens.get(stage, col) as usize)) {
                    *x += c;
                }
            }
        }
        Ok(FeatureMatrix::new(data, t, dim, self.analysis.frame))
    }

    /// Mean squared residual after each stage on `features`.
    pub fn stage_mse(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let tokens = self.encode_vectors(features)?;
        (1..=self.q())
            .map(|k| Ok(feature_mse(features, &self.reconstruct(&tokens, k)?)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer().save(path)
    }

    pub(crate) fn to_writer(&self) -> ByteWriter {
        let mut w = ByteWriter::with_header(MAGIC, VERSION);
        w.len_u32(self.q());
        w.len_u32(self.q_coarse);
        w.len_u32(self.n_q());
        w.len_u32(self.dim());
        w.u32(self.analysis.sample_rate_hz);
        w.len_u32(self.analysis.frame.frame_len);
        w.len_u32(self.analysis.frame.hop);
        w.len_u32(self.analysis.n_mels);
        w.len_u32(self.analysis.n_cepstra);
        w.f64(self.analysis.f0_weight);
        for b in &self.codebooks {
            w.f32s(&b.centroids);
        }
        w
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::load(path)?)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "codec model");
        let version = r.header(MAGIC)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "codec model version {version} unsupported"
            )));
        }
        let q = r.usize()?;
        let q_coarse = r.usize()?;
        let n_q = r.usize()?;
        let dim = r.usize()?;
        let sample_rate_hz = r.u32()?;
        let frame_len = r.usize()?;
        let hop = r.usize()?;
        let n_mels = r.usize()?;
        let n_cepstra = r.usize()?;
        let f0_weight = r.f64()?;
        let analysis = AnalysisSpec {
            frame: FrameSpec::new(frame_len, hop)?,
            n_mels,
            n_cepstra,
            f0_weight,
            sample_rate_hz,
        };
        if analysis.dim() != dim || q == 0 || n_q == 0 || !(f0_weight > 0.0 && f0_weight.is_finite()) {
            return Err(Error::Format("codec model header is inconsistent".into()));
        }
        let codebooks = (0..q)
            .map(|_| Codebook::new(r.f32s(n_q * dim)?, dim))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let stack = Self {
            codebooks,
            q_coarse,
            analysis,
        };
        stack.validate()?;
        Ok(stack)
    }
}

/// Mean over entries of the squared difference of two equal-shape matrices.
pub fn feature_mse(a: &FeatureMatrix, b: &FeatureMatrix) -> f64 {
    assert_eq!((a.rows, a.dim), (b.rows, b.dim));
    let n = a.data.len().max(1) as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

pub fn encode(waveform: &Waveform, rvq: &RvqStack) -> Result<AcousticTokens> {
    let features = acoustic_frame_vectors(waveform, &rvq.analysis)?;
    rvq.encode_vectors(&features)
}

pub fn decode(tokens: &AcousticTokens, rvq: &RvqStack) -> Result<Waveform> {
    decode_vectors(&rvq.reconstruct(tokens, tokens.rows())?, rvq)
}

/// Renders frame vectors directly, bypassing quantization.
pub fn decode_vectors(features: &FeatureMatrix, rvq: &RvqStack) -> Result<Waveform> {
    if features.dim != rvq.dim() {
        return Err(Error::Incompatible(format!(
            "features have dimension {}, codec expects {}",
            features.dim,
            rvq.dim()
        )));
    }
    Ok(synthesis::synthesize(
        &features.data,
        features.rows,
        &rvq.analysis,
    ))
}

/// `rows × frames` grid of codeword indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcousticTokens {
    rows: usize,
    frames: usize,
    grid: Vec<u32>,
}

impl AcousticTokens {
    pub fn new(rows: usize, frames: usize, grid: Vec<u32>) -> Result<Self> {
        if rows == 0 || frames == 0 || grid.len() != rows * frames {
            return Err(Error::Validation(format!(
                "token grid of {} entries is not {rows}x{frames} with both positive",
                grid.len()
            )));
        }
        Ok(Self { rows, frames, grid })
    }

    /// Builds a grid from per-row vectors.
    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != frames) {
            return Err(Error::Validation("token rows differ in length".into()));
        }
        Self::new(rows.len(), frames, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, row: usize, frame: usize) -> u32 {
        self.grid[row * self.frames + frame]
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.grid[row * self.frames..(row + 1) * self.frames]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.grid
    }

    /// First `rows` rows.
    pub fn top_rows(&self, rows: usize) -> Result<Self> {
        if rows == 0 || rows > self.rows {
            return Err(Error::Incompatible(format!(
                "grid has {} rows, asked for {rows}",
                self.rows
            )));
        }
        Self::new(rows, self.frames, self.grid[..rows * self.frames].to_vec())
    }

    /// First `frames` columns (or all when shorter).
    pub fn truncate_frames(&self, frames: usize) -> Self {
        let keep = frames.clamp(1, self.frames);
        let grid = (0..self.rows)
            .flat_map(|r| self.row(r)[..keep].iter().copied())
            .collect();
        Self {
            rows: self.rows,
            frames: keep,
            grid,
        }
    }

    /// Columns `start..start + len`, clipped to the grid.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        let end = (start + len).min(self.frames);
        if start >= end {
            return Err(Error::Validation(format!(
                "empty frame range {start}..{end} of {}",
                self.frames
            )));
        }
        let grid = (0..self.rows)
            .flat_map(|r| self.row(r)[start..end].iter().copied())
            .collect();
        Self::new(self.rows, end - start, grid)
    }

    /// Fails when any entry is `>= n_q`.
    pub fn validate(&self, n_q: usize) -> Result<()> {
        if let Some(i) = self.grid.iter().position(|&x| x as usize >= n_q) {
            return Err(Error::Validation(format!(
                "token {} at row {} frame {} is outside [0, {n_q})",
                self.grid[i],
                i / self.frames,
                i % self.frames
            )));
        }
        Ok(())
    }

    fn check_against(&self, rvq: &RvqStack) -> Result<()> {
        if self.rows > rvq.q() {
            return Err(Error::Incompatible(format!(
                "grid has {} rows, codec has {} codebooks",
                self.rows,
                rvq.q()
            )));
        }
        self.validate(rvq.n_q())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusSpec};
    use crate::dsp::estimate_f0;

    fn toy_book() -> Codebook {
        let c = vec![
            0.0, 0.0, //
            1.0, 0.0, //
            0.0, 1.0, //
            5.0, 5.0, //
            -1.0, 0.0,
        ];
        Codebook::new(c, 2).unwrap()
    }

    #[test]
    fn quantize_exact_match_and_ties() {
        let book = toy_book();
        let (i, r) = quantize_residual(&[5.0, 5.0], &book).unwrap();
        assert_eq!(i, 3);
        assert_eq!(r, vec![0.0, 0.0]);
        let tie = Codebook::new(
            vec![9.0, 9.0, 1.0, 0.0, 9.0, -9.0, -9.0, 9.0, -1.0, 0.0],
            2,
        )
        .unwrap();
        assert_eq!(quantize_residual(&[0.0, 0.0], &tie).unwrap().0, 1);
    }

    #[test]
    fn residual_is_no_larger_than_any_alternative() {
        let book = toy_book();
        let v = [0.3, -0.7];
        let (_, r) = quantize_residual(&v, &book).unwrap();
        let rn: f64 = r.iter().map(|x| x * x).sum();
        for c in book.centroids.chunks(2) {
            let d: f64 = v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(rn <= d);
        }
    }

    #[test]
    fn quantize_dimension_mismatch() {
        assert!(matches!(
            quantize_residual(&[1.0], &toy_book()),
            Err(Error::Incompatible(_))
        ));
    }

    fn small_corpus() -> Corpus {
        let spec = CorpusSpec {
            speakers: 3,
            utterances_per_speaker: 2,
            ..CorpusSpec::default()
        };
        Corpus::generate(&spec).unwrap()
    }

    fn corpus_features(c: &Corpus, spec: &AnalysisSpec) -> FeatureMatrix {
        let mats: Vec<_> = c
            .utterances
            .iter()
            .map(|u| acoustic_frame_vectors(&u.waveform, spec).unwrap())
            .collect();
        FeatureMatrix::concat(&mats).unwrap()
    }

    #[test]
    fn single_centroid_is_the_mean() {
        let spec = AnalysisSpec::default();
        let c = small_corpus();
        let f = corpus_features(&c, &spec);
        let p = RvqParams {
            q: 2,
            q_coarse: 1,
            n_q: 1,
            seed: 3,
        };
        let s = train_rvq(&f, &p, spec).unwrap();
        let mean = f.column_means();
        for (a, b) in s.codebooks[0].centroids.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn speakers_differ_in_mean_frame_vector() {
        let spec = AnalysisSpec::default();
        let c = small_corpus();
        let m0 = acoustic_frame_vectors(&c.utterances[0].waveform, &spec)
            .unwrap()
            .column_means();
        let m1 = acoustic_frame_vectors(&c.utterances[2].waveform, &spec)
            .unwrap()
            .column_means();
        assert_ne!(c.utterances[0].speaker_id, c.utterances[2].speaker_id);
        let d: f64 = m0.iter().zip(&m1).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!(d.sqrt() > 0.0);
    }

    #[test]
    fn train_encode_decode_contracts() {
        let spec = AnalysisSpec::default();
        let c = small_corpus();
        let f = corpus_features(&c, &spec);
        let p = RvqParams {
            q: 4,
            q_coarse: 2,
            n_q: 16,
            seed: 5,
        };
        let s = train_rvq(&f, &p, spec).unwrap();
        let mse = s.stage_mse(&f).unwrap();
        for w in mse.windows(2) {
            assert!(w[1] <= w[0], "{mse:?}");
        }

        let w = &c.utterances[0].waveform;
        let t1 = encode(w, &s).unwrap();
        let t2 = encode(w, &s).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.rows(), 4);
        assert_eq!(t1.frames(), spec.frame.num_frames(w.len()).unwrap());
        t1.validate(16).unwrap();

        let y = decode(&t1, &s).unwrap();
        assert_eq!(y.len(), spec.frame.signal_len(t1.frames()));
        assert_eq!(y, decode(&t1, &s).unwrap());

        let mut bad = t1.as_slice().to_vec();
        bad[3] = 16;
        let bad = AcousticTokens::new(4, t1.frames(), bad).unwrap();
        assert!(matches!(decode(&bad, &s), Err(Error::Validation(_))));
    }

    #[test]
    fn unvoiced_grid_decodes_unvoiced() {
        let spec = AnalysisSpec::default();
        let c = small_corpus();
        let f = corpus_features(&c, &spec);
        let s = train_rvq(&f, &RvqParams { q: 2, q_coarse: 1, n_q: 8, seed: 2 }, spec).unwrap();
        // keep only grid columns whose reconstruction is unvoiced
        let tokens = s.encode_vectors(&f).unwrap();
        let rec = s.reconstruct(&tokens, 2).unwrap();
        let cols: Vec<usize> = (0..rec.rows)
            .filter(|&t| rec.row(t)[LOG_F0_CHANNEL] < VOICED_LOG_F0 * spec.f0_weight)
            .take(60)
            .collect();
        assert!(cols.len() >= 20);
        let rows: Vec<Vec<u32>> = (0..2)
            .map(|q| cols.iter().map(|&t| tokens.get(q, t)).collect())
            .collect();
        let grid = AcousticTokens::from_rows(&rows).unwrap();
        let y = decode(&grid, &s).unwrap();
        let f0 = estimate_f0(&y, &FrameSpec::acoustic_default()).unwrap();
        assert_eq!(f0.voiced_count(), 0);
    }

    #[test]
    fn nacq_round_trip_is_byte_exact() {
        let spec = AnalysisSpec::default();
        let c = small_corpus();
        let f = corpus_features(&c, &spec);
        let s = train_rvq(&f, &RvqParams { q: 3, q_coarse: 1, n_q: 8, seed: 9 }, spec).unwrap();
        let bytes = s.to_writer().buf;
        let back = RvqStack::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_writer().buf, bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(RvqStack::from_bytes(&bad), Err(Error::Format(_))));
        assert!(RvqStack::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn token_grid_helpers() {
        let t = AcousticTokens::from_rows(&[vec![1, 2, 3], vec![4, 5, 6]]).unwrap();
        assert_eq!(t.get(1, 2), 6);
        assert_eq!(t.top_rows(1).unwrap().as_slice(), &[1, 2, 3]);
        assert_eq!(t.truncate_frames(2).as_slice(), &[1, 2, 4, 5]);
        assert_eq!(t.truncate_frames(9), t);
        assert!(AcousticTokens::new(2, 0, vec![]).is_err());
        assert!(t.validate(6).is_err());
        assert!(t.validate(7).is_ok());
    }
}
