//! Content recognition proxy: nearest-centroid frame classifier over the
//! semantic frontend features, decoded to a unit sequence.

use crate::corpus::collapse;
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::semantic::SemanticFrontend;

use super::metrics::levenshtein;

/// An utterance with its per-frame content labels.
#[derive(Debug, Clone, Copy)]
pub struct LabeledFrames<'a> {
    pub waveform: &'a Waveform,
    pub labels: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct ContentClassifier {
    frontend: SemanticFrontend,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Standardized centroid per unit; `None` for units absent from training.
    centroids: Vec<Option<Vec<f64>>>,
}

impl ContentClassifier {
    pub fn fit(frontend: SemanticFrontend, data: &[LabeledFrames]) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for d in data {
            let f = frontend.features(d.waveform)?;
            rows.extend(d.labels.iter().zip(f.iter_rows()).map(|(&l, r)| (l, r.to_vec())));
        }
        if rows.is_empty() {
            return Err(Error::Empty("content training frames"));
        }
        let dim = rows[0].1.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for (_, r) in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for (_, r) in &rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt().max(1e-9)).collect();
        let units = rows.iter().map(|(l, _)| l + 1).max().unwrap_or(0);
        let mut sums = vec![vec![0.0; dim]; units];
        let mut counts = vec![0usize; units];
        for (l, r) in &rows {
            counts[*l] += 1;
            for (((s, x), m), k) in sums[*l].iter_mut().zip(r).zip(&mean).zip(&scale) {
                *s += (x - m) * k;
            }
        }
        let centroids = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| (c > 0).then(|| s.iter().map(|v| v / c as f64).collect()))
            .collect();
        Ok(Self {
            frontend,
            mean,
            scale,
            centroids,
        })
    }

    /// Most likely unit per semantic frame (ties to the lowest unit id).
    pub fn classify_frames(&self, waveform: &Waveform) -> Result<Vec<usize>> {
        let f = self.frontend.features(waveform)?;
        let mut z = vec![0.0; f.dim];
        Ok(f.iter_rows()
            .map(|r| {
                for (((o, x), m), k) in z.iter_mut().zip(r).zip(&self.mean).zip(&self.scale) {
                    *o = (x - m) * k;
                }
                let mut best = (f64::INFINITY, 0);
                for (u, c) in self.centroids.iter().enumerate() {
                    if let Some(c) = c {
                        let d = sq_dist(&z, c);
                        if d < best.0 {
                            best = (d, u);
                        }
                    }
                }
                best.1
            })
            .collect())
    }

    /// Majority unit within each reference span, consecutive repeats merged.
    pub fn decode(&self, waveform: &Waveform, reference: &[usize]) -> Result<Vec<usize>> {
        let frames = self.classify_frames(waveform)?;
        let n = frames.len().min(reference.len());
        let mut votes = vec![0usize; self.centroids.len()];
        let mut hyp = Vec::new();
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end < n && reference[end] == reference[start] {
                end += 1;
            }
            votes.iter_mut().for_each(|v| *v = 0);
            for &p in &frames[start..end] {
                votes[p] += 1;
            }
            let best = votes.iter().enumerate().fold(0, |b, (u, &v)| if v > votes[b] { u } else { b });
            hyp.push(best);
            start = end;
        }
        Ok(collapse(&hyp))
    }

    /// Total edit distance over total reference length.
    pub fn error_rate(&self, data: &[LabeledFrames]) -> Result<f64> {
        let (mut edits, mut total) = (0usize, 0usize);
        for d in data {
            let reference = collapse(d.labels);
            if reference.is_empty() {
                return Err(Error::Empty("ground-truth content labels"));
            }
            edits += levenshtein(&reference, &self.decode(d.waveform, d.labels)?);
            total += reference.len();
        }
        if total == 0 {
            return Err(Error::Empty("content trials"));
        }
        Ok(edits as f64 / total as f64)
    }
}
