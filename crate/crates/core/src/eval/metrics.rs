//! Scalar privacy and utility metrics.

use crate::dsp::{estimate_f0, FrameSpec, Waveform};
use crate::error::{Error, Result};

/// Minimum number of jointly voiced frames for a defined F0 correlation.
pub const MIN_JOINT_VOICED: usize = 10;

/// Diagonal dominance is floored here before the G_VD ratio.
pub const DD_FLOOR: f64 = 1e-6;

/// Equal error rate of a verification score set.
///
/// Thresholds are swept over every distinct score; a trial is accepted when
/// its score is `>= t`. The reported rate is the mean of miss and false-alarm
/// rates at the threshold where they are closest (lowest threshold on ties).
pub fn compute_eer(targets: &[f64], nontargets: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty("target scores"));
    }
    if nontargets.is_empty() {
        return Err(Error::Empty("non-target scores"));
    }
    if targets.iter().chain(nontargets).any(|s| !s.is_finite()) {
        return Err(Error::Validation("scores must be finite".into()));
    }
    let mut all: Vec<(f64, bool)> = targets
        .iter()
        .map(|&s| (s, true))
        .chain(nontargets.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    // counts of targets and non-targets strictly below the current threshold
    let (mut below_t, mut below_n) = (0usize, 0usize);
    let mut best: Option<(f64, f64)> = None;
    let mut i = 0;
    while i < all.len() {
        let miss = below_t as f64 / nt;
        let fa = (nontargets.len() - below_n) as f64 / nn;
        let gap = (miss - fa).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, 0.5 * (miss + fa)));
        }
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                below_t += 1;
            } else {
                below_n += 1;
            }
            i += 1;
        }
    }
    Ok(best.expect("non-empty scores").1)
}

/// Pearson correlation of two equally long samples; `None` when either is
/// constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation of two F0 curves over frames voiced in both; `None` below
/// [`MIN_JOINT_VOICED`] such frames or when a curve is flat.
pub fn f0_curve_correlation(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter_map(|(p, q)| Some(((*p)?, (*q)?)))
        .unzip();
    if x.len() < MIN_JOINT_VOICED {
        return None;
    }
    pearson(&x, &y)
}

/// F0 correlation between an utterance and its anonymized version.
pub fn pitch_correlation(original: &Waveform, anonymized: &Waveform, spec: &FrameSpec) -> Option<f64> {
    let a = estimate_f0(original, spec).ok()?;
    let b = estimate_f0(anonymized, spec).ok()?;
    f0_curve_correlation(&a.f0_hz, &b.f0_hz)
}

/// Square similarity matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub k: usize,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * k {
            return Err(Error::Validation(format!("{} entries for a {k}x{k} matrix", data.len())));
        }
        Ok(Self { k, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    /// `|mean(diag) - mean(off-diag)|`.
    pub fn diagonal_dominance(&self) -> Result<f64> {
        let k = self.k;
        if k < 2 {
            return Err(Error::InsufficientData { needed: 2, got: k });
        }
        let diag: f64 = (0..k).map(|i| self.get(i, i)).sum::<f64>() / k as f64;
        let total: f64 = self.data.iter().sum();
        let off = (total - diag * k as f64) / (k * (k - 1)) as f64;
        Ok((diag - off).abs())
    }
}

/// Gain of voice distinctiveness in decibels.
pub fn voice_distinctiveness_gain(orig: &SimilarityMatrix, anon: &SimilarityMatrix) -> Result<f64> {
    if orig.k != anon.k {
        return Err(Error::Incompatible(format!(
            "similarity matrices of size {} and {}",
            orig.k, anon.k
        )));
    }
    let a = anon.diagonal_dominance()?.max(DD_FLOOR);
    let o = orig.diagonal_dominance()?.max(DD_FLOOR);
    Ok(10.0 * (a / o).log10())
}

/// Edit distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance normalized by the reference length.
pub fn unit_error_rate(reference: &[usize], hypothesis: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("reference unit sequence"));
    }
    Ok(levenshtein(reference, hypothesis) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Literal threshold sweep.
    fn eer_oracle(targets: &[f64], nontargets: &[f64]) -> f64 {
        let mut thresholds: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let mut best = (f64::INFINITY, 0.0);
        for t in thresholds {
            let miss = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
            let fa = nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
            if (miss - fa).abs() < best.0 {
                best = ((miss - fa).abs(), (miss + fa) / 2.0);
            }
        }
        best.1
    }

    #[test]
    fn eer_examples() {
        assert_eq!(compute_eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 0.0);
        assert_eq!(compute_eer(&[0.1, 0.2], &[0.9, 0.8]).unwrap(), 1.0);
        assert_eq!(compute_eer(&[0.7, 0.3], &[0.5, 0.1]).unwrap(), 0.5);
        assert!(matches!(compute_eer(&[], &[0.1]), Err(Error::Empty(_))));
        assert!(matches!(compute_eer(&[0.1], &[]), Err(Error::Empty(_))));
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        // coarse grid so ties between and within lists are common
        prop::collection::vec((0u8..40).prop_map(|v| v as f64 / 8.0 - 2.0), 1..=100)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn eer_matches_threshold_sweep(t in scores(), n in scores()) {
            prop_assert_eq!(compute_eer(&t, &n).unwrap(), eer_oracle(&t, &n));
        }

        #[test]
        fn pitch_correlation_symmetric_and_affine_invariant(
            curve in prop::collection::vec(prop::option::weighted(0.8, 80.0f64..300.0), 10..80),
            other in prop::collection::vec(prop::option::weighted(0.8, 80.0f64..300.0), 10..80),
            scale in 0.1f64..5.0,
            shift in -50.0f64..50.0,
        ) {
            let r = f0_curve_correlation(&curve, &other);
            prop_assert_eq!(r, f0_curve_correlation(&other, &curve));
            let mapped: Vec<Option<f64>> = curve.iter().map(|v| v.map(|f| scale * f + shift)).collect();
            match (r, f0_curve_correlation(&mapped, &other)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (None, None) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn gvd_sign_follows_dominance(d in prop::collection::vec(-1.0f64..1.0, 9), shrink in 0.0f64..1.0) {
            let orig = SimilarityMatrix::new(3, d.clone()).unwrap();
            let same = voice_distinctiveness_gain(&orig, &orig).unwrap();
            prop_assert_eq!(same, 0.0);
            // pull every entry towards the mean: dominance shrinks
            let mean = d.iter().sum::<f64>() / 9.0;
            let anon = SimilarityMatrix::new(3, d.iter().map(|v| mean + shrink * (v - mean)).collect()).unwrap();
            let (dd_o, dd_a) = (orig.diagonal_dominance().unwrap(), anon.diagonal_dominance().unwrap());
            let g = voice_distinctiveness_gain(&orig, &anon).unwrap();
            if dd_o > DD_FLOOR && dd_a < dd_o && dd_a.max(DD_FLOOR) < dd_o {
                prop_assert!(g < 0.0);
            }
        }
    }

    #[test]
    fn pitch_correlation_examples() {
        let curve: Vec<Option<f64>> = (0..40).map(|i| Some(120.0 + 10.0 * (i as f64 * 0.3).sin())).collect();
        assert!((f0_curve_correlation(&curve, &curve).unwrap() - 1.0).abs() < 1e-12);
        let affine: Vec<Option<f64>> = curve.iter().map(|v| v.map(|f| 2.0 * f + 10.0)).collect();
        assert!((f0_curve_correlation(&curve, &affine).unwrap() - 1.0).abs() < 1e-12);
        let spec = FrameSpec::acoustic_default();
        let silence = Waveform::silence(16_000, 16_000);
        assert_eq!(pitch_correlation(&silence, &silence, &spec), None);
        let short: Vec<Option<f64>> = curve[..MIN_JOINT_VOICED - 1].to_vec();
        assert_eq!(f0_curve_correlation(&short, &short), None);
    }

    #[test]
    fn gvd_examples() {
        let orig = SimilarityMatrix::new(2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        assert_eq!(voice_distinctiveness_gain(&orig, &orig).unwrap(), 0.0);
        // dominance 0.7 halved to 0.35
        let half = SimilarityMatrix::new(2, vec![0.5, 0.15, 0.15, 0.5]).unwrap();
        let g = voice_distinctiveness_gain(&orig, &half).unwrap();
        assert!((g - 10.0 * 0.5f64.log10()).abs() < 1e-9, "{g}");
        assert!((g + 3.0103).abs() < 1e-4);
        let flat = SimilarityMatrix::new(2, vec![0.4; 4]).unwrap();
        let g = voice_distinctiveness_gain(&orig, &flat).unwrap();
        assert!((g - 10.0 * (DD_FLOOR / 0.7).log10()).abs() < 1e-9);
        let one = SimilarityMatrix::new(1, vec![1.0]).unwrap();
        assert!(voice_distinctiveness_gain(&one, &one).is_err());
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(unit_error_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(unit_error_rate(&[1, 2, 3, 4], &[]).unwrap(), 1.0);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u8>(&[], &[]), 0);
        assert!(unit_error_rate(&[], &[1]).is_err());
    }
}
