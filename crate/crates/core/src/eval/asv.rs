//! Speaker verification by the attacker: embeddings, whitening, cosine
//! scoring and the semi-informed attack.

use std::io::Write;
use std::path::Path;

use crate::anon::{AnonPolicy, AnonSystem};
use crate::codec::{acoustic_frame_vectors, AnalysisSpec};
use crate::config::Level;
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

use super::metrics::compute_eer;

/// Per-dimension mean then standard deviation of the acoustic frame vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding(pub Vec<f64>);

impl SpeakerEmbedding {
    pub fn extract(waveform: &Waveform, analysis: &AnalysisSpec) -> Result<Self> {
        let f = acoustic_frame_vectors(waveform, analysis)?;
        let mean = f.column_means();
        let mut var = vec![0.0; f.dim];
        for row in f.iter_rows() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let n = f.rows as f64;
        let mut e = mean;
        e.extend(var.iter().map(|v| (v / n).sqrt()));
        Ok(Self(e))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d > 0.0 {
        dot(a, b) / d
    } else {
        0.0
    }
}

/// Per-dimension centering and scaling by the pooled within-speaker
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Whitening {
    const MIN_STD: f64 = 1e-6;

    /// `speakers[i]` labels `embeddings[i]`; needs more embeddings than
    /// speakers.
    pub fn fit(embeddings: &[SpeakerEmbedding], speakers: &[&str]) -> Result<Self> {
        assert_eq!(embeddings.len(), speakers.len());
        let mut labels: Vec<&str> = speakers.to_vec();
        labels.sort_unstable();
        labels.dedup();
        let (n, k) = (embeddings.len(), labels.len());
        if n <= k {
            return Err(Error::InsufficientData { needed: k + 1, got: n });
        }
        let dim = embeddings[0].dim();
        let class: Vec<usize> = speakers.iter().map(|s| labels.binary_search(s).unwrap()).collect();
        let mut mean = vec![0.0; dim];
        let mut class_mean = vec![vec![0.0; dim]; k];
        let mut count = vec![0usize; k];
        for (e, &c) in embeddings.iter().zip(&class) {
            count[c] += 1;
            for ((m, cm), x) in mean.iter_mut().zip(class_mean[c].iter_mut()).zip(&e.0) {
                *m += x / n as f64;
                *cm += x;
            }
        }
        for (cm, &c) in class_mean.iter_mut().zip(&count) {
            cm.iter_mut().for_each(|v| *v /= c as f64);
        }
        let mut var = vec![0.0; dim];
        for (e, &c) in embeddings.iter().zip(&class) {
            for ((v, x), m) in var.iter_mut().zip(&e.0).zip(&class_mean[c]) {
                *v += (x - m) * (x - m) / (n - k) as f64;
            }
        }
        let scale = var.iter().map(|v| 1.0 / v.sqrt().max(Self::MIN_STD)).collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, e: &SpeakerEmbedding) -> Vec<f64> {
        e.0.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }
}

/// An utterance with its speaker label.
#[derive(Debug, Clone)]
pub struct Labeled {
    pub id: String,
    pub speaker: String,
    pub waveform: Waveform,
}

/// One verification trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
    pub target: bool,
}

/// Splits scores into target and non-target lists.
pub fn partition(scores: &[Score]) -> (Vec<f64>, Vec<f64>) {
    let (t, n): (Vec<&Score>, Vec<&Score>) = scores.iter().partition(|s| s.target);
    (t.iter().map(|s| s.score).collect(), n.iter().map(|s| s.score).collect())
}

pub fn scores_eer(scores: &[Score]) -> Result<f64> {
    let (t, n) = partition(scores);
    compute_eer(&t, &n)
}

fn embed_all(items: &[Labeled], analysis: &AnalysisSpec) -> Result<Vec<SpeakerEmbedding>> {
    items.iter().map(|u| SpeakerEmbedding::extract(&u.waveform, analysis)).collect()
}

fn distinct_speakers(items: &[Labeled]) -> usize {
    let mut s: Vec<&str> = items.iter().map(|u| u.speaker.as_str()).collect();
    s.sort_unstable();
    s.dedup();
    s.len()
}

/// Scores every enrollment against every trial with cosine similarity of
/// embeddings whitened on `external`.
pub fn score_trials(
    enroll: &[Labeled],
    trials: &[Labeled],
    external: &[Labeled],
    analysis: &AnalysisSpec,
) -> Result<Vec<Score>> {
    if enroll.is_empty() {
        return Err(Error::Empty("enrollment utterances"));
    }
    if trials.is_empty() {
        return Err(Error::Empty("trial utterances"));
    }
    if distinct_speakers(external) < 2 {
        return Err(Error::Validation("external data must cover at least two speakers".into()));
    }
    let speakers: Vec<&str> = external.iter().map(|u| u.speaker.as_str()).collect();
    let white = Whitening::fit(&embed_all(external, analysis)?, &speakers)?;
    let e: Vec<Vec<f64>> = embed_all(enroll, analysis)?.iter().map(|x| white.apply(x)).collect();
    let t: Vec<Vec<f64>> = embed_all(trials, analysis)?.iter().map(|x| white.apply(x)).collect();
    let mut out = Vec::with_capacity(enroll.len() * trials.len());
    for (eu, ev) in enroll.iter().zip(&e) {
        for (tu, tv) in trials.iter().zip(&t) {
            out.push(Score {
                enroll_id: eu.id.clone(),
                test_id: tu.id.clone(),
                score: cosine(ev, tv),
                target: eu.speaker == tu.speaker,
            });
        }
    }
    Ok(out)
}

/// Anonymizes every utterance under `level` and `seed`, keeping ids and
/// speaker labels.
pub fn anonymize_all(system: &AnonSystem, items: &[Labeled], level: Level, seed: u64) -> Result<Vec<Labeled>> {
    let policy = AnonPolicy {
        level,
        master_seed: seed,
    };
    items
        .iter()
        .map(|u| {
            Ok(Labeled {
                id: u.id.clone(),
                speaker: u.speaker.clone(),
                waveform: system.anonymize(&u.waveform, &u.speaker, &u.id, &policy)?.waveform,
            })
        })
        .collect()
}

/// Attacker with the anonymizer but its own seed: anonymizes external data
/// per utterance to fit whitening, enrollment per speaker, and scores the
/// defender's already anonymized `trials`.
pub fn semi_informed_attack(
    system: &AnonSystem,
    enroll: &[Labeled],
    trials: &[Labeled],
    external: &[Labeled],
    seed: u64,
) -> Result<Vec<Score>> {
    if trials.is_empty() {
        return Err(Error::Empty("trial utterances"));
    }
    if enroll.is_empty() {
        return Err(Error::Empty("enrollment utterances"));
    }
    let ext = anonymize_all(system, external, Level::Utterance, seed)?;
    let enr = anonymize_all(system, enroll, Level::Speaker, seed)?;
    score_trials(&enr, trials, &ext, &system.rvq.analysis)
}

/// One `enroll_id<TAB>test_id<TAB>score<TAB>target|nontarget` line per trial.
pub fn write_scores(out: &mut impl Write, scores: &[Score]) -> std::io::Result<()> {
    for s in scores {
        let label = if s.target { "target" } else { "nontarget" };
        writeln!(out, "{}\t{}\t{}\t{label}", s.enroll_id, s.test_id, s.score)?;
    }
    Ok(())
}

pub fn save_scores(path: &Path, scores: &[Score]) -> Result<()> {
    let mut buf = Vec::new();
    write_scores(&mut buf, scores).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_scores(text: &str) -> Result<Vec<Score>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("score line {}: {line:?}", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(Score {
                enroll_id: f[0].to_string(),
                test_id: f[1].to_string(),
                score: f[2].parse().map_err(|_| bad())?,
                target: match f[3] {
                    "target" => true,
                    "nontarget" => false,
                    _ => return Err(bad()),
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, amp: f32) -> Waveform {
        let samples = (0..8000)
            .map(|i| amp * (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin() as f32)
            .collect();
        Waveform::new(samples, 16_000)
    }

    #[test]
    fn embedding_is_mean_then_std() {
        let spec = AnalysisSpec::default();
        let e = SpeakerEmbedding::extract(&tone(150.0, 0.3), &spec).unwrap();
        assert_eq!(e.dim(), 2 * spec.dim());
        assert!(e.0.iter().all(|v| v.is_finite()));
        // stationary tone: every std entry is small
        assert!(e.0[spec.dim()..].iter().all(|&s| s < 0.1), "{:?}", &e.0[spec.dim()..]);
    }

    #[test]
    fn whitening_uses_within_speaker_spread() {
        // dim 0 separates speakers with small spread, dim 1 is pure noise
        let es: Vec<SpeakerEmbedding> = [(0.0, 1.0), (0.2, -1.0), (5.0, 3.0), (5.2, -3.0)]
            .iter()
            .map(|&(a, b)| SpeakerEmbedding(vec![a, b, 7.0]))
            .collect();
        let w = Whitening::fit(&es, &["a", "a", "b", "b"]).unwrap();
        assert_eq!(w.mean[..2], [2.6, 0.0]);
        // pooled within variances: (4·0.01)/2 = 0.02 and (2 + 18)/2 = 10
        assert!((w.scale[0] - 1.0 / 0.02f64.sqrt()).abs() < 1e-9);
        assert!((w.scale[1] - 1.0 / 10f64.sqrt()).abs() < 1e-9);
        assert!(w.apply(&es[0])[2] == 0.0);
        assert!(Whitening::fit(&es[..2], &["a", "b"]).is_err());
    }

    #[test]
    fn score_file_round_trips() {
        let scores = vec![
            Score {
                enroll_id: "a".into(),
                test_id: "b".into(),
                score: 0.125,
                target: true,
            },
            Score {
                enroll_id: "a".into(),
                test_id: "c".into(),
                score: -0.3,
                target: false,
            },
        ];
        let mut buf = Vec::new();
        write_scores(&mut buf, &scores).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "a\tb\t0.125\ttarget");
        assert_eq!(read_scores(&text).unwrap(), scores);
        assert!(read_scores("a\tb\tx\ttarget").is_err());
    }

    #[test]
    fn empty_sets_are_rejected() {
        let spec = AnalysisSpec::default();
        let u = |id: &str, spk: &str, hz: f64| Labeled {
            id: id.into(),
            speaker: spk.into(),
            waveform: tone(hz, 0.2),
        };
        let ext = vec![
            u("x1", "x", 120.0),
            u("x2", "x", 125.0),
            u("y1", "y", 200.0),
            u("y2", "y", 190.0),
        ];
        let enroll = vec![u("e1", "a", 140.0)];
        assert!(matches!(score_trials(&enroll, &[], &ext, &spec), Err(Error::Empty(_))));
        assert!(matches!(score_trials(&[], &enroll, &ext, &spec), Err(Error::Empty(_))));
        assert!(score_trials(&enroll, &enroll, &ext[..2], &spec).is_err());
        let s = score_trials(&enroll, &[u("t1", "a", 141.0), u("t2", "b", 250.0)], &ext, &spec).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].target && !s[1].target);
    }
}
