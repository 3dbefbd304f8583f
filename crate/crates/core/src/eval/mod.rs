//! Privacy and utility evaluation: semi-informed attack EER, F0 correlation,
//! voice distinctiveness gain and content error rate.

mod asv;
mod content;
mod metrics;

pub use asv::{
    anonymize_all, cosine, partition, read_scores, save_scores, score_trials, scores_eer, semi_informed_attack,
    write_scores, Labeled, Score, SpeakerEmbedding, Whitening,
};
pub use content::{ContentClassifier, LabeledFrames};
pub use metrics::{
    compute_eer, f0_curve_correlation, levenshtein, pearson, pitch_correlation, unit_error_rate,
    voice_distinctiveness_gain, SimilarityMatrix, DD_FLOOR, MIN_JOINT_VOICED,
};

use std::fmt;

use crate::anon::AnonSystem;
use crate::codec::AnalysisSpec;
use crate::config::{Config, Level};
use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::pipeline::Split;

/// Table-style summary of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub eer_original: f64,
    pub eer_anonymized: f64,
    pub target_trials: usize,
    pub nontarget_trials: usize,
    /// Mean over utterances with a defined correlation.
    pub rho_f0: Option<f64>,
    pub rho_f0_defined: usize,
    pub rho_f0_undefined: usize,
    pub g_vd_db: f64,
    pub g_vd_speakers: usize,
    pub content_error_original: f64,
    pub content_error_anonymized: f64,
    pub content_trials: usize,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eer_original = {:.6}", self.eer_original)?;
        writeln!(f, "eer_anonymized = {:.6}", self.eer_anonymized)?;
        writeln!(f, "target_trials = {}", self.target_trials)?;
        writeln!(f, "nontarget_trials = {}", self.nontarget_trials)?;
        match self.rho_f0 {
            Some(r) => writeln!(f, "rho_f0 = {r:.6}")?,
            None => writeln!(f, "rho_f0 = undefined")?,
        }
        writeln!(f, "rho_f0_defined = {}", self.rho_f0_defined)?;
        writeln!(f, "rho_f0_undefined = {}", self.rho_f0_undefined)?;
        writeln!(f, "g_vd_db = {:.6}", self.g_vd_db)?;
        writeln!(f, "g_vd_speakers = {}", self.g_vd_speakers)?;
        writeln!(f, "content_error_original = {:.6}", self.content_error_original)?;
        writeln!(f, "content_error_anonymized = {:.6}", self.content_error_anonymized)?;
        writeln!(f, "content_trials = {}", self.content_trials)
    }
}

/// Enrollment, trial and external sets of a corpus.
#[derive(Debug, Clone)]
pub struct Protocol<'a> {
    pub enroll: Vec<&'a Utterance>,
    pub trials: Vec<&'a Utterance>,
    pub external: Vec<&'a Utterance>,
}

impl<'a> Protocol<'a> {
    /// The lowest-index `enroll_utterances` of every test speaker enroll, the
    /// rest are trials; external speakers provide the attacker's data.
    pub fn new(config: &Config, corpus: &'a Corpus, split: &Split) -> Result<Self> {
        let mut enroll = Vec::new();
        let mut trials = Vec::new();
        for &s in &split.test {
            let mut utts: Vec<&Utterance> = corpus.by_speaker(s).collect();
            utts.sort_by_key(|u| u.index);
            if utts.len() <= config.enroll_utterances {
                return Err(Error::InsufficientData {
                    needed: config.enroll_utterances + 1,
                    got: utts.len(),
                });
            }
            let rest = utts.split_off(config.enroll_utterances);
            enroll.extend(utts);
            trials.extend(rest);
        }
        let external = split.external.iter().flat_map(|&s| corpus.by_speaker(s)).collect();
        Ok(Self {
            enroll,
            trials,
            external,
        })
    }
}

fn labeled(utts: &[&Utterance]) -> Vec<Labeled> {
    utts.iter()
        .map(|u| Labeled {
            id: u.utt_id.clone(),
            speaker: u.speaker_id.clone(),
            waveform: u.waveform.clone(),
        })
        .collect()
}

fn frames<'a>(items: &'a [Labeled], utts: &[&'a Utterance]) -> Vec<LabeledFrames<'a>> {
    items
        .iter()
        .zip(utts)
        .map(|(l, u)| LabeledFrames {
            waveform: &l.waveform,
            labels: &u.labels,
        })
        .collect()
}

/// Mean whitened-cosine similarity between the utterance sets of every pair
/// of speakers; self-pairs are excluded from the diagonal.
pub fn speaker_similarity(items: &[Labeled], analysis: &AnalysisSpec) -> Result<SimilarityMatrix> {
    let mut speakers: Vec<&str> = items.iter().map(|u| u.speaker.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    let emb = items
        .iter()
        .map(|u| SpeakerEmbedding::extract(&u.waveform, analysis))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<&str> = items.iter().map(|u| u.speaker.as_str()).collect();
    let white = Whitening::fit(&emb, &labels)?;
    let z: Vec<Vec<f64>> = emb.iter().map(|e| white.apply(e)).collect();
    let idx: Vec<usize> = items
        .iter()
        .map(|u| speakers.binary_search(&u.speaker.as_str()).unwrap())
        .collect();
    let k = speakers.len();
    let mut sum = vec![0.0; k * k];
    let mut count = vec![0usize; k * k];
    for (a, za) in z.iter().enumerate() {
        for (b, zb) in z.iter().enumerate() {
            if a != b {
                let c = idx[a] * k + idx[b];
                sum[c] += cosine(za, zb);
                count[c] += 1;
            }
        }
    }
    if count.contains(&0) {
        return Err(Error::Validation("every speaker needs at least two utterances".into()));
    }
    SimilarityMatrix::new(k, sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect())
}

/// Everything produced by [`evaluate`].
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub scores_original: Vec<Score>,
    pub scores_anonymized: Vec<Score>,
    /// Defender output for every trial utterance.
    pub anonymized_trials: Vec<Labeled>,
}

/// Runs the full protocol on `corpus` with the defender and attacker seeds
/// of `system.config`.
pub fn evaluate(system: &AnonSystem, corpus: &Corpus) -> Result<Evaluation> {
    let config = &system.config;
    let split = Split::new(config, corpus)?;
    let protocol = Protocol::new(config, corpus, &split)?;
    let analysis = &system.rvq.analysis;
    let enroll = labeled(&protocol.enroll);
    let trials = labeled(&protocol.trials);
    let external = labeled(&protocol.external);

    let scores_original = score_trials(&enroll, &trials, &external, analysis)?;
    let eer_original = scores_eer(&scores_original)?;
    log::info!("original EER {eer_original:.4}");

    let anon_trials = anonymize_all(system, &trials, config.level, config.anon_seed)?;
    let anon_external = anonymize_all(system, &external, Level::Utterance, config.attacker_seed)?;
    let anon_enroll = anonymize_all(system, &enroll, Level::Speaker, config.attacker_seed)?;
    let scores_anonymized = score_trials(&anon_enroll, &anon_trials, &anon_external, analysis)?;
    let eer_anonymized = scores_eer(&scores_anonymized)?;
    log::info!("anonymized EER {eer_anonymized:.4}");

    let rhos: Vec<Option<f64>> = trials
        .iter()
        .zip(&anon_trials)
        .map(|(o, a)| pitch_correlation(&o.waveform, &a.waveform, &analysis.frame))
        .collect();
    let defined: Vec<f64> = rhos.iter().flatten().copied().collect();
    let rho_f0 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);

    let orig_sim = speaker_similarity(&trials, analysis)?;
    let anon_sim = speaker_similarity(&anon_trials, analysis)?;
    let g_vd_db = voice_distinctiveness_gain(&orig_sim, &anon_sim)?;

    let frontend = config.frontend();
    let clf = ContentClassifier::fit(frontend, &frames(&external, &protocol.external))?;
    let content_error_original = clf.error_rate(&frames(&trials, &protocol.trials))?;
    let clf = ContentClassifier::fit(frontend, &frames(&anon_external, &protocol.external))?;
    let content_error_anonymized = clf.error_rate(&frames(&anon_trials, &protocol.trials))?;

    let (t, n) = partition(&scores_original);
    let report = MetricsReport {
        eer_original,
        eer_anonymized,
        target_trials: t.len(),
        nontarget_trials: n.len(),
        rho_f0,
        rho_f0_defined: defined.len(),
        rho_f0_undefined: rhos.len() - defined.len(),
        g_vd_db,
        g_vd_speakers: orig_sim.k,
        content_error_original,
        content_error_anonymized,
        content_trials: trials.len(),
    };
    Ok(Evaluation {
        report,
        scores_original,
        scores_anonymized,
        anonymized_trials: anon_trials,
    })
}
