//! End-to-end training on a corpus and the corpus split used by evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anon::{build_prompt_pool, AnonSystem, PromptSource};
use crate::codec::{self, acoustic_frame_vectors, AcousticTokens};
use crate::config::Config;
use crate::corpus::{mix_seed, Corpus, Utterance};
use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::lm::{
    flatten_coarse, Attention, CoarseLm, CoarseLmConfig, CoarseVocab, FineExample, FineLm, FineLmConfig,
    FineStack, Optimizer, TrainExample,
};
use crate::semantic::{self, SemanticTokens};

/// Speaker roles: prompt pool, external (attacker) data, and test speakers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub pool: Vec<usize>,
    pub external: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Speakers are ranked by first appearance in the corpus.
    pub fn new(config: &Config, corpus: &Corpus) -> Result<Self> {
        let mut order: Vec<usize> = Vec::new();
        for u in &corpus.utterances {
            if !order.contains(&u.speaker_index) {
                order.push(u.speaker_index);
            }
        }
        let (p, e) = (config.pool_speakers, config.external_speakers);
        if order.len() < p + e + 2 {
            return Err(Error::InsufficientData {
                needed: p + e + 2,
                got: order.len(),
            });
        }
        Ok(Self {
            pool: order[..p].to_vec(),
            external: order[p..p + e].to_vec(),
            test: order[p + e..].to_vec(),
        })
    }

    /// Speakers whose audio trains the models.
    pub fn training(&self) -> Vec<usize> {
        self.pool.iter().chain(&self.external).copied().collect()
    }
}

/// Final training losses per model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub semantic_mse: f64,
    pub codec_mse: Vec<f64>,
    pub coarse_loss: f64,
    pub fine_loss: Vec<f64>,
}

impl std::fmt::Display for TrainReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "semantic quantization mse {:.6}", self.semantic_mse)?;
        let stages: Vec<String> = self.codec_mse.iter().map(|m| format!("{m:.6}")).collect();
        writeln!(f, "codec mse by codebooks used {}", stages.join(" "))?;
        writeln!(f, "coarse loss {:.4}", self.coarse_loss)?;
        for (i, l) in self.fine_loss.iter().enumerate() {
            writeln!(f, "fine level {} loss {l:.4}", i + self.codec_mse.len() - self.fine_loss.len())?;
        }
        Ok(())
    }
}

/// Tokenized training utterance.
struct Tokenized {
    speaker: usize,
    s: SemanticTokens,
    a: AcousticTokens,
}

/// Mean of the last `k` entries.
fn tail_mean(trace: &[f64], k: usize) -> f64 {
    let t = &trace[trace.len().saturating_sub(k)..];
    t.iter().sum::<f64>() / t.len().max(1) as f64
}

/// Random `len`-frame window of `a` (the whole grid when shorter).
fn window(a: &AcousticTokens, len: usize, rng: &mut ChaCha8Rng) -> Result<(usize, AcousticTokens)> {
    if a.frames() <= len {
        return Ok((0, a.clone()));
    }
    let start = rng.gen_range(0..=a.frames() - len);
    Ok((start, a.slice_frames(start, len)?))
}

/// A different utterance of the same speaker, or the utterance itself when
/// the speaker has only one.
fn prompt_partner<'a>(data: &'a [Tokenized], i: usize, rng: &mut ChaCha8Rng) -> &'a Tokenized {
    let same: Vec<&Tokenized> = data
        .iter()
        .enumerate()
        .filter(|&(j, d)| j != i && d.speaker == data[i].speaker)
        .map(|(_, d)| d)
        .collect();
    same.choose(rng).copied().unwrap_or(&data[i])
}

fn coarse_example(
    lm: &CoarseLm,
    data: &[Tokenized],
    config: &Config,
    rng: &mut ChaCha8Rng,
) -> Result<TrainExample> {
    let i = rng.gen_range(0..data.len());
    let d = &data[i];
    let (_, prompt) = window(&prompt_partner(data, i, rng).a, config.prompt_frames, rng)?;
    let crop = if config.coarse_crop_frames == 0 {
        d.a.frames()
    } else {
        config.coarse_crop_frames
    };
    let (offset, target) = window(&d.a, crop, rng)?;
    let s = SemanticTokens {
        tokens: d.s.tokens[offset..offset + target.frames()].to_vec(),
    };
    let seq = flatten_coarse(&s, &prompt, Some(&target), &lm.vocab())?;
    lm.encode_at(&seq, offset)
}

fn fine_example(data: &[Tokenized], config: &Config, rng: &mut ChaCha8Rng) -> Result<FineExample> {
    let i = rng.gen_range(0..data.len());
    let (_, prompt) = window(&prompt_partner(data, i, rng).a, config.prompt_frames, rng)?;
    Ok(FineExample {
        prompt,
        target: data[i].a.clone(),
    })
}

fn feature_stack(utts: &[&Utterance], f: impl Fn(&Utterance) -> Result<FeatureMatrix>) -> Result<FeatureMatrix> {
    let parts = utts.iter().map(|u| f(u)).collect::<Result<Vec<_>>>()?;
    FeatureMatrix::concat(&parts)
}

/// Trains every component on the pool and external speakers of `corpus`.
pub fn train_system(config: &Config, corpus: &Corpus) -> Result<(AnonSystem, TrainReport)> {
    config.validate()?;
    let split = Split::new(config, corpus)?;
    let speakers = split.training();
    let utts: Vec<&Utterance> = corpus
        .utterances
        .iter()
        .filter(|u| speakers.contains(&u.speaker_index))
        .collect();
    let seed = config.train_seed;

    let frontend = config.frontend();
    let sem_features = feature_stack(&utts, |u| frontend.features(&u.waveform))?;
    let sem = semantic::train_semantic(&sem_features, config.n_s, mix_seed(&[seed, 1]), frontend)?;
    let semantic_mse = sem.quantization_error(&sem_features);
    log::info!("semantic codebook: {} entries, mse {semantic_mse:.5}", sem.n_s());

    let analysis = config.analysis();
    let ac_features = feature_stack(&utts, |u| acoustic_frame_vectors(&u.waveform, &analysis))?;
    let rvq = codec::train_rvq(&ac_features, &config.rvq_params(), analysis)?;
    let codec_mse = rvq.stage_mse(&ac_features)?;
    log::info!("codec: {} codebooks, mse {codec_mse:.5?}", rvq.q());

    let data = utts
        .iter()
        .map(|u| {
            let s = semantic::tokenize(&u.waveform, &sem)?;
            let a = codec::encode(&u.waveform, &rvq)?;
            let t = s.len().min(a.frames());
            Ok(Tokenized {
                speaker: u.speaker_index,
                s: SemanticTokens {
                    tokens: s.tokens[..t].to_vec(),
                },
                a: a.truncate_frames(t),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let vocab = CoarseVocab {
        n_s: config.n_s,
        n_q: config.n_q,
        q_coarse: config.q_coarse,
    };
    let mut coarse = CoarseLm::new(CoarseLmConfig {
        vocab,
        width: config.lm_width,
        heads: config.lm_heads,
        blocks: config.lm_blocks,
        positions: config.lm_positions,
        seed: mix_seed(&[seed, 2]),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 3]));
    let mut opt = coarse.optimizer(config.coarse_lr, config.momentum);
    let mut trace = Vec::with_capacity(config.coarse_steps);
    for step in 0..config.coarse_steps {
        let batch = (0..config.coarse_batch)
            .map(|_| coarse_example(&coarse, &data, config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        trace.push(opt.step(&mut coarse.net, &batch, Attention::Causal, step)?);
        if step % 50 == 0 {
            log::info!("coarse step {step}: loss {:.4}", tail_mean(&trace, 50));
        }
    }
    coarse.round_params();
    let coarse_loss = tail_mean(&trace, 20);
    log::info!("coarse final loss {coarse_loss:.4}");

    let mut levels = Vec::new();
    let mut fine_loss = Vec::new();
    for level in config.q_coarse..config.q {
        let mut m = FineLm::new(FineLmConfig {
            q: config.q,
            n_q: config.n_q,
            level,
            width: config.lm_width,
            heads: config.lm_heads,
            blocks: config.lm_blocks,
            positions: config.lm_positions,
            use_positions: true,
            seed: mix_seed(&[seed, 4, level as u64]),
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 5, level as u64]));
        let mut opt = Optimizer::new(config.fine_lr, config.momentum, 1.0, m.net.num_params());
        let mut trace = Vec::with_capacity(config.fine_steps);
        for step in 0..config.fine_steps {
            let batch = (0..config.fine_batch)
                .map(|_| fine_example(&data, config, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            trace.push(m.train_step(&batch, &mut opt, step)?);
        }
        fine_loss.push(tail_mean(&trace, 20));
        log::info!("fine level {level} final loss {:.4}", fine_loss.last().unwrap());
        levels.push(m);
    }
    let mut fine = FineStack {
        q_coarse: config.q_coarse,
        levels,
    };
    fine.round_params();

    let pool_utts: Vec<&Utterance> = split
        .pool
        .iter()
        .filter_map(|&s| corpus.by_speaker(s).min_by_key(|u| u.index))
        .collect();
    let sources: Vec<PromptSource> = pool_utts
        .iter()
        .map(|u| PromptSource {
            prompt_id: &u.utt_id,
            label: Some(&u.speaker_id),
            waveform: &u.waveform,
        })
        .collect();
    let pool = build_prompt_pool(&sources, &rvq, config.prompt_frames, "corpus pool speakers")?;

    let system = AnonSystem {
        semantic: sem,
        rvq,
        coarse,
        fine,
        pool,
        config: config.clone(),
    };
    system.validate()?;
    Ok((
        system,
        TrainReport {
            semantic_mse,
            codec_mse,
            coarse_loss,
            fine_loss,
        },
    ))
}
