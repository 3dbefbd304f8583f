use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{Optimizer, TrainExample};
use super::transformer::{softmax_in_place, Attention, Transformer, TransformerConfig};
use super::{flatten_coarse, sample_logits, sinusoidal, CoarseVocab, Segment, TokenSequence};
use crate::codec::AcousticTokens;
use crate::error::{Error, Result};
use crate::semantic::SemanticTokens;

/// Amplitude of the sinusoidal position initialization.
const POSITION_INIT_SCALE: f64 = 0.05;
const FF_MULT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseLmConfig {
    pub vocab: CoarseVocab,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Maximum sequence length `P`.
    pub positions: usize,
    pub seed: u64,
}

/// Decoder-only model over flattened coarse sequences.
///
/// Each position embeds its token, its frame index within its segment and
/// its segment tag. A position whose successor is a target token also embeds
/// the semantic token aligned with that successor's frame and the
/// successor's codebook level, so the prediction at every target step sees
/// exactly which content frame it is rendering.
#[derive(Debug, Clone)]
pub struct CoarseLm {
    pub config: CoarseLmConfig,
    pub net: Transformer,
}

impl CoarseLm {
    pub fn new(config: CoarseLmConfig) -> Result<Self> {
        let net_cfg = Self::net_config(&config)?;
        let mut net = Transformer::new(net_cfg, config.seed)?;
        let v = config.vocab.size();
        net.embed_rows_mut(v, config.positions)
            .copy_from_slice(&sinusoidal(config.positions, config.width, POSITION_INIT_SCALE));
        Ok(Self { config, net })
    }

    pub(crate) fn net_config(config: &CoarseLmConfig) -> Result<TransformerConfig> {
        let v = config.vocab;
        if v.n_s == 0 || v.n_q == 0 || v.q_coarse == 0 || config.positions == 0 {
            return Err(Error::Config("coarse model needs non-empty vocabularies".into()));
        }
        Ok(TransformerConfig {
            input_rows: v.size() + config.positions + 3 + v.n_s + v.q_coarse,
            width: config.width,
            heads: config.heads,
            blocks: config.blocks,
            outputs: v.size(),
            ff_mult: FF_MULT,
        })
    }

    pub fn vocab(&self) -> CoarseVocab {
        self.config.vocab
    }

    fn pos_row(&self, frame: usize) -> u32 {
        (self.config.vocab.size() + frame) as u32
    }

    fn seg_row(&self, seg: Segment) -> u32 {
        (self.config.vocab.size() + self.config.positions + seg.index()) as u32
    }

    fn hint_row(&self, s: u32) -> u32 {
        (self.config.vocab.size() + self.config.positions + 3) as u32 + s
    }

    fn level_row(&self, level: usize) -> u32 {
        (self.config.vocab.size() + self.config.positions + 3 + self.config.vocab.n_s + level) as u32
    }

    fn rows_for(
        &self,
        id: u32,
        seg: Segment,
        frame: usize,
        next_target: Option<(usize, usize)>,
        s: &[u32],
    ) -> Vec<u32> {
        let mut rows = vec![id, self.pos_row(frame), self.seg_row(seg)];
        if let Some((t, level)) = next_target {
            if let Some(&st) = s.get(t) {
                rows.push(self.hint_row(st));
            }
            rows.push(self.level_row(level));
        }
        rows
    }

    /// Frame index of every position within its segment; semantic and
    /// target frames start at `offset`.
    fn frames(&self, seq: &TokenSequence, offset: usize) -> Vec<usize> {
        let qc = self.config.vocab.q_coarse;
        let mut counts = [0usize; 3];
        seq.segments
            .iter()
            .map(|&seg| {
                let c = &mut counts[seg.index()];
                let f = if seg == Segment::Semantic { *c } else { *c / qc };
                *c += 1;
                if seg == Segment::PromptCoarse {
                    f
                } else {
                    f + offset
                }
            })
            .collect()
    }

    fn check_capacity(&self, len: usize) -> Result<()> {
        if len > self.config.positions {
            return Err(Error::Capacity {
                len,
                capacity: self.config.positions,
            });
        }
        Ok(())
    }

    /// Embedding rows per position plus next-token targets on every position
    /// whose successor is a target token.
    pub fn encode(&self, seq: &TokenSequence) -> Result<TrainExample> {
        self.encode_at(seq, 0)
    }

    /// [`Self::encode`] for a crop whose semantic and target frames begin at
    /// frame `offset` of the utterance.
    pub fn encode_at(&self, seq: &TokenSequence, offset: usize) -> Result<TrainExample> {
        self.check_capacity(seq.len())?;
        if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= self.config.vocab.size()) {
            return Err(Error::Validation(format!("token id {id} outside vocabulary")));
        }
        let qc = self.config.vocab.q_coarse;
        let frames = self.frames(seq, offset);
        if let Some(&f) = frames.iter().max() {
            self.check_capacity(f + 1)?;
        }
        let s: Vec<u32> = seq
            .ids
            .iter()
            .zip(&seq.segments)
            .filter(|(_, &g)| g == Segment::Semantic)
            .map(|(&id, _)| id)
            .collect();
        let mut target_index = 0usize;
        let mut inputs = Vec::with_capacity(seq.len());
        let mut targets = Vec::new();
        for i in 0..seq.len() {
            let next = match seq.segments.get(i + 1) {
                Some(Segment::TargetCoarse) => {
                    let k = target_index;
                    target_index += 1;
                    targets.push((i, seq.ids[i + 1]));
                    Some((k / qc, k % qc))
                }
                _ => None,
            };
            inputs.push(self.rows_for(seq.ids[i], seq.segments[i], frames[i], next, &s));
        }
        Ok(TrainExample { inputs, targets })
    }

    /// Next-token distributions over the whole vocabulary at every position.
    pub fn forward(&self, seq: &TokenSequence) -> Result<Vec<Vec<f64>>> {
        let ex = self.encode(seq)?;
        let positions: Vec<usize> = (0..seq.len()).collect();
        let logits = self.net.logits(&ex.inputs, Attention::Causal, &positions)?;
        Ok(logits
            .chunks_exact(self.config.vocab.size())
            .map(|row| {
                let mut p = row.to_vec();
                softmax_in_place(&mut p);
                p
            })
            .collect())
    }

    pub fn optimizer(&self, lr: f64, momentum: f64) -> Optimizer {
        Optimizer::new(lr, momentum, 1.0, self.net.num_params())
    }

    /// One update on `batch`; returns the pre-update loss.
    pub fn train_step(
        &mut self,
        batch: &[TokenSequence],
        opt: &mut Optimizer,
        step: usize,
    ) -> Result<f64> {
        let examples = batch
            .iter()
            .map(|s| self.encode(s))
            .collect::<Result<Vec<_>>>()?;
        opt.step(&mut self.net, &examples, Attention::Causal, step)
    }

    /// Repeats `batch` for `steps` updates and returns the loss trace.
    pub fn train(
        &mut self,
        batch: &[TokenSequence],
        opt: &mut Optimizer,
        steps: usize,
    ) -> Result<Vec<f64>> {
        let examples = batch
            .iter()
            .map(|s| self.encode(s))
            .collect::<Result<Vec<_>>>()?;
        (0..steps)
            .map(|step| opt.step(&mut self.net, &examples, Attention::Causal, step))
            .collect()
    }

    /// Autoregressively samples `t_a` coarse frames after `s ++ prompt`.
    pub fn sample(
        &self,
        s: &SemanticTokens,
        prompt: &AcousticTokens,
        t_a: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<AcousticTokens> {
        if t_a == 0 {
            return Err(Error::Validation("must sample at least one frame".into()));
        }
        let vocab = self.config.vocab;
        let qc = vocab.q_coarse;
        let prefix = flatten_coarse(s, prompt, None, &vocab)?;
        let total = prefix.len() + qc * t_a;
        self.check_capacity(total)?;
        if t_a > self.config.positions {
            return Err(Error::Capacity {
                len: t_a,
                capacity: self.config.positions,
            });
        }
        let frames = self.frames(&prefix, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.net.start_decode(total);
        let mut logits = Vec::new();
        for i in 0..prefix.len() {
            let next = (i + 1 == prefix.len()).then_some((0, 0));
            let rows = self.rows_for(prefix.ids[i], prefix.segments[i], frames[i], next, &s.tokens);
            logits = self.net.step(&mut state, &rows)?;
        }
        let mut out = vec![vec![0u32; t_a]; qc];
        for k in 0..qc * t_a {
            let (t, level) = (k / qc, k % qc);
            let start = vocab.n_s + level * vocab.n_q;
            let tok = sample_logits(&logits[start..start + vocab.n_q], temperature, &mut rng) as u32;
            out[level][t] = tok;
            if k + 1 < qc * t_a {
                let next = Some(((k + 1) / qc, (k + 1) % qc));
                let rows = self.rows_for(
                    vocab.acoustic_id(level, tok),
                    Segment::TargetCoarse,
                    t,
                    next,
                    &s.tokens,
                );
                logits = self.net.step(&mut state, &rows)?;
            }
        }
        AcousticTokens::from_rows(&out)
    }
}
