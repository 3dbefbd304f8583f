//! Token language models over semantic and acoustic tokens.
//!
//! [`CoarseLm`] autoregressively predicts the first `q_coarse` codebook rows
//! from the flattened sequence `(s, prompt coarse, target coarse)`. One
//! [`FineLm`] per remaining level predicts a whole row at once from the full
//! prompt grid and the rows below it, never seeing `s`.

mod coarse;
mod fine;
mod io;
mod optim;
mod transformer;

pub use coarse::{CoarseLm, CoarseLmConfig};
pub use fine::{FineExample, FineLm, FineLmConfig, FineStack};
pub use optim::{Optimizer, TrainExample};
pub use transformer::{Attention, DecodeState, TensorInfo, Transformer, TransformerConfig};

use rand::Rng;

use crate::codec::AcousticTokens;
use crate::error::{Error, Result};
use crate::semantic::SemanticTokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Semantic,
    PromptCoarse,
    TargetCoarse,
}

impl Segment {
    fn index(self) -> usize {
        match self {
            Segment::Semantic => 0,
            Segment::PromptCoarse => 1,
            Segment::TargetCoarse => 2,
        }
    }
}

/// Flattened coarse-model input over the unified vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of positions tagged `segment`.
    pub fn count(&self, segment: Segment) -> usize {
        self.segments.iter().filter(|&&s| s == segment).count()
    }
}

/// Unified vocabulary: semantic ids first, then one block of `n_q` ids per
/// coarse codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseVocab {
    pub n_s: usize,
    pub n_q: usize,
    pub q_coarse: usize,
}

impl CoarseVocab {
    pub fn size(&self) -> usize {
        self.n_s + self.q_coarse * self.n_q
    }

    pub fn acoustic_id(&self, level: usize, token: u32) -> u32 {
        (self.n_s + level * self.n_q) as u32 + token
    }

    /// `(level, token)` of an acoustic id, `None` for semantic ids.
    pub fn split_acoustic(&self, id: u32) -> Option<(usize, u32)> {
        let id = id as usize;
        if id < self.n_s || id >= self.size() {
            return None;
        }
        let off = id - self.n_s;
        Some((off / self.n_q, (off % self.n_q) as u32))
    }
}

/// Builds `s ++ prompt coarse ++ target coarse`, acoustic parts frame-major
/// (`a₁,₁ a₂,₁ a₁,₂ …`).
pub fn flatten_coarse(
    s: &SemanticTokens,
    prompt: &AcousticTokens,
    target: Option<&AcousticTokens>,
    vocab: &CoarseVocab,
) -> Result<TokenSequence> {
    let qc = vocab.q_coarse;
    for (what, g) in [("prompt", Some(prompt)), ("target", target)] {
        if let Some(g) = g {
            if g.rows() < qc {
                return Err(Error::Incompatible(format!(
                    "{what} has {} rows, need {qc} coarse rows",
                    g.rows()
                )));
            }
            g.top_rows(qc)?.validate(vocab.n_q)?;
        }
    }
    if let Some(&t) = s.tokens.iter().find(|&&t| t as usize >= vocab.n_s) {
        return Err(Error::Validation(format!(
            "semantic token {t} outside [0, {})",
            vocab.n_s
        )));
    }
    let mut ids: Vec<u32> = s.tokens.clone();
    let mut segments = vec![Segment::Semantic; ids.len()];
    for (g, seg) in [
        (Some(prompt), Segment::PromptCoarse),
        (target, Segment::TargetCoarse),
    ] {
        if let Some(g) = g {
            for t in 0..g.frames() {
                for q in 0..qc {
                    ids.push(vocab.acoustic_id(q, g.get(q, t)));
                    segments.push(seg);
                }
            }
        }
    }
    Ok(TokenSequence { ids, segments })
}

/// Inverse of [`flatten_coarse`]; returns the coarse rows only.
pub fn unflatten_coarse(
    seq: &TokenSequence,
    vocab: &CoarseVocab,
) -> Result<(SemanticTokens, AcousticTokens, Option<AcousticTokens>)> {
    if seq.ids.len() != seq.segments.len() {
        return Err(Error::Validation("ids and segment tags differ in length".into()));
    }
    let order = |s: Segment| s.index();
    if seq.segments.windows(2).any(|w| order(w[0]) > order(w[1])) {
        return Err(Error::Validation("segments out of order".into()));
    }
    let mut s = Vec::new();
    let qc = vocab.q_coarse;
    let mut rows = [vec![vec![]; qc], vec![vec![]; qc]];
    let mut counts = [0usize; 2];
    for (&id, &seg) in seq.ids.iter().zip(&seq.segments) {
        match seg {
            Segment::Semantic => {
                if id as usize >= vocab.n_s {
                    return Err(Error::Validation(format!("id {id} is not semantic")));
                }
                s.push(id);
            }
            Segment::PromptCoarse | Segment::TargetCoarse => {
                let b = seg.index() - 1;
                let expect = counts[b] % qc;
                match vocab.split_acoustic(id) {
                    Some((q, tok)) if q == expect => rows[b][q].push(tok),
                    _ => {
                        return Err(Error::Validation(format!(
                            "id {id} is not a level-{expect} acoustic token"
                        )))
                    }
                }
                counts[b] += 1;
            }
        }
    }
    if counts.iter().any(|c| c % qc != 0) {
        return Err(Error::Validation("incomplete final frame".into()));
    }
    let [prompt_rows, target_rows] = rows;
    let prompt = AcousticTokens::from_rows(&prompt_rows)?;
    let target = if counts[1] == 0 {
        None
    } else {
        Some(AcousticTokens::from_rows(&target_rows)?)
    };
    Ok((SemanticTokens { tokens: s }, prompt, target))
}

/// Samples an index from `logits / temperature`; temperature 0 is argmax
/// (ties to the lowest index).
pub(crate) fn sample_logits<R: Rng>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let mut p: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    transformer::softmax_in_place(&mut p);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Sinusoidal initialization for learned position embeddings.
pub(crate) fn sinusoidal(rows: usize, width: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; rows * width];
    for (pos, row) in out.chunks_exact_mut(width).enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            let freq = 1.0 / 10_000f64.powf((2 * (j / 2)) as f64 / width as f64);
            let a = pos as f64 * freq;
            *x = scale * if j % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    out
}
