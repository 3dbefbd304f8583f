//! Prompt pool, pseudo-speaker selection and the anonymization pipeline.

use std::fs;
use std::path::Path;

use crate::binio::{load, ByteReader, ByteWriter};
use crate::codec::{self, AcousticTokens, RvqStack};
use crate::config::{Config, Level};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::lm::{CoarseLm, FineStack};
use crate::semantic::{self, SemanticCodebook, SemanticTokens};

const POOL_MAGIC: &[u8; 4] = b"POOL";
const POOL_VERSION: u32 = 1;

pub const SEMANTIC_FILE: &str = "semantic.semq";
pub const CODEC_FILE: &str = "codec.nacq";
pub const COARSE_FILE: &str = "coarse.clmq";
pub const FINE_FILE: &str = "fine.flmq";
pub const POOL_FILE: &str = "pool.pool";
pub const CONFIG_FILE: &str = "config.txt";

/// 64-bit FNV-1a over the UTF-8 of `parts` joined with the unit separator
/// `0x1F`.
pub fn stable_hash(parts: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            h = (h ^ 0x1f).wrapping_mul(PRIME);
        }
        for &b in part.as_bytes() {
            h = (h ^ b as u64).wrapping_mul(PRIME);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub prompt_id: String,
    pub tokens: AcousticTokens,
    pub label: Option<String>,
}

/// Acoustic prompts of the external pseudo-speakers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPool {
    pub entries: Vec<PoolEntry>,
    pub source: String,
}

/// One pool input: an id, optional label (speaker id) and the audio.
pub struct PromptSource<'a> {
    pub prompt_id: &'a str,
    pub label: Option<&'a str>,
    pub waveform: &'a Waveform,
}

/// Encodes every source and keeps at most `prompt_frames` leading frames.
pub fn build_prompt_pool(
    sources: &[PromptSource],
    rvq: &RvqStack,
    prompt_frames: usize,
    source: &str,
) -> Result<PromptPool> {
    if sources.is_empty() {
        return Err(Error::Empty("prompt pool sources"));
    }
    let entries = sources
        .iter()
        .map(|s| {
            Ok(PoolEntry {
                prompt_id: s.prompt_id.to_string(),
                tokens: codec::encode(s.waveform, rvq)?.truncate_frames(prompt_frames),
                label: s.label.map(str::to_string),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PromptPool {
        entries,
        source: source.to_string(),
    })
}

impl PromptPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(POOL_MAGIC, POOL_VERSION);
        w.str(&self.source);
        w.len_u32(self.entries.len());
        for e in &self.entries {
            w.str(&e.prompt_id);
            match &e.label {
                Some(l) => {
                    w.u32(1);
                    w.str(l);
                }
                None => w.u32(0),
            }
            w.len_u32(e.tokens.rows());
            w.len_u32(e.tokens.frames());
            for &t in e.tokens.as_slice() {
                w.u32(t);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "prompt pool");
        let version = r.header(POOL_MAGIC)?;
        if version != POOL_VERSION {
            return Err(Error::UnsupportedFormat(format!("prompt pool version {version}")));
        }
        let source = r.str()?;
        let n = r.usize()?;
        let mut entries = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let prompt_id = r.str()?;
            let label = match r.u32()? {
                0 => None,
                1 => Some(r.str()?),
                f => return Err(Error::Format(format!("prompt pool: bad label flag {f}"))),
            };
            let rows = r.usize()?;
            let frames = r.usize()?;
            let count = rows
                .checked_mul(frames)
                .ok_or_else(|| Error::Format("prompt pool: grid size overflow".into()))?;
            let grid = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            entries.push(PoolEntry {
                prompt_id,
                tokens: AcousticTokens::new(rows, frames, grid)?,
                label,
            });
        }
        r.finish()?;
        Ok(Self { entries, source })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnonPolicy {
    pub level: Level,
    pub master_seed: u64,
}

/// Index of the pool entry used for this speaker or utterance.
pub fn select_pseudo_speaker(
    pool: &PromptPool,
    policy: &AnonPolicy,
    speaker_id: &str,
    utterance_id: &str,
) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::Empty("prompt pool"));
    }
    let seed = policy.master_seed.to_string();
    let h = match policy.level {
        Level::Speaker => stable_hash(&[&seed, speaker_id]),
        Level::Utterance => stable_hash(&[&seed, speaker_id, utterance_id]),
    };
    Ok((h % pool.len() as u64) as usize)
}

/// A trained anonymizer.
#[derive(Debug, Clone)]
pub struct AnonSystem {
    pub semantic: SemanticCodebook,
    pub rvq: RvqStack,
    pub coarse: CoarseLm,
    pub fine: FineStack,
    pub pool: PromptPool,
    pub config: Config,
}

/// Result of one anonymization call.
#[derive(Debug, Clone)]
pub struct Anonymized {
    pub waveform: Waveform,
    pub prompt_index: usize,
    pub semantic: SemanticTokens,
    pub tokens: AcousticTokens,
}

impl AnonSystem {
    /// Checks that every component agrees on `N_S`, `N_Q`, `Q` and `Q_C`.
    pub fn validate(&self) -> Result<()> {
        let v = self.coarse.vocab();
        let fine_nq = self.fine.levels.first().map(|m| m.config.n_q);
        let mismatch = |what: &str| Err(Error::Incompatible(format!("{what} disagree")));
        self.rvq.validate()?;
        self.fine.validate()?;
        if v.n_s != self.semantic.n_s() {
            return mismatch("semantic codebook and coarse vocabulary");
        }
        if v.n_q != self.rvq.n_q() || fine_nq != Some(self.rvq.n_q()) {
            return mismatch("codebook sizes of codec and language models");
        }
        if v.q_coarse != self.rvq.q_coarse || self.fine.q_coarse != self.rvq.q_coarse {
            return mismatch("coarse codebook counts");
        }
        if self.fine.q() != self.rvq.q() {
            return mismatch("codec and fine stage codebook counts");
        }
        for e in &self.pool.entries {
            if e.tokens.rows() != self.rvq.q() {
                return mismatch("prompt pool and codec codebook counts");
            }
            e.tokens.validate(self.rvq.n_q())?;
        }
        if self.semantic.frontend.frame.hop != self.rvq.analysis.frame.hop {
            return mismatch("semantic and acoustic hops");
        }
        Ok(())
    }

    pub fn policy(&self, level: Level, master_seed: u64) -> AnonPolicy {
        AnonPolicy { level, master_seed }
    }

    pub fn anonymize(
        &self,
        waveform: &Waveform,
        speaker_id: &str,
        utterance_id: &str,
        policy: &AnonPolicy,
    ) -> Result<Anonymized> {
        let s = semantic::tokenize(waveform, &self.semantic)?;
        let prompt_index = select_pseudo_speaker(&self.pool, policy, speaker_id, utterance_id)?;
        let prompt = &self.pool.entries[prompt_index].tokens;
        let seed = policy.master_seed.to_string();
        let coarse_seed = stable_hash(&[&seed, "coarse", utterance_id]);
        let fine_seed = stable_hash(&[&seed, "fine", utterance_id]);
        let temperature = self.config.temperature;
        let coarse = self.coarse.sample(
            &s,
            &prompt.top_rows(self.rvq.q_coarse)?,
            s.len(),
            temperature,
            coarse_seed,
        )?;
        let tokens = self.fine.sample(prompt, &coarse, self.config.fine_temperature, fine_seed)?;
        let waveform = codec::decode(&tokens, &self.rvq)?;
        log::debug!("{utterance_id}: prompt {}", self.pool.entries[prompt_index].prompt_id);
        Ok(Anonymized {
            waveform,
            prompt_index,
            semantic: s,
            tokens,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.semantic.save(&dir.join(SEMANTIC_FILE))?;
        self.rvq.save(&dir.join(CODEC_FILE))?;
        self.coarse.save(&dir.join(COARSE_FILE))?;
        self.fine.save(&dir.join(FINE_FILE))?;
        self.pool.save(&dir.join(POOL_FILE))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.config.render()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let system = Self {
            semantic: SemanticCodebook::load(&dir.join(SEMANTIC_FILE))?,
            rvq: RvqStack::load(&dir.join(CODEC_FILE))?,
            coarse: CoarseLm::load(&dir.join(COARSE_FILE))?,
            fine: FineStack::load(&dir.join(FINE_FILE))?,
            pool: PromptPool::load(&dir.join(POOL_FILE))?,
            config: Config::load(&dir.join(CONFIG_FILE))?,
        };
        system.validate()?;
        Ok(system)
    }
}
