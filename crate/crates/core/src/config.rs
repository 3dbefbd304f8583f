//! Flat `key = value` configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys and malformed
//! values are rejected. [`Config::render`] writes every key, so a rendered
//! config parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::codec::{AnalysisSpec, RvqParams};
use crate::corpus::CorpusSpec;
use crate::dsp::{FrameSpec, Window};
use crate::error::{Error, Result};
use crate::semantic::SemanticFrontend;

/// Anonymization granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Speaker,
    Utterance,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speaker" => Ok(Level::Speaker),
            "utterance" => Ok(Level::Utterance),
            _ => Err(Error::Config(format!("level must be speaker or utterance, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Speaker => "speaker",
            Level::Utterance => "utterance",
        })
    }
}

macro_rules! config {
    ($($key:ident : $ty:ty = $default:expr, $doc:literal;)*) => {
        /// Every tunable of the system.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $(#[doc = $doc] pub $key: $ty,)*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl Config {
            /// `(key, default, description)` for every key.
            pub fn keys() -> Vec<(&'static str, String, &'static str)> {
                let d = Self::default();
                vec![$((stringify!($key), d.$key.to_string(), $doc),)*]
            }

            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = value.parse().map_err(|_| {
                            Error::Config(format!("bad value {value:?} for {key}"))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Every key with its current value, one `key = value` line each.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{} = {}", stringify!($key), self.$key).unwrap();)*
                out
            }
        }
    };
}

config! {
    corpus_seed: u64 = 1, "seed of the synthetic corpus";
    speakers: usize = 20, "number of corpus speakers";
    utterances_per_speaker: usize = 10, "utterances per speaker";
    units: usize = 12, "content-unit alphabet size";
    min_frames: usize = 140, "shortest utterance in frames";
    max_frames: usize = 160, "longest utterance in frames";
    sample_rate_hz: u32 = 16_000, "sample rate";
    pool_speakers: usize = 6, "speakers 0.. whose first utterance forms the prompt pool";
    external_speakers: usize = 6, "following speakers used as external (attacker) data";
    enroll_utterances: usize = 2, "enrollment utterances per test speaker";
    semantic_frame_len: usize = 400, "semantic frame length in samples";
    semantic_hop: usize = 320, "semantic hop in samples";
    acoustic_frame_len: usize = 640, "acoustic frame length in samples";
    acoustic_hop: usize = 320, "acoustic hop in samples";
    n_s: usize = 256, "semantic vocabulary size";
    semantic_n_mels: usize = 40, "mel bands of the semantic frontend";
    semantic_n_cepstra: usize = 12, "cepstra of the semantic frontend";
    semantic_f0_weight: f64 = 6.0, "weight of the relative log-F0 channel";
    semantic_smoothing: f64 = 1.5, "spectral smoothing width in multiples of F0";
    q: usize = 8, "number of RVQ codebooks";
    q_coarse: usize = 2, "codebooks modeled autoregressively";
    n_q: usize = 64, "entries per RVQ codebook";
    acoustic_n_mels: usize = 40, "mel bands of the codec envelope";
    n_cepstra: usize = 14, "mel-cepstral coefficients per acoustic frame";
    acoustic_f0_weight: f64 = 10.0, "scale of the log-F0 channel in acoustic vectors";
    lm_width: usize = 64, "transformer width";
    lm_heads: usize = 4, "attention heads";
    lm_blocks: usize = 2, "transformer blocks";
    lm_positions: usize = 640, "coarse model capacity in tokens";
    coarse_steps: usize = 1200, "coarse training steps";
    coarse_batch: usize = 4, "coarse sequences per step";
    coarse_crop_frames: usize = 40, "target frames per coarse training sequence (0 = whole utterance)";
    coarse_lr: f64 = 0.05, "coarse learning rate";
    fine_steps: usize = 150, "training steps per fine level";
    fine_batch: usize = 4, "fine examples per step";
    fine_lr: f64 = 0.05, "fine learning rate";
    momentum: f64 = 0.9, "SGD momentum";
    prompt_frames: usize = 75, "prompt length in frames";
    temperature: f64 = 0.7, "coarse sampling temperature (0 = argmax)";
    fine_temperature: f64 = 0.5, "fine sampling temperature (0 = argmax)";
    train_seed: u64 = 1, "seed for codebooks, model init and batch sampling";
    anon_seed: u64 = 1001, "defender master seed";
    attacker_seed: u64 = 2002, "attacker master seed";
    level: Level = Level::Speaker, "defender anonymization level";
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            seen.push(k);
            c.set(k, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.semantic_hop != self.acoustic_hop {
            return fail("semantic_hop and acoustic_hop must be equal".into());
        }
        if self.semantic_frame_len > self.acoustic_frame_len {
            return fail("semantic frames must not be longer than acoustic frames".into());
        }
        if self.q_coarse == 0 || self.q_coarse >= self.q {
            return fail(format!("need 1 <= q_coarse < q, got {} and {}", self.q_coarse, self.q));
        }
        if self.pool_speakers == 0 || self.external_speakers < 2 {
            return fail("need a non-empty pool and at least two external speakers".into());
        }
        if self.pool_speakers + self.external_speakers + 2 > self.speakers {
            return fail("need at least two test speakers after pool and external speakers".into());
        }
        if self.utterances_per_speaker < 2 || self.enroll_utterances == 0 {
            return fail("need at least two utterances per speaker and one enrollment".into());
        }
        if self.enroll_utterances >= self.utterances_per_speaker {
            return fail("enrollment leaves no trial utterances".into());
        }
        if self.heads_ok() {
            Ok(())
        } else {
            fail(format!("lm_width {} not divisible by lm_heads {}", self.lm_width, self.lm_heads))
        }
    }

    fn heads_ok(&self) -> bool {
        self.lm_heads > 0 && self.lm_width.is_multiple_of(self.lm_heads)
    }

    pub fn semantic_frame(&self) -> FrameSpec {
        FrameSpec {
            frame_len: self.semantic_frame_len,
            hop: self.semantic_hop,
            window: Window::Hann,
        }
    }

    pub fn acoustic_frame(&self) -> FrameSpec {
        FrameSpec {
            frame_len: self.acoustic_frame_len,
            hop: self.acoustic_hop,
            window: Window::Hann,
        }
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            seed: self.corpus_seed,
            speakers: self.speakers,
            utterances_per_speaker: self.utterances_per_speaker,
            units: self.units,
            min_frames: self.min_frames,
            max_frames: self.max_frames,
            frame_spec: self.acoustic_frame(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn frontend(&self) -> SemanticFrontend {
        SemanticFrontend {
            frame: self.semantic_frame(),
            n_mels: self.semantic_n_mels,
            n_cepstra: self.semantic_n_cepstra,
            f0_weight: self.semantic_f0_weight,
            smoothing: self.semantic_smoothing,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn analysis(&self) -> AnalysisSpec {
        AnalysisSpec {
            frame: self.acoustic_frame(),
            n_mels: self.acoustic_n_mels,
            n_cepstra: self.n_cepstra,
            f0_weight: self.acoustic_f0_weight,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn rvq_params(&self) -> RvqParams {
        RvqParams {
            q: self.q,
            q_coarse: self.q_coarse,
            n_q: self.n_q,
            seed: self.train_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut c = Config::default();
        c.temperature = 0.25;
        c.level = Level::Utterance;
        assert_eq!(Config::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = Config::parse("# header\n\nn_s = 32  # small\n").unwrap();
        assert_eq!(c.n_s, 32);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(Config::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("n_s = many"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("n_s"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("n_s = 1\nn_s = 2"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("acoustic_hop = 160"), Err(Error::Config(_))));
    }

    #[test]
    fn every_key_is_listed() {
        let keys = Config::keys();
        let rendered = Config::default().render();
        assert_eq!(keys.len(), rendered.lines().count());
        for (k, _, doc) in keys {
            assert!(rendered.contains(&format!("{k} = ")));
            assert!(!doc.is_empty());
        }
    }
}
