use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{Optimizer, TrainExample};
use super::transformer::{softmax_in_place, Attention, Transformer, TransformerConfig};
use super::{sample_logits, sinusoidal};
use crate::codec::AcousticTokens;
use crate::corpus::mix_seed;
use crate::error::{Error, Result};

const POSITION_INIT_SCALE: f64 = 0.05;
const FF_MULT: usize = 4;
const PROMPT_SEGMENT: usize = 0;
const TARGET_SEGMENT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FineLmConfig {
    /// Total codebooks `Q`.
    pub q: usize,
    pub n_q: usize,
    /// 0-based codebook row this model predicts.
    pub level: usize,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Maximum prompt + target frames.
    pub positions: usize,
    /// Whether frame-index embeddings are added to the inputs.
    pub use_positions: bool,
    pub seed: u64,
}

/// Non-causal model for one fine codebook row.
///
/// Prompt frames embed all `Q` rows of the prompt grid; target frames embed
/// the rows below `level`. Every frame also embeds its frame index (when
/// enabled) and its segment. The model never receives semantic tokens.
#[derive(Debug, Clone)]
pub struct FineLm {
    pub config: FineLmConfig,
    pub net: Transformer,
}

/// Training pair for the fine stage: a prompt grid and a full target grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FineExample {
    pub prompt: AcousticTokens,
    pub target: AcousticTokens,
}

impl FineLm {
    pub fn new(config: FineLmConfig) -> Result<Self> {
        let mut net = Transformer::new(Self::net_config(&config)?, config.seed)?;
        let base = config.q * config.n_q;
        net.embed_rows_mut(base, config.positions)
            .copy_from_slice(&sinusoidal(config.positions, config.width, POSITION_INIT_SCALE));
        Ok(Self { config, net })
    }

    pub(crate) fn net_config(config: &FineLmConfig) -> Result<TransformerConfig> {
        if config.level == 0 || config.level >= config.q || config.n_q == 0 || config.positions == 0 {
            return Err(Error::Config(format!(
                "fine model level {} must lie in 1..{}",
                config.level, config.q
            )));
        }
        Ok(TransformerConfig {
            input_rows: config.q * config.n_q + config.positions + 2,
            width: config.width,
            heads: config.heads,
            blocks: config.blocks,
            outputs: config.n_q,
            ff_mult: FF_MULT,
        })
    }

    fn token_row(&self, level: usize, tok: u32) -> u32 {
        (level * self.config.n_q) as u32 + tok
    }

    fn frame_rows(&self, grid: &AcousticTokens, rows: usize, t: usize, segment: usize) -> Vec<u32> {
        let c = &self.config;
        let mut out: Vec<u32> = (0..rows).map(|r| self.token_row(r, grid.get(r, t))).collect();
        if c.use_positions {
            out.push((c.q * c.n_q + t) as u32);
        }
        out.push((c.q * c.n_q + c.positions + segment) as u32);
        out
    }

    /// Inputs for `prompt ++ lower`, where `lower` holds at least `level`
    /// rows of the target grid.
    fn inputs(&self, prompt: &AcousticTokens, lower: &AcousticTokens) -> Result<Vec<Vec<u32>>> {
        let c = &self.config;
        if prompt.rows() != c.q {
            return Err(Error::Incompatible(format!(
                "prompt has {} rows, fine stage needs all {}",
                prompt.rows(),
                c.q
            )));
        }
        if lower.rows() < c.level {
            return Err(Error::Incompatible(format!(
                "level {} needs {} lower rows, got {}",
                c.level,
                c.level,
                lower.rows()
            )));
        }
        prompt.validate(c.n_q)?;
        lower.top_rows(c.level)?.validate(c.n_q)?;
        let len = prompt.frames() + lower.frames();
        let max_frames = prompt.frames().max(lower.frames());
        if len > c.positions || max_frames > c.positions {
            return Err(Error::Capacity {
                len,
                capacity: c.positions,
            });
        }
        let mut inputs = Vec::with_capacity(len);
        for t in 0..prompt.frames() {
            inputs.push(self.frame_rows(prompt, c.q, t, PROMPT_SEGMENT));
        }
        for t in 0..lower.frames() {
            inputs.push(self.frame_rows(lower, c.level, t, TARGET_SEGMENT));
        }
        Ok(inputs)
    }

    pub fn encode(&self, ex: &FineExample) -> Result<TrainExample> {
        if ex.target.rows() <= self.config.level {
            return Err(Error::Incompatible("target grid lacks the predicted row".into()));
        }
        let inputs = self.inputs(&ex.prompt, &ex.target)?;
        let p = ex.prompt.frames();
        let targets = (0..ex.target.frames())
            .map(|t| (p + t, ex.target.get(self.config.level, t)))
            .collect();
        Ok(TrainExample { inputs, targets })
    }

    /// Per-frame distributions over the `level` row, `T × n_q`.
    pub fn forward(&self, prompt: &AcousticTokens, lower: &AcousticTokens) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .logits(prompt, lower)?
            .chunks_exact(self.config.n_q)
            .map(|r| {
                let mut p = r.to_vec();
                softmax_in_place(&mut p);
                p
            })
            .collect())
    }

    fn logits(&self, prompt: &AcousticTokens, lower: &AcousticTokens) -> Result<Vec<f64>> {
        let inputs = self.inputs(prompt, lower)?;
        let p = prompt.frames();
        let positions: Vec<usize> = (p..p + lower.frames()).collect();
        self.net.logits(&inputs, Attention::Full, &positions)
    }

    pub fn optimizer(&self, lr: f64, momentum: f64) -> Optimizer {
        Optimizer::new(lr, momentum, 1.0, self.net.num_params())
    }

    pub fn train_step(&mut self, batch: &[FineExample], opt: &mut Optimizer, step: usize) -> Result<f64> {
        let examples = batch
            .iter()
            .map(|e| self.encode(e))
            .collect::<Result<Vec<_>>>()?;
        opt.step(&mut self.net, &examples, Attention::Full, step)
    }

    pub fn train(&mut self, batch: &[FineExample], opt: &mut Optimizer, steps: usize) -> Result<Vec<f64>> {
        let examples = batch
            .iter()
            .map(|e| self.encode(e))
            .collect::<Result<Vec<_>>>()?;
        (0..steps)
            .map(|step| opt.step(&mut self.net, &examples, Attention::Full, step))
            .collect()
    }

    /// Samples the `level` row for every frame independently.
    pub fn sample(
        &self,
        prompt: &AcousticTokens,
        lower: &AcousticTokens,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<u32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self
            .logits(prompt, lower)?
            .chunks_exact(self.config.n_q)
            .map(|r| sample_logits(r, temperature, &mut rng) as u32)
            .collect())
    }
}

/// The per-level fine models for rows `q_coarse..q`.
#[derive(Debug, Clone)]
pub struct FineStack {
    pub q_coarse: usize,
    pub levels: Vec<FineLm>,
}

impl FineStack {
    pub fn q(&self) -> usize {
        self.q_coarse + self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("fine stage has no level models".into()));
        }
        for (i, m) in self.levels.iter().enumerate() {
            if m.config.level != self.q_coarse + i || m.config.q != self.q() {
                return Err(Error::Config(format!(
                    "fine model {i} predicts level {} of {}, expected {} of {}",
                    m.config.level,
                    m.config.q,
                    self.q_coarse + i,
                    self.q()
                )));
            }
        }
        let n_q = self.levels[0].config.n_q;
        if self.levels.iter().any(|m| m.config.n_q != n_q) {
            return Err(Error::Config("fine models disagree on codebook size".into()));
        }
        Ok(())
    }

    /// Completes `coarse` (exactly `q_coarse` rows) to a full grid, level by
    /// level, each conditioned on the prompt and all rows below it.
    pub fn sample(
        &self,
        prompt: &AcousticTokens,
        coarse: &AcousticTokens,
        temperature: f64,
        seed: u64,
    ) -> Result<AcousticTokens> {
        self.validate()?;
        if coarse.rows() != self.q_coarse {
            return Err(Error::Incompatible(format!(
                "coarse grid has {} rows, expected {}",
                coarse.rows(),
                self.q_coarse
            )));
        }
        let mut rows: Vec<Vec<u32>> = (0..coarse.rows()).map(|r| coarse.row(r).to_vec()).collect();
        for m in &self.levels {
            let lower = AcousticTokens::from_rows(&rows)?;
            let seed = mix_seed(&[seed, m.config.level as u64]);
            rows.push(m.sample(prompt, &lower, temperature, seed)?);
        }
        AcousticTokens::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg(level: usize, use_positions: bool) -> FineLmConfig {
        FineLmConfig {
            q: 4,
            n_q: 5,
            level,
            width: 16,
            heads: 2,
            blocks: 2,
            positions: 32,
            use_positions,
            seed: level as u64,
        }
    }

    fn grid(rng: &mut ChaCha8Rng, rows: usize, t: usize) -> AcousticTokens {
        let r: Vec<Vec<u32>> = (0..rows)
            .map(|_| (0..t).map(|_| rng.gen_range(0..5)).collect())
            .collect();
        AcousticTokens::from_rows(&r).unwrap()
    }

    #[test]
    fn stack_keeps_coarse_rows() {
        let stack = FineStack {
            q_coarse: 2,
            levels: vec![FineLm::new(cfg(2, true)).unwrap(), FineLm::new(cfg(3, true)).unwrap()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prompt = grid(&mut rng, 4, 6);
        let coarse = grid(&mut rng, 2, 5);
        let full = stack.sample(&prompt, &coarse, 0.7, 3).unwrap();
        assert_eq!(full.rows(), 4);
        assert_eq!(full.top_rows(2).unwrap(), coarse);
        assert_eq!(full, stack.sample(&prompt, &coarse, 0.7, 3).unwrap());
    }

    #[test]
    fn missing_levels_are_a_config_error() {
        let stack = FineStack {
            q_coarse: 2,
            levels: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            stack.sample(&grid(&mut rng, 4, 3), &grid(&mut rng, 2, 3), 0.0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn permutation_equivariant_without_positions() {
        let m = FineLm::new(cfg(2, false)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prompt = grid(&mut rng, 4, 4);
        let lower = grid(&mut rng, 2, 6);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let rows: Vec<Vec<u32>> = (0..2)
            .map(|r| perm.iter().map(|&t| lower.get(r, t)).collect())
            .collect();
        let permuted = AcousticTokens::from_rows(&rows).unwrap();
        let a = m.forward(&prompt, &lower).unwrap();
        let b = m.forward(&prompt, &permuted).unwrap();
        for (i, &t) in perm.iter().enumerate() {
            for (x, y) in b[i].iter().zip(&a[t]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overfits_a_single_batch() {
        let mut m = FineLm::new(cfg(2, true)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<FineExample> = (0..2)
            .map(|_| FineExample {
                prompt: grid(&mut rng, 4, 4),
                target: grid(&mut rng, 4, 8),
            })
            .collect();
        let mut opt = m.optimizer(0.1, 0.9);
        let trace = m.train(&batch, &mut opt, 200).unwrap();
        assert!(*trace.last().unwrap() < 0.1 * trace[0], "{trace:?}");
    }
}
