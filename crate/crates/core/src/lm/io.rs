//! CLMQ / FLMQ model containers.
//!
//! Layout (little-endian): magic, `u32` version, model config as `u32`/`u64`
//! fields, then per network a tensor index (`u32` count; per tensor: name,
//! `u32` rank, `u32` dims, `u32` offset) followed by `u32` length and the f32
//! parameter data.

use std::path::Path;

use super::coarse::{CoarseLm, CoarseLmConfig};
use super::fine::{FineLm, FineLmConfig, FineStack};
use super::transformer::{Transformer, TransformerConfig};
use super::CoarseVocab;
use crate::binio::{load, round_to_f32, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const COARSE_MAGIC: &[u8; 4] = b"CLMQ";
const FINE_MAGIC: &[u8; 4] = b"FLMQ";
const VERSION: u32 = 1;

fn write_net(w: &mut ByteWriter, net: &Transformer) {
    w.len_u32(net.tensors().len());
    for t in net.tensors() {
        w.str(&t.name);
        w.len_u32(t.shape.len());
        for &d in &t.shape {
            w.len_u32(d);
        }
        w.len_u32(t.offset);
    }
    w.len_u32(net.params.len());
    w.f32s(&net.params);
}

fn read_net(r: &mut ByteReader, config: TransformerConfig) -> Result<Transformer> {
    let n = r.usize()?;
    let mut index = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.str()?;
        let rank = r.usize()?;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let offset = r.usize()?;
        index.push((name, shape, offset));
    }
    let len = r.usize()?;
    let params = r.f32s(len)?;
    let net = Transformer::from_params(config, params)?;
    let expected = net.tensors();
    if expected.len() != index.len() {
        return Err(Error::Format(format!(
            "tensor index has {} entries, expected {}",
            index.len(),
            expected.len()
        )));
    }
    for (t, (name, shape, offset)) in expected.iter().zip(&index) {
        if &t.name != name || &t.shape != shape || t.offset != *offset {
            return Err(Error::Format(format!(
                "tensor {name} {shape:?}@{offset} does not match {} {:?}@{}",
                t.name, t.shape, t.offset
            )));
        }
    }
    Ok(net)
}

fn bool_field(v: u32) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Format(format!("flag must be 0 or 1, got {v}"))),
    }
}

impl CoarseLm {
    /// Rounds every parameter to f32 so the saved file is an exact copy.
    pub fn round_params(&mut self) {
        round_to_f32(&mut self.net.params);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = ByteWriter::with_header(COARSE_MAGIC, VERSION);
        for v in [c.vocab.n_s, c.vocab.n_q, c.vocab.q_coarse, c.width, c.heads, c.blocks, c.positions] {
            w.len_u32(v);
        }
        w.u64(c.seed);
        write_net(&mut w, &self.net);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "coarse model");
        let version = r.header(COARSE_MAGIC)?;
        if version != VERSION {
            return Err(Error::UnsupportedFormat(format!("coarse model version {version}")));
        }
        let mut f = [0usize; 7];
        for x in &mut f {
            *x = r.usize()?;
        }
        let config = CoarseLmConfig {
            vocab: CoarseVocab {
                n_s: f[0],
                n_q: f[1],
                q_coarse: f[2],
            },
            width: f[3],
            heads: f[4],
            blocks: f[5],
            positions: f[6],
            seed: r.u64()?,
        };
        let net = read_net(&mut r, Self::net_config(&config)?)?;
        r.finish()?;
        Ok(Self { config, net })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::default();
        w.buf = self.to_bytes();
        w.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&load(path)?)
    }
}

impl FineStack {
    pub fn round_params(&mut self) {
        for m in &mut self.levels {
            round_to_f32(&mut m.net.params);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(FINE_MAGIC, VERSION);
        w.len_u32(self.q_coarse);
        w.len_u32(self.levels.len());
        for m in &self.levels {
            let c = &m.config;
            for v in [c.q, c.n_q, c.level, c.width, c.heads, c.blocks, c.positions] {
                w.len_u32(v);
            }
            w.u32(c.use_positions as u32);
            w.u64(c.seed);
            write_net(&mut w, &m.net);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "fine model");
        let version = r.header(FINE_MAGIC)?;
        if version != VERSION {
            return Err(Error::UnsupportedFormat(format!("fine model version {version}")));
        }
        let q_coarse = r.usize()?;
        let n = r.usize()?;
        let mut levels = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let mut f = [0usize; 7];
            for x in &mut f {
                *x = r.usize()?;
            }
            let config = FineLmConfig {
                q: f[0],
                n_q: f[1],
                level: f[2],
                width: f[3],
                heads: f[4],
                blocks: f[5],
                positions: f[6],
                use_positions: bool_field(r.u32()?)?,
                seed: r.u64()?,
            };
            let net = read_net(&mut r, FineLm::net_config(&config)?)?;
            levels.push(FineLm { config, net });
        }
        r.finish()?;
        let stack = Self { q_coarse, levels };
        stack.validate()?;
        Ok(stack)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::default();
        w.buf = self.to_bytes();
        w.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse() -> CoarseLm {
        let mut m = CoarseLm::new(CoarseLmConfig {
            vocab: CoarseVocab {
                n_s: 6,
                n_q: 4,
                q_coarse: 2,
            },
            width: 8,
            heads: 2,
            blocks: 1,
            positions: 10,
            seed: 9,
        })
        .unwrap();
        m.round_params();
        m
    }

    fn fine() -> FineStack {
        let mk = |level| {
            FineLm::new(FineLmConfig {
                q: 4,
                n_q: 4,
                level,
                width: 8,
                heads: 2,
                blocks: 1,
                positions: 12,
                use_positions: true,
                seed: level as u64,
            })
            .unwrap()
        };
        let mut s = FineStack {
            q_coarse: 2,
            levels: vec![mk(2), mk(3)],
        };
        s.round_params();
        s
    }

    #[test]
    fn coarse_round_trip_is_byte_exact() {
        let m = coarse();
        let bytes = m.to_bytes();
        let back = CoarseLm::from_bytes(&bytes).unwrap();
        assert_eq!(back.net.params, m.net.params);
        assert_eq!(back.config, m.config);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn fine_round_trip_is_byte_exact() {
        let s = fine();
        let bytes = s.to_bytes();
        let back = FineStack::from_bytes(&bytes).unwrap();
        assert_eq!(back.levels[1].net.params, s.levels[1].net.params);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = coarse().to_bytes();
        assert!(matches!(CoarseLm::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(FineStack::from_bytes(&bytes), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(CoarseLm::from_bytes(&v2), Err(Error::UnsupportedFormat(_))));
    }
}
