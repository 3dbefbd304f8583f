//! Pre-norm transformer with a hand-written backward pass.
//!
//! Every input position is the sum of one or more rows of a single embedding
//! table, so callers encode tokens, positions, segment tags and any extra
//! conditioning as row indices. All parameters live in one flat `Vec<f64>`
//! described by a named-tensor index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{gemm, gemm_into, View, ViewMut};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    /// Rows of the shared input embedding table.
    pub input_rows: usize,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Size of the output distribution.
    pub outputs: usize,
    /// Hidden width of the feed-forward layer as a multiple of `width`.
    pub ff_mult: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.input_rows == 0 || self.outputs == 0 || self.ff_mult == 0 {
            return Err(Error::Config("empty embedding, output or ff layer".into()));
        }
        Ok(())
    }

    fn ff(&self) -> usize {
        self.width * self.ff_mult
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attention {
    Causal,
    Full,
}

/// Name, offset and shape of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    blocks: Vec<BlockLayout>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
}

fn build_layout(c: &TransformerConfig) -> (Layout, Vec<TensorInfo>, usize) {
    let mut tensors = Vec::new();
    let mut total = 0;
    let mut add = |name: String, shape: Vec<usize>| {
        let offset = total;
        total += shape.iter().product::<usize>();
        tensors.push(TensorInfo {
            name,
            offset,
            shape,
        });
        offset
    };
    let (d, f) = (c.width, c.ff());
    let embed = add("embed".into(), vec![c.input_rows, d]);
    let blocks = (0..c.blocks)
        .map(|b| {
            let p = format!("block{b}");
            BlockLayout {
                ln1_g: add(format!("{p}.ln1.gain"), vec![d]),
                ln1_b: add(format!("{p}.ln1.bias"), vec![d]),
                wq: add(format!("{p}.attn.wq"), vec![d, d]),
                bq: add(format!("{p}.attn.bq"), vec![d]),
                wk: add(format!("{p}.attn.wk"), vec![d, d]),
                bk: add(format!("{p}.attn.bk"), vec![d]),
                wv: add(format!("{p}.attn.wv"), vec![d, d]),
                bv: add(format!("{p}.attn.bv"), vec![d]),
                wo: add(format!("{p}.attn.wo"), vec![d, d]),
                bo: add(format!("{p}.attn.bo"), vec![d]),
                ln2_g: add(format!("{p}.ln2.gain"), vec![d]),
                ln2_b: add(format!("{p}.ln2.bias"), vec![d]),
                w1: add(format!("{p}.mlp.w1"), vec![d, f]),
                b1: add(format!("{p}.mlp.b1"), vec![f]),
                w2: add(format!("{p}.mlp.w2"), vec![f, d]),
                b2: add(format!("{p}.mlp.b2"), vec![d]),
            }
        })
        .collect();
    let lnf_g = add("final_ln.gain".into(), vec![d]);
    let lnf_b = add("final_ln.bias".into(), vec![d]);
    let head_w = add("head.w".into(), vec![d, c.outputs]);
    let head_b = add("head.b".into(), vec![c.outputs]);
    (
        Layout {
            embed,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
        },
        tensors,
        total,
    )
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: TransformerConfig,
    pub params: Vec<f64>,
    tensors: Vec<TensorInfo>,
    layout: Layout,
}

struct BlockCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    h2: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

struct Cache {
    n: usize,
    blocks: Vec<BlockCache>,
    xhat_f: Vec<f64>,
    rstd_f: Vec<f64>,
    hf: Vec<f64>,
}

/// Per-block key/value history for incremental causal decoding.
pub struct DecodeState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Transformer {
    /// Random initialization: normal(0, 0.02) weights, residual output
    /// projections scaled by `1/sqrt(2·blocks)`, unit LN gains, zero biases.
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, tensors, total) = build_layout(&config);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let resid_scale = 1.0 / ((2 * config.blocks.max(1)) as f64).sqrt();
        for t in &tensors {
            let name = t.name.as_str();
            let slice = &mut params[t.range()];
            if name.ends_with(".gain") {
                slice.fill(1.0);
            } else if t.shape.len() == 2 {
                let scale = if name.ends_with("attn.wo") || name.ends_with("mlp.w2") {
                    resid_scale
                } else {
                    1.0
                };
                for x in slice.iter_mut() {
                    *x = normal.sample(&mut rng) * scale;
                }
            }
        }
        Ok(Self {
            config,
            params,
            tensors,
            layout,
        })
    }

    /// Rebuilds a model from a parameter vector in [`Self::tensors`] order.
    pub fn from_params(config: TransformerConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, tensors, total) = build_layout(&config);
        if params.len() != total {
            return Err(Error::Format(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            params,
            tensors,
            layout,
        })
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Mutable rows `start..start + count` of the embedding table.
    pub fn embed_rows_mut(&mut self, start: usize, count: usize) -> &mut [f64] {
        let d = self.config.width;
        let base = self.layout.embed + start * d;
        &mut self.params[base..base + count * d]
    }

    /// Zeroes the output projection and bias.
    pub fn zero_head(&mut self) {
        let (d, o) = (self.config.width, self.config.outputs);
        let w = self.layout.head_w;
        self.params[w..w + d * o].fill(0.0);
        let b = self.layout.head_b;
        self.params[b..b + o].fill(0.0);
    }

    fn p(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    fn check_inputs(&self, inputs: &[Vec<u32>]) -> Result<()> {
        for (i, rows) in inputs.iter().enumerate() {
            if let Some(&r) = rows.iter().find(|&&r| r as usize >= self.config.input_rows) {
                return Err(Error::Validation(format!(
                    "position {i} uses embedding row {r} of {}",
                    self.config.input_rows
                )));
            }
        }
        Ok(())
    }

    fn embed(&self, inputs: &[Vec<u32>]) -> Vec<f64> {
        let d = self.config.width;
        let mut x = vec![0.0; inputs.len() * d];
        for (xi, rows) in x.chunks_exact_mut(d).zip(inputs) {
            for &r in rows {
                let e = self.p(self.layout.embed + r as usize * d, d);
                for (a, b) in xi.iter_mut().zip(e) {
                    *a += b;
                }
            }
        }
        x
    }

    fn forward_cache(&self, inputs: &[Vec<u32>], mask: Attention) -> (Cache, Vec<f64>) {
        let c = &self.config;
        let (n, d, h, f) = (inputs.len(), c.width, c.heads, c.ff());
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = self.embed(inputs);
        let mut blocks = Vec::with_capacity(c.blocks);
        for bl in &self.layout.blocks {
            let (mut xhat1, mut rstd1, mut h1) = (vec![0.0; n * d], vec![0.0; n], vec![0.0; n * d]);
            layer_norm(&x, d, self.p(bl.ln1_g, d), self.p(bl.ln1_b, d), &mut xhat1, &mut rstd1, &mut h1);
            let q = linear(&h1, n, d, self.p(bl.wq, d * d), self.p(bl.bq, d), d);
            let k = linear(&h1, n, d, self.p(bl.wk, d * d), self.p(bl.bk, d), d);
            let v = linear(&h1, n, d, self.p(bl.wv, d * d), self.p(bl.bv, d), d);
            let mut probs = vec![0.0; h * n * n];
            let mut o = vec![0.0; n * d];
            for hd in 0..h {
                let s = &mut probs[hd * n * n..(hd + 1) * n * n];
                gemm(
                    scale,
                    View::new(&q, n, d).cols(hd * dh, dh),
                    View::new(&k, n, d).cols(hd * dh, dh).t(),
                    0.0,
                    s,
                );
                for (i, row) in s.chunks_exact_mut(n).enumerate() {
                    let valid = match mask {
                        Attention::Causal => i + 1,
                        Attention::Full => n,
                    };
                    softmax_in_place(&mut row[..valid]);
                    row[valid..].fill(0.0);
                }
                gemm_into(
                    1.0,
                    View::new(s, n, n),
                    View::new(&v, n, d).cols(hd * dh, dh),
                    0.0,
                    ViewMut::strided(&mut o[hd * dh..], n, dh, d),
                );
            }
            let a = linear(&o, n, d, self.p(bl.wo, d * d), self.p(bl.bo, d), d);
            for (xi, ai) in x.iter_mut().zip(&a) {
                *xi += ai;
            }
            let (mut xhat2, mut rstd2, mut h2) = (vec![0.0; n * d], vec![0.0; n], vec![0.0; n * d]);
            layer_norm(&x, d, self.p(bl.ln2_g, d), self.p(bl.ln2_b, d), &mut xhat2, &mut rstd2, &mut h2);
            let u = linear(&h2, n, d, self.p(bl.w1, d * f), self.p(bl.b1, f), f);
            let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let m = linear(&g, n, f, self.p(bl.w2, f * d), self.p(bl.b2, d), d);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
            blocks.push(BlockCache {
                xhat1,
                rstd1,
                h1,
                q,
                k,
                v,
                probs,
                o,
                xhat2,
                rstd2,
                h2,
                u,
                g,
            });
        }
        let (mut xhat_f, mut rstd_f, mut hf) = (vec![0.0; n * d], vec![0.0; n], vec![0.0; n * d]);
        layer_norm(&x, d, self.p(self.layout.lnf_g, d), self.p(self.layout.lnf_b, d), &mut xhat_f, &mut rstd_f, &mut hf);
        (
            Cache {
                n,
                blocks,
                xhat_f,
                rstd_f,
                hf: hf.clone(),
            },
            hf,
        )
    }

    fn head(&self, hf: &[f64], positions: &[usize]) -> Vec<f64> {
        let (d, o) = (self.config.width, self.config.outputs);
        let mut sel = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            sel.extend_from_slice(&hf[p * d..(p + 1) * d]);
        }
        linear(&sel, positions.len(), d, self.p(self.layout.head_w, d * o), self.p(self.layout.head_b, o), o)
    }

    /// Output logits at `positions`, row-major `positions.len() × outputs`.
    pub fn logits(&self, inputs: &[Vec<u32>], mask: Attention, positions: &[usize]) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        if let Some(&p) = positions.iter().find(|&&p| p >= inputs.len()) {
            return Err(Error::Validation(format!("position {p} outside sequence")));
        }
        let (_, hf) = self.forward_cache(inputs, mask);
        Ok(self.head(&hf, positions))
    }

    /// Summed cross-entropy over `targets` (`(position, class)` pairs). The
    /// gradient of `scale ·` that sum is added into `grad`.
    pub fn loss_and_grad(
        &self,
        inputs: &[Vec<u32>],
        mask: Attention,
        targets: &[(usize, u32)],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_inputs(inputs)?;
        assert_eq!(grad.len(), self.params.len());
        let c = self.config;
        let (d, h, f, o) = (c.width, c.heads, c.ff(), c.outputs);
        let dh = d / h;
        if let Some(&(p, t)) = targets
            .iter()
            .find(|&&(p, t)| p >= inputs.len() || t as usize >= o)
        {
            return Err(Error::Validation(format!("invalid target {t} at position {p}")));
        }
        let (cache, hf) = self.forward_cache(inputs, mask);
        let n = cache.n;
        let positions: Vec<usize> = targets.iter().map(|&(p, _)| p).collect();
        let mut dlogits = self.head(&hf, &positions);
        let mut loss = 0.0;
        for (row, &(_, t)) in dlogits.chunks_exact_mut(o).zip(targets) {
            let lse = log_sum_exp(row);
            loss += lse - row[t as usize];
            for z in row.iter_mut() {
                *z = (*z - lse).exp() * scale;
            }
            row[t as usize] -= scale;
        }

        // output head
        let m = targets.len();
        let mut sel = Vec::with_capacity(m * d);
        for &p in &positions {
            sel.extend_from_slice(&cache.hf[p * d..(p + 1) * d]);
        }
        let lay = &self.layout;
        gemm(1.0, View::new(&sel, m, d).t(), View::new(&dlogits, m, o), 1.0, &mut grad[lay.head_w..lay.head_w + d * o]);
        col_sum_into(&dlogits, o, &mut grad[lay.head_b..lay.head_b + o]);
        let mut dsel = vec![0.0; m * d];
        gemm(1.0, View::new(&dlogits, m, o), View::new(self.p(lay.head_w, d * o), d, o).t(), 0.0, &mut dsel);
        let mut dhf = vec![0.0; n * d];
        for (r, &p) in dsel.chunks_exact(d).zip(&positions) {
            for (a, b) in dhf[p * d..(p + 1) * d].iter_mut().zip(r) {
                *a += b;
            }
        }
        let mut dx = vec![0.0; n * d];
        ln_backward(&dhf, &cache.xhat_f, &cache.rstd_f, d, self.p(lay.lnf_g, d), grad, lay.lnf_g, lay.lnf_b, &mut dx);

        let scale_att = 1.0 / (dh as f64).sqrt();
        for (bl, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // feed-forward
            linear_backward_params(&bc.g, n, f, &dx, d, grad, bl.w2, bl.b2);
            let mut dg = vec![0.0; n * f];
            gemm(1.0, View::new(&dx, n, d), View::new(self.p(bl.w2, f * d), f, d).t(), 0.0, &mut dg);
            for (dz, &z) in dg.iter_mut().zip(&bc.u) {
                *dz *= gelu_grad(z);
            }
            linear_backward_params(&bc.h2, n, d, &dg, f, grad, bl.w1, bl.b1);
            let mut dh2 = vec![0.0; n * d];
            gemm(1.0, View::new(&dg, n, f), View::new(self.p(bl.w1, d * f), d, f).t(), 0.0, &mut dh2);
            ln_backward(&dh2, &bc.xhat2, &bc.rstd2, d, self.p(bl.ln2_g, d), grad, bl.ln2_g, bl.ln2_b, &mut dx);

            // attention
            linear_backward_params(&bc.o, n, d, &dx, d, grad, bl.wo, bl.bo);
            let mut d_o = vec![0.0; n * d];
            gemm(1.0, View::new(&dx, n, d), View::new(self.p(bl.wo, d * d), d, d).t(), 0.0, &mut d_o);
            let (mut dq, mut dk, mut dv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
            let mut dp = vec![0.0; n * n];
            for hd in 0..h {
                let p = &bc.probs[hd * n * n..(hd + 1) * n * n];
                let cols = hd * dh;
                gemm(
                    1.0,
                    View::new(&d_o, n, d).cols(cols, dh),
                    View::new(&bc.v, n, d).cols(cols, dh).t(),
                    0.0,
                    &mut dp,
                );
                gemm_into(
                    1.0,
                    View::new(p, n, n).t(),
                    View::new(&d_o, n, d).cols(cols, dh),
                    0.0,
                    ViewMut::strided(&mut dv[cols..], n, dh, d),
                );
                for (dpr, pr) in dp.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
                    let dot: f64 = dpr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (a, &b) in dpr.iter_mut().zip(pr) {
                        *a = b * (*a - dot);
                    }
                }
                gemm_into(
                    scale_att,
                    View::new(&dp, n, n),
                    View::new(&bc.k, n, d).cols(cols, dh),
                    0.0,
                    ViewMut::strided(&mut dq[cols..], n, dh, d),
                );
                gemm_into(
                    scale_att,
                    View::new(&dp, n, n).t(),
                    View::new(&bc.q, n, d).cols(cols, dh),
                    0.0,
                    ViewMut::strided(&mut dk[cols..], n, dh, d),
                );
            }
            let mut dh1 = vec![0.0; n * d];
            for (dy, w, b) in [(&dq, bl.wq, bl.bq), (&dk, bl.wk, bl.bk), (&dv, bl.wv, bl.bv)] {
                linear_backward_params(&bc.h1, n, d, dy, d, grad, w, b);
                gemm(1.0, View::new(dy, n, d), View::new(self.p(w, d * d), d, d).t(), 1.0, &mut dh1);
            }
            ln_backward(&dh1, &bc.xhat1, &bc.rstd1, d, self.p(bl.ln1_g, d), grad, bl.ln1_g, bl.ln1_b, &mut dx);
        }

        for (dxi, rows) in dx.chunks_exact(d).zip(inputs) {
            for &r in rows {
                let base = lay.embed + r as usize * d;
                for (g, v) in grad[base..base + d].iter_mut().zip(dxi) {
                    *g += v;
                }
            }
        }
        Ok(loss)
    }

    /// Empty key/value history with room for `capacity` positions.
    pub fn start_decode(&self, capacity: usize) -> DecodeState {
        let d = self.config.width;
        DecodeState {
            keys: vec![Vec::with_capacity(capacity * d); self.config.blocks],
            values: vec![Vec::with_capacity(capacity * d); self.config.blocks],
            len: 0,
        }
    }

    /// Appends one position to a causal decode and returns its output logits.
    pub fn step(&self, state: &mut DecodeState, rows: &[u32]) -> Result<Vec<f64>> {
        let input = [rows.to_vec()];
        self.check_inputs(&input)?;
        let c = &self.config;
        let (d, h, f) = (c.width, c.heads, c.ff());
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = self.embed(&input);
        let (mut xhat, mut rstd, mut hbuf) = (vec![0.0; d], vec![0.0; 1], vec![0.0; d]);
        let t = state.len + 1;
        for (b, bl) in self.layout.blocks.iter().enumerate() {
            layer_norm(&x, d, self.p(bl.ln1_g, d), self.p(bl.ln1_b, d), &mut xhat, &mut rstd, &mut hbuf);
            let q = linear(&hbuf, 1, d, self.p(bl.wq, d * d), self.p(bl.bq, d), d);
            let k = linear(&hbuf, 1, d, self.p(bl.wk, d * d), self.p(bl.bk, d), d);
            let v = linear(&hbuf, 1, d, self.p(bl.wv, d * d), self.p(bl.bv, d), d);
            state.keys[b].extend_from_slice(&k);
            state.values[b].extend_from_slice(&v);
            let (keys, values) = (&state.keys[b], &state.values[b]);
            let mut o = vec![0.0; d];
            let mut s = vec![0.0; t];
            for hd in 0..h {
                let cols = hd * dh;
                gemm(
                    scale,
                    View::new(&q, 1, d).cols(cols, dh),
                    View::new(keys, t, d).cols(cols, dh).t(),
                    0.0,
                    &mut s,
                );
                softmax_in_place(&mut s);
                gemm_into(
                    1.0,
                    View::new(&s, 1, t),
                    View::new(values, t, d).cols(cols, dh),
                    0.0,
                    ViewMut::strided(&mut o[cols..], 1, dh, d),
                );
            }
            let a = linear(&o, 1, d, self.p(bl.wo, d * d), self.p(bl.bo, d), d);
            for (xi, ai) in x.iter_mut().zip(&a) {
                *xi += ai;
            }
            layer_norm(&x, d, self.p(bl.ln2_g, d), self.p(bl.ln2_b, d), &mut xhat, &mut rstd, &mut hbuf);
            let u = linear(&hbuf, 1, d, self.p(bl.w1, d * f), self.p(bl.b1, f), f);
            let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let m = linear(&g, 1, f, self.p(bl.w2, f * d), self.p(bl.b2, d), d);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
        }
        state.len = t;
        layer_norm(&x, d, self.p(self.layout.lnf_g, d), self.p(self.layout.lnf_b, d), &mut xhat, &mut rstd, &mut hbuf);
        Ok(self.head(&hbuf, &[0]))
    }
}

fn linear(x: &[f64], n: usize, din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(1.0, View::new(x, n, din), View::new(w, din, dout), 1.0, &mut y);
    y
}

/// Accumulates `dW += xᵀ·dy` and `db += Σ dy` into `grad`.
#[allow(clippy::too_many_arguments)]
fn linear_backward_params(
    x: &[f64],
    n: usize,
    din: usize,
    dy: &[f64],
    dout: usize,
    grad: &mut [f64],
    w: usize,
    b: usize,
) {
    gemm(1.0, View::new(x, n, din).t(), View::new(dy, n, dout), 1.0, &mut grad[w..w + din * dout]);
    col_sum_into(dy, dout, &mut grad[b..b + dout]);
}

fn col_sum_into(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn layer_norm(
    x: &[f64],
    d: usize,
    gain: &[f64],
    bias: &[f64],
    xhat: &mut [f64],
    rstd: &mut [f64],
    y: &mut [f64],
) {
    for (((xr, xh), r), yr) in x
        .chunks_exact(d)
        .zip(xhat.chunks_exact_mut(d))
        .zip(rstd.iter_mut())
        .zip(y.chunks_exact_mut(d))
    {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        *r = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            xh[j] = (xr[j] - mean) * *r;
            yr[j] = xh[j] * gain[j] + bias[j];
        }
    }
}

/// Backward of `y = gain·xhat + bias`: accumulates parameter gradients into
/// `grad` and the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
fn ln_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    d: usize,
    gain: &[f64],
    grad: &mut [f64],
    g_off: usize,
    b_off: usize,
    dx: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for (((dyr, xh), &r), dxr) in dy
        .chunks_exact(d)
        .zip(xhat.chunks_exact(d))
        .zip(rstd)
        .zip(dx.chunks_exact_mut(d))
    {
        for j in 0..d {
            grad[g_off + j] += dyr[j] * xh[j];
            grad[b_off + j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dxr[j] += r * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
}

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + 0.044715 * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let inner = GELU_C * (z + 0.044715 * z * z * z);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * z * z)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(mask_rows: usize) -> Transformer {
        let cfg = TransformerConfig {
            input_rows: mask_rows,
            width: 16,
            heads: 2,
            blocks: 2,
            outputs: 7,
            ff_mult: 2,
        };
        let mut t = Transformer::new(cfg, 3).unwrap();
        // larger weights make every path contribute measurably
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for x in t.params.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
        t
    }

    fn example(rng: &mut ChaCha8Rng, n: usize, rows: usize) -> (Vec<Vec<u32>>, Vec<(usize, u32)>) {
        let inputs = (0..n)
            .map(|_| (0..2).map(|_| rng.gen_range(0..rows as u32)).collect())
            .collect();
        let targets = (0..n).step_by(2).map(|p| (p, rng.gen_range(0..7))).collect();
        (inputs, targets)
    }

    /// Tensor-level relative error `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`.
    fn check_gradients(mask: Attention) {
        let mut model = tiny(12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (inputs, targets) = example(&mut rng, 9, 12);
        let mut grad = vec![0.0; model.num_params()];
        model.loss_and_grad(&inputs, mask, &targets, 1.0, &mut grad).unwrap();
        let eps = 1e-4;
        for t in model.tensors().to_vec() {
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in t.range() {
                let orig = model.params[i];
                model.params[i] = orig + eps;
                let mut scratch = vec![0.0; model.num_params()];
                let lp = model.loss_and_grad(&inputs, mask, &targets, 1.0, &mut scratch).unwrap();
                model.params[i] = orig - eps;
                let lm = model.loss_and_grad(&inputs, mask, &targets, 1.0, &mut scratch).unwrap();
                model.params[i] = orig;
                let num = (lp - lm) / (2.0 * eps);
                worst = worst.max((num - grad[i]).abs());
                scale = scale.max(num.abs()).max(grad[i].abs());
            }
            // key biases shift every score of a query equally: zero gradient
            if scale < 1e-8 {
                assert!(worst < 1e-8, "{} absolute error {worst}", t.name);
                continue;
            }
            let rel = worst / scale;
            assert!(rel < 1e-3, "{} relative error {rel}", t.name);
        }
    }

    #[test]
    fn gradients_match_finite_differences_causal() {
        check_gradients(Attention::Causal);
    }

    #[test]
    fn gradients_match_finite_differences_full() {
        check_gradients(Attention::Full);
    }

    #[test]
    fn incremental_decode_matches_full_forward() {
        let model = tiny(12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (inputs, _) = example(&mut rng, 10, 12);
        let positions: Vec<usize> = (0..10).collect();
        let full = model.logits(&inputs, Attention::Causal, &positions).unwrap();
        let mut st = model.start_decode(10);
        for (i, rows) in inputs.iter().enumerate() {
            let step = model.step(&mut st, rows).unwrap();
            for (a, b) in step.iter().zip(&full[i * 7..(i + 1) * 7]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn causal_prefix_is_unaffected_by_later_tokens() {
        let model = tiny(12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut inputs, _) = example(&mut rng, 8, 12);
        let positions: Vec<usize> = (0..8).collect();
        let before = model.logits(&inputs, Attention::Causal, &positions).unwrap();
        inputs[5] = vec![0, 11];
        let after = model.logits(&inputs, Attention::Causal, &positions).unwrap();
        assert_eq!(before[..5 * 7], after[..5 * 7]);
        assert_ne!(before[5 * 7..], after[5 * 7..]);
    }

    #[test]
    fn zero_head_gives_uniform_outputs() {
        let mut model = tiny(12);
        model.zero_head();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (inputs, _) = example(&mut rng, 4, 12);
        let mut logits = model.logits(&inputs, Attention::Causal, &[0, 3]).unwrap();
        for row in logits.chunks_exact_mut(7) {
            softmax_in_place(row);
            for p in row {
                assert!((*p - 1.0 / 7.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_rows() {
        let model = tiny(12);
        assert!(model.logits(&[vec![12]], Attention::Full, &[0]).is_err());
    }
}
