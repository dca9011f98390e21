//! Deterministic toy decoder-only transformer.
//!
//! Pre-norm blocks (RMS norm, multi-head causal self-attention, GELU MLP),
//! learned positional embeddings and an untied output head. All weights are
//! drawn from seeded ChaCha8 streams, one per tensor, so equal configs give
//! bitwise-identical models on every platform.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::{check_tokens, KvState, Logits, ModelBackend, ModelConfig, StepOutput};
use crate::rng::{stream, Domain};
use crate::{Result, TokenId};

const NORM_EPS: f32 = 1e-5;
const MLP_RATIO: usize = 4;

#[derive(Debug, Clone)]
struct Block {
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    w_up: Vec<f32>,
    w_down: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ToyTransformer {
    config: ModelConfig,
    tok_emb: Vec<f32>,
    pos_emb: Vec<f32>,
    blocks: Vec<Block>,
    lm_head: Vec<f32>,
}

fn init(seed: u64, tensor: u64, len: usize, scale: f32) -> Vec<f32> {
    let mut rng = stream(Domain::Weights, seed, tensor, 0);
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

impl ToyTransformer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let ff = h * MLP_RATIO;
        let seed = config.seed;
        let attn_scale = 1.0 / libm::sqrtf(h as f32);
        let mut tensor = 0u64;
        let mut next = |len: usize, scale: f32| {
            tensor += 1;
            init(seed, tensor, len, scale)
        };
        let tok_emb = next(config.vocab_size * h, 1.0);
        let pos_emb = next(config.max_seq_len * h, 0.5);
        let blocks = (0..config.num_layers)
            .map(|_| Block {
                wq: next(h * h, attn_scale * 2.0),
                wk: next(h * h, attn_scale * 2.0),
                wv: next(h * h, attn_scale),
                wo: next(h * h, attn_scale),
                w_up: next(h * ff, attn_scale),
                w_down: next(ff * h, 1.0 / libm::sqrtf(ff as f32)),
            })
            .collect();
        let lm_head = next(h * config.vocab_size, 3.0 * attn_scale);
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            blocks,
            lm_head,
        })
    }

    fn embed(&self, token: TokenId, position: usize, out: &mut [f32]) {
        let h = self.config.hidden_size;
        let t = &self.tok_emb[token as usize * h..(token as usize + 1) * h];
        let p = &self.pos_emb[position * h..(position + 1) * h];
        for ((o, a), b) in out.iter_mut().zip(t).zip(p) {
            *o = a + b;
        }
    }

    fn head(&self, x: &[f32], out: &mut Vec<f32>) {
        let h = self.config.hidden_size;
        let mut normed = vec![0.0; h];
        rms_norm(x, &mut normed);
        let start = out.len();
        out.resize(start + self.config.vocab_size, 0.0);
        matvec(&normed, &self.lm_head, &mut out[start..]);
    }

    /// Attention output for one query over `n` stored positions.
    fn attend(
        &self,
        q: &[f32],
        keys: &[f32],
        values: &[f32],
        n: usize,
        out: &mut [f32],
        scores: &mut Vec<f32>,
    ) {
        let h = self.config.hidden_size;
        let hd = self.config.head_dim();
        let scale = 1.0 / libm::sqrtf(hd as f32);
        out.fill(0.0);
        scores.clear();
        scores.resize(n, 0.0);
        for head in 0..self.config.num_heads {
            let off = head * hd;
            let qh = &q[off..off + hd];
            let mut max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qh, &keys[j * h + off..j * h + off + hd]) * scale;
                max = max.max(*s);
            }
            let mut sum = 0.0f32;
            for s in scores.iter_mut() {
                *s = libm::expf(*s - max);
                sum += *s;
            }
            let oh = &mut out[off..off + hd];
            for (j, &s) in scores.iter().enumerate() {
                let w = s / sum;
                let vj = &values[j * h + off..j * h + off + hd];
                for (o, v) in oh.iter_mut().zip(vj) {
                    *o += w * v;
                }
            }
        }
    }

    fn mlp(&self, block: &Block, x: &mut [f32], scratch: &mut Scratch) {
        rms_norm(x, &mut scratch.normed);
        matvec(&scratch.normed, &block.w_up, &mut scratch.up);
        for u in scratch.up.iter_mut() {
            *u = gelu(*u);
        }
        matvec(&scratch.up, &block.w_down, &mut scratch.proj);
        for (xi, p) in x.iter_mut().zip(&scratch.proj) {
            *xi += p;
        }
    }

    fn project_out(&self, block: &Block, x: &mut [f32], attn: &[f32], scratch: &mut Scratch) {
        matvec(attn, &block.wo, &mut scratch.proj);
        for (xi, p) in x.iter_mut().zip(&scratch.proj) {
            *xi += p;
        }
    }
}

struct Scratch {
    normed: Vec<f32>,
    q: Vec<f32>,
    attn: Vec<f32>,
    up: Vec<f32>,
    proj: Vec<f32>,
    scores: Vec<f32>,
}

impl Scratch {
    fn new(h: usize) -> Self {
        Self {
            normed: vec![0.0; h],
            q: vec![0.0; h],
            attn: vec![0.0; h],
            up: vec![0.0; h * MLP_RATIO],
            proj: vec![0.0; h],
            scores: Vec::new(),
        }
    }
}

impl ModelBackend for ToyTransformer {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Layer-major pass over the whole sequence with freshly built key/value
    /// matrices. Shares no state handling with the incremental path.
    fn forward_full(&self, tokens: &[TokenId]) -> Result<StepOutput> {
        check_tokens(&self.config, 0, tokens)?;
        let h = self.config.hidden_size;
        let n = tokens.len();
        let mut hidden = vec![0.0f32; n * h];
        for (t, &tok) in tokens.iter().enumerate() {
            self.embed(tok, t, &mut hidden[t * h..(t + 1) * h]);
        }
        let mut scratch = Scratch::new(h);
        let mut kv = KvState::empty(self.config.num_layers, h);
        for (li, block) in self.blocks.iter().enumerate() {
            let mut keys = vec![0.0f32; n * h];
            let mut values = vec![0.0f32; n * h];
            let mut queries = vec![0.0f32; n * h];
            for t in 0..n {
                rms_norm(&hidden[t * h..(t + 1) * h], &mut scratch.normed);
                matvec(&scratch.normed, &block.wq, &mut queries[t * h..(t + 1) * h]);
                matvec(&scratch.normed, &block.wk, &mut keys[t * h..(t + 1) * h]);
                matvec(&scratch.normed, &block.wv, &mut values[t * h..(t + 1) * h]);
            }
            for t in 0..n {
                self.attend(
                    &queries[t * h..(t + 1) * h],
                    &keys,
                    &values,
                    t + 1,
                    &mut scratch.attn,
                    &mut scratch.scores,
                );
                let attn = core::mem::take(&mut scratch.attn);
                let x = &mut hidden[t * h..(t + 1) * h];
                self.project_out(block, x, &attn, &mut scratch);
                scratch.attn = attn;
                self.mlp(block, x, &mut scratch);
            }
            let layer = &mut kv.layers_mut()[li];
            layer.keys = keys;
            layer.values = values;
        }
        kv.set_len(n);
        let mut logits = Vec::with_capacity(n * self.config.vocab_size);
        for t in 0..n {
            self.head(&hidden[t * h..(t + 1) * h], &mut logits);
        }
        Ok(StepOutput {
            logits: Logits::new(self.config.vocab_size, logits),
            kv,
        })
    }

    fn forward_incremental(&self, cached: &KvState, new_tokens: &[TokenId]) -> Result<StepOutput> {
        cached.check_shape(self.config.num_layers, self.config.hidden_size)?;
        check_tokens(&self.config, cached.len(), new_tokens)?;
        let h = self.config.hidden_size;
        let mut kv = cached.clone();
        let mut scratch = Scratch::new(h);
        let mut logits = Vec::with_capacity(new_tokens.len() * self.config.vocab_size);
        let mut x = vec![0.0f32; h];
        let mut k = vec![0.0f32; h];
        let mut v = vec![0.0f32; h];
        for (i, &tok) in new_tokens.iter().enumerate() {
            let pos = cached.len() + i;
            self.embed(tok, pos, &mut x);
            for (li, block) in self.blocks.iter().enumerate() {
                rms_norm(&x, &mut scratch.normed);
                matvec(&scratch.normed, &block.wq, &mut scratch.q);
                matvec(&scratch.normed, &block.wk, &mut k);
                matvec(&scratch.normed, &block.wv, &mut v);
                kv.push_position(li, &k, &v);
                let layer = kv.layer(li);
                self.attend(
                    &scratch.q,
                    &layer.keys,
                    &layer.values,
                    pos + 1,
                    &mut scratch.attn,
                    &mut scratch.scores,
                );
                let attn = core::mem::take(&mut scratch.attn);
                self.project_out(block, &mut x, &attn, &mut scratch);
                scratch.attn = attn;
                self.mlp(block, &mut x, &mut scratch);
            }
            kv.set_len(pos + 1);
            self.head(&x, &mut logits);
        }
        Ok(StepOutput {
            logits: Logits::new(self.config.vocab_size, logits),
            kv,
        })
    }
}

/// `y = x W` with `W` row-major `x.len() x y.len()`.
fn matvec(x: &[f32], w: &[f32], y: &mut [f32]) {
    let out = y.len();
    debug_assert_eq!(w.len(), x.len() * out);
    y.fill(0.0);
    for (xi, row) in x.iter().zip(w.chunks_exact(out)) {
        for (yj, wj) in y.iter_mut().zip(row) {
            *yj += xi * wj;
        }
    }
}

/// Dot product with eight fixed accumulator lanes.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += xa[i] * xb[i];
        }
    }
    let mut sum = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (x, y) in ra.iter().zip(rb) {
        sum += x * y;
    }
    sum
}

fn rms_norm(x: &[f32], out: &mut [f32]) {
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / libm::sqrtf(ms + NORM_EPS);
    for (o, v) in out.iter_mut().zip(x) {
        *o = v * inv;
    }
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + libm::tanhf(C * (x + 0.044_715 * x * x * x)))
}
