//! Transformer building blocks recorded on a [`Tape`].

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{ModelError, TensorError};
use crate::rng::{self, Rng};
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Sinusoidal table: `PE(p, 2i) = sin(p / 10000^(2i/d))`, `PE(p, 2i+1) = cos(·)`.
pub fn positional_encoding<T: Real>(length: usize, d_model: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(length * d_model);
    for pos in 0..length {
        for c in 0..d_model {
            let pair = (c / 2 * 2) as f64;
            let angle = pos as f64 / Float::powf(10_000.0f64, pair / d_model as f64);
            data.push(T::from_f64(if c % 2 == 0 { Float::sin(angle) } else { Float::cos(angle) }));
        }
    }
    Tensor::matrix(length, d_model, data).expect("consistent shape")
}

/// Adds positional encodings for rows `0..n` of `x`.
pub fn add_positions<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
    let (n, d) = tape.shape(x);
    let pe = tape.leaf(&positional_encoding(n, d));
    tape.add(x, pe)
}

/// `softmax(Q Kᵀ / √d_k) V` with `Q = queries·W_Q`, `K = keys·W_K`, `V = keys·W_V`;
/// `d_k` is the projected width.
pub fn attention_head<T: Real>(
    tape: &mut Tape<T>,
    queries: Var,
    keys: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    causal: bool,
) -> Result<Var, TensorError> {
    let dk = tape.shape(wq).1;
    let q = tape.matmul(queries, wq)?;
    let k = tape.matmul(keys, wk)?;
    let v = tape.matmul(keys, wv)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, T::one() / T::from_f64(dk as f64).sqrt());
    let weights = tape.softmax_rows_masked(scaled, causal);
    tape.matmul(weights, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayer {
    pub attn: AttentionParams,
    pub ffn: FeedForwardParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayer {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    pub ffn: FeedForwardParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderParams {
    pub embed: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouterParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// Seeded parameter factory: matrices `U(-1/√fan_in, 1/√fan_in)`, biases zero, norm
/// gains one.
pub struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut Rng,
}

impl<T: Real> Init<'_, T> {
    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols).map(|_| T::from_f64(rng::symmetric(self.rng, bound))).collect();
        self.store.insert(name, Tensor::matrix(rows, cols, data).expect("shape"))
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.uniform(name, rows, cols, 1.0 / Float::sqrt(rows as f64))
    }

    pub fn constant(&mut self, name: &str, cols: usize, value: f64) -> ParamId {
        self.store.insert(name, Tensor::matrix(1, cols, alloc::vec![T::from_f64(value); cols]).expect("shape"))
    }

    pub fn attention(&mut self, prefix: &str, d: usize) -> AttentionParams {
        AttentionParams {
            wq: self.matrix(&format!("{prefix}.wq"), d, d),
            wk: self.matrix(&format!("{prefix}.wk"), d, d),
            wv: self.matrix(&format!("{prefix}.wv"), d, d),
            wo: self.matrix(&format!("{prefix}.wo"), d, d),
            norm_gain: self.constant(&format!("{prefix}.norm_gain"), d, 1.0),
            norm_bias: self.constant(&format!("{prefix}.norm_bias"), d, 0.0),
        }
    }

    pub fn feed_forward(&mut self, prefix: &str, d: usize, d_ff: usize) -> FeedForwardParams {
        FeedForwardParams {
            w1: self.matrix(&format!("{prefix}.w1"), d, d_ff),
            b1: self.constant(&format!("{prefix}.b1"), d_ff, 0.0),
            w2: self.matrix(&format!("{prefix}.w2"), d_ff, d),
            b2: self.constant(&format!("{prefix}.b2"), d, 0.0),
            norm_gain: self.constant(&format!("{prefix}.norm_gain"), d, 1.0),
            norm_bias: self.constant(&format!("{prefix}.norm_bias"), d, 0.0),
        }
    }
}

/// `LayerNorm(x + [head₁ ‖ … ‖ headₙ] W_O)`, heads taken from column blocks of the
/// full projection matrices.
pub fn multi_head<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &AttentionParams,
    x: Var,
    keys: Var,
    heads: usize,
    causal: bool,
) -> Result<Var, TensorError> {
    let d = tape.shape(x).1;
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::Shape { op: "multi_head", lhs: (d, heads), rhs: (0, 0) });
    }
    let dk = d / heads;
    let (wq, wk, wv, wo) = (tape.param(store, p.wq), tape.param(store, p.wk), tape.param(store, p.wv), tape.param(store, p.wo));
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(wq, h * dk, dk)?;
        let k = tape.slice_cols(wk, h * dk, dk)?;
        let v = tape.slice_cols(wv, h * dk, dk)?;
        outs.push(attention_head(tape, x, keys, q, k, v, causal)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let projected = tape.matmul(cat, wo)?;
    let residual = tape.add(x, projected)?;
    let (g, b) = (tape.param(store, p.norm_gain), tape.param(store, p.norm_bias));
    tape.layer_norm(residual, g, b)
}

/// `LayerNorm(x + ReLU(x W₁ + b₁) W₂ + b₂)`.
pub fn feed_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &FeedForwardParams,
    x: Var,
) -> Result<Var, TensorError> {
    let w1 = tape.param(store, p.w1);
    let b1 = tape.param(store, p.b1);
    let w2 = tape.param(store, p.w2);
    let b2 = tape.param(store, p.b2);
    let hidden = tape.matmul(x, w1)?;
    let hidden = tape.add_row(hidden, b1)?;
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, w2)?;
    let out = tape.add_row(out, b2)?;
    let residual = tape.add(x, out)?;
    let (g, b) = (tape.param(store, p.norm_gain), tape.param(store, p.norm_bias));
    tape.layer_norm(residual, g, b)
}

/// Positional encoding, then each layer's self-attention and feed-forward blocks.
/// Output shape equals input shape.
pub fn encoder_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layers: &[EncoderLayer],
    heads: usize,
    features: Var,
) -> Result<Var, TensorError> {
    let mut x = add_positions(tape, features)?;
    for layer in layers {
        x = multi_head(tape, store, &layer.attn, x, x, heads, false)?;
        x = feed_forward(tape, store, &layer.ffn, x)?;
    }
    Ok(x)
}

/// Teacher-forced decoder pass over `ids`; returns (hidden states, logits), one row per
/// input position.
pub fn decoder_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &DecoderParams,
    heads: usize,
    memory: Var,
    ids: &[usize],
) -> Result<(Var, Var), TensorError> {
    let table = tape.param(store, p.embed);
    let d = tape.shape(table).1;
    let emb = tape.embedding(table, ids)?;
    let emb = tape.scale(emb, T::from_f64(d as f64).sqrt());
    let mut x = add_positions(tape, emb)?;
    for layer in &p.layers {
        x = multi_head(tape, store, &layer.self_attn, x, x, heads, true)?;
        x = multi_head(tape, store, &layer.cross_attn, x, memory, heads, false)?;
        x = feed_forward(tape, store, &layer.ffn, x)?;
    }
    let w = tape.param(store, p.out_w);
    let b = tape.param(store, p.out_b);
    let logits = tape.matmul(x, w)?;
    let logits = tape.add_row(logits, b)?;
    Ok((x, logits))
}

/// Router weights `softmax(h W + b)` over experts, one row per position.
pub fn router_weights<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &RouterParams,
    hidden: Var,
) -> Result<Var, TensorError> {
    let w = tape.param(store, p.w);
    let b = tape.param(store, p.b);
    let logits = tape.matmul(hidden, w)?;
    let logits = tape.add_row(logits, b)?;
    Ok(tape.softmax_rows(logits))
}

/// Per-row convex combination `Σₑ weights[:, e] · expertsₑ` recorded on the tape.
pub fn route_on_tape<T: Real>(tape: &mut Tape<T>, experts: &[Var], weights: Var) -> Result<Var, TensorError> {
    let mut mixed: Option<Var> = None;
    for (e, &probs) in experts.iter().enumerate() {
        let w = tape.slice_cols(weights, e, 1)?;
        let part = tape.scale_rows(probs, w)?;
        mixed = Some(match mixed {
            Some(acc) => tape.add(acc, part)?,
            None => part,
        });
    }
    mixed.ok_or(TensorError::Empty("route"))
}

/// Convex combination of expert next-token distributions.
pub fn soft_route(experts: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>, ModelError> {
    if experts.is_empty() || experts.len() != weights.len() {
        return Err(ModelError::Routing("one weight per expert required"));
    }
    let v = experts[0].len();
    if experts.iter().any(|e| e.len() != v) {
        return Err(ModelError::Routing("experts disagree on vocabulary size"));
    }
    let mut out = alloc::vec![0.0; v];
    for (e, &w) in experts.iter().zip(weights) {
        for (o, &p) in out.iter_mut().zip(e) {
            *o += w * p;
        }
    }
    Ok(out)
}
