//! The performance regressor: discrepancy rows in, NDCG estimate out.
//!
//! Rows are projected to tokens, passed through `L` pre-LN residual blocks
//!
//! ```text
//! h' = Mix(LN(h)) + h
//! h  = FFN(LN(h')) + h'
//! ```
//!
//! where `Mix` is multi-head self-attention (or a token-wise feed-forward
//! block for the MLP ablation), then mean-pooled and squashed by a logistic
//! readout. There is no positional or structural encoding, so the output does
//! not depend on row order. Gradients are written out by hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgnn::DgnnModel;
use crate::discrepancy::{slice_features, DiscrepancyKind, DiscrepancyRecord, ReferenceSet};
use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, Matrix};
use crate::temporal_graph::UnlabeledSlice;

pub const CHECKPOINT_VERSION: u32 = 1;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    SelfAttention,
    Mlp,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::SelfAttention => "self_attention",
            Backbone::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluatorConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    pub max_tokens: usize,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::SelfAttention,
            layers: 2,
            heads: 2,
            hidden_dim: 16,
            learning_rate: 0.02,
            epochs: 40,
            rng_seed: 17,
            max_tokens: 256,
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.heads < 1 || self.hidden_dim < 1 {
            return Err(Error::invalid("layers, heads and hidden_dim must be >= 1"));
        }
        if self.backbone == Backbone::SelfAttention && !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid("hidden_dim must be divisible by heads"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.max_tokens < 1 {
            return Err(Error::invalid("max_tokens must be >= 1"));
        }
        Ok(())
    }

    fn ffn_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixer {
    Attention(Attention),
    Mlp(FeedForward),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub ln1: LayerNormParams,
    pub mixer: Mixer,
    pub ln2: LayerNormParams,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorParams {
    pub heads: usize,
    pub w_in: Matrix,
    pub b_in: Matrix,
    pub blocks: Vec<Block>,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

fn xavier<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::uniform(fan_in, fan_out, bound, rng)
}

fn layer_norm_params(h: usize) -> LayerNormParams {
    LayerNormParams {
        gain: Matrix::from_vec(1, h, vec![1.0; h]),
        bias: Matrix::zeros(1, h),
    }
}

fn feed_forward<R: Rng>(h: usize, f: usize, rng: &mut R) -> FeedForward {
    FeedForward {
        w1: xavier(h, f, rng),
        b1: Matrix::zeros(1, f),
        w2: xavier(f, h, rng),
        b2: Matrix::zeros(1, h),
    }
}

impl EvaluatorParams {
    pub fn init(n_ref: usize, cfg: &EvaluatorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let h = cfg.hidden_dim;
        let f = cfg.ffn_dim();
        let w_in = xavier(n_ref, h, &mut rng);
        let blocks = (0..cfg.layers)
            .map(|_| {
                let mixer = match cfg.backbone {
                    Backbone::SelfAttention => Mixer::Attention(Attention {
                        wq: xavier(h, h, &mut rng),
                        bq: Matrix::zeros(1, h),
                        wk: xavier(h, h, &mut rng),
                        bk: Matrix::zeros(1, h),
                        wv: xavier(h, h, &mut rng),
                        bv: Matrix::zeros(1, h),
                        wo: xavier(h, h, &mut rng),
                        bo: Matrix::zeros(1, h),
                    }),
                    Backbone::Mlp => Mixer::Mlp(feed_forward(h, f, &mut rng)),
                };
                Block {
                    ln1: layer_norm_params(h),
                    mixer,
                    ln2: layer_norm_params(h),
                    ffn: feed_forward(h, f, &mut rng),
                }
            })
            .collect();
        let w_out = Matrix::uniform(h, 1, 0.1, &mut rng);
        Ok(Self {
            heads: cfg.heads,
            w_in,
            b_in: Matrix::zeros(1, h),
            blocks,
            w_out,
            b_out: Matrix::zeros(1, 1),
        })
    }

    pub fn n_ref(&self) -> usize {
        self.w_in.rows
    }

    /// Every parameter tensor with a stable group name.
    pub fn groups(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> =
            vec![("w_in".into(), &self.w_in), ("b_in".into(), &self.b_in)];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("l{l}.ln1.gain"), &b.ln1.gain));
            out.push((format!("l{l}.ln1.bias"), &b.ln1.bias));
            match &b.mixer {
                Mixer::Attention(a) => {
                    for (n, m) in [
                        ("wq", &a.wq),
                        ("bq", &a.bq),
                        ("wk", &a.wk),
                        ("bk", &a.bk),
                        ("wv", &a.wv),
                        ("bv", &a.bv),
                        ("wo", &a.wo),
                        ("bo", &a.bo),
                    ] {
                        out.push((format!("l{l}.attn.{n}"), m));
                    }
                }
                Mixer::Mlp(m) => push_ffn(&mut out, format!("l{l}.mix"), m),
            }
            out.push((format!("l{l}.ln2.gain"), &b.ln2.gain));
            out.push((format!("l{l}.ln2.bias"), &b.ln2.bias));
            push_ffn(&mut out, format!("l{l}.ffn"), &b.ffn);
        }
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    /// Same order as [`EvaluatorParams::groups`].
    pub fn groups_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.w_in, &mut self.b_in];
        for b in &mut self.blocks {
            out.push(&mut b.ln1.gain);
            out.push(&mut b.ln1.bias);
            match &mut b.mixer {
                Mixer::Attention(a) => out.extend([
                    &mut a.wq, &mut a.bq, &mut a.wk, &mut a.bk, &mut a.wv, &mut a.bv, &mut a.wo,
                    &mut a.bo,
                ]),
                Mixer::Mlp(m) => out.extend([&mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2]),
            }
            out.push(&mut b.ln2.gain);
            out.push(&mut b.ln2.bias);
            out.extend([&mut b.ffn.w1, &mut b.ffn.b1, &mut b.ffn.w2, &mut b.ffn.b2]);
        }
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for m in z.groups_mut() {
            m.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        let src: Vec<&Matrix> = other.groups().into_iter().map(|(_, m)| m).collect();
        for (dst, s) in self.groups_mut().into_iter().zip(src) {
            for (d, v) in dst.data.iter_mut().zip(&s.data) {
                *d += alpha * v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, m)| m.is_finite())
    }
}

fn push_ffn<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: String, f: &'a FeedForward) {
    out.push((format!("{prefix}.w1"), &f.w1));
    out.push((format!("{prefix}.b1"), &f.b1));
    out.push((format!("{prefix}.w2"), &f.w2));
    out.push((format!("{prefix}.b2"), &f.b2));
}

/// Rows kept when a matrix has more than `max_tokens` rows: `floor(i·M/max)`.
pub fn token_rows(rows: usize, max_tokens: usize) -> Vec<usize> {
    if rows <= max_tokens {
        (0..rows).collect()
    } else {
        (0..max_tokens).map(|i| i * rows / max_tokens).collect()
    }
}

// ---- forward/backward pieces -------------------------------------------

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = x.matmul(w);
    y.add_row_vector(&b.data);
    y
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, p: &LayerNormParams) -> (Matrix, LnCache) {
    let n = x.cols as f64;
    let mut xhat = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    let mut y = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for c in 0..x.cols {
            let xh = (row[c] - mean) * is;
            xhat[(r, c)] = xh;
            y[(r, c)] = xh * p.gain.data[c] + p.bias.data[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Matrix,
    p: &LayerNormParams,
    cache: &LnCache,
    grad: &mut LayerNormParams,
) -> Matrix {
    let n = dy.cols as f64;
    let mut dx = Matrix::zeros(dy.rows, dy.cols);
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        let mut dxhat = vec![0.0; dy.cols];
        for c in 0..dy.cols {
            grad.gain.data[c] += dyr[c] * xh[c];
            grad.bias.data[c] += dyr[c];
            dxhat[c] = dyr[c] * p.gain.data[c];
            sum_d += dxhat[c];
            sum_dx += dxhat[c] * xh[c];
        }
        let is = cache.inv_std[r];
        for c in 0..dy.cols {
            dx[(r, c)] = is / n * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
        }
    }
    dx
}

struct FfnCache {
    input: Matrix,
    pre: Matrix,
    act: Matrix,
}

fn ffn_forward(x: &Matrix, p: &FeedForward) -> (Matrix, FfnCache) {
    let pre = affine(x, &p.w1, &p.b1);
    let mut act = pre.clone();
    act.data.iter_mut().for_each(|v| *v = gelu(*v));
    let out = affine(&act, &p.w2, &p.b2);
    (
        out,
        FfnCache {
            input: x.clone(),
            pre,
            act,
        },
    )
}

fn ffn_backward(dy: &Matrix, p: &FeedForward, cache: &FfnCache, grad: &mut FeedForward) -> Matrix {
    grad.w2.add_assign(&cache.act.t_matmul(dy));
    add_to(&mut grad.b2, &dy.col_sums());
    let mut dpre = dy.matmul_t(&p.w2);
    for (d, &z) in dpre.data.iter_mut().zip(&cache.pre.data) {
        *d *= gelu_grad(z);
    }
    grad.w1.add_assign(&cache.input.t_matmul(&dpre));
    add_to(&mut grad.b1, &dpre.col_sums());
    dpre.matmul_t(&p.w1)
}

fn add_to(m: &mut Matrix, v: &[f64]) {
    for (a, b) in m.data.iter_mut().zip(v) {
        *a += b;
    }
}

struct AttnCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    concat: Matrix,
}

fn head_cols(m: &Matrix, head: usize, dh: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows, dh);
    for r in 0..m.rows {
        out.row_mut(r)
            .copy_from_slice(&m.row(r)[head * dh..(head + 1) * dh]);
    }
    out
}

fn set_head_cols(dst: &mut Matrix, src: &Matrix, head: usize, dh: usize) {
    for r in 0..dst.rows {
        dst.row_mut(r)[head * dh..(head + 1) * dh].copy_from_slice(src.row(r));
    }
}

fn attention_forward(x: &Matrix, p: &Attention, heads: usize) -> (Matrix, AttnCache) {
    let q = affine(x, &p.wq, &p.bq);
    let k = affine(x, &p.wk, &p.bk);
    let v = affine(x, &p.wv, &p.bv);
    let h = q.cols;
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Matrix::zeros(x.rows, h);
    let mut probs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let qh = head_cols(&q, hd, dh);
        let kh = head_cols(&k, hd, dh);
        let vh = head_cols(&v, hd, dh);
        let mut s = qh.matmul_t(&kh);
        s.scale(scale);
        for r in 0..s.rows {
            let row = s.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for val in row.iter_mut() {
                *val = (*val - max).exp();
                z += *val;
            }
            row.iter_mut().for_each(|val| *val /= z);
        }
        let oh = s.matmul(&vh);
        set_head_cols(&mut concat, &oh, hd, dh);
        probs.push(s);
    }
    let out = affine(&concat, &p.wo, &p.bo);
    (
        out,
        AttnCache {
            input: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

fn attention_backward(
    dy: &Matrix,
    p: &Attention,
    heads: usize,
    cache: &AttnCache,
    grad: &mut Attention,
) -> Matrix {
    grad.wo.add_assign(&cache.concat.t_matmul(dy));
    add_to(&mut grad.bo, &dy.col_sums());
    let dconcat = dy.matmul_t(&p.wo);
    let h = cache.q.cols;
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Matrix::zeros(cache.q.rows, h);
    let mut dk = Matrix::zeros(cache.k.rows, h);
    let mut dv = Matrix::zeros(cache.v.rows, h);
    for hd in 0..heads {
        let qh = head_cols(&cache.q, hd, dh);
        let kh = head_cols(&cache.k, hd, dh);
        let vh = head_cols(&cache.v, hd, dh);
        let doh = head_cols(&dconcat, hd, dh);
        let pr = &cache.probs[hd];
        let dp = doh.matmul_t(&vh);
        let dvh = pr.t_matmul(&doh);
        let mut ds = Matrix::zeros(pr.rows, pr.cols);
        for r in 0..pr.rows {
            let pr_r = pr.row(r);
            let dp_r = dp.row(r);
            let inner = dot(pr_r, dp_r);
            for (c, d) in ds.row_mut(r).iter_mut().enumerate() {
                *d = pr_r[c] * (dp_r[c] - inner) * scale;
            }
        }
        set_head_cols(&mut dq, &ds.matmul(&kh), hd, dh);
        set_head_cols(&mut dk, &ds.t_matmul(&qh), hd, dh);
        set_head_cols(&mut dv, &dvh, hd, dh);
    }
    grad.wq.add_assign(&cache.input.t_matmul(&dq));
    add_to(&mut grad.bq, &dq.col_sums());
    grad.wk.add_assign(&cache.input.t_matmul(&dk));
    add_to(&mut grad.bk, &dk.col_sums());
    grad.wv.add_assign(&cache.input.t_matmul(&dv));
    add_to(&mut grad.bv, &dv.col_sums());
    let mut dx = dq.matmul_t(&p.wq);
    dx.add_assign(&dk.matmul_t(&p.wk));
    dx.add_assign(&dv.matmul_t(&p.wv));
    dx
}

enum MixCache {
    Attention(AttnCache),
    Mlp(FfnCache),
}

struct BlockCache {
    ln1: LnCache,
    mix: MixCache,
    ln2: LnCache,
    ffn: FfnCache,
}

struct ForwardCache {
    input: Matrix,
    blocks: Vec<BlockCache>,
    pooled: Vec<f64>,
    tokens: usize,
    output: f64,
}

fn check_input(params: &EvaluatorParams, x: &Matrix) -> Result<()> {
    if x.cols != params.n_ref() {
        return Err(Error::LengthMismatch {
            expected: params.n_ref(),
            got: x.cols,
        });
    }
    if x.rows == 0 {
        return Err(Error::EmptyGraph("discrepancy matrix has no rows".into()));
    }
    if !x.is_finite() {
        return Err(Error::invalid("non-finite value in discrepancy features"));
    }
    Ok(())
}

fn forward_cached(params: &EvaluatorParams, x: &Matrix) -> ForwardCache {
    let mut h = affine(x, &params.w_in, &params.b_in);
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for b in &params.blocks {
        let (a, ln1) = layer_norm(&h, &b.ln1);
        let (m, mix) = match &b.mixer {
            Mixer::Attention(p) => {
                let (o, c) = attention_forward(&a, p, params.heads);
                (o, MixCache::Attention(c))
            }
            Mixer::Mlp(p) => {
                let (o, c) = ffn_forward(&a, p);
                (o, MixCache::Mlp(c))
            }
        };
        let mut h_mid = m;
        h_mid.add_assign(&h);
        let (bn, ln2) = layer_norm(&h_mid, &b.ln2);
        let (f, ffn) = ffn_forward(&bn, &b.ffn);
        h = f;
        h.add_assign(&h_mid);
        blocks.push(BlockCache { ln1, mix, ln2, ffn });
    }
    let pooled = h.col_means();
    let z = dot(&pooled, &params.w_out.data) + params.b_out.data[0];
    ForwardCache {
        input: x.clone(),
        blocks,
        pooled,
        tokens: h.rows,
        output: sigmoid(z),
    }
}

/// Accumulate `d loss / d params` given `d loss / d output` into `grad`.
fn backward(
    params: &EvaluatorParams,
    cache: &ForwardCache,
    d_out: f64,
    grad: &mut EvaluatorParams,
) {
    let y = cache.output;
    let dz = d_out * y * (1.0 - y);
    for (g, p) in grad.w_out.data.iter_mut().zip(&cache.pooled) {
        *g += dz * p;
    }
    grad.b_out.data[0] += dz;
    let inv_m = 1.0 / cache.tokens as f64;
    let mut dh = Matrix::zeros(cache.tokens, params.w_out.rows);
    for r in 0..cache.tokens {
        for (d, w) in dh.row_mut(r).iter_mut().zip(&params.w_out.data) {
            *d = dz * w * inv_m;
        }
    }
    for ((b, bc), gb) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grad.blocks.iter_mut())
        .rev()
    {
        // h = FFN(LN2(h_mid)) + h_mid
        let d_bn = ffn_backward(&dh, &b.ffn, &bc.ffn, &mut gb.ffn);
        let mut d_mid = layer_norm_backward(&d_bn, &b.ln2, &bc.ln2, &mut gb.ln2);
        d_mid.add_assign(&dh);
        // h_mid = Mix(LN1(h_prev)) + h_prev
        let d_a = match (&b.mixer, &bc.mix, &mut gb.mixer) {
            (Mixer::Attention(p), MixCache::Attention(c), Mixer::Attention(g)) => {
                attention_backward(&d_mid, p, params.heads, c, g)
            }
            (Mixer::Mlp(p), MixCache::Mlp(c), Mixer::Mlp(g)) => ffn_backward(&d_mid, p, c, g),
            _ => unreachable!("mixer kind mismatch"),
        };
        let mut d_prev = layer_norm_backward(&d_a, &b.ln1, &bc.ln1, &mut gb.ln1);
        d_prev.add_assign(&d_mid);
        dh = d_prev;
    }
    grad.w_in.add_assign(&cache.input.t_matmul(&dh));
    add_to(&mut grad.b_in, &dh.col_sums());
}

fn tokens(x: &Matrix, max_tokens: usize) -> std::borrow::Cow<'_, Matrix> {
    if x.rows <= max_tokens {
        std::borrow::Cow::Borrowed(x)
    } else {
        std::borrow::Cow::Owned(x.select_rows(&token_rows(x.rows, max_tokens)))
    }
}

/// Estimate in `(0, 1)` for one discrepancy matrix.
pub fn forward(params: &EvaluatorParams, x: &Matrix, max_tokens: usize) -> Result<f64> {
    check_input(params, x)?;
    Ok(forward_cached(params, &tokens(x, max_tokens)).output)
}

/// Mean squared error over records and its gradient.
pub fn loss_and_grad(
    params: &EvaluatorParams,
    records: &[DiscrepancyRecord],
    max_tokens: usize,
) -> Result<(f64, EvaluatorParams)> {
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    let n = records.len().max(1) as f64;
    for r in records {
        check_input(params, &r.features)?;
        let cache = forward_cached(params, &tokens(&r.features, max_tokens));
        let err = cache.output - r.label;
        loss += err * err / n;
        backward(params, &cache, 2.0 * err / n, &mut grad);
    }
    Ok((loss, grad))
}

pub fn mse(
    params: &EvaluatorParams,
    records: &[DiscrepancyRecord],
    max_tokens: usize,
) -> Result<f64> {
    let errs = records
        .par_iter()
        .map(|r| Ok((forward(params, &r.features, max_tokens)? - r.label).powi(2)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / records.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedParams {
    pub params: EvaluatorParams,
    /// Training-set MSE before the first epoch and after each epoch.
    pub mse_history: Vec<f64>,
}

/// Per-record gradient steps with a fixed learning rate, visiting records in a
/// seeded shuffled order each epoch.
pub fn train_evaluator(
    records: &[DiscrepancyRecord],
    cfg: &EvaluatorConfig,
) -> Result<TrainedParams> {
    cfg.validate()?;
    if records.len() < 2 {
        return Err(Error::invalid("need at least 2 discrepancy records"));
    }
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.label)) {
        return Err(Error::invalid(format!("label {} outside [0,1]", r.label)));
    }
    let n_ref = records[0].features.cols;
    let mut params = EvaluatorParams::init(n_ref, cfg)?;
    let mean_label = records.iter().map(|r| r.label).sum::<f64>() / records.len() as f64;
    let m = mean_label.clamp(1e-3, 1.0 - 1e-3);
    params.b_out.data[0] = (m / (1.0 - m)).ln();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut history = vec![mse(&params, records, cfg.max_tokens)?];
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (_, grad) =
                loss_and_grad(&params, std::slice::from_ref(&records[i]), cfg.max_tokens)?;
            params.axpy(-cfg.learning_rate, &grad);
        }
        let loss = mse(&params, records, cfg.max_tokens)?;
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(loss);
    }
    Ok(TrainedParams {
        params,
        mse_history: history,
    })
}

/// Worst relative error between the analytic gradient and central finite
/// differences (step 1e-5) over at least `min_coords` coordinates, with at
/// least one coordinate in every parameter group.
pub fn gradient_check(
    cfg: &EvaluatorConfig,
    records: &[DiscrepancyRecord],
    min_coords: usize,
    seed: u64,
) -> Result<GradientReport> {
    let n_ref = records
        .first()
        .map(|r| r.features.cols)
        .ok_or_else(|| Error::invalid("gradient check needs a record"))?;
    let mut params = EvaluatorParams::init(n_ref, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Perturb the deterministic init so biases and gains are not at special values.
    for m in params.groups_mut() {
        for v in m.data.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let (_, grad) = loss_and_grad(&params, records, cfg.max_tokens)?;
    let names: Vec<String> = params.groups().into_iter().map(|(n, _)| n).collect();
    let sizes: Vec<usize> = params.groups().iter().map(|(_, m)| m.data.len()).collect();
    let mut coords: Vec<(usize, usize)> = (0..names.len())
        .map(|g| (g, rng.gen_range(0..sizes[g])))
        .collect();
    while coords.len() < min_coords {
        let g = rng.gen_range(0..names.len());
        coords.push((g, rng.gen_range(0..sizes[g])));
    }
    let grads: Vec<Vec<f64>> = grad
        .groups()
        .into_iter()
        .map(|(_, m)| m.data.clone())
        .collect();
    let step = 1e-5;
    let mut worst = 0.0_f64;
    let mut worst_group = String::new();
    for &(g, i) in &coords {
        let orig = params.groups()[g].1.data[i];
        params.groups_mut()[g].data[i] = orig + step;
        let (lp, _) = loss_and_grad(&params, records, cfg.max_tokens)?;
        params.groups_mut()[g].data[i] = orig - step;
        let (lm, _) = loss_and_grad(&params, records, cfg.max_tokens)?;
        params.groups_mut()[g].data[i] = orig;
        let numeric = (lp - lm) / (2.0 * step);
        let err = relative_error(grads[g][i], numeric);
        if err > worst {
            worst = err;
            worst_group = names[g].clone();
        }
    }
    Ok(GradientReport {
        max_relative_error: worst,
        worst_group,
        coordinates: coords.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub worst_group: String,
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps near-zero gradients from
/// dividing by nothing.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A trained regressor together with what is needed to featurize new slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluator {
    pub config: EvaluatorConfig,
    pub kind: DiscrepancyKind,
    pub reference: ReferenceSet,
    pub params: EvaluatorParams,
    pub mse_history: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    evaluator: Evaluator,
}

impl Evaluator {
    pub fn fit(
        records: &[DiscrepancyRecord],
        config: &EvaluatorConfig,
        kind: DiscrepancyKind,
        reference: ReferenceSet,
    ) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.features.cols != reference.len()) {
            return Err(Error::LengthMismatch {
                expected: reference.len(),
                got: r.features.cols,
            });
        }
        let trained = train_evaluator(records, config)?;
        Ok(Self {
            config: config.clone(),
            kind,
            reference,
            params: trained.params,
            mse_history: trained.mse_history,
        })
    }

    pub fn predict(&self, features: &Matrix) -> Result<f64> {
        forward(&self.params, features, self.config.max_tokens)
    }

    pub fn training_rmse(&self) -> f64 {
        self.mse_history.last().copied().unwrap_or(f64::NAN).sqrt()
    }

    pub fn save_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            evaluator: self.clone(),
        })?)
    }

    pub fn load_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck.evaluator)
    }
}

/// NDCG estimate for an unlabeled test slice: featurize against the stored
/// anchors with the frozen model, then run the regressor.
pub fn estimate(evaluator: &Evaluator, model: &DgnnModel, test: &UnlabeledSlice) -> Result<f64> {
    let slice = test.slice();
    if slice.is_empty() {
        return Err(Error::EmptyGraph("test slice has no events".into()));
    }
    let features = slice_features(model, slice, &evaluator.reference, evaluator.kind)?;
    evaluator.predict(&features.matrix)
}
