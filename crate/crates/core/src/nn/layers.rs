//! Parameter initialization and forward helpers for the layers the
//! models are assembled from: linear maps, strided convolutions with
//! optional batch normalization, GRU cells, multi-head attention, and
//! layer normalization.
//!
//! Each layer lives in a [`ParamStore`] under a dotted name prefix
//! (`"embed.conv0"`, `"enc.l1"`). Initialization draws from a caller
//! provided RNG so whole-model setup is reproducible.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Binder, Graph, ParamStore, Var};

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
}

// ----------------------------------------------------------------------
// Linear
// ----------------------------------------------------------------------

/// Weight `[in, out]` plus bias `[out]`, bounds `1/sqrt(in)`.
pub fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    rng: &mut ChaCha8Rng,
) {
    let bound = 1.0 / (in_dim as f64).sqrt();
    store.insert(&format!("{prefix}.w"), uniform(rng, &[in_dim, out_dim], bound), true);
    store.insert(&format!("{prefix}.b"), uniform(rng, &[out_dim], bound), true);
}

/// `x [N, in] -> [N, out]`.
pub fn linear(g: &mut Graph, b: &mut Binder, prefix: &str, x: Var) -> Var {
    let w = b.var(g, &format!("{prefix}.w"));
    let bias = b.var(g, &format!("{prefix}.b"));
    let y = g.matmul(x, w);
    g.add_row_bias(y, bias)
}

// ----------------------------------------------------------------------
// Convolution and batch normalization
// ----------------------------------------------------------------------

/// Weight `[co, ci, k, k]` plus bias `[co]`, bounds `1/sqrt(ci*k*k)`.
pub fn init_conv2d(
    store: &mut ParamStore,
    prefix: &str,
    ci: usize,
    co: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) {
    let bound = 1.0 / ((ci * k * k) as f64).sqrt();
    store.insert(&format!("{prefix}.w"), uniform(rng, &[co, ci, k, k], bound), true);
    store.insert(&format!("{prefix}.b"), uniform(rng, &[co], bound), true);
}

/// `x [B, ci, H, W] -> [B, co, H', W']`.
pub fn conv2d(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    x: Var,
    stride: usize,
    padding: usize,
) -> Var {
    let w = b.var(g, &format!("{prefix}.w"));
    let bias = b.var(g, &format!("{prefix}.b"));
    g.conv2d(x, w, bias, stride, padding)
}

/// Unit gain, zero shift, and zeroed running statistics. The running
/// entries are stored alongside the weights but marked non-trainable.
pub fn init_batch_norm(store: &mut ParamStore, prefix: &str, channels: usize) {
    store.insert(&format!("{prefix}.gamma"), ArrayD::ones(IxDyn(&[channels])), true);
    store.insert(&format!("{prefix}.beta"), ArrayD::zeros(IxDyn(&[channels])), true);
    store.insert(&format!("{prefix}.running_mean"), ArrayD::zeros(IxDyn(&[channels])), false);
    store.insert(&format!("{prefix}.running_var"), ArrayD::ones(IxDyn(&[channels])), false);
}

/// Deferred running-statistics update recorded during a training
/// forward pass and applied to the store after the step.
pub struct BnUpdate {
    pub prefix: String,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub count: usize,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Training mode normalizes with batch statistics and records the
/// update; evaluation mode (`updates = None`) uses the stored running
/// statistics.
pub fn batch_norm(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    x: Var,
    updates: Option<&mut Vec<BnUpdate>>,
) -> Var {
    let gamma = b.var(g, &format!("{prefix}.gamma"));
    let beta = b.var(g, &format!("{prefix}.beta"));
    match updates {
        Some(collector) => {
            let count = {
                let s = g.value(x).shape();
                s[0] * s[2] * s[3]
            };
            let (y, batch_mean, batch_var) = g.batch_norm2d_train(x, gamma, beta, BN_EPS);
            collector.push(BnUpdate { prefix: prefix.to_string(), batch_mean, batch_var, count });
            y
        }
        None => {
            let rm: Vec<f64> =
                b.store().get(&format!("{prefix}.running_mean")).value.iter().copied().collect();
            let rv: Vec<f64> =
                b.store().get(&format!("{prefix}.running_var")).value.iter().copied().collect();
            g.batch_norm2d_eval(x, gamma, beta, &rm, &rv, BN_EPS)
        }
    }
}

/// Fold recorded batch statistics into the running entries:
/// `running <- (1-m)*running + m*batch`, with the unbiased variance
/// correction `n/(n-1)` on the running variance.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        let m = BN_MOMENTUM;
        let correction =
            if u.count > 1 { u.count as f64 / (u.count as f64 - 1.0) } else { 1.0 };
        {
            let rm = &mut store.get_mut(&format!("{}.running_mean", u.prefix)).value;
            for (r, &bm) in rm.iter_mut().zip(&u.batch_mean) {
                *r = (1.0 - m) * *r + m * bm;
            }
        }
        {
            let rv = &mut store.get_mut(&format!("{}.running_var", u.prefix)).value;
            for (r, &bv) in rv.iter_mut().zip(&u.batch_var) {
                *r = (1.0 - m) * *r + m * bv * correction;
            }
        }
    }
}

// ----------------------------------------------------------------------
// GRU
// ----------------------------------------------------------------------

/// One GRU layer: input weights `[in, 3H]`, recurrent weights
/// `[H, 3H]`, two `[3H]` biases; gate columns ordered reset, update,
/// candidate. Bounds `1/sqrt(H)`.
pub fn init_gru(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) {
    let bound = 1.0 / (hidden as f64).sqrt();
    store.insert(&format!("{prefix}.w_ih"), uniform(rng, &[in_dim, 3 * hidden], bound), true);
    store.insert(&format!("{prefix}.w_hh"), uniform(rng, &[hidden, 3 * hidden], bound), true);
    store.insert(&format!("{prefix}.b_ih"), uniform(rng, &[3 * hidden], bound), true);
    store.insert(&format!("{prefix}.b_hh"), uniform(rng, &[3 * hidden], bound), true);
}

/// One step of one GRU layer: `x [B, in]`, `h [B, H]` -> new `[B, H]`.
///
/// r = σ(x·W_ir + b_ir + h·W_hr + b_hr)
/// z = σ(x·W_iz + b_iz + h·W_hz + b_hz)
/// n = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
pub fn gru_step(g: &mut Graph, b: &mut Binder, prefix: &str, x: Var, h: Var) -> Var {
    let hidden = g.value(h).shape()[1];
    let w_ih = b.var(g, &format!("{prefix}.w_ih"));
    let w_hh = b.var(g, &format!("{prefix}.w_hh"));
    let b_ih = b.var(g, &format!("{prefix}.b_ih"));
    let b_hh = b.var(g, &format!("{prefix}.b_hh"));

    let xi = g.matmul(x, w_ih);
    let xi = g.add_row_bias(xi, b_ih);
    let hh = g.matmul(h, w_hh);
    let hh = g.add_row_bias(hh, b_hh);

    let xr = g.slice_cols(xi, 0, hidden);
    let xz = g.slice_cols(xi, hidden, hidden);
    let xn = g.slice_cols(xi, 2 * hidden, hidden);
    let hr = g.slice_cols(hh, 0, hidden);
    let hz = g.slice_cols(hh, hidden, hidden);
    let hn = g.slice_cols(hh, 2 * hidden, hidden);

    let r = g.add(xr, hr);
    let r = g.sigmoid(r);
    let z = g.add(xz, hz);
    let z = g.sigmoid(z);
    let gated = g.mul(r, hn);
    let n = g.add(xn, gated);
    let n = g.tanh(n);

    let zn = g.mul(z, n);
    let zh = g.mul(z, h);
    let n_minus_zn = g.sub(n, zn);
    g.add(n_minus_zn, zh)
}

// ----------------------------------------------------------------------
// Layer normalization
// ----------------------------------------------------------------------

pub const LN_EPS: f64 = 1e-5;

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(&format!("{prefix}.gamma"), ArrayD::ones(IxDyn(&[dim])), true);
    store.insert(&format!("{prefix}.beta"), ArrayD::zeros(IxDyn(&[dim])), true);
}

pub fn layer_norm(g: &mut Graph, b: &mut Binder, prefix: &str, x: Var) -> Var {
    let gamma = b.var(g, &format!("{prefix}.gamma"));
    let beta = b.var(g, &format!("{prefix}.beta"));
    g.layer_norm(x, gamma, beta, LN_EPS)
}

// ----------------------------------------------------------------------
// Multi-head attention
// ----------------------------------------------------------------------

/// Four `[D, D]` projections (query, key, value, output) with biases.
pub fn init_mha(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut ChaCha8Rng) {
    for name in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{prefix}.{name}"), dim, dim, rng);
    }
}

/// Self-attention over `seq_len` positions for a batch.
///
/// `rows` is `[seq_len * batch, D]` with position-major row order
/// (row index = position * batch + item). Output has the same layout.
/// Scores use scaled dot product with per-position softmax over keys;
/// no positional encoding is added.
pub fn mha(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    rows: Var,
    seq_len: usize,
    batch: usize,
    heads: usize,
) -> Var {
    let dim = g.value(rows).shape()[1];
    assert_eq!(dim % heads, 0, "head count must divide the feature size");
    let hd = dim / heads;

    let q = linear(g, b, &format!("{prefix}.q"), rows);
    let k = linear(g, b, &format!("{prefix}.k"), rows);
    let v = linear(g, b, &format!("{prefix}.v"), rows);

    // [T*B, D] -> [B*heads, T, hd]
    let to_heads = |g: &mut Graph, x: Var| -> Var {
        let x = g.reshape(x, &[seq_len, batch, heads, hd]);
        let x = g.permute(x, &[1, 2, 0, 3]);
        g.reshape(x, &[batch * heads, seq_len, hd])
    };
    let qh = to_heads(g, q);
    let kh = to_heads(g, k);
    let vh = to_heads(g, v);

    let kt = g.permute(kh, &[0, 2, 1]);
    let scores = g.batched_matmul(qh, kt);
    let scores = g.scale(scores, 1.0 / (hd as f64).sqrt());
    let flat = g.reshape(scores, &[batch * heads * seq_len, seq_len]);
    let attn = g.softmax_rows(flat);
    let attn = g.reshape(attn, &[batch * heads, seq_len, seq_len]);

    let ctx = g.batched_matmul(attn, vh);
    // [B*heads, T, hd] -> [T*B, D]
    let ctx = g.reshape(ctx, &[batch, heads, seq_len, hd]);
    let ctx = g.permute(ctx, &[2, 0, 1, 3]);
    let ctx = g.reshape(ctx, &[seq_len * batch, dim]);

    linear(g, b, &format!("{prefix}.o"), ctx)
}
