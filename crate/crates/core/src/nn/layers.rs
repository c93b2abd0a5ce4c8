//! Transformer building blocks on top of [`Graph`] and [`Binder`].
//!
//! Parameter naming: a layer called `name` owns `name.w`/`name.b` (linear),
//! `name.g`/`name.b` (norm), `name.{q,k,v,o}.*` (attention) and
//! `name.fc{1,2}.*` (feed-forward).

use std::f64::consts::PI;

use ndarray::Array2;

use super::{normal_init, xavier_uniform, Binder, Graph, Mat, ParamStore, Var};

pub fn init_linear<R: rand::Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) {
    store.insert(format!("{name}.w"), xavier_uniform(rng, fan_in, fan_out));
    store.insert(format!("{name}.b"), Array2::zeros((1, fan_out)));
}

/// Linear layer with every weight and bias set to zero.
pub fn init_linear_zero(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) {
    store.insert(format!("{name}.w"), Array2::zeros((fan_in, fan_out)));
    store.insert(format!("{name}.b"), Array2::zeros((1, fan_out)));
}

pub fn linear(g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Var {
    let w = b.get(g, &format!("{name}.w"));
    let bias = b.get(g, &format!("{name}.b"));
    let h = g.matmul(x, w);
    g.add_row(h, bias)
}

pub fn init_norm(store: &mut ParamStore, name: &str, dim: usize) {
    store.insert(format!("{name}.g"), Array2::ones((1, dim)));
    store.insert(format!("{name}.b"), Array2::zeros((1, dim)));
}

/// Layer normalisation with learned gain and bias.
pub fn norm(g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Var {
    let gain = b.get(g, &format!("{name}.g"));
    let bias = b.get(g, &format!("{name}.b"));
    let n = g.layer_norm(x);
    let n = g.mul_row(n, gain);
    g.add_row(n, bias)
}

/// `LN(x) ⊙ (1 + scale) + shift` with 1×C `shift`/`scale` rows.
pub fn modulated_norm(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
    let n = g.layer_norm(x);
    let s = g.add_scalar(scale, 1.0);
    let n = g.mul_row(n, s);
    g.add_row(n, shift)
}

pub fn init_attention<R: rand::Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, c: usize) {
    for p in ["q", "k", "v", "o"] {
        init_linear(store, rng, &format!("{name}.{p}"), c, c);
    }
}

/// Multi-head scaled dot-product attention of `xq` over `xkv`.
pub fn attention(g: &mut Graph, b: &mut Binder, name: &str, xq: Var, xkv: Var, heads: usize) -> Var {
    let q = linear(g, b, &format!("{name}.q"), xq);
    let k = linear(g, b, &format!("{name}.k"), xkv);
    let v = linear(g, b, &format!("{name}.v"), xkv);
    let c = g.value(q).ncols();
    assert!(heads >= 1 && c % heads == 0, "channels {c} not divisible by {heads} heads");
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * d, d), g.slice_cols(k, h * d, d), g.slice_cols(v, h * d, d))
        };
        let s = g.matmul_nt(qh, kh);
        let s = g.scale(s, scale);
        let a = g.softmax(s);
        outs.push(g.matmul(a, vh));
    }
    let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    linear(g, b, &format!("{name}.o"), o)
}

pub fn init_ffn<R: rand::Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, c: usize, hidden: usize) {
    init_linear(store, rng, &format!("{name}.fc1"), c, hidden);
    init_linear(store, rng, &format!("{name}.fc2"), hidden, c);
}

pub fn ffn(g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Var {
    let h = linear(g, b, &format!("{name}.fc1"), x);
    let h = g.gelu(h);
    linear(g, b, &format!("{name}.fc2"), h)
}

pub fn init_tokens<R: rand::Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, rows: usize, cols: usize) {
    store.insert(name.to_string(), normal_init(rng, rows, cols, 1.0));
}

/// Pre-norm self-attention + feed-forward block.
pub fn init_self_block<R: rand::Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, c: usize) {
    init_norm(store, &format!("{name}.ln1"), c);
    init_attention(store, rng, &format!("{name}.attn"), c);
    init_norm(store, &format!("{name}.ln2"), c);
    init_ffn(store, rng, &format!("{name}.ff"), c, 4 * c);
}

pub fn self_block(g: &mut Graph, b: &mut Binder, name: &str, x: Var, heads: usize) -> Var {
    let h = norm(g, b, &format!("{name}.ln1"), x);
    let a = attention(g, b, &format!("{name}.attn"), h, h, heads);
    let x = g.add(x, a);
    let h = norm(g, b, &format!("{name}.ln2"), x);
    let f = ffn(g, b, &format!("{name}.ff"), h);
    g.add(x, f)
}

/// `1 × dim` sinusoidal embedding of a scalar time in `[0, 1]`.
pub fn timestep_embedding(t: f64, dim: usize) -> Mat {
    let half = dim / 2;
    let mut e = Array2::zeros((1, dim));
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = 1000.0 * t * freq;
        e[[0, i]] = arg.sin();
        e[[0, half + i]] = arg.cos();
    }
    e
}

/// Width of [`fourier_features`] for `freqs` octaves.
pub fn fourier_width(freqs: usize) -> usize {
    3 + 6 * freqs
}

/// Per row: raw `p`, then `sin(2^j π p_a), cos(2^j π p_a)` for each axis `a`
/// and octave `j`.
pub fn fourier_features(points: &Mat, freqs: usize) -> Mat {
    let n = points.nrows();
    let mut out = Array2::zeros((n, fourier_width(freqs)));
    for (r, p) in points.rows().into_iter().enumerate() {
        for a in 0..3 {
            out[[r, a]] = p[a];
            for j in 0..freqs {
                let arg = (1u64 << j) as f64 * PI * p[a];
                let col = 3 + (a * freqs + j) * 2;
                out[[r, col]] = arg.sin();
                out[[r, col + 1]] = arg.cos();
            }
        }
    }
    out
}
