//! Graph-level encoder and decoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::frontend::N_MELS;
use crate::model::{ModelConfig, Token};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

const CONV_KERNEL: usize = 3;

/// Draws a fresh parameter set for the encoder and decoder.
pub fn init_model_params<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> ParamStore {
    let d = cfg.d_model;
    let ff = cfg.feedforward_dim;
    let mut p = ParamStore::new();
    let mut linear = |p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool| {
        let std = 1.0 / (fan_in as f64).sqrt();
        p.insert(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, &mut *rng));
        if bias {
            p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        }
    };
    let norm = |p: &mut ParamStore, name: &str| {
        p.insert(format!("{name}.g"), Tensor::filled(&[d], 1.0));
        p.insert(format!("{name}.b"), Tensor::zeros(&[d]));
    };

    linear(&mut p, "enc.conv1", CONV_KERNEL * N_MELS, d, true);
    linear(&mut p, "enc.conv2", CONV_KERNEL * d, d, true);
    for i in 0..cfg.encoder_layers {
        let pre = format!("enc.{i}");
        norm(&mut p, &format!("{pre}.ln1"));
        attention_params(&mut p, &mut linear, &format!("{pre}.attn"), d);
        norm(&mut p, &format!("{pre}.ln2"));
        linear(&mut p, &format!("{pre}.ff1"), d, ff, true);
        linear(&mut p, &format!("{pre}.ff2"), ff, d, true);
    }
    norm(&mut p, "enc.ln_post");

    let mut dec = ParamStore::new();
    for i in 0..cfg.decoder_layers {
        let pre = format!("dec.{i}");
        norm(&mut dec, &format!("{pre}.ln1"));
        attention_params(&mut dec, &mut linear, &format!("{pre}.self"), d);
        norm(&mut dec, &format!("{pre}.lnx"));
        attention_params(&mut dec, &mut linear, &format!("{pre}.cross"), d);
        norm(&mut dec, &format!("{pre}.ln2"));
        linear(&mut dec, &format!("{pre}.ff1"), d, ff, true);
        linear(&mut dec, &format!("{pre}.ff2"), ff, d, true);
    }
    norm(&mut dec, "dec.ln_post");
    drop(linear);

    let vocab = cfg.vocabulary.size();
    p.insert("dec.tok_emb", Tensor::randn(&[vocab, d], 1.0 / (d as f64).sqrt(), rng));
    p.insert("dec.pos_emb", Tensor::randn(&[cfg.max_positions, d], 0.01, rng));
    for (_, name, t) in dec.iter() {
        p.insert(name.to_string(), t.clone());
    }
    p
}

fn attention_params<F>(p: &mut ParamStore, linear: &mut F, prefix: &str, d: usize)
where
    F: FnMut(&mut ParamStore, &str, usize, usize, bool),
{
    linear(p, &format!("{prefix}.q"), d, d, true);
    linear(p, &format!("{prefix}.k"), d, d, false);
    linear(p, &format!("{prefix}.v"), d, d, true);
    linear(p, &format!("{prefix}.o"), d, d, true);
}

/// Whisper-style sinusoidal position table, `len × d`.
pub fn sinusoids(len: usize, d: usize) -> Tensor {
    let half = d / 2;
    let step = (10_000f64).ln() / (half.max(2) - 1) as f64;
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..half {
            let angle = pos as f64 * (-step * i as f64).exp();
            out[pos * d + i] = angle.sin();
            out[pos * d + half + i] = angle.cos();
        }
    }
    Tensor::new(vec![len, d], out).expect("sinusoid shape")
}

/// Encoder states `ceil(T/2) × d_model` for a `T × 80` feature matrix.
pub fn encode_graph(g: &mut Graph<'_>, cfg: &ModelConfig, mel: &Tensor) -> Result<Var> {
    let t = mel.rows();
    if mel.cols() != N_MELS {
        return Err(Error::dims("encode", mel.shape(), &[t, N_MELS]));
    }
    if t < 2 {
        return Err(Error::TooShort(format!("{t} frames; the encoder needs at least 2")));
    }
    if t > 2 * cfg.max_positions {
        return Err(Error::Length {
            len: t,
            limit: 2 * cfg.max_positions,
        });
    }
    let x = g.tape.constant(mel.clone());
    let cols = g.tape.im2col(x, CONV_KERNEL, 1, 1)?;
    let h = g.linear(cols, "enc.conv1")?;
    let h = g.tape.gelu(h);
    let cols = g.tape.im2col(h, CONV_KERNEL, 2, 1)?;
    let h = g.linear(cols, "enc.conv2")?;
    let h = g.tape.gelu(h);
    let t_out = g.tape.value(h).rows();
    let pos = g.tape.constant(sinusoids(t_out, cfg.d_model));
    let mut h = g.tape.add(h, pos)?;
    for i in 0..cfg.encoder_layers {
        let pre = format!("enc.{i}");
        let n = g.layer_norm(h, &format!("{pre}.ln1"))?;
        let kv = self_kv(g, n, &format!("{pre}.attn"))?;
        let a = attention(g, n, kv, &format!("{pre}.attn"), cfg.heads, false)?;
        h = g.tape.add(h, a)?;
        let n = g.layer_norm(h, &format!("{pre}.ln2"))?;
        let f = feed_forward(g, n, &pre)?;
        h = g.tape.add(h, f)?;
    }
    g.layer_norm(h, "enc.ln_post")
}

#[derive(Debug, Clone, Copy)]
pub struct KeyValue {
    k: Var,
    v: Var,
}

fn self_kv(g: &mut Graph<'_>, x: Var, prefix: &str) -> Result<KeyValue> {
    let k = g.linear_no_bias(x, &format!("{prefix}.k"))?;
    let v = g.linear(x, &format!("{prefix}.v"))?;
    Ok(KeyValue { k, v })
}

/// Per-layer cross-attention keys and values, computed once per utterance.
#[derive(Debug, Clone)]
pub struct CrossKv {
    layers: Vec<KeyValue>,
}

pub fn cross_kv(g: &mut Graph<'_>, cfg: &ModelConfig, enc: Var) -> Result<CrossKv> {
    let layers = (0..cfg.decoder_layers)
        .map(|i| self_kv(g, enc, &format!("dec.{i}.cross")))
        .collect::<Result<_>>()?;
    Ok(CrossKv { layers })
}

fn attention(g: &mut Graph<'_>, x: Var, kv: KeyValue, prefix: &str, heads: usize, causal: bool) -> Result<Var> {
    let q = g.linear(x, &format!("{prefix}.q"))?;
    let d = g.tape.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.tape.slice_cols(q, lo, hi)?;
        let kh = g.tape.slice_cols(kv.k, lo, hi)?;
        let vh = g.tape.slice_cols(kv.v, lo, hi)?;
        let scores = g.tape.matmul_t(qh, kh, true)?;
        let weights = g.tape.softmax_rows(scores, scale, causal);
        outs.push(g.tape.matmul(weights, vh)?);
    }
    let joined = if heads == 1 {
        outs[0]
    } else {
        g.tape.concat_cols(&outs)?
    };
    g.linear(joined, &format!("{prefix}.o"))
}

fn feed_forward(g: &mut Graph<'_>, x: Var, prefix: &str) -> Result<Var> {
    let h = g.linear(x, &format!("{prefix}.ff1"))?;
    let h = g.tape.gelu(h);
    g.linear(h, &format!("{prefix}.ff2"))
}

/// Causal decoder over `tokens`. Returns `(logits, hiddens)`, both with one
/// row per position; the hiddens are the activations fed to the (tied)
/// output projection.
pub fn decode_graph(g: &mut Graph<'_>, cfg: &ModelConfig, cross: &CrossKv, tokens: &[Token]) -> Result<(Var, Var)> {
    let vocab = &cfg.vocabulary;
    match tokens.first() {
        Some(&t) if t == vocab.sot() => {}
        _ => return Err(Error::Protocol("decoder prefix must begin with SOT".into())),
    }
    if tokens.len() > cfg.max_positions {
        return Err(Error::Length {
            len: tokens.len(),
            limit: cfg.max_positions,
        });
    }
    let emb = g.param("dec.tok_emb")?;
    let pos = g.param("dec.pos_emb")?;
    let x = g.tape.gather(emb, tokens)?;
    let p = g.tape.slice_rows(pos, 0, tokens.len())?;
    let mut h = g.tape.add(x, p)?;
    for i in 0..cfg.decoder_layers {
        let pre = format!("dec.{i}");
        let n = g.layer_norm(h, &format!("{pre}.ln1"))?;
        let kv = self_kv(g, n, &format!("{pre}.self"))?;
        let a = attention(g, n, kv, &format!("{pre}.self"), cfg.heads, true)?;
        h = g.tape.add(h, a)?;
        let n = g.layer_norm(h, &format!("{pre}.lnx"))?;
        let a = attention(g, n, cross.layers[i], &format!("{pre}.cross"), cfg.heads, false)?;
        h = g.tape.add(h, a)?;
        let n = g.layer_norm(h, &format!("{pre}.ln2"))?;
        let f = feed_forward(g, n, &pre)?;
        h = g.tape.add(h, f)?;
    }
    let hidden = g.layer_norm(h, "dec.ln_post")?;
    let logits = g.tape.matmul_t(hidden, emb, true)?;
    Ok((logits, hidden))
}
