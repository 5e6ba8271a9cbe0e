//! Pre-norm transformer encoder with full or LSH self-attention.

pub mod attention;

use std::path::Path;

use ndarray::{s, Array2, Array3};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use attention::{full_attention, lsh_attention, lsh_neighbour_counts, lsh_rounds, LshRound};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};
use crate::tape::{Bindings, Tape, Var};
use crate::tokenize::TokenSequence;
use crate::{Mat, Params};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const CHECKPOINT_KIND: &str = "encoder";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Full,
    Lsh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub attention_kind: AttentionKind,
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub lsh_num_hashes: usize,
    pub lsh_bucket_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            attention_kind: AttentionKind::Full,
            num_layers: 2,
            num_heads: 4,
            hidden_dim: 64,
            ffn_dim: 128,
            max_len: 64,
            vocab_size: 512,
            lsh_num_hashes: 2,
            lsh_bucket_size: 16,
            seed: 7,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden_dim == 0 || self.ffn_dim == 0
        {
            return fail("layers, heads, hidden_dim and ffn_dim must be positive".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.max_len < 8 {
            return fail(format!("max_len {} is below 8", self.max_len));
        }
        if self.vocab_size <= crate::tokenize::NUM_SPECIALS {
            return fail(format!("vocab_size {} leaves no regular tokens", self.vocab_size));
        }
        if self.attention_kind == AttentionKind::Lsh {
            if self.lsh_num_hashes == 0 || self.lsh_bucket_size == 0 {
                return fail("lsh_num_hashes and lsh_bucket_size must be positive".into());
            }
            if self.max_len % self.lsh_bucket_size != 0 {
                return fail(format!(
                    "lsh_bucket_size {} does not divide max_len {}",
                    self.lsh_bucket_size, self.max_len
                ));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Parameter names and shapes in checkpoint order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let (h, f) = (self.hidden_dim, self.ffn_dim);
        let mut out = vec![
            ("embeddings.token".to_string(), (self.vocab_size, h)),
            ("embeddings.position".to_string(), (self.max_len, h)),
        ];
        let projections: &[&str] = match self.attention_kind {
            AttentionKind::Full => &["q", "k", "v", "o"],
            AttentionKind::Lsh => &["qk", "v", "o"],
        };
        for l in 0..self.num_layers {
            let p = format!("layer.{l}");
            out.push((format!("{p}.ln1.gamma"), (1, h)));
            out.push((format!("{p}.ln1.beta"), (1, h)));
            for name in projections {
                out.push((format!("{p}.attn.{name}.weight"), (h, h)));
                out.push((format!("{p}.attn.{name}.bias"), (1, h)));
            }
            out.push((format!("{p}.ln2.gamma"), (1, h)));
            out.push((format!("{p}.ln2.beta"), (1, h)));
            out.push((format!("{p}.ffn.in.weight"), (h, f)));
            out.push((format!("{p}.ffn.in.bias"), (1, f)));
            out.push((format!("{p}.ffn.out.weight"), (f, h)));
            out.push((format!("{p}.ffn.out.bias"), (1, h)));
        }
        out.push(("final_ln.gamma".to_string(), (1, h)));
        out.push(("final_ln.beta".to_string(), (1, h)));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub params: Params,
}

#[derive(Clone, Debug)]
pub struct EncodedBatch {
    /// `batch × max_len × hidden_dim`
    pub hidden: Array3<f64>,
    /// Hidden state at the BOS position, `batch × hidden_dim`.
    pub pooled: Array2<f64>,
    /// `batch × max_len`, 1 at real tokens.
    pub mask: Array2<u8>,
    /// Attention score elements computed over the whole batch.
    pub score_elements: u64,
}

/// Normal(0, 0.02) weights and embeddings, zero biases, unit layer-norm
/// gains. Bit-identical for equal configs.
pub fn init_encoder(config: &EncoderConfig) -> Result<EncoderState> {
    config.validate()?;
    Ok(EncoderState {
        config: config.clone(),
        params: init_params(&config.param_shapes(), config.seed, "encoder-init"),
    })
}

pub(crate) fn init_params(shapes: &[(String, (usize, usize))], seed: u64, label: &str) -> Params {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut rng = rng_for(seed, &[&label]);
    shapes
        .iter()
        .map(|(name, shape)| {
            let t = if name.ends_with(".gamma") {
                Mat::ones(*shape)
            } else if name.ends_with(".beta") || name.ends_with(".bias") {
                Mat::zeros(*shape)
            } else {
                Mat::from_shape_simple_fn(*shape, || normal.sample(&mut rng))
            };
            (name.clone(), t)
        })
        .collect()
}

impl EncoderState {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        checkpoint::check_layout(&self.params, &self.config.param_shapes())
    }

    /// SHA-256 over parameter names, shapes and little-endian values.
    pub fn content_hash(&self) -> String {
        params_hash(&self.params)
    }
}

pub fn params_hash(params: &Params) -> String {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.nrows() as u64).to_le_bytes());
        h.update((t.ncols() as u64).to_le_bytes());
        for x in t.iter() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn check_sequence(config: &EncoderConfig, seq: &TokenSequence) -> Result<()> {
    if seq.ids.len() != config.max_len || seq.attention_mask.len() != config.max_len {
        return Err(Error::Shape(format!(
            "sequence length {} does not match max_len {}",
            seq.ids.len(),
            config.max_len
        )));
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::Shape(format!(
            "token id {id} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Runs the encoder over one sequence on `tape`, returning the final
/// `max_len × hidden_dim` states and the number of attention scores
/// computed.
pub(crate) fn encode_on_tape(
    tape: &mut Tape,
    p: &Bindings,
    config: &EncoderConfig,
    seq: &TokenSequence,
) -> (Var, u64) {
    let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
    let valid: Vec<bool> = seq.attention_mask.iter().map(|&m| m != 0).collect();
    let len = ids.len();
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let bias = attention::key_bias(valid.iter().copied(), len);
    let mut score_elements = 0u64;

    let tok = tape.gather_rows(p.get("embeddings.token"), &ids);
    let mut x = tape.add(tok, p.get("embeddings.position"));
    for l in 0..config.num_layers {
        let name = |s: &str| format!("layer.{l}.{s}");
        let lin = |tape: &mut Tape, x: Var, what: &str| {
            tape.linear(x, p.get(&name(&format!("{what}.weight"))), p.get(&name(&format!("{what}.bias"))))
        };

        let h = tape.layer_norm(x, p.get(&name("ln1.gamma")), p.get(&name("ln1.beta")), LN_EPS);
        let mut heads = Vec::with_capacity(config.num_heads);
        match config.attention_kind {
            AttentionKind::Full => {
                let q = lin(tape, h, "attn.q");
                let k = lin(tape, h, "attn.k");
                let v = lin(tape, h, "attn.v");
                for hd in 0..config.num_heads {
                    let qh = tape.col_slice(q, hd * dh, dh);
                    let kh = tape.col_slice(k, hd * dh, dh);
                    let vh = tape.col_slice(v, hd * dh, dh);
                    let scores = tape.matmul_t(qh, kh);
                    let scores = tape.scale(scores, scale);
                    let probs = tape.softmax(scores, Some(&bias));
                    heads.push(tape.matmul(probs, vh));
                    score_elements += (len * len) as u64;
                }
            }
            AttentionKind::Lsh => {
                let qk = lin(tape, h, "attn.qk");
                let v = lin(tape, h, "attn.v");
                let layer_seed = derive_seed(config.seed, &[&"lsh", &l]);
                for hd in 0..config.num_heads {
                    let qh = tape.col_slice(qk, hd * dh, dh);
                    let kh = tape.row_normalize(qh);
                    let vh = tape.col_slice(v, hd * dh, dh);
                    let rounds = lsh_rounds(
                        tape.value(kh).view(),
                        &valid,
                        config.lsh_num_hashes,
                        config.lsh_bucket_size,
                        attention::head_seed(layer_seed, hd),
                    )
                    .expect("bucketing validated with the config");
                    let counts = lsh_neighbour_counts(&rounds, &valid);
                    score_elements += counts.iter().map(|c| c.len() as u64).sum::<u64>();
                    heads.push(tape.sparse_attention(qh, kh, vh, scale, &counts));
                }
            }
        }
        let attn = tape.concat_cols(&heads);
        let attn = lin(tape, attn, "attn.o");
        x = tape.add(x, attn);

        let h = tape.layer_norm(x, p.get(&name("ln2.gamma")), p.get(&name("ln2.beta")), LN_EPS);
        let f = lin(tape, h, "ffn.in");
        let f = tape.gelu(f);
        let f = lin(tape, f, "ffn.out");
        x = tape.add(x, f);
    }
    let out = tape.layer_norm(x, p.get("final_ln.gamma"), p.get("final_ln.beta"), LN_EPS);
    (out, score_elements)
}

/// Encodes a batch. Sequences are independent and processed in parallel.
pub fn forward(state: &EncoderState, batch: &[TokenSequence]) -> Result<EncodedBatch> {
    let cfg = &state.config;
    for seq in batch {
        check_sequence(cfg, seq)?;
    }
    let outs: Vec<(Mat, u64)> = batch
        .par_iter()
        .map(|seq| {
            let mut tape = Tape::new();
            let p = Bindings::bind(&mut tape, &state.params, false);
            let (out, n) = encode_on_tape(&mut tape, &p, cfg, seq);
            (tape.value(out).clone(), n)
        })
        .collect();
    let mut hidden = Array3::zeros((batch.len(), cfg.max_len, cfg.hidden_dim));
    let mut pooled = Array2::zeros((batch.len(), cfg.hidden_dim));
    let mut mask = Array2::zeros((batch.len(), cfg.max_len));
    let mut score_elements = 0;
    for (b, seq) in batch.iter().enumerate() {
        for (dst, &m) in mask.row_mut(b).iter_mut().zip(&seq.attention_mask) {
            *dst = m;
        }
    }
    for (b, (m, n)) in outs.into_iter().enumerate() {
        pooled.row_mut(b).assign(&m.row(0));
        hidden.slice_mut(s![b, .., ..]).assign(&m);
        score_elements += n;
    }
    Ok(EncodedBatch {
        hidden,
        pooled,
        mask,
        score_elements,
    })
}

/// Grows the position table to `new_max_len` by cyclic copy: new row `i`
/// is old row `i mod old_max_len`. Every other tensor is copied verbatim.
pub fn extend_positions(state: &EncoderState, new_max_len: usize) -> Result<EncoderState> {
    let old = state.config.max_len;
    if new_max_len <= old {
        return Err(Error::InvalidArgument(format!(
            "new max_len {new_max_len} must exceed current {old}"
        )));
    }
    let mut config = state.config.clone();
    config.max_len = new_max_len;
    config.validate()?;
    let mut params = state.params.clone();
    let table = &state.params["embeddings.position"];
    let extended = Mat::from_shape_fn((new_max_len, config.hidden_dim), |(i, j)| {
        table[[i % old, j]]
    });
    params.insert("embeddings.position".to_string(), extended);
    Ok(EncoderState { config, params })
}

pub fn save_checkpoint(state: &EncoderState, path: &Path) -> Result<()> {
    checkpoint::write_atomic(path, &to_bytes(state)?)
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderState> {
    from_bytes(&std::fs::read(path)?)
}

pub fn to_bytes(state: &EncoderState) -> Result<Vec<u8>> {
    checkpoint::encode(CHECKPOINT_KIND, &state.config, &state.params)
}

pub fn from_bytes(bytes: &[u8]) -> Result<EncoderState> {
    let (config, params) = checkpoint::decode(bytes, CHECKPOINT_KIND)?;
    let config: EncoderConfig = serde_json::from_value(config)
        .map_err(|e| Error::Checkpoint(format!("bad encoder config: {e}")))?;
    let state = EncoderState { config, params };
    state.validate().map_err(|e| match e {
        Error::Config(m) => Error::Checkpoint(m),
        e => e,
    })?;
    Ok(state)
}
