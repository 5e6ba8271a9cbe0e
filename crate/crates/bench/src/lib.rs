//! Deterministic inputs shared by the benchmarks.

use bugloc_core::tokenize::{encode_tokens, train_vocabulary};
use bugloc_core::{EncoderConfig, TokenSequence, Vocabulary};
use ndarray::{Array2, Array4};

/// Smooth pseudo-random values in `[-1, 1]`; no RNG so every run sees the
/// same tensors.
fn wave(i: usize, salt: f64) -> f64 {
    ((i as f64) * 0.618_033_988_7 + salt).sin()
}

/// `(q, k, v, mask)` for `batch × heads × len × dim` attention. The last
/// eighth of every sequence is padding.
pub fn attention_inputs(
    batch: usize,
    heads: usize,
    len: usize,
    dim: usize,
) -> (Array4<f64>, Array4<f64>, Array4<f64>, Array2<u8>) {
    let shape = (batch, heads, len, dim);
    let mut n = 0;
    let mut fill = |salt: f64| {
        Array4::from_shape_fn(shape, |_| {
            n += 1;
            wave(n, salt)
        })
    };
    let q = fill(0.1);
    // LSH shares keys with queries
    let k = q.clone();
    let v = fill(2.3);
    let valid = len - len / 8;
    let mask = Array2::from_shape_fn((batch, len), |(_, j)| u8::from(j < valid));
    (q, k, v, mask)
}

/// A vocabulary of `size` entries and `batch` full-length sequences over it.
pub fn token_batch(config: &EncoderConfig, batch: usize) -> (Vocabulary, Vec<TokenSequence>) {
    let words: Vec<String> = (0..config.vocab_size).map(|i| format!("w{i}")).collect();
    let vocab = train_vocabulary(&[words.join(" ")], config.vocab_size).expect("vocab fits");
    let seqs = (0..batch)
        .map(|b| {
            let pick = |i: usize| words[(i * 31 + b * 7) % words.len()].clone();
            let bug: Vec<String> = (0..config.max_len / 4).map(pick).collect();
            let code: Vec<String> = (0..config.max_len).map(|i| pick(i + 1000)).collect();
            encode_tokens(&bug, &code, &vocab, config.max_len).expect("sequence encodes")
        })
        .collect();
    (vocab, seqs)
}
