//! Dot-product attention kernels over `[batch × heads × len × d]` tensors.
//!
//! [`full_attention`] scores every query against every key. [`lsh_attention`]
//! is the shared-QK locality-sensitive-hashing scheme: keys are hashed with
//! random rotations, sorted by bucket, cut into chunks of `bucket_size`, and
//! each query attends to same-bucket keys in its own and the previous chunk.
//! With several hash rounds the per-round outputs are combined with weights
//! `softmax(logsumexp of each round's scores)`.

use ndarray::{Array2, Array4, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::rng::rng_for;
use crate::tape::{logsumexp, softmax_rows};
use crate::Mat;

/// Reference full attention. `mask[b][j] == 0` removes key `j` of batch
/// element `b` (its score becomes `-inf`).
pub fn full_attention(
    q: &Array4<f64>,
    k: &Array4<f64>,
    v: &Array4<f64>,
    mask: &Array2<u8>,
) -> Array4<f64> {
    let (batch, heads, len, d) = q.dim();
    let dv = v.dim().3;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Array4::zeros((batch, heads, len, dv));
    for b in 0..batch {
        let bias = key_bias(mask.row(b).iter().map(|&m| m != 0), len);
        for h in 0..heads {
            let qh = q.index_axis(Axis(0), b);
            let qh = qh.index_axis(Axis(0), h);
            let kh = k.index_axis(Axis(0), b);
            let kh = kh.index_axis(Axis(0), h);
            let vh = v.index_axis(Axis(0), b);
            let vh = vh.index_axis(Axis(0), h);
            let scores = qh.dot(&kh.t()) * scale;
            let p = softmax_rows(scores.view(), Some(bias.view()));
            out.index_axis_mut(Axis(0), b)
                .index_axis_mut(Axis(0), h)
                .assign(&p.dot(&vh));
        }
    }
    out
}

/// `len × len` additive bias with `-inf` in the columns of masked keys.
pub(crate) fn key_bias(valid: impl Iterator<Item = bool>, len: usize) -> Mat {
    let row: Vec<f64> = valid
        .map(|ok| if ok { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let mut bias = Mat::zeros((len, len));
    for mut r in bias.rows_mut() {
        for (dst, &src) in r.iter_mut().zip(&row) {
            *dst = src;
        }
    }
    bias
}

/// One hashing round: the bucket of every position, and positions sorted
/// by `(bucket, position)`. Masked positions get bucket `n_buckets` so they
/// sort after every real token and never shift real chunk boundaries.
#[derive(Clone, Debug)]
pub struct LshRound {
    pub buckets: Vec<usize>,
    pub order: Vec<usize>,
    pub chunk_len: usize,
}

impl LshRound {
    /// Keys visible to each query in this round.
    pub fn neighbours(&self, valid: &[bool]) -> Vec<Vec<usize>> {
        let n = self.order.len();
        let n_chunks = n / self.chunk_len;
        let mut out = vec![Vec::new(); n];
        for chunk in 0..n_chunks {
            let mut chunks = vec![chunk];
            if n_chunks > 1 {
                chunks.push((chunk + n_chunks - 1) % n_chunks);
            }
            let own = &self.order[chunk * self.chunk_len..(chunk + 1) * self.chunk_len];
            for &qi in own {
                let mut keys: Vec<usize> = chunks
                    .iter()
                    .flat_map(|&c| &self.order[c * self.chunk_len..(c + 1) * self.chunk_len])
                    .copied()
                    .filter(|&kj| valid[kj] && self.buckets[kj] == self.buckets[qi])
                    .collect();
                keys.sort_unstable();
                out[qi] = keys;
            }
        }
        out
    }
}

fn check_bucketing(len: usize, bucket_size: usize, num_hashes: usize) -> Result<()> {
    if num_hashes == 0 {
        return Err(invalid("LSH needs at least one hash round"));
    }
    if bucket_size == 0 || len % bucket_size != 0 {
        return Err(invalid(format!(
            "bucket_size {bucket_size} does not divide sequence length {len}"
        )));
    }
    Ok(())
}

/// Hashes `keys` (rows) for `num_hashes` rounds. Rotations are drawn from
/// `seed`, so hashing is deterministic.
pub fn lsh_rounds(
    keys: ArrayView2<f64>,
    valid: &[bool],
    num_hashes: usize,
    bucket_size: usize,
    seed: u64,
) -> Result<Vec<LshRound>> {
    let (len, d) = keys.dim();
    check_bucketing(len, bucket_size, num_hashes)?;
    let n_buckets = len / bucket_size;
    let mut rounds = Vec::with_capacity(num_hashes);
    for r in 0..num_hashes {
        let buckets: Vec<usize> = if n_buckets == 1 {
            valid.iter().map(|&ok| if ok { 0 } else { 1 }).collect()
        } else {
            let even = n_buckets % 2 == 0;
            let cols = if even { n_buckets / 2 } else { n_buckets };
            let mut rng = rng_for(seed, &[&"lsh-rotation", &r]);
            let rot = Mat::from_shape_fn((d, cols), |_| StandardNormal.sample(&mut rng));
            let proj = keys.dot(&rot);
            (0..len)
                .map(|i| {
                    if !valid[i] {
                        return n_buckets;
                    }
                    let row = proj.row(i);
                    let mut best = (f64::NEG_INFINITY, 0);
                    for (j, &p) in row.iter().enumerate() {
                        if p > best.0 {
                            best = (p, j);
                        }
                        if even && -p > best.0 {
                            best = (-p, j + cols);
                        }
                    }
                    best.1
                })
                .collect()
        };
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by_key(|&i| (buckets[i], i));
        rounds.push(LshRound {
            buckets,
            order,
            chunk_len: bucket_size,
        });
    }
    Ok(rounds)
}

/// Multi-round neighbour lists with multiplicities: `(key, rounds in which
/// the query sees that key)`. Attention with score bias `ln(count)` over
/// these lists equals the logsumexp-weighted combination of the rounds.
pub fn lsh_neighbour_counts(rounds: &[LshRound], valid: &[bool]) -> Vec<Vec<(usize, f64)>> {
    let n = valid.len();
    let mut counts: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for round in rounds {
        for (qi, keys) in round.neighbours(valid).into_iter().enumerate() {
            for kj in keys {
                match counts[qi].iter_mut().find(|(j, _)| *j == kj) {
                    Some((_, c)) => *c += 1.0,
                    None => counts[qi].push((kj, 1.0)),
                }
            }
        }
    }
    for c in &mut counts {
        c.sort_by_key(|&(j, _)| j);
    }
    counts
}

/// Shared-QK LSH attention. Queries are bucketed together with their own
/// key row, so callers pass `k` tied to `q` (normalised query vectors).
/// Masked query positions share a bucket with no visible key and output
/// zero rows.
pub fn lsh_attention(
    q: &Array4<f64>,
    k: &Array4<f64>,
    v: &Array4<f64>,
    mask: &Array2<u8>,
    num_hashes: usize,
    bucket_size: usize,
    seed: u64,
) -> Result<Array4<f64>> {
    let (batch, heads, len, d) = q.dim();
    let dv = v.dim().3;
    check_bucketing(len, bucket_size, num_hashes)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Array4::zeros((batch, heads, len, dv));
    for b in 0..batch {
        let valid: Vec<bool> = mask.row(b).iter().map(|&m| m != 0).collect();
        for h in 0..heads {
            let qh = q.index_axis(Axis(0), b);
            let qh = qh.index_axis(Axis(0), h);
            let kh = k.index_axis(Axis(0), b);
            let kh = kh.index_axis(Axis(0), h);
            let vh = v.index_axis(Axis(0), b);
            let vh = vh.index_axis(Axis(0), h);
            let rounds = lsh_rounds(kh, &valid, num_hashes, bucket_size, head_seed(seed, h))?;

            // Per round: softmax over the chunked neighbourhood, remembering
            // the round's logsumexp for the cross-round weighting.
            let mut round_out = Vec::with_capacity(rounds.len());
            let mut round_lse = Vec::with_capacity(rounds.len());
            for round in &rounds {
                let nb = round.neighbours(&valid);
                let mut o = Mat::zeros((len, dv));
                let mut lse = vec![f64::NEG_INFINITY; len];
                for i in 0..len {
                    if nb[i].is_empty() {
                        continue;
                    }
                    let scores: Vec<f64> =
                        nb[i].iter().map(|&j| scale * qh.row(i).dot(&kh.row(j))).collect();
                    lse[i] = logsumexp(scores.iter().copied());
                    let mut row = o.row_mut(i);
                    for (&j, &s) in nb[i].iter().zip(&scores) {
                        row.scaled_add((s - lse[i]).exp(), &vh.row(j));
                    }
                }
                round_out.push(o);
                round_lse.push(lse);
            }
            let mut dst = out.index_axis_mut(Axis(0), b);
            let mut dst = dst.index_axis_mut(Axis(0), h);
            for i in 0..len {
                let total = logsumexp(round_lse.iter().map(|l| l[i]));
                if total == f64::NEG_INFINITY {
                    continue;
                }
                let mut row = dst.row_mut(i);
                for (o, l) in round_out.iter().zip(&round_lse) {
                    if l[i] > f64::NEG_INFINITY {
                        row.scaled_add((l[i] - total).exp(), &o.row(i));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn head_seed(seed: u64, head: usize) -> u64 {
    crate::rng::derive_seed(seed, &[&"head", &head])
}
