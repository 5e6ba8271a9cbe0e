//! Loss functions of the three objectives, each returning the batch loss
//! and parameter gradients. Sequences are differentiated independently
//! (in parallel) and their gradients summed in batch order.

use std::ops::Range;

use ndarray::{s, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::masking::MaskingPlan;
use crate::encoder::{encode_on_tape, init_params, EncoderConfig, EncoderState};
use crate::error::{invalid, Error, Result};
use crate::optim::accumulate;
use crate::rng::rng_for;
use crate::tape::{self, Bindings, Tape};
use crate::tokenize::{TokenSequence, NUM_SPECIALS};
use crate::{Mat, Params};

/// Gradients for an encoder and the head stacked on it.
#[derive(Clone, Debug, Default)]
pub struct ModelGrads {
    pub encoder: Params,
    pub head: Params,
}

impl ModelGrads {
    fn add(&mut self, other: ModelGrads) {
        accumulate(&mut self.encoder, other.encoder);
        accumulate(&mut self.head, other.head);
    }
}

#[derive(Clone, Debug)]
pub struct MlmOutput {
    pub loss: f64,
    pub grads: ModelGrads,
    /// Per-sequence gradient of the loss w.r.t. the `max_len × vocab` logits.
    pub logit_grads: Vec<Mat>,
}

#[derive(Clone, Debug)]
pub struct ElectraOutput {
    pub gen_loss: f64,
    pub disc_loss: f64,
    /// `gen_loss + λ · disc_loss`
    pub combined: f64,
    pub generator: ModelGrads,
    /// Gradients of `λ · disc_loss`.
    pub discriminator: ModelGrads,
    /// Discriminator input per sequence.
    pub corrupted: Vec<Vec<u32>>,
    /// `(position, 1 if replaced)` for every non-PAD position.
    pub rtd_labels: Vec<Vec<(usize, u8)>>,
}

#[derive(Clone, Debug)]
pub struct QaOutput {
    pub loss: f64,
    pub grads: ModelGrads,
}

/// Answer span inside the code segment, `end` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTarget {
    pub start: usize,
    pub end: usize,
}

pub fn init_mlm_head(config: &EncoderConfig, seed: u64) -> Params {
    init_params(
        &[
            ("mlm.weight".into(), (config.hidden_dim, config.vocab_size)),
            ("mlm.bias".into(), (1, config.vocab_size)),
        ],
        seed,
        "mlm-head",
    )
}

pub fn init_rtd_head(config: &EncoderConfig, seed: u64) -> Params {
    init_params(
        &[
            ("rtd.weight".into(), (config.hidden_dim, 1)),
            ("rtd.bias".into(), (1, 1)),
        ],
        seed,
        "rtd-head",
    )
}

pub fn init_qa_head(config: &EncoderConfig, seed: u64) -> Params {
    init_params(
        &[
            ("qa.weight".into(), (config.hidden_dim, 2)),
            ("qa.bias".into(), (1, 2)),
        ],
        seed,
        "qa-head",
    )
}

fn check_batch(state: &EncoderState, batch: &[TokenSequence], n: usize, what: &str) -> Result<()> {
    if batch.len() != n {
        return Err(invalid(format!("{} sequences but {n} {what}", batch.len())));
    }
    for seq in batch {
        if seq.ids.len() != state.config.max_len {
            return Err(Error::Shape(format!(
                "sequence length {} does not match max_len {}",
                seq.ids.len(),
                state.config.max_len
            )));
        }
    }
    Ok(())
}

fn with_ids(seq: &TokenSequence, ids: Vec<u32>) -> TokenSequence {
    TokenSequence {
        ids,
        attention_mask: seq.attention_mask.clone(),
        sep_index: seq.sep_index,
    }
}

/// Generator-side MLM pass over one sequence. Returns the loss share, the
/// gradients, the logits gradient and the logits themselves.
fn mlm_sequence(
    state: &EncoderState,
    head: &Params,
    seq: &TokenSequence,
    plan: &MaskingPlan,
    norm: f64,
) -> (f64, ModelGrads, Mat, Mat) {
    let mut tape = Tape::new();
    let enc = Bindings::bind(&mut tape, &state.params, true);
    let hp = Bindings::bind(&mut tape, head, true);
    let input = with_ids(seq, plan.apply(&seq.ids));
    let (hidden, _) = encode_on_tape(&mut tape, &enc, &state.config, &input);
    let logits = tape.linear(hidden, hp.get("mlm.weight"), hp.get("mlm.bias"));
    let targets: Vec<(usize, usize)> = plan
        .selected
        .iter()
        .map(|&p| (p, seq.ids[p] as usize))
        .collect();
    let (loss, dlogits) = tape::cross_entropy(tape.value(logits).view(), &targets, norm);
    let root = tape.loss(logits, loss, dlogits.clone());
    let mut g = tape.backward(root);
    let grads = ModelGrads {
        encoder: enc.gradients(&tape, &mut g),
        head: hp.gradients(&tape, &mut g),
    };
    (loss, grads, dlogits, tape.value(logits).clone())
}

fn total_selected(plans: &[MaskingPlan]) -> Result<usize> {
    let n: usize = plans.iter().map(|p| p.selected.len()).sum();
    if n == 0 {
        return Err(invalid("no position selected in the whole batch"));
    }
    Ok(n)
}

/// Cross-entropy over selected positions, averaged over all selected
/// positions of the batch.
pub fn mlm_loss(
    state: &EncoderState,
    head: &Params,
    batch: &[TokenSequence],
    plans: &[MaskingPlan],
) -> Result<MlmOutput> {
    check_batch(state, batch, plans.len(), "plans")?;
    let norm = total_selected(plans)? as f64;
    let parts: Vec<_> = batch
        .par_iter()
        .zip(plans)
        .map(|(seq, plan)| mlm_sequence(state, head, seq, plan, norm))
        .collect();
    let mut out = MlmOutput {
        loss: 0.0,
        grads: ModelGrads::default(),
        logit_grads: Vec::with_capacity(parts.len()),
    };
    for (loss, grads, dlogits, _) in parts {
        out.loss += loss;
        out.grads.add(grads);
        out.logit_grads.push(dlogits);
    }
    Ok(out)
}

fn same_architecture(a: &EncoderConfig, b: &EncoderConfig) -> bool {
    let mut b = b.clone();
    b.seed = a.seed;
    *a == b
}

/// Draws a regular token from a row of generator logits.
fn sample_token(logits: ArrayView2<f64>, row: usize, rng: &mut impl rand::Rng) -> u32 {
    let r = logits.slice(s![row, NUM_SPECIALS..]);
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = r.iter().map(|&z| (z - max).exp()).collect();
    let dist = WeightedIndex::new(&weights).expect("softmax weights are positive");
    (NUM_SPECIALS + dist.sample(rng)) as u32
}

/// One ELECTRA step: generator MLM, sampling at the selected positions, and
/// replaced-token detection by the discriminator over every non-PAD
/// position. Sampling is not differentiated.
#[allow(clippy::too_many_arguments)]
pub fn electra_step(
    gen: &EncoderState,
    gen_head: &Params,
    disc: &EncoderState,
    disc_head: &Params,
    batch: &[TokenSequence],
    plans: &[MaskingPlan],
    lambda: f64,
    seed: u64,
) -> Result<ElectraOutput> {
    if !same_architecture(&gen.config, &disc.config) {
        return Err(Error::Config(
            "generator and discriminator architectures differ".into(),
        ));
    }
    if !(lambda > 0.0) {
        return Err(invalid(format!("discriminator weight {lambda} must be positive")));
    }
    check_batch(gen, batch, plans.len(), "plans")?;
    let n_selected: usize = plans.iter().map(|p| p.selected.len()).sum();
    let n_real: usize = batch.iter().map(TokenSequence::non_pad_len).sum();
    if n_real == 0 {
        return Err(invalid("batch has no real tokens"));
    }
    let sel_norm = n_selected.max(1) as f64;
    let real_norm = n_real as f64;

    let parts: Vec<_> = batch
        .par_iter()
        .zip(plans)
        .enumerate()
        .map(|(b, (seq, plan))| {
            let (gen_loss, gen_grads, corrupted) = if plan.is_empty() {
                (0.0, ModelGrads::default(), seq.ids.clone())
            } else {
                let (loss, grads, _, logits) = mlm_sequence(gen, gen_head, seq, plan, sel_norm);
                let mut rng = rng_for(seed, &[&"electra-sample", &b]);
                let mut ids = seq.ids.clone();
                for &p in &plan.selected {
                    ids[p] = sample_token(logits.view(), p, &mut rng);
                }
                (loss, grads, ids)
            };

            let labels: Vec<(usize, u8)> = (0..seq.ids.len())
                .filter(|&i| seq.attention_mask[i] != 0)
                .map(|i| (i, u8::from(corrupted[i] != seq.ids[i])))
                .collect();
            let mut tape = Tape::new();
            let enc = Bindings::bind(&mut tape, &disc.params, true);
            let hp = Bindings::bind(&mut tape, disc_head, true);
            let input = with_ids(seq, corrupted.clone());
            let (hidden, _) = encode_on_tape(&mut tape, &enc, &disc.config, &input);
            let logits = tape.linear(hidden, hp.get("rtd.weight"), hp.get("rtd.bias"));
            let float_labels: Vec<(usize, f64)> =
                labels.iter().map(|&(i, y)| (i, f64::from(y))).collect();
            let loss = tape.binary_cross_entropy(logits, 0, &float_labels, real_norm);
            let disc_loss = tape.scalar(loss);
            let mut g = tape.backward_with(loss, Mat::from_elem((1, 1), lambda));
            let disc_grads = ModelGrads {
                encoder: enc.gradients(&tape, &mut g),
                head: hp.gradients(&tape, &mut g),
            };
            (gen_loss, gen_grads, disc_loss, disc_grads, corrupted, labels)
        })
        .collect();

    let mut out = ElectraOutput {
        gen_loss: 0.0,
        disc_loss: 0.0,
        combined: 0.0,
        generator: ModelGrads::default(),
        discriminator: ModelGrads::default(),
        corrupted: Vec::with_capacity(parts.len()),
        rtd_labels: Vec::with_capacity(parts.len()),
    };
    for (gl, gg, dl, dg, corrupted, labels) in parts {
        out.gen_loss += gl;
        out.disc_loss += dl;
        out.generator.add(gg);
        out.discriminator.add(dg);
        out.corrupted.push(corrupted);
        out.rtd_labels.push(labels);
    }
    out.combined = out.gen_loss + lambda * out.disc_loss;
    Ok(out)
}

fn check_target(seq: &TokenSequence, t: &QaTarget) -> Result<Range<usize>> {
    let code = seq.code_range();
    if t.start > t.end {
        return Err(invalid(format!("answer start {} after end {}", t.start, t.end)));
    }
    if t.start < code.start || t.end >= code.end {
        return Err(invalid(format!(
            "answer {}..={} outside code segment {:?}",
            t.start, t.end, code
        )));
    }
    Ok(code)
}

/// Start and end cross-entropies of `max_len × 2` span logits, each a
/// softmax over the code-segment rows only, summed and divided by `norm`.
pub fn span_loss(
    logits: ArrayView2<f64>,
    code: Range<usize>,
    target: QaTarget,
    norm: f64,
) -> (f64, Mat) {
    let mut grad = Mat::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (col, pos) in [(0, target.start), (1, target.end)] {
        let row = logits.slice(s![code.clone(), col]).insert_axis(ndarray::Axis(0));
        let (l, g) = tape::cross_entropy(row, &[(0, pos - code.start)], norm);
        loss += l;
        grad.slice_mut(s![code.clone(), col]).assign(&g.row(0));
    }
    (loss, grad)
}

/// Span-extraction loss, averaged over the batch.
pub fn qa_loss(
    state: &EncoderState,
    head: &Params,
    batch: &[TokenSequence],
    targets: &[QaTarget],
) -> Result<QaOutput> {
    check_batch(state, batch, targets.len(), "targets")?;
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let codes = batch
        .iter()
        .zip(targets)
        .map(|(s, t)| check_target(s, t))
        .collect::<Result<Vec<_>>>()?;
    let norm = batch.len() as f64;
    let parts: Vec<_> = batch
        .par_iter()
        .zip(targets)
        .zip(codes)
        .map(|((seq, &target), code)| {
            let mut tape = Tape::new();
            let enc = Bindings::bind(&mut tape, &state.params, true);
            let hp = Bindings::bind(&mut tape, head, true);
            let (hidden, _) = encode_on_tape(&mut tape, &enc, &state.config, seq);
            let logits = tape.linear(hidden, hp.get("qa.weight"), hp.get("qa.bias"));
            let (loss, d) = span_loss(tape.value(logits).view(), code, target, norm);
            let root = tape.loss(logits, loss, d);
            let mut g = tape.backward(root);
            let grads = ModelGrads {
                encoder: enc.gradients(&tape, &mut g),
                head: hp.gradients(&tape, &mut g),
            };
            (loss, grads)
        })
        .collect();
    let mut out = QaOutput {
        loss: 0.0,
        grads: ModelGrads::default(),
    };
    for (loss, grads) in parts {
        out.loss += loss;
        out.grads.add(grads);
    }
    Ok(out)
}
