//! CNN match head over frozen encoder outputs, its training loop and
//! per-bug file ranking.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{BugRecord, DatasetManifest};
use crate::encoder::{forward, params_hash, EncodedBatch, EncoderState};
use crate::error::{invalid, Error, Result};
use crate::optim::{accumulate, Adam};
use crate::pretrain::TrainingLog;
use crate::rng::rng_for;
use crate::tape::{self, Bindings, Tape, Var};
use crate::tokenize::{encode_pair, TokenSequence, Vocabulary};
use crate::{Mat, Params};

const CHECKPOINT_KIND: &str = "head";

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub conv_channels: [usize; 3],
    /// Odd, so each convolution is centred on its row.
    pub kernel_size: usize,
    pub hidden_units: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            conv_channels: [64, 64, 64],
            kernel_size: 3,
            hidden_units: 32,
            seed: 7,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.contains(&0) || self.hidden_units == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        Ok(())
    }

    pub fn param_shapes(&self, hidden_dim: usize) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let mut inputs = hidden_dim;
        for (i, &c) in self.conv_channels.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), (self.kernel_size * inputs, c)));
            out.push((format!("conv.{i}.bias"), (1, c)));
            inputs = c;
        }
        out.push(("mlp.hidden.weight".into(), (inputs, self.hidden_units)));
        out.push(("mlp.hidden.bias".into(), (1, self.hidden_units)));
        out.push(("mlp.out.weight".into(), (self.hidden_units, 1)));
        out.push(("mlp.out.bias".into(), (1, 1)));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub head: HeadConfig,
    pub hidden_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadState {
    pub config: HeadConfig,
    pub hidden_dim: usize,
    pub params: Params,
}

/// He-normal weights (the head is a ReLU stack), zero biases.
pub fn init_head(config: &HeadConfig, hidden_dim: usize) -> Result<HeadState> {
    config.validate()?;
    if hidden_dim == 0 {
        return Err(Error::Config("hidden_dim must be positive".into()));
    }
    let mut rng = rng_for(config.seed, &[&"head-init"]);
    let params = config
        .param_shapes(hidden_dim)
        .into_iter()
        .map(|(name, shape)| {
            let t = if name.ends_with(".bias") {
                Mat::zeros(shape)
            } else {
                let normal = Normal::new(0.0, (2.0 / shape.0 as f64).sqrt()).expect("valid std");
                Mat::from_shape_simple_fn(shape, || normal.sample(&mut rng))
            };
            (name, t)
        })
        .collect();
    Ok(HeadState {
        config: config.clone(),
        hidden_dim,
        params,
    })
}

impl HeadState {
    pub fn content_hash(&self) -> String {
        params_hash(&self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = HeadMeta {
            head: self.config.clone(),
            hidden_dim: self.hidden_dim,
        };
        checkpoint::encode(CHECKPOINT_KIND, &meta, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, params) = checkpoint::decode(bytes, CHECKPOINT_KIND)?;
        let meta: HeadMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Checkpoint(format!("bad head config: {e}")))?;
        meta.head
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        checkpoint::check_layout(&params, &meta.head.param_shapes(meta.hidden_dim))?;
        Ok(Self {
            config: meta.head,
            hidden_dim: meta.hidden_dim,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Match logit (`1 × 1`) of one encoded pair: three convolutions with ReLU
/// over the token axis, PAD rows zeroed before each, max-pool over real
/// rows, then a one-hidden-layer perceptron.
fn head_on_tape(tape: &mut Tape, p: &Bindings, config: &HeadConfig, x: Var, valid: &[bool]) -> Var {
    let mut h = tape.row_mask(x, valid);
    for i in 0..3 {
        let cols = tape.im2col(h, config.kernel_size);
        let conv = tape.linear(cols, p.get(&format!("conv.{i}.weight")), p.get(&format!("conv.{i}.bias")));
        let act = tape.relu(conv);
        h = tape.row_mask(act, valid);
    }
    let pooled = tape.max_pool_rows(h, valid);
    let hidden = tape.linear(pooled, p.get("mlp.hidden.weight"), p.get("mlp.hidden.bias"));
    let hidden = tape.relu(hidden);
    tape.linear(hidden, p.get("mlp.out.weight"), p.get("mlp.out.bias"))
}

fn probability(logit: f64) -> f64 {
    tape::sigmoid(logit).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn valid_rows(mask: ndarray::ArrayView1<u8>) -> Vec<bool> {
    mask.iter().map(|&m| m != 0).collect()
}

/// Match probability per batch row, each strictly inside (0, 1).
pub fn head_forward(head: &HeadState, encoded: &EncodedBatch) -> Result<Vec<f64>> {
    let (batch, _, hidden) = encoded.hidden.dim();
    if hidden != head.hidden_dim {
        return Err(Error::Shape(format!(
            "head expects hidden_dim {}, encoder produced {hidden}",
            head.hidden_dim
        )));
    }
    let scores = (0..batch)
        .into_par_iter()
        .map(|b| {
            let x = encoded.hidden.slice(s![b, .., ..]).to_owned();
            let valid = valid_rows(encoded.mask.row(b));
            let mut tape = Tape::new();
            let p = Bindings::bind(&mut tape, &head.params, false);
            let xv = tape.constant(x);
            let logit = head_on_tape(&mut tape, &p, &head.config, xv, &valid);
            probability(tape.scalar(logit))
        })
        .collect();
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

/// Frozen-encoder outputs of a labelled set: hidden matrix, real rows and
/// label per example.
struct Cached {
    hidden: Vec<Mat>,
    valid: Vec<Vec<bool>>,
    labels: Vec<f64>,
}

fn encode_examples(
    encoder: &EncoderState,
    examples: &DatasetManifest,
    vocab: &Vocabulary,
) -> Result<Cached> {
    let seqs: Vec<TokenSequence> = examples
        .records
        .iter()
        .map(|ex| encode_pair(&ex.bug.text(), &ex.file_content, vocab, encoder.config.max_len))
        .collect::<Result<_>>()?;
    let mut cached = Cached {
        hidden: Vec::with_capacity(seqs.len()),
        valid: Vec::with_capacity(seqs.len()),
        labels: examples.records.iter().map(|ex| f64::from(ex.label)).collect(),
    };
    for chunk in seqs.chunks(256) {
        let enc = forward(encoder, chunk)?;
        for b in 0..chunk.len() {
            cached.hidden.push(enc.hidden.slice(s![b, .., ..]).to_owned());
            cached.valid.push(valid_rows(enc.mask.row(b)));
        }
    }
    Ok(cached)
}

/// Trains a fresh head with binary cross-entropy on match labels. The
/// encoder is only read: its outputs are computed once and reused.
pub fn train_head(
    encoder: &EncoderState,
    head_config: &HeadConfig,
    examples: &DatasetManifest,
    vocab: &Vocabulary,
    train: &HeadTrainConfig,
) -> Result<(HeadState, TrainingLog)> {
    if train.epochs == 0 || train.batch_size == 0 || !(train.learning_rate > 0.0) {
        return Err(Error::Config(
            "epochs, batch_size and learning_rate must be positive".into(),
        ));
    }
    let positives = examples.records.iter().filter(|e| e.label == 1).count();
    if positives == 0 || positives == examples.records.len() {
        return Err(invalid("head training needs both positive and negative examples"));
    }
    let mut head = init_head(head_config, encoder.config.hidden_dim)?;
    let cached = encode_examples(encoder, examples, vocab)?;
    let mut adam = Adam::new(train.learning_rate);
    let mut log = TrainingLog::default();
    for epoch in 1..=train.epochs {
        let mut order: Vec<usize> = (0..cached.labels.len()).collect();
        order.shuffle(&mut rng_for(head_config.seed, &[&"head-shuffle", &epoch]));
        for chunk in order.chunks(train.batch_size) {
            let norm = chunk.len() as f64;
            let parts: Vec<(f64, Params)> = chunk
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let p = Bindings::bind(&mut tape, &head.params, true);
                    let x = tape.leaf(&cached.hidden[i], false);
                    let logit = head_on_tape(&mut tape, &p, &head.config, x, &cached.valid[i]);
                    let loss = tape.binary_cross_entropy(logit, 0, &[(0, cached.labels[i])], norm);
                    let mut g = tape.backward(loss);
                    (tape.scalar(loss), p.gradients(&tape, &mut g))
                })
                .collect();
            let mut grads = Params::new();
            let mut loss = 0.0;
            for (l, g) in parts {
                loss += l;
                accumulate(&mut grads, g);
            }
            log.push(epoch, "head", loss)?;
            adam.step(&mut head.params, &grads)?;
        }
    }
    Ok((head, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredFile {
    pub path: String,
    pub score: f64,
}

/// Candidate files of one bug, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub project_id: String,
    pub bug_id: String,
    pub ranking: Vec<ScoredFile>,
    pub relevant: BTreeSet<String>,
}

impl RankedResult {
    /// Attaches the ground truth; every relevant path must be ranked.
    pub fn with_relevant(mut self, relevant: BTreeSet<String>) -> Result<Self> {
        if let Some(missing) = relevant
            .iter()
            .find(|r| !self.ranking.iter().any(|f| &f.path == *r))
        {
            return Err(invalid(format!("relevant file {missing} is not ranked")));
        }
        self.relevant = relevant;
        Ok(self)
    }

    /// 1-based ranks of the relevant files, ascending.
    pub fn relevant_ranks(&self) -> Vec<usize> {
        self.ranking
            .iter()
            .enumerate()
            .filter(|(_, f)| self.relevant.contains(&f.path))
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Sorts by descending score, then ascending path.
pub fn sort_ranking(ranking: &mut [ScoredFile]) {
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.path.cmp(&b.path)));
}

/// Scores every candidate for `bug` and ranks them. `relevant` is left
/// empty; see [`RankedResult::with_relevant`].
pub fn rank_files(
    encoder: &EncoderState,
    head: &HeadState,
    bug: &BugRecord,
    candidates: &[(String, String)],
    vocab: &Vocabulary,
) -> Result<RankedResult> {
    if candidates.is_empty() {
        return Err(invalid(format!("no candidate files for {}", bug.bug_id)));
    }
    let text = bug.text();
    let seqs: Vec<TokenSequence> = candidates
        .iter()
        .map(|(_, content)| encode_pair(&text, content, vocab, encoder.config.max_len))
        .collect::<Result<_>>()?;
    let scores = head_forward(head, &forward(encoder, &seqs)?)?;
    let mut ranking: Vec<ScoredFile> = candidates
        .iter()
        .zip(scores)
        .map(|((path, _), score)| ScoredFile {
            path: path.clone(),
            score,
        })
        .collect();
    sort_ranking(&mut ranking);
    Ok(RankedResult {
        project_id: bug.project_id.clone(),
        bug_id: bug.bug_id.clone(),
        ranking,
        relevant: BTreeSet::new(),
    })
}

/// Evaluation candidates: every relevant file plus a seeded sample of the
/// other snapshot files, `pool_size` in total when the snapshot allows,
/// sorted by path.
pub fn candidate_pool(
    snapshot: &[(String, String)],
    relevant: &BTreeSet<String>,
    pool_size: usize,
    seed: u64,
) -> Result<Vec<(String, String)>> {
    let (rel, others): (Vec<_>, Vec<_>) = snapshot.iter().partition(|(p, _)| relevant.contains(p));
    if rel.len() != relevant.len() {
        return Err(invalid("a relevant file is missing from the snapshot"));
    }
    let take = pool_size.saturating_sub(rel.len()).min(others.len());
    let mut rng = rng_for(seed, &[&"candidate-pool"]);
    let mut pool: Vec<(String, String)> = rel.into_iter().cloned().collect();
    pool.extend(
        index::sample(&mut rng, others.len(), take)
            .into_iter()
            .map(|i| others[i].clone()),
    );
    pool.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(pool)
}

pub fn write_rankings<W: Write>(results: &[RankedResult], mut w: W) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_rankings<R: BufRead>(r: R) -> Result<Vec<RankedResult>> {
    let mut out = Vec::new();
    for (index, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            index,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Stacks `batch` copies of one hidden matrix; a helper for probing the
/// head without an encoder.
pub fn encoded_from_rows(rows: &[Mat], masks: &[Vec<u8>]) -> EncodedBatch {
    let (len, h) = rows[0].dim();
    let mut hidden = ndarray::Array3::zeros((rows.len(), len, h));
    let mut mask = Array2::zeros((rows.len(), len));
    for (b, (m, k)) in rows.iter().zip(masks).enumerate() {
        hidden.slice_mut(s![b, .., ..]).assign(m);
        for (dst, &v) in mask.row_mut(b).iter_mut().zip(k) {
            *dst = v;
        }
    }
    let pooled = hidden.slice(s![.., 0, ..]).to_owned();
    EncodedBatch {
        hidden,
        pooled,
        mask,
        score_elements: 0,
    }
}
