//! Pre-training objectives (MLM, ELECTRA, MLM followed by QA) and the seeded
//! training loop.

pub mod masking;
pub mod objectives;
pub mod qa;

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use masking::{make_masking_plan, maskable_positions, selection_count, MaskAction, MaskingPlan};
pub use objectives::{
    electra_step, init_mlm_head, init_qa_head, init_rtd_head, mlm_loss, qa_loss, span_loss,
    ElectraOutput, MlmOutput, ModelGrads, QaOutput, QaTarget,
};
pub use qa::{qa_targets, strip_comments};

use crate::corpus::DatasetManifest;
use crate::encoder::{init_encoder, EncoderConfig, EncoderState};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_for};
use crate::tokenize::{encode_pair, TokenSequence, Vocabulary};
use crate::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mlm,
    Electra,
    MlmThenQa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub objective: Objective,
    pub mask_rate: f64,
    /// Weight λ of the discriminator loss in the ELECTRA objective.
    pub electra_disc_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Mlm,
            mask_rate: 0.15,
            electra_disc_weight: 50.0,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 7,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return fail(format!("mask_rate {} outside (0, 1)", self.mask_rate));
        }
        if !(self.electra_disc_weight > 0.0) {
            return fail(format!(
                "electra_disc_weight {} must be positive",
                self.electra_disc_weight
            ));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }

    /// Epochs spent on MLM before QA takes over (all of them for `mlm`).
    pub fn mlm_epochs(&self) -> usize {
        match self.objective {
            Objective::MlmThenQa => self.epochs.div_ceil(2),
            _ => self.epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub objective: String,
    pub loss: f64,
}

/// Per-step losses; steps count from 1 and increase by one per update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub(crate) fn push(&mut self, epoch: usize, objective: &str, loss: f64) -> Result<()> {
        let step = self.entries.len() + 1;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        self.entries.push(LogEntry {
            step,
            epoch,
            objective: objective.to_string(),
            loss,
        });
        Ok(())
    }

    /// Mean loss per `(epoch, objective)`, in epoch order.
    pub fn epoch_means(&self) -> Vec<(usize, String, f64)> {
        let mut out: Vec<(usize, String, f64, usize)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == e.epoch && last.1 == e.objective => {
                    last.2 += e.loss;
                    last.3 += 1;
                }
                _ => out.push((e.epoch, e.objective.clone(), e.loss, 1)),
            }
        }
        out.into_iter()
            .map(|(epoch, obj, sum, n)| (epoch, obj, sum / n as f64))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,objective,loss\n");
        for e in &self.entries {
            writeln!(s, "{},{},{},{:e}", e.step, e.epoch, e.objective, e.loss).expect("string write");
        }
        s
    }

    /// Writes the CSV log and a `<stem>.json` config echo beside it.
    pub fn write<C: Serialize>(&self, csv_path: &Path, config: &C) -> Result<()> {
        std::fs::File::create(csv_path)?.write_all(self.to_csv().as_bytes())?;
        let sidecar = csv_path.with_extension("json");
        std::fs::write(sidecar, serde_json::to_string_pretty(config)? + "\n")?;
        Ok(())
    }
}

/// Result of a pre-training run. `handover` is the encoder at the MLM→QA
/// boundary of a `mlm_then_qa` run.
#[derive(Clone, Debug)]
pub struct PretrainRun {
    pub encoder: EncoderState,
    pub log: TrainingLog,
    pub handover: Option<EncoderState>,
}

pub fn pretrain(
    config: &PretrainConfig,
    encoder_config: &EncoderConfig,
    dataset: &DatasetManifest,
    vocab: &Vocabulary,
) -> Result<(EncoderState, TrainingLog)> {
    let run = pretrain_run(config, encoder_config, dataset, vocab)?;
    Ok((run.encoder, run.log))
}

/// Bug/file pairs of the positive examples, encoded once.
fn training_sequences(
    dataset: &DatasetManifest,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<TokenSequence>> {
    dataset
        .positives()
        .map(|ex| encode_pair(&ex.bug.text(), &ex.file_content, vocab, max_len))
        .collect()
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[&"shuffle", &epoch]));
    order
}

fn masking_seed(seed: u64, epoch: usize, example: usize) -> u64 {
    derive_seed(seed, &[&"mask", &epoch, &example])
}

struct Optimizers {
    encoder: Adam,
    head: Adam,
}

impl Optimizers {
    fn new(lr: f64) -> Self {
        Self {
            encoder: Adam::new(lr),
            head: Adam::new(lr),
        }
    }

    fn step(&mut self, state: &mut EncoderState, head: &mut Params, g: &ModelGrads) -> Result<()> {
        self.encoder.step(&mut state.params, &g.encoder)?;
        self.head.step(head, &g.head)
    }
}

pub fn pretrain_run(
    config: &PretrainConfig,
    encoder_config: &EncoderConfig,
    dataset: &DatasetManifest,
    vocab: &Vocabulary,
) -> Result<PretrainRun> {
    config.validate()?;
    encoder_config.validate()?;
    if vocab.len() > encoder_config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary of {} exceeds encoder vocab_size {}",
            vocab.len(),
            encoder_config.vocab_size
        )));
    }
    let seqs = training_sequences(dataset, vocab, encoder_config.max_len)?;
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("dataset has no positive examples".into()));
    }
    let mut log = TrainingLog::default();
    match config.objective {
        Objective::Mlm => {
            let encoder = run_mlm(config, encoder_config, &seqs, &mut log)?;
            Ok(PretrainRun {
                encoder,
                log,
                handover: None,
            })
        }
        Objective::Electra => {
            let encoder = run_electra(config, encoder_config, &seqs, &mut log)?;
            Ok(PretrainRun {
                encoder,
                log,
                handover: None,
            })
        }
        Objective::MlmThenQa => {
            let qa: Vec<(TokenSequence, QaTarget)> = dataset
                .positives()
                .filter_map(|ex| {
                    let post = ex.fixed_content.as_deref()?;
                    qa_targets(&ex.bug.text(), &ex.file_content, post, vocab, encoder_config.max_len)
                        .transpose()
                })
                .collect::<Result<_>>()?;
            if qa.is_empty() {
                return Err(Error::InvalidArgument(
                    "no positive example yields a QA answer span".into(),
                ));
            }
            let handover = run_mlm(config, encoder_config, &seqs, &mut log)?;
            let encoder = run_qa(config, handover.clone(), &qa, &mut log)?;
            Ok(PretrainRun {
                encoder,
                log,
                handover: Some(handover),
            })
        }
    }
}

/// Batches of `(sequence, plan)` for one epoch; sequences too short to
/// select any position are skipped.
fn masked_batches(
    config: &PretrainConfig,
    seqs: &[TokenSequence],
    vocab_size: usize,
    epoch: usize,
) -> Vec<(Vec<TokenSequence>, Vec<MaskingPlan>)> {
    epoch_order(seqs.len(), config.seed, epoch)
        .chunks(config.batch_size)
        .map(|chunk| {
            chunk
                .iter()
                .filter_map(|&i| {
                    make_masking_plan(
                        &seqs[i],
                        config.mask_rate,
                        vocab_size,
                        masking_seed(config.seed, epoch, i),
                    )
                    .ok()
                    .map(|plan| (seqs[i].clone(), plan))
                })
                .unzip()
        })
        .filter(|(b, _): &(Vec<_>, Vec<_>)| !b.is_empty())
        .collect()
}

fn run_mlm(
    config: &PretrainConfig,
    encoder_config: &EncoderConfig,
    seqs: &[TokenSequence],
    log: &mut TrainingLog,
) -> Result<EncoderState> {
    let mut state = init_encoder(encoder_config)?;
    let mut head = init_mlm_head(encoder_config, config.seed);
    let mut opt = Optimizers::new(config.learning_rate);
    for epoch in 1..=config.mlm_epochs() {
        for (batch, plans) in masked_batches(config, seqs, encoder_config.vocab_size, epoch) {
            let out = mlm_loss(&state, &head, &batch, &plans)?;
            log.push(epoch, "mlm", out.loss)?;
            opt.step(&mut state, &mut head, &out.grads)?;
        }
    }
    Ok(state)
}

/// The generator shares the discriminator's architecture with its own
/// seed; the trained discriminator is the returned encoder.
fn run_electra(
    config: &PretrainConfig,
    encoder_config: &EncoderConfig,
    seqs: &[TokenSequence],
    log: &mut TrainingLog,
) -> Result<EncoderState> {
    let gen_config = EncoderConfig {
        seed: derive_seed(encoder_config.seed, &[&"generator"]),
        ..encoder_config.clone()
    };
    let mut gen = init_encoder(&gen_config)?;
    let mut gen_head = init_mlm_head(&gen_config, config.seed);
    let mut disc = init_encoder(encoder_config)?;
    let mut disc_head = init_rtd_head(encoder_config, config.seed);
    let mut gen_opt = Optimizers::new(config.learning_rate);
    let mut disc_opt = Optimizers::new(config.learning_rate);
    for epoch in 1..=config.epochs {
        for (batch, plans) in masked_batches(config, seqs, encoder_config.vocab_size, epoch) {
            let sample_seed = derive_seed(config.seed, &[&"electra", &(log.entries.len() + 1)]);
            let out = electra_step(
                &gen,
                &gen_head,
                &disc,
                &disc_head,
                &batch,
                &plans,
                config.electra_disc_weight,
                sample_seed,
            )?;
            log.push(epoch, "electra", out.combined)?;
            gen_opt.step(&mut gen, &mut gen_head, &out.generator)?;
            disc_opt.step(&mut disc, &mut disc_head, &out.discriminator)?;
        }
    }
    Ok(disc)
}

fn run_qa(
    config: &PretrainConfig,
    mut state: EncoderState,
    examples: &[(TokenSequence, QaTarget)],
    log: &mut TrainingLog,
) -> Result<EncoderState> {
    let mut head = init_qa_head(&state.config, config.seed);
    let mut opt = Optimizers::new(config.learning_rate);
    for epoch in config.mlm_epochs() + 1..=config.epochs {
        for chunk in epoch_order(examples.len(), config.seed, epoch).chunks(config.batch_size) {
            let (batch, targets): (Vec<_>, Vec<_>) =
                chunk.iter().map(|&i| examples[i].clone()).unzip();
            let out = qa_loss(&state, &head, &batch, &targets)?;
            log.push(epoch, "qa", out.loss)?;
            opt.step(&mut state, &mut head, &out.grads)?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{generate, SyntheticConfig};
    use crate::corpus::{build_examples, filter_links, link_bug_to_commits, split_dataset};
    use crate::tokenize::train_vocabulary;

    fn corpus(positives: usize) -> (DatasetManifest, Vocabulary) {
        let c = generate(&SyntheticConfig {
            projects: positives.div_ceil(10),
            bugs_per_project: 10,
            files_per_project: 10,
            ..Default::default()
        });
        let links: Vec<_> = c
            .bugs
            .iter()
            .flat_map(|b| filter_links(link_bug_to_commits(b, &c.commits)))
            .collect();
        let set = build_examples(&links, &c.snapshots, 1, 3).unwrap();
        let texts: Vec<String> = set
            .examples
            .iter()
            .flat_map(|e| [e.bug.text(), e.file_content.clone()])
            .collect();
        let vocab = train_vocabulary(&texts, 256).unwrap();
        let (train, _) = split_dataset(&set.examples, 0.01, "t", 3).unwrap();
        (train, vocab)
    }

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 16,
            ffn_dim: 32,
            max_len: 48,
            vocab_size: 256,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_is_rejected() {
        let (ds, vocab) = corpus(20);
        let cfg = PretrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(pretrain(&cfg, &small_encoder(), &ds, &vocab).is_err());
    }

    #[test]
    fn mlm_loss_falls_over_training() {
        let (ds, vocab) = corpus(200);
        assert!(ds.positives().count() >= 190);
        let cfg = PretrainConfig {
            epochs: 10,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let (_, log) = pretrain(&cfg, &small_encoder(), &ds, &vocab).unwrap();
        let means = log.epoch_means();
        assert_eq!(means.len(), 10);
        assert!(means[9].2 < means[0].2, "{means:?}");
        assert!(log.entries.windows(2).all(|w| w[1].step == w[0].step + 1));
    }

    #[test]
    fn identical_seeds_give_identical_encoders() {
        let (ds, vocab) = corpus(30);
        let cfg = PretrainConfig {
            objective: Objective::Electra,
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        let (a, la) = pretrain(&cfg, &small_encoder(), &ds, &vocab).unwrap();
        let (b, lb) = pretrain(&cfg, &small_encoder(), &ds, &vocab).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(la, lb);
    }

    #[test]
    fn qa_stage_starts_from_half_length_mlm_run() {
        let (ds, vocab) = corpus(30);
        let cfg = PretrainConfig {
            objective: Objective::MlmThenQa,
            epochs: 4,
            batch_size: 8,
            ..Default::default()
        };
        let run = pretrain_run(&cfg, &small_encoder(), &ds, &vocab).unwrap();
        let mlm_only = PretrainConfig {
            objective: Objective::Mlm,
            epochs: 2,
            ..cfg.clone()
        };
        let (reference, _) = pretrain(&mlm_only, &small_encoder(), &ds, &vocab).unwrap();
        assert_eq!(run.handover.unwrap().content_hash(), reference.content_hash());
        let objectives: Vec<_> = run.log.epoch_means().into_iter().map(|m| m.1).collect();
        assert_eq!(objectives, ["mlm", "mlm", "qa", "qa"]);
    }

    #[test]
    fn log_round_trips_through_csv() {
        let mut log = TrainingLog::default();
        log.push(1, "mlm", 2.5).unwrap();
        log.push(1, "mlm", 1.5).unwrap();
        log.push(2, "mlm", 1.0).unwrap();
        assert_eq!(log.epoch_means()[0].2, 2.0);
        let csv = log.to_csv();
        assert!(csv.starts_with("step,epoch,objective,loss\n1,1,mlm,"));
        assert!(matches!(
            log.push(3, "mlm", f64::NAN),
            Err(Error::NonFiniteLoss { step: 4 })
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.write(&path, &PretrainConfig::default()).unwrap();
        assert!(dir.path().join("log.json").exists());
    }
}
