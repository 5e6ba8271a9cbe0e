//! Multi-modal (bug report + source code) embedding pre-training and
//! CNN-based file-level bug localization.
//!
//! The crate is organised along the pipeline:
//!
//! - [`corpus`]: issue/commit export ingestion, fix linking, filtering and
//!   localization dataset assembly.
//! - [`tokenize`]: word-level NL+PL tokenizer, vocabulary and pair encoding.
//! - [`encoder`]: transformer encoders with full or LSH attention, position
//!   table extension and checkpoints.
//! - [`pretrain`]: MLM, ELECTRA and MLM→QA objectives plus the training loop.
//! - [`localizer`]: the frozen-encoder CNN match head and file ranking.
//! - [`eval`]: MRR/MAP, Mann-Whitney U, Bonferroni, KL divergence and the
//!   easy/hard bug profiler.
//!
//! [`tape`] is the small reverse-mode differentiation engine the trainable
//! parts are built on.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod localizer;
pub mod optim;
pub mod pretrain;
pub mod rng;
pub mod tape;
pub mod tokenize;

pub use corpus::{
    BugRecord, BugStatus, ChangedFile, CommitMeta, DatasetManifest, FixLink, LocalizationExample,
    Split,
};
pub use encoder::{AttentionKind, EncodedBatch, EncoderConfig, EncoderState};
pub use error::{Error, Result};
pub use eval::{DifficultyReport, DivergenceReport, MetricReport, SignificanceResult};
pub use localizer::{HeadConfig, HeadState, RankedResult};
pub use pretrain::{MaskingPlan, Objective, PretrainConfig, QaTarget, TrainingLog};
pub use tokenize::{TokenDistribution, TokenSequence, Vocabulary};

/// Dense row-major matrix of `f64`, the only tensor type the models use.
pub type Mat = ndarray::Array2<f64>;

/// Ordered, named parameter tensors.
pub type Params = indexmap::IndexMap<String, Mat>;
