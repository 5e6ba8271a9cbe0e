use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bugloc_core::corpus::synthetic::SyntheticConfig;
use bugloc_core::corpus::{IssueKind, DEFAULT_NEGATIVES_PER_POSITIVE};
use bugloc_core::localizer::HeadTrainConfig;
use bugloc_core::{EncoderConfig, HeadConfig, PretrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mine,
    Build,
    Vocab,
    Pretrain,
    TrainHead,
    Evaluate,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Mine,
        Stage::Build,
        Stage::Vocab,
        Stage::Pretrain,
        Stage::TrainHead,
        Stage::Evaluate,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Mine => "mine",
            Stage::Build => "build",
            Stage::Vocab => "vocab",
            Stage::Pretrain => "pretrain",
            Stage::TrainHead => "train_head",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Mine => &[],
            Stage::Build => &[Stage::Mine],
            Stage::Vocab => &[Stage::Build],
            Stage::Pretrain => &[Stage::Build, Stage::Vocab],
            Stage::TrainHead => &[Stage::Build, Stage::Vocab, Stage::Pretrain],
            Stage::Evaluate => &[
                Stage::Mine,
                Stage::Build,
                Stage::Vocab,
                Stage::Pretrain,
                Stage::TrainHead,
            ],
            Stage::Analyze => &[Stage::Build, Stage::Evaluate],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSources {
    pub issues: PathBuf,
    pub issue_kind: IssueKind,
    pub commits: PathBuf,
    pub snapshots: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum MineConfig {
    Synthetic(SyntheticConfig),
    Export(ExportSources),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub negatives_per_positive: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            negatives_per_positive: DEFAULT_NEGATIVES_PER_POSITIVE,
            test_fraction: 0.2,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { size: 512 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Candidate files ranked per bug, relevant ones included.
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            pool_size: 20,
            seed: 7,
        }
    }
}

fn default_artifact_dir() -> PathBuf {
    PathBuf::from("artifacts")
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

/// One reproducible experiment. Every stage seed left unset in its block
/// takes the global `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub seed: u64,
    #[serde(default = "default_artifact_dir")]
    pub artifact_dir: PathBuf,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    pub mine: MineConfig,
    #[serde(default)]
    pub build: BuildConfig,
    #[serde(default)]
    pub vocab: VocabConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub head_train: HeadTrainConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub artifact_dir: Option<PathBuf>,
}

/// Blocks carrying a `seed` key.
const SEEDED: [&str; 6] = ["mine", "build", "encoder", "pretrain", "head", "evaluate"];

impl ExperimentManifest {
    /// Reads a TOML manifest. Relative paths inside it resolve against the
    /// manifest's directory; `--seed` replaces every seed, explicit or not.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), overrides).map_err(|e| match e {
            CliError::Manifest { message, .. } => CliError::Manifest {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let bad = |message: String| CliError::Manifest {
            path: PathBuf::from("<inline>"),
            message,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let global = match overrides.seed {
            Some(s) => s,
            None => {
                let v = table.get("seed").ok_or_else(|| bad("missing global `seed`".into()))?;
                v.as_integer()
                    .and_then(|i| u64::try_from(i).ok())
                    .ok_or_else(|| bad("`seed` must be a non-negative integer".into()))?
            }
        };
        let seed_value = toml::Value::Integer(
            i64::try_from(global).map_err(|_| bad(format!("seed {global} exceeds the TOML range")))?,
        );
        table.insert("seed".into(), seed_value.clone());
        let is_export = table
            .get("mine")
            .and_then(|m| m.get("source"))
            .and_then(|s| s.as_str())
            == Some("export");
        for block in SEEDED {
            if block == "mine" && is_export {
                continue;
            }
            let entry = table
                .entry(block)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let Some(t) = entry.as_table_mut() else {
                return Err(bad(format!("`{block}` must be a table")));
            };
            if overrides.seed.is_some() || !t.contains_key("seed") {
                t.insert("seed".into(), seed_value.clone());
            }
        }
        let mut manifest: ExperimentManifest = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;

        manifest.artifact_dir = match &overrides.artifact_dir {
            Some(dir) => dir.clone(),
            None => base.join(&manifest.artifact_dir),
        };
        if let MineConfig::Export(src) = &mut manifest.mine {
            for p in [&mut src.issues, &mut src.commits, &mut src.snapshots] {
                *p = base.join(&*p);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Validation(m));
        let id_ok = !self.experiment_id.is_empty()
            && self
                .experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            && !self.experiment_id.starts_with('.');
        if !id_ok {
            return fail(format!(
                "experiment_id {:?} must be non-empty ASCII letters, digits, '-', '_' or '.'",
                self.experiment_id
            ));
        }
        let config = |r: bugloc_core::Result<()>| r.map_err(|e| CliError::Validation(e.to_string()));
        config(self.encoder.validate())?;
        config(self.pretrain.validate())?;
        config(self.head.validate())?;
        if self.head_train.epochs == 0
            || self.head_train.batch_size == 0
            || !(self.head_train.learning_rate > 0.0)
        {
            return fail("head_train epochs, batch_size and learning_rate must be positive".into());
        }
        if !(self.build.test_fraction > 0.0 && self.build.test_fraction < 1.0) {
            return fail(format!("build.test_fraction {} outside (0, 1)", self.build.test_fraction));
        }
        if self.build.negatives_per_positive == 0 {
            return fail("build.negatives_per_positive must be at least 1".into());
        }
        if self.vocab.size <= 6 || self.vocab.size > self.encoder.vocab_size {
            return fail(format!(
                "vocab.size {} must exceed the 6 specials and fit encoder.vocab_size {}",
                self.vocab.size, self.encoder.vocab_size
            ));
        }
        if self.evaluate.pool_size < 2 {
            return fail("evaluate.pool_size must be at least 2".into());
        }
        if self.stages.is_empty() || self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return fail("stages must be non-empty, distinct and in pipeline order".into());
        }
        Ok(())
    }

    /// Directory holding this experiment's stage outputs.
    pub fn experiment_dir(&self) -> PathBuf {
        self.artifact_dir.join(&self.experiment_id)
    }

    /// The configuration a stage's outputs depend on.
    pub fn stage_config(&self, stage: Stage) -> serde_json::Value {
        use serde_json::json;
        match stage {
            Stage::Mine => json!({ "mine": self.mine }),
            Stage::Build => json!({ "build": self.build, "experiment_id": self.experiment_id }),
            Stage::Vocab => json!({ "vocab": self.vocab }),
            Stage::Pretrain => json!({ "encoder": self.encoder, "pretrain": self.pretrain }),
            Stage::TrainHead => json!({ "head": self.head, "head_train": self.head_train }),
            Stage::Evaluate => json!({ "evaluate": self.evaluate }),
            Stage::Analyze => json!({ "experiment_id": self.experiment_id }),
        }
    }
}
