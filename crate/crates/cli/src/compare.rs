use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use bugloc_core::eval::{average_precision, bonferroni, pairwise_significance, reciprocal_rank};
use bugloc_core::localizer::read_rankings;
use bugloc_core::{RankedResult, SignificanceResult};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_record, sha256_hex, stage_dir};
use crate::error::{CliError, Result};
use crate::manifest::{ExperimentManifest, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mrr,
    Map,
}

/// What one observation in a Mann-Whitney sample is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// The metric averaged over one project's test bugs.
    Project,
    /// The per-bug reciprocal rank or average precision.
    Bug,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub metric: Metric,
    pub unit: Unit,
    pub alpha: f64,
    pub alpha_corrected: f64,
    pub results: Vec<SignificanceResult>,
}

fn evaluated(m: &ExperimentManifest) -> Result<Vec<RankedResult>> {
    let stage = Stage::Evaluate;
    let record = read_record(m, stage, stage)?;
    let out = record
        .outputs
        .iter()
        .find(|o| o.role == "rankings")
        .ok_or_else(|| CliError::MissingInput {
            stage,
            path: stage_dir(m, stage).join("<rankings>"),
        })?;
    let path = stage_dir(m, stage).join(&out.file);
    let bytes = fs::read(&path).map_err(CliError::io(&path))?;
    let found = sha256_hex(&bytes);
    if found != out.sha256 {
        return Err(CliError::Stale {
            stage,
            path,
            expected: out.sha256.clone(),
            found,
        });
    }
    read_rankings(bytes.as_slice()).map_err(|source| CliError::Stage { stage, source })
}

type SplitKey = BTreeMap<(String, String), BTreeSet<String>>;

fn split_of(results: &[RankedResult]) -> SplitKey {
    results
        .iter()
        .map(|r| ((r.project_id.clone(), r.bug_id.clone()), r.relevant.clone()))
        .collect()
}

fn sample(results: &[RankedResult], metric: Metric, unit: Unit) -> Result<Vec<f64>> {
    let score = |r: &RankedResult| match metric {
        Metric::Mrr => reciprocal_rank(r),
        Metric::Map => average_precision(r),
    };
    let mut per_bug: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in results {
        per_bug.insert((&r.project_id, &r.bug_id), score(r)?);
    }
    Ok(match unit {
        Unit::Bug => per_bug.into_values().collect(),
        Unit::Project => {
            let mut by_project: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for ((p, _), v) in per_bug {
                let e = by_project.entry(p).or_default();
                e.0 += v;
                e.1 += 1;
            }
            by_project.into_values().map(|(s, n)| s / n as f64).collect()
        }
    })
}

/// Pairwise Mann-Whitney tests between evaluated experiments at the
/// Bonferroni-corrected level. All experiments must share a test split.
pub fn compare(
    manifests: &[ExperimentManifest],
    metric: Metric,
    unit: Unit,
    alpha: f64,
) -> Result<ComparisonTable> {
    if manifests.len() < 2 {
        return Err(CliError::Validation("compare needs at least two experiments".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Validation(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut samples = BTreeMap::new();
    let mut reference: Option<(String, SplitKey)> = None;
    for (i, m) in manifests.iter().enumerate() {
        let results = evaluated(m)?;
        let split = split_of(&results);
        match &reference {
            None => reference = Some((m.experiment_id.clone(), split)),
            Some((first, r)) if *r != split => {
                return Err(CliError::SplitMismatch(format!("{first} vs {}", m.experiment_id)))
            }
            _ => {}
        }
        let mut label = m.experiment_id.clone();
        if samples.contains_key(&label) {
            label = format!("{label}#{}", i + 1);
        }
        samples.insert(label, sample(&results, metric, unit)?);
    }
    let pairs = manifests.len() * (manifests.len() - 1) / 2;
    let err = |source| CliError::Stage {
        stage: Stage::Evaluate,
        source,
    };
    Ok(ComparisonTable {
        metric,
        unit,
        alpha,
        alpha_corrected: bonferroni(alpha, pairs).map_err(err)?,
        results: pairwise_significance(&samples, alpha).map_err(err)?,
    })
}
