use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Result};
use crate::localizer::RankedResult;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectMetrics {
    pub mrr: f64,
    pub map: f64,
    pub n_bugs: usize,
}

/// Per-project and overall ranking quality. `overall` is the micro-average
/// over all bugs, so it equals the `n_bugs`-weighted mean of the projects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_project: BTreeMap<String, ProjectMetrics>,
    pub overall: ProjectMetrics,
}

pub fn reciprocal_rank(result: &RankedResult) -> Result<f64> {
    check_relevant(result)?;
    let first = result.relevant_ranks()[0];
    Ok(1.0 / first as f64)
}

pub fn average_precision(result: &RankedResult) -> Result<f64> {
    check_relevant(result)?;
    let ranks = result.relevant_ranks();
    let sum: f64 = ranks
        .iter()
        .enumerate()
        .map(|(seen, &rank)| (seen + 1) as f64 / rank as f64)
        .sum();
    Ok(sum / ranks.len() as f64)
}

fn check_relevant(result: &RankedResult) -> Result<()> {
    if result.relevant.is_empty() {
        return Err(invalid(format!("bug {} has no relevant file", result.bug_id)));
    }
    if result.relevant_ranks().len() != result.relevant.len() {
        return Err(invalid(format!(
            "bug {}: a relevant file is missing from the ranking",
            result.bug_id
        )));
    }
    Ok(())
}

fn mean_of(results: &[RankedResult], f: fn(&RankedResult) -> Result<f64>) -> Result<f64> {
    if results.is_empty() {
        return Err(invalid("no ranked results"));
    }
    let mut sum = 0.0;
    for r in results {
        sum += f(r)?;
    }
    Ok(sum / results.len() as f64)
}

pub fn mrr(results: &[RankedResult]) -> Result<f64> {
    mean_of(results, reciprocal_rank)
}

pub fn mean_average_precision(results: &[RankedResult]) -> Result<f64> {
    mean_of(results, average_precision)
}

/// Expected reciprocal rank of the first relevant file when `k` relevant
/// files sit in a uniformly shuffled list of `n`.
pub fn expected_random_reciprocal_rank(n: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(invalid(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    // P(first relevant at r) = C(n - r, k - 1) / C(n, k)
    let total = ln_binomial(n as u64, k as u64);
    Ok((1..=n - k + 1)
        .map(|r| (ln_binomial((n - r) as u64, (k - 1) as u64) - total).exp() / r as f64)
        .sum())
}

/// Mean of [`expected_random_reciprocal_rank`] over the bugs of `results`.
pub fn random_baseline_mrr(results: &[RankedResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(invalid("no ranked results"));
    }
    let mut sum = 0.0;
    for r in results {
        check_relevant(r)?;
        sum += expected_random_reciprocal_rank(r.ranking.len(), r.relevant.len())?;
    }
    Ok(sum / results.len() as f64)
}

pub fn metric_report(results: &[RankedResult]) -> Result<MetricReport> {
    let overall = ProjectMetrics {
        mrr: mrr(results)?,
        map: mean_average_precision(results)?,
        n_bugs: results.len(),
    };
    let mut grouped: BTreeMap<&str, Vec<RankedResult>> = BTreeMap::new();
    for r in results {
        grouped.entry(&r.project_id).or_default().push(r.clone());
    }
    let mut per_project = BTreeMap::new();
    for (project, group) in grouped {
        per_project.insert(
            project.to_string(),
            ProjectMetrics {
                mrr: mrr(&group)?,
                map: mean_average_precision(&group)?,
                n_bugs: group.len(),
            },
        );
    }
    Ok(MetricReport { per_project, overall })
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `project,mrr,map,n_bugs`, one row per project then `Overall`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("project,mrr,map,n_bugs\n");
        let rows = self
            .per_project
            .iter()
            .map(|(p, m)| (p.as_str(), m))
            .chain(std::iter::once(("Overall", &self.overall)));
        for (project, m) in rows {
            let _ = writeln!(out, "{project},{},{},{}", m.mrr, m.map, m.n_bugs);
        }
        out
    }
}
