use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::metrics::reciprocal_rank;
use crate::corpus::BugRecord;
use crate::error::{invalid, Result};
use crate::localizer::RankedResult;
use crate::tokenize::TokenDistribution;

/// First-relevant rank at or below which a bug counts as easy.
pub const EASY_MAX_RANK: usize = 7;
/// First-relevant rank above which a bug counts as hard.
pub const HARD_MIN_RANK: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectDivergence {
    pub kl_nats: f64,
    pub common_token_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub per_project: BTreeMap<String, ProjectDivergence>,
}

/// `KL(p ‖ q)` in nats over the tokens both distributions contain, each
/// renormalized to sum 1 on that support.
pub fn kl_divergence(p: &TokenDistribution, q: &TokenDistribution) -> Result<(f64, usize)> {
    let common: Vec<(u64, u64)> = p
        .counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .filter_map(|(t, &pc)| q.counts.get(t).filter(|&&qc| qc > 0).map(|&qc| (pc, qc)))
        .collect();
    if common.is_empty() {
        return Err(invalid("distributions share no tokens"));
    }
    let p_total: u64 = common.iter().map(|c| c.0).sum();
    let q_total: u64 = common.iter().map(|c| c.1).sum();
    let kl: f64 = common
        .iter()
        .map(|&(pc, qc)| {
            let pi = pc as f64 / p_total as f64;
            let qi = qc as f64 / q_total as f64;
            pi * (pi / qi).ln()
        })
        .sum();
    Ok((kl.max(0.0), common.len()))
}

/// Divergence of each project's distribution from `reference`.
pub fn divergence_report(
    projects: &BTreeMap<String, TokenDistribution>,
    reference: &TokenDistribution,
) -> Result<DivergenceReport> {
    let mut per_project = BTreeMap::new();
    for (project, dist) in projects {
        let (kl_nats, common_token_count) = kl_divergence(dist, reference)
            .map_err(|e| invalid(format!("project {project}: {e}")))?;
        per_project.insert(project.clone(), ProjectDivergence { kl_nats, common_token_count });
    }
    Ok(DivergenceReport { per_project })
}

fn frame_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*(at\s+[A-Za-z_$][\w$]*(\.[\w$<>]+)+\([\w$]+\.java:\d+\)|Caused by:.*)\s*$",
        )
        .expect("valid frame pattern")
    })
}

/// Share of characters (newlines excluded) on Java stack-frame or
/// `Caused by:` lines.
pub fn stack_trace_fraction(description: &str) -> f64 {
    let re = frame_pattern();
    let (mut frames, mut total) = (0usize, 0usize);
    for line in description.lines() {
        let len = line.chars().count();
        total += len;
        if re.is_match(line) {
            frames += len;
        }
    }
    if total == 0 {
        0.0
    } else {
        frames as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyReport {
    pub easy: BTreeSet<String>,
    pub hard: BTreeSet<String>,
    pub easy_median_desc_len: usize,
    pub hard_median_desc_len: usize,
    pub easy_stack_fraction: f64,
    pub hard_stack_fraction: f64,
}

/// Lower-middle median; 0 when empty.
fn median(mut xs: Vec<usize>) -> usize {
    if xs.is_empty() {
        return 0;
    }
    xs.sort_unstable();
    xs[(xs.len() - 1) / 2]
}

/// Splits bugs into those every model ranks within the top
/// [`EASY_MAX_RANK`] and those every model ranks past [`HARD_MIN_RANK`],
/// and profiles their descriptions.
pub fn difficulty_report(
    per_model: &BTreeMap<String, Vec<RankedResult>>,
    bugs: &BTreeMap<String, BugRecord>,
) -> Result<DifficultyReport> {
    let mut first_ranks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut reference: Option<BTreeSet<&str>> = None;
    for (model, results) in per_model {
        let ids: BTreeSet<&str> = results.iter().map(|r| r.bug_id.as_str()).collect();
        if ids.len() != results.len() {
            return Err(invalid(format!("model {model} ranks a bug twice")));
        }
        match &reference {
            None => reference = Some(ids),
            Some(r) if *r != ids => {
                return Err(invalid(format!("model {model} ranks a different bug set")))
            }
            _ => {}
        }
        for r in results {
            let rank = (1.0 / reciprocal_rank(r)?).round() as usize;
            first_ranks.entry(&r.bug_id).or_default().push(rank);
        }
    }
    if reference.is_none() {
        return Err(invalid("no model rankings"));
    }

    let mut easy = BTreeSet::new();
    let mut hard = BTreeSet::new();
    for (bug, ranks) in &first_ranks {
        if ranks.iter().all(|&r| r <= EASY_MAX_RANK) {
            easy.insert(bug.to_string());
        } else if ranks.iter().all(|&r| r > HARD_MIN_RANK) {
            hard.insert(bug.to_string());
        }
    }

    let profile = |group: &BTreeSet<String>| -> Result<(usize, f64)> {
        let mut lens = Vec::with_capacity(group.len());
        let mut fraction = 0.0;
        for id in group {
            let bug = bugs
                .get(id)
                .ok_or_else(|| invalid(format!("bug {id} has no record")))?;
            lens.push(bug.description.chars().count());
            fraction += stack_trace_fraction(&bug.description);
        }
        let mean = if group.is_empty() { 0.0 } else { fraction / group.len() as f64 };
        Ok((median(lens), mean))
    };
    let (easy_median_desc_len, easy_stack_fraction) = profile(&easy)?;
    let (hard_median_desc_len, hard_stack_fraction) = profile(&hard)?;
    Ok(DifficultyReport {
        easy,
        hard,
        easy_median_desc_len,
        hard_median_desc_len,
        easy_stack_fraction,
        hard_stack_fraction,
    })
}

#[cfg(test)]
mod tests {
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::BugStatus;
    use crate::localizer::ScoredFile;

    fn dist(pairs: &[(&str, u64)]) -> TokenDistribution {
        let counts: BTreeMap<String, u64> = pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect();
        let total = counts.values().sum();
        TokenDistribution { counts, total }
    }

    #[test]
    fn kl_values() {
        let p = dist(&[("a", 1), ("b", 1)]);
        let q = dist(&[("a", 1), ("b", 3), ("only_q", 9)]);
        let (kl, common) = kl_divergence(&p, &q).unwrap();
        assert_eq!(common, 2);
        // 0.5 ln 2 + 0.5 ln (2/3), evaluated to 30 digits
        assert!((kl - 0.143_841_036_225_890_2).abs() < 1e-15);
        let (back, _) = kl_divergence(&q, &p).unwrap();
        assert!((back - kl).abs() > 1e-3);
        assert_eq!(kl_divergence(&p, &p).unwrap().0, 0.0);
        assert!(kl_divergence(&p, &dist(&[("z", 4)])).is_err());
    }

    #[test]
    fn divergence_report_names_project() {
        let mut projects = BTreeMap::new();
        projects.insert("alpha".to_string(), dist(&[("a", 2), ("b", 2)]));
        let r = divergence_report(&projects, &dist(&[("a", 1), ("b", 3)])).unwrap();
        assert_eq!(r.per_project["alpha"].common_token_count, 2);
        projects.insert("beta".to_string(), dist(&[("zz", 1)]));
        let err = divergence_report(&projects, &dist(&[("a", 1)])).unwrap_err();
        assert!(err.to_string().contains("beta"));
    }

    #[test]
    fn stack_fraction() {
        let frame = "  at org.x.Foo.bar(Foo.java:12)";
        let plain = "  this is a plain line of text.";
        assert_eq!(frame.len(), plain.len());
        assert_eq!(stack_trace_fraction(&format!("{plain}\n{frame}\n{plain}\n{frame}")), 0.5);
        assert_eq!(stack_trace_fraction(&format!("{plain}\n{plain}")), 0.0);
        assert_eq!(stack_trace_fraction(&format!("{frame}\nCaused by: java.lang.NPE")), 1.0);
        assert_eq!(stack_trace_fraction(""), 0.0);
        assert_eq!(stack_trace_fraction("at foo(Foo.java:1)"), 0.0);
        assert_eq!(stack_trace_fraction("at a.b$C.<init>(C.java:7)"), 1.0);
    }

    fn result(bug: &str, first_rank: usize) -> RankedResult {
        let ranking = (0..20)
            .map(|i| ScoredFile { path: format!("f{i}"), score: -(i as f64) })
            .collect();
        RankedResult {
            project_id: "p".into(),
            bug_id: bug.into(),
            ranking,
            relevant: [format!("f{}", first_rank - 1)].into(),
        }
    }

    fn bug(id: &str, description: &str) -> (String, BugRecord) {
        (
            id.to_string(),
            BugRecord {
                project_id: "p".into(),
                bug_id: id.into(),
                title: "t".into(),
                description: description.into(),
                created_at: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
                status: BugStatus::Fixed,
            },
        )
    }

    #[test]
    fn difficulty_groups() {
        let bugs: BTreeMap<String, BugRecord> = [
            bug("A", "short"),
            bug("B", "at a.B.c(B.java:1)"),
            bug("C", "middling text"),
            bug("D", "a much longer description"),
        ]
        .into();
        let mut per_model = BTreeMap::new();
        per_model.insert("m1".to_string(), vec![result("A", 7), result("B", 11), result("C", 9), result("D", 15)]);
        per_model.insert("m2".to_string(), vec![result("A", 1), result("B", 20), result("C", 12), result("D", 3)]);
        let r = difficulty_report(&per_model, &bugs).unwrap();
        assert_eq!(r.easy, ["A".to_string()].into());
        assert_eq!(r.hard, ["B".to_string()].into());
        assert_eq!(r.easy_median_desc_len, 5);
        assert_eq!(r.hard_stack_fraction, 1.0);
        assert_eq!(r.easy_stack_fraction, 0.0);

        per_model.get_mut("m2").unwrap().pop();
        assert!(difficulty_report(&per_model, &bugs).is_err());
        assert!(difficulty_report(&BTreeMap::new(), &bugs).is_err());
    }

    #[test]
    fn median_is_lower_middle() {
        assert_eq!(median(vec![]), 0);
        assert_eq!(median(vec![4, 1, 3, 2]), 2);
        assert_eq!(median(vec![5, 1, 3]), 3);
    }

    proptest! {
        #[test]
        fn kl_non_negative(a in prop::collection::vec(1u64..50, 1..8), b in prop::collection::vec(1u64..50, 1..8)) {
            let n = a.len().min(b.len());
            let names: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let p = dist(&names.iter().zip(&a).map(|(t, &c)| (t.as_str(), c)).collect::<Vec<_>>());
            let q = dist(&names.iter().zip(&b).map(|(t, &c)| (t.as_str(), c)).collect::<Vec<_>>());
            let (kl, common) = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert_eq!(common, n);
        }

        #[test]
        fn easy_and_hard_disjoint(ranks in prop::collection::vec((1usize..21, 1usize..21), 1..20)) {
            let mut m1 = Vec::new();
            let mut m2 = Vec::new();
            let mut bugs = BTreeMap::new();
            for (i, (r1, r2)) in ranks.iter().enumerate() {
                let id = format!("B-{i}");
                m1.push(result(&id, *r1));
                m2.push(result(&id, *r2));
                bugs.insert(id.clone(), bug(&id, "x").1);
            }
            let per_model: BTreeMap<String, Vec<RankedResult>> =
                [("m1".to_string(), m1), ("m2".to_string(), m2)].into();
            let r = difficulty_report(&per_model, &bugs).unwrap();
            prop_assert!(r.easy.is_disjoint(&r.hard));
        }
    }
}
