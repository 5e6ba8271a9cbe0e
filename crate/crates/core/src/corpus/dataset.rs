use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, FixLink, LocalizationExample, Split};
use crate::error::{invalid, Error, Result};
use crate::rng::rng_for;

pub const DEFAULT_NEGATIVES_PER_POSITIVE: usize = 5;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExampleSet {
    pub examples: Vec<LocalizationExample>,
    /// Links that had no unchanged candidate file to draw negatives from.
    pub warnings: usize,
}

/// Turns fix links into labelled (bug, file) pairs.
///
/// Every changed file with pre-fix content becomes a positive. Negatives are
/// drawn without replacement from the unchanged files of the same commit's
/// snapshot, `negatives_per_positive` per positive, with a generator seeded
/// from `seed` and the link's ids.
pub fn build_examples(
    links: &[FixLink],
    candidate_files: &BTreeMap<String, Vec<(String, String)>>,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<ExampleSet> {
    if negatives_per_positive == 0 {
        return Err(invalid("negatives_per_positive must be at least 1"));
    }
    let mut out = ExampleSet::default();
    let mut emitted: HashSet<(String, String, String)> = HashSet::new();
    for link in links {
        let bug = &link.bug;
        let mut positives = Vec::new();
        for f in &link.commit.changed_files {
            let Some(pre) = f.pre_content.as_ref().filter(|c| !c.is_empty()) else {
                continue;
            };
            if !emitted.insert((bug.project_id.clone(), bug.bug_id.clone(), f.path.clone())) {
                continue;
            }
            positives.push(LocalizationExample {
                bug: bug.clone(),
                file_path: f.path.clone(),
                file_content: pre.clone(),
                label: 1,
                fixed_content: f.post_content.clone(),
            });
        }
        if positives.is_empty() {
            continue;
        }
        let changed: BTreeSet<&str> =
            link.commit.changed_files.iter().map(|f| f.path.as_str()).collect();
        let pool: Vec<&(String, String)> = candidate_files
            .get(&link.commit.commit_id)
            .map(|files| {
                files
                    .iter()
                    .filter(|(p, c)| !changed.contains(p.as_str()) && !c.is_empty())
                    .collect()
            })
            .unwrap_or_default();

        let wanted = negatives_per_positive * positives.len();
        out.examples.extend(positives);
        if pool.is_empty() {
            out.warnings += 1;
            continue;
        }
        let mut rng = rng_for(seed, &[&"negatives", &bug.project_id, &bug.bug_id, &link.commit.commit_id]);
        let mut picked: Vec<&(String, String)> = index::sample(&mut rng, pool.len(), wanted.min(pool.len()))
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_by(|a, b| a.0.cmp(&b.0));
        for (path, content) in picked {
            if !emitted.insert((bug.project_id.clone(), bug.bug_id.clone(), path.clone())) {
                continue;
            }
            out.examples.push(LocalizationExample {
                bug: bug.clone(),
                file_path: path.clone(),
                file_content: content.clone(),
                label: 0,
                fixed_content: None,
            });
        }
    }
    Ok(out)
}

/// Chronological bug-level split: the newest `test_fraction` of bugs (by
/// `created_at`) form the test split. All examples of a bug stay together.
pub fn split_dataset(
    examples: &[LocalizationExample],
    test_fraction: f64,
    name: &str,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    if examples.is_empty() {
        return Err(Error::Split("no examples".into()));
    }
    let mut by_bug: BTreeMap<(chrono::DateTime<chrono::Utc>, String, String), Vec<&LocalizationExample>> =
        BTreeMap::new();
    for e in examples {
        by_bug
            .entry((e.bug.created_at, e.bug.project_id.clone(), e.bug.bug_id.clone()))
            .or_default()
            .push(e);
    }
    let n_bugs = by_bug.len();
    if n_bugs < 2 {
        return Err(Error::Split(format!("need at least 2 distinct bugs, found {n_bugs}")));
    }
    let n_test = ((n_bugs as f64 * test_fraction).round() as usize).clamp(1, n_bugs - 1);
    let n_train = n_bugs - n_test;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, (_, group)) in by_bug.into_iter().enumerate() {
        let target = if i < n_train { &mut train } else { &mut test };
        target.extend(group.into_iter().cloned());
    }
    let make = |split: Split, records: Vec<LocalizationExample>| {
        let projects: BTreeSet<String> = records.iter().map(|r| r.bug.project_id.clone()).collect();
        DatasetManifest {
            name: name.to_string(),
            projects: projects.into_iter().collect(),
            split,
            records,
            seed,
        }
    };
    let train = make(Split::Train, train);
    let test = make(Split::Test, test);
    check_no_leakage(&train, &test)?;
    Ok((train, test))
}

pub(crate) fn check_no_leakage(train: &DatasetManifest, test: &DatasetManifest) -> Result<()> {
    let train_bugs: HashSet<_> = train.bug_keys().into_iter().collect();
    if let Some(k) = test.bug_keys().into_iter().find(|k| train_bugs.contains(k)) {
        return Err(Error::Split(format!("bug {}/{} appears in both splits", k.0, k.1)));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub name: String,
    pub split: Split,
    pub seed: u64,
    pub count: usize,
}

/// Header line followed by one example per line, LF terminated.
pub fn write_manifest<W: Write>(manifest: &DatasetManifest, mut w: W) -> Result<()> {
    let header = ManifestHeader {
        name: manifest.name.clone(),
        split: manifest.split,
        seed: manifest.seed,
        count: manifest.records.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in &manifest.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<DatasetManifest> {
    let mut lines = r.lines();
    let header_line = lines.next().ok_or_else(|| Error::Parse {
        index: 0,
        message: "missing manifest header".into(),
    })??;
    let header: ManifestHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        index: 0,
        message: e.to_string(),
    })?;
    let mut records = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: LocalizationExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            index: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    if records.len() != header.count {
        return Err(Error::Parse {
            index: 0,
            message: format!("header count {} but {} records", header.count, records.len()),
        });
    }
    let projects: BTreeSet<String> = records.iter().map(|r| r.bug.project_id.clone()).collect();
    Ok(DatasetManifest {
        name: header.name,
        projects: projects.into_iter().collect(),
        split: header.split,
        records,
        seed: header.seed,
    })
}

#[cfg(test)]
mod tests {
    use chrono::{TimeZone, Utc};

    use super::*;
    use crate::corpus::{BugRecord, BugStatus, ChangedFile, CommitMeta};

    fn bug(id: &str, t: i64) -> BugRecord {
        BugRecord {
            project_id: "P".into(),
            bug_id: id.into(),
            title: format!("title {id}"),
            description: "desc".into(),
            created_at: Utc.timestamp_opt(t, 0).unwrap(),
            status: BugStatus::Fixed,
        }
    }

    fn link(id: &str, t: i64, changed: &[&str]) -> FixLink {
        FixLink {
            bug: bug(id, t),
            commit: CommitMeta {
                commit_id: format!("c-{id}"),
                message: id.into(),
                changed_files: changed
                    .iter()
                    .map(|p| ChangedFile {
                        path: (*p).into(),
                        pre_content: Some(format!("pre {p}")),
                        post_content: Some(format!("post {p}")),
                    })
                    .collect(),
                timestamp: Utc.timestamp_opt(t, 0).unwrap(),
            },
            matched_span: (0, id.len()),
            verified: false,
        }
    }

    fn candidates(id: &str, n: usize) -> BTreeMap<String, Vec<(String, String)>> {
        let files = (0..n).map(|i| (format!("F{i}.java"), format!("content {i}"))).collect();
        BTreeMap::from([(format!("c-{id}"), files)])
    }

    #[test]
    fn positives_and_negatives() {
        let links = [link("B-1", 0, &["F0.java", "F1.java"])];
        let set = build_examples(&links, &candidates("B-1", 10), 2, 1).unwrap();
        let pos = set.examples.iter().filter(|e| e.label == 1).count();
        let neg = set.examples.iter().filter(|e| e.label == 0).count();
        assert_eq!((pos, neg), (2, 4));
        assert!(set.examples.iter().filter(|e| e.label == 0).all(|e| e.file_path != "F0.java" && e.file_path != "F1.java"));
        assert_eq!(set.warnings, 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let links = [link("B-1", 0, &["F0.java", "F1.java"])];
        let a = build_examples(&links, &candidates("B-1", 10), 2, 9).unwrap();
        let b = build_examples(&links, &candidates("B-1", 10), 2, 9).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_manifest(&manifest(a.examples), &mut buf_a).unwrap();
        write_manifest(&manifest(b.examples), &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    fn manifest(records: Vec<LocalizationExample>) -> DatasetManifest {
        DatasetManifest {
            name: "m".into(),
            projects: vec!["P".into()],
            split: Split::Train,
            records,
            seed: 3,
        }
    }

    #[test]
    fn zero_negatives_is_an_error() {
        let links = [link("B-1", 0, &["F0.java"])];
        assert!(matches!(
            build_examples(&links, &candidates("B-1", 10), 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn no_unchanged_candidates_warns() {
        let links = [link("B-1", 0, &["F0.java"])];
        let set = build_examples(&links, &candidates("B-1", 1), 3, 1).unwrap();
        assert_eq!(set.examples.len(), 1);
        assert_eq!(set.warnings, 1);
        let set = build_examples(&links, &BTreeMap::new(), 3, 1).unwrap();
        assert_eq!(set.warnings, 1);
    }

    fn ten_bug_examples() -> Vec<LocalizationExample> {
        let links: Vec<FixLink> = (0..10).map(|i| link(&format!("B-{i}"), i as i64 * 100, &["F0.java"])).collect();
        let mut cands = BTreeMap::new();
        for i in 0..10 {
            cands.extend(candidates(&format!("B-{i}"), 6));
        }
        build_examples(&links, &cands, 2, 5).unwrap().examples
    }

    #[test]
    fn chronological_split() {
        let examples = ten_bug_examples();
        let (train, test) = split_dataset(&examples, 0.2, "d", 5).unwrap();
        assert_eq!(train.bug_keys().len(), 8);
        let test_ids: Vec<_> = test.bug_keys().into_iter().map(|k| k.1).collect();
        assert_eq!(test_ids, vec!["B-8", "B-9"]);
        assert_eq!(train.records.len() + test.records.len(), examples.len());
        check_no_leakage(&train, &test).unwrap();
    }

    #[test]
    fn bugs_never_straddle() {
        let examples = ten_bug_examples();
        let (train, test) = split_dataset(&examples, 0.35, "d", 5).unwrap();
        for (p, b) in test.bug_keys() {
            assert!(train.records.iter().all(|r| !(r.bug.project_id == p && r.bug.bug_id == b)));
        }
        let per_bug = |m: &DatasetManifest, id: &str| m.records.iter().filter(|r| r.bug.bug_id == id).count();
        for (_, b) in train.bug_keys() {
            assert_eq!(per_bug(&train, &b), 3);
        }
    }

    #[test]
    fn single_bug_cannot_split() {
        let links = [link("B-1", 0, &["F0.java"])];
        let set = build_examples(&links, &candidates("B-1", 4), 1, 1).unwrap();
        assert!(matches!(split_dataset(&set.examples, 0.2, "d", 1), Err(Error::Split(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let examples = ten_bug_examples();
        let (train, _) = split_dataset(&examples, 0.2, "d", 5).unwrap();
        let mut buf = Vec::new();
        write_manifest(&train, &mut buf).unwrap();
        assert!(!buf.contains(&b'\r'));
        let back = read_manifest(buf.as_slice()).unwrap();
        assert_eq!(back, train);
    }
}
