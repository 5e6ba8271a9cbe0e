use std::collections::BTreeMap;

use regex::Regex;

use super::{BugRecord, BugStatus, CommitMeta, FixLink};

/// Commits touching more files than this are treated as non-fix noise.
pub const MAX_CHANGED_FILES: usize = 10;

/// Projects with fewer fixed-and-linked reports than this are dropped.
pub const MIN_PROJECT_BUGS: usize = 10;

fn bug_id_pattern(bug_id: &str) -> Regex {
    // Identifier characters are letters, digits and hyphen; the id must be
    // delimited by anything else or by the string boundary on both sides.
    let pattern = format!(r"(?:^|[^\p{{L}}\p{{N}}-])({})(?:[^\p{{L}}\p{{N}}-]|$)", regex::escape(bug_id));
    Regex::new(&pattern).expect("escaped bug id is a valid pattern")
}

/// Links `bug` to every commit whose message mentions its id as a whole
/// token. Matching is case-sensitive.
pub fn link_bug_to_commits(bug: &BugRecord, commits: &[CommitMeta]) -> Vec<FixLink> {
    if bug.bug_id.is_empty() {
        return Vec::new();
    }
    let re = bug_id_pattern(&bug.bug_id);
    commits
        .iter()
        .filter_map(|commit| {
            let m = re.captures(&commit.message)?.get(1)?;
            Some(FixLink {
                bug: bug.clone(),
                commit: commit.clone(),
                matched_span: (m.start(), m.end()),
                verified: false,
            })
        })
        .collect()
}

fn is_java(path: &str) -> bool {
    path.ends_with(".java")
}

/// Drops commits touching more than [`MAX_CHANGED_FILES`] files, keeps only
/// `.java` files, and drops links left with nothing.
pub fn filter_links(links: Vec<FixLink>) -> Vec<FixLink> {
    links
        .into_iter()
        .filter(|l| l.commit.changed_files.len() <= MAX_CHANGED_FILES)
        .filter_map(|mut l| {
            l.commit.changed_files.retain(|f| is_java(&f.path));
            (!l.commit.changed_files.is_empty()).then_some(l)
        })
        .collect()
}

/// Removes projects with fewer than [`MIN_PROJECT_BUGS`] fixed reports. The
/// input is expected to hold linked bugs only.
pub fn filter_projects(
    projects: BTreeMap<String, Vec<BugRecord>>,
) -> BTreeMap<String, Vec<BugRecord>> {
    projects
        .into_iter()
        .filter(|(_, bugs)| {
            bugs.iter().filter(|b| b.status == BugStatus::Fixed).count() >= MIN_PROJECT_BUGS
        })
        .collect()
}
