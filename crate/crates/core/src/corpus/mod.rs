//! Bug-report and fix-commit ingestion, linking, filtering and localization
//! dataset assembly.

mod dataset;
mod export;
mod link;
pub mod synthetic;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use dataset::{
    build_examples, read_manifest, split_dataset, write_manifest, ExampleSet, ManifestHeader,
    DEFAULT_NEGATIVES_PER_POSITIVE,
};
pub use export::{
    parse_commit_export, parse_issue_export, parse_snapshot_export, write_commit_export,
    write_issue_export, write_snapshot_export, IssueKind, Snapshots,
};
pub use link::{filter_links, filter_projects, link_bug_to_commits, MAX_CHANGED_FILES,
    MIN_PROJECT_BUGS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BugStatus {
    Fixed,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugRecord {
    pub project_id: String,
    /// Tracker key, e.g. `PROJ-123`, or `#42` for GitHub issues.
    pub bug_id: String,
    pub title: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
    pub status: BugStatus,
}

impl BugRecord {
    /// The natural-language side of a training pair.
    pub fn text(&self) -> String {
        if self.description.is_empty() {
            self.title.clone()
        } else {
            format!("{}\n{}", self.title, self.description)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedFile {
    pub path: String,
    /// Absent for files added by the commit.
    pub pre_content: Option<String>,
    /// Absent for files deleted by the commit.
    pub post_content: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub commit_id: String,
    pub message: String,
    pub changed_files: Vec<ChangedFile>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixLink {
    pub bug: BugRecord,
    pub commit: CommitMeta,
    /// Byte offsets of the bug id inside `commit.message`.
    pub matched_span: (usize, usize),
    /// Set when someone confirmed the link by hand (attachments, review).
    /// Linking never sets it.
    #[serde(default)]
    pub verified: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationExample {
    pub bug: BugRecord,
    pub file_path: String,
    /// Pre-fix version of the file.
    pub file_content: String,
    /// 1 when the fix changed this file, 0 for a sampled negative.
    pub label: u8,
    /// Post-fix version, kept for positives so QA spans can be derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_content: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub projects: Vec<String>,
    pub split: Split,
    pub records: Vec<LocalizationExample>,
    pub seed: u64,
}

impl DatasetManifest {
    /// Distinct `(project, bug id)` keys in record order.
    pub fn bug_keys(&self) -> Vec<(String, String)> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter_map(|r| {
                let key = (r.bug.project_id.clone(), r.bug.bug_id.clone());
                seen.insert(key.clone()).then_some(key)
            })
            .collect()
    }

    pub fn positives(&self) -> impl Iterator<Item = &LocalizationExample> {
        self.records.iter().filter(|r| r.label == 1)
    }
}
