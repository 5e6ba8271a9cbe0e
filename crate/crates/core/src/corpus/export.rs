//! Line-delimited JSON exports from issue trackers and version control.
//!
//! Issue export (Jira): `{project, key, title, description, status, created}`.
//! Issue export (GitHub): `{repo, number, title, body, state, created_at}`.
//! Commit export: `{sha, message, timestamp, files: [{path, pre, post}]}`.
//! Snapshot export: `{sha, files: [{path, content}]}`, the repository files
//! visible at a commit, used as the candidate universe for ranking.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BugRecord, BugStatus, ChangedFile, CommitMeta};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueKind {
    Jira,
    Github,
}

/// Repository files per commit id.
pub type Snapshots = BTreeMap<String, Vec<(String, String)>>;

#[derive(Deserialize)]
struct JiraIssue {
    project: String,
    key: String,
    title: String,
    #[serde(default)]
    description: Option<String>,
    status: String,
    created: Value,
}

#[derive(Deserialize)]
struct GithubIssue {
    repo: String,
    number: u64,
    title: String,
    #[serde(default)]
    body: Option<String>,
    state: String,
    created_at: Value,
}

#[derive(Serialize, Deserialize)]
struct RawCommit {
    sha: String,
    message: String,
    timestamp: Value,
    files: Vec<RawFile>,
}

#[derive(Serialize, Deserialize)]
struct RawFile {
    path: String,
    pre: Option<String>,
    post: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawSnapshot {
    sha: String,
    files: Vec<RawSnapshotFile>,
}

#[derive(Serialize, Deserialize)]
struct RawSnapshotFile {
    path: String,
    content: String,
}

fn records(document: &str) -> impl Iterator<Item = (usize, &str)> {
    document
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
}

fn parse_err(index: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        index,
        message: message.to_string(),
    }
}

pub(crate) fn parse_timestamp(value: &Value) -> Option<DateTime<Utc>> {
    match value {
        Value::Number(n) => n.as_i64().and_then(|s| Utc.timestamp_opt(s, 0).single()),
        Value::String(s) => {
            if let Ok(t) = DateTime::parse_from_rfc3339(s) {
                return Some(t.with_timezone(&Utc));
            }
            // Jira style: 2013-05-21T10:07:23.000+0000
            if let Ok(t) = DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f%z") {
                return Some(t.with_timezone(&Utc));
            }
            ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%d %H:%M:%S"]
                .iter()
                .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
                .map(|t| Utc.from_utc_datetime(&t))
        }
        _ => None,
    }
}

fn status_from(text: &str, kind: IssueKind) -> BugStatus {
    let fixed = match kind {
        IssueKind::Jira => text.eq_ignore_ascii_case("fixed"),
        // GitHub has no resolution field; a closed issue is the nearest analogue.
        IssueKind::Github => {
            text.eq_ignore_ascii_case("closed") || text.eq_ignore_ascii_case("fixed")
        }
    };
    if fixed {
        BugStatus::Fixed
    } else {
        BugStatus::Other
    }
}

/// Parses one issue per line. Issues whose resolution is not "fixed" are
/// kept with [`BugStatus::Other`].
pub fn parse_issue_export(document: &str, kind: IssueKind) -> Result<Vec<BugRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in records(document) {
        let record = match kind {
            IssueKind::Jira => {
                let raw: JiraIssue = serde_json::from_str(line).map_err(|e| parse_err(index, e))?;
                let created_at = parse_timestamp(&raw.created)
                    .ok_or_else(|| parse_err(index, "unparseable `created` timestamp"))?;
                BugRecord {
                    project_id: raw.project,
                    bug_id: raw.key,
                    title: raw.title,
                    description: raw.description.unwrap_or_default(),
                    created_at,
                    status: status_from(&raw.status, kind),
                }
            }
            IssueKind::Github => {
                let raw: GithubIssue =
                    serde_json::from_str(line).map_err(|e| parse_err(index, e))?;
                let created_at = parse_timestamp(&raw.created_at)
                    .ok_or_else(|| parse_err(index, "unparseable `created_at` timestamp"))?;
                BugRecord {
                    project_id: raw.repo,
                    bug_id: format!("#{}", raw.number),
                    title: raw.title,
                    description: raw.body.unwrap_or_default(),
                    created_at,
                    status: status_from(&raw.state, kind),
                }
            }
        };
        if record.bug_id.is_empty() {
            return Err(parse_err(index, "empty bug id"));
        }
        if !seen.insert((record.project_id.clone(), record.bug_id.clone())) {
            return Err(parse_err(
                index,
                format!("duplicate bug id {} in {}", record.bug_id, record.project_id),
            ));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn parse_commit_export(document: &str) -> Result<Vec<CommitMeta>> {
    let mut out = Vec::new();
    for (index, line) in records(document) {
        let raw: RawCommit = serde_json::from_str(line).map_err(|e| parse_err(index, e))?;
        let timestamp = parse_timestamp(&raw.timestamp)
            .ok_or_else(|| parse_err(index, "unparseable `timestamp`"))?;
        if raw.files.is_empty() {
            return Err(parse_err(index, "commit changes no files"));
        }
        let mut changed_files = Vec::with_capacity(raw.files.len());
        for f in raw.files {
            if f.pre.is_none() && f.post.is_none() {
                return Err(parse_err(
                    index,
                    format!("{}: both pre and post content are null", f.path),
                ));
            }
            changed_files.push(ChangedFile {
                path: f.path,
                pre_content: f.pre,
                post_content: f.post,
            });
        }
        out.push(CommitMeta {
            commit_id: raw.sha,
            message: raw.message,
            changed_files,
            timestamp,
        });
    }
    Ok(out)
}

pub fn parse_snapshot_export(document: &str) -> Result<Snapshots> {
    let mut out = Snapshots::new();
    for (index, line) in records(document) {
        let raw: RawSnapshot = serde_json::from_str(line).map_err(|e| parse_err(index, e))?;
        let files = raw.files.into_iter().map(|f| (f.path, f.content)).collect();
        if out.insert(raw.sha.clone(), files).is_some() {
            return Err(parse_err(index, format!("duplicate snapshot {}", raw.sha)));
        }
    }
    Ok(out)
}

fn push_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("export rows serialize"));
    out.push('\n');
}

/// Jira-kind export of `bugs`.
pub fn write_issue_export(bugs: &[BugRecord]) -> String {
    let mut out = String::new();
    for b in bugs {
        let status = match b.status {
            BugStatus::Fixed => "Fixed",
            BugStatus::Other => "Open",
        };
        push_line(
            &mut out,
            &serde_json::json!({
                "project": b.project_id,
                "key": b.bug_id,
                "title": b.title,
                "description": b.description,
                "status": status,
                "created": b.created_at.to_rfc3339(),
            }),
        );
    }
    out
}

pub fn write_commit_export(commits: &[CommitMeta]) -> String {
    let mut out = String::new();
    for c in commits {
        let raw = RawCommit {
            sha: c.commit_id.clone(),
            message: c.message.clone(),
            timestamp: Value::String(c.timestamp.to_rfc3339()),
            files: c
                .changed_files
                .iter()
                .map(|f| RawFile {
                    path: f.path.clone(),
                    pre: f.pre_content.clone(),
                    post: f.post_content.clone(),
                })
                .collect(),
        };
        push_line(&mut out, &raw);
    }
    out
}

pub fn write_snapshot_export(snapshots: &Snapshots) -> String {
    let mut out = String::new();
    for (sha, files) in snapshots {
        let raw = RawSnapshot {
            sha: sha.clone(),
            files: files
                .iter()
                .map(|(path, content)| RawSnapshotFile {
                    path: path.clone(),
                    content: content.clone(),
                })
                .collect(),
        };
        push_line(&mut out, &raw);
    }
    out
}
