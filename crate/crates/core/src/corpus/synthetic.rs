//! Seeded synthetic issue/commit/snapshot corpora with a planted
//! localization signal: every bug description borrows a fixed fraction of
//! its tokens from the file its fix changes.

use std::collections::BTreeSet;

use chrono::{Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    write_commit_export, write_issue_export, write_snapshot_export, BugRecord, BugStatus,
    ChangedFile, CommitMeta, Snapshots,
};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub projects: usize,
    pub bugs_per_project: usize,
    pub files_per_project: usize,
    /// Inclusive range of statement lines per file.
    pub min_lines: usize,
    pub max_lines: usize,
    /// Description length in tokens, excluding any stack trace.
    pub description_tokens: usize,
    /// Fraction of description tokens copied from the buggy file.
    pub shared_fraction: f64,
    pub stack_trace_rate: f64,
    /// Size of the identifier pool shared by all projects.
    pub code_words: usize,
    /// Identifiers available to one project, drawn from the shared pool.
    pub project_words: usize,
    pub nl_words: usize,
    /// Shifts the pseudo-word pools; corpora with different offsets share
    /// few identifiers.
    pub word_offset: usize,
    /// Non-fixed issues and unrelated commits per project.
    pub noise_per_project: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            projects: 60,
            bugs_per_project: 12,
            files_per_project: 30,
            min_lines: 3,
            max_lines: 5,
            description_tokens: 16,
            shared_fraction: 0.3,
            stack_trace_rate: 0.25,
            code_words: 320,
            project_words: 120,
            nl_words: 120,
            word_offset: 0,
            noise_per_project: 2,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub bugs: Vec<BugRecord>,
    pub commits: Vec<CommitMeta>,
    pub snapshots: Snapshots,
}

impl SyntheticCorpus {
    pub fn issue_export(&self) -> String {
        write_issue_export(&self.bugs)
    }

    pub fn commit_export(&self) -> String {
        write_commit_export(&self.commits)
    }

    pub fn snapshot_export(&self) -> String {
        write_snapshot_export(&self.snapshots)
    }
}

const ONSETS: [&str; 16] = [
    "b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "qu",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// The `n`-th pseudo-word. Words are lowercase ASCII, never contain an
/// underscore or capital, and are distinct for distinct `n`.
fn pseudo_word(mut n: usize) -> String {
    let mut s = String::new();
    let base = ONSETS.len() * VOWELS.len();
    // Two syllables minimum keeps words out of the keyword range.
    for _ in 0..2 {
        let syl = n % base;
        n /= base;
        s.push_str(ONSETS[syl / VOWELS.len()]);
        s.push_str(VOWELS[syl % VOWELS.len()]);
    }
    while n > 0 {
        let syl = (n - 1) % base;
        n = (n - 1) / base;
        s.push_str(ONSETS[syl / VOWELS.len()]);
        s.push_str(VOWELS[syl % VOWELS.len()]);
    }
    s
}

struct File {
    path: String,
    class: String,
    lines: Vec<Vec<String>>,
}

impl File {
    fn render(&self) -> String {
        let mut out = format!("class {} {{\n", self.class);
        for line in &self.lines {
            out.push_str("    ");
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out.push_str("}\n");
        out
    }

    fn identifiers(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for tok in std::iter::once(&self.class).chain(self.lines.iter().flatten()) {
            if tok.chars().all(|c| c.is_ascii_lowercase()) && seen.insert(tok.clone()) {
                out.push(tok.clone());
            }
        }
        out
    }
}

fn statement(words: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let shape = rng.random_range(0..4);
    let mut w = || words.choose(rng).expect("non-empty word pool").clone();
    let t = |s: &str| s.to_string();
    match shape {
        0 => vec![w(), w(), t("="), w(), t("."), w(), t("("), w(), t(")"), t(";")],
        1 => vec![t("if"), t("("), w(), t("!="), t("null"), t(")"), w(), t("("), t(")"), t(";")],
        2 => vec![t("return"), w(), t("."), w(), t("("), w(), t(","), w(), t(")"), t(";")],
        _ => vec![w(), t("."), w(), t("("), w(), t(")"), t(";")],
    }
}

/// Files touched by each bulk noise commit; always above the link filter's limit.
const BULK_FILES: usize = super::link::MAX_CHANGED_FILES + 2;

pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let code_pool: Vec<String> =
        (0..config.code_words).map(|i| pseudo_word(config.word_offset + i)).collect();
    let nl_pool: Vec<String> = (0..config.nl_words)
        .map(|i| pseudo_word(config.word_offset + config.code_words + i))
        .collect();
    let epoch = Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap();

    let mut bugs = Vec::new();
    let mut commits = Vec::new();
    let mut snapshots = Snapshots::new();

    for p in 0..config.projects {
        let project = format!("PRJ{p:02}");
        let mut rng = rng_for(config.seed, &[&"project", &p]);
        let mut words = code_pool.clone();
        words.shuffle(&mut rng);
        words.truncate(config.project_words.min(code_pool.len()).max(1));

        let mut classes = words.clone();
        classes.shuffle(&mut rng);
        let files: Vec<File> = (0..config.files_per_project)
            .map(|f| {
                let class = classes[f % classes.len()].clone();
                let n_lines = rng.random_range(config.min_lines..=config.max_lines.max(config.min_lines));
                File {
                    path: format!("src/main/java/org/{}/{}{f}.java", project.to_lowercase(), class),
                    class,
                    lines: (0..n_lines).map(|_| statement(&words, &mut rng)).collect(),
                }
            })
            .collect();
        let snapshot: Vec<(String, String)> =
            files.iter().map(|f| (f.path.clone(), f.render())).collect();

        let n_shared = (config.description_tokens as f64 * config.shared_fraction).round() as usize;
        for b in 0..config.bugs_per_project {
            let slot = (b * config.projects + p) as i64;
            let created_at = epoch + Duration::hours(slot * 6);
            let bug_id = format!("{project}-{}", b + 1);
            let buggy = &files[rng.random_range(0..files.len())];

            let idents = buggy.identifiers();
            let mut desc: Vec<String> = idents
                .choose_multiple(&mut rng, n_shared.min(idents.len()))
                .cloned()
                .collect();
            while desc.len() < config.description_tokens {
                desc.push(nl_pool.choose(&mut rng).unwrap().clone());
            }
            desc.shuffle(&mut rng);
            let mut description = desc.join(" ");
            if rng.random_bool(config.stack_trace_rate.clamp(0.0, 1.0)) {
                let method = idents.choose(&mut rng).unwrap();
                let line_no = rng.random_range(10..20);
                description.push_str(&format!(
                    "\njava.lang.NullPointerException\n\tat org.{}.{}.{}({}.java:{line_no})",
                    project.to_lowercase(),
                    buggy.class,
                    method,
                    buggy.class
                ));
            }
            let title: Vec<&String> = nl_pool.choose_multiple(&mut rng, 2).collect();
            bugs.push(BugRecord {
                project_id: project.clone(),
                bug_id: bug_id.clone(),
                title: format!("{} {}", title[0], title[1]),
                description,
                created_at,
                status: BugStatus::Fixed,
            });

            let pre = buggy.render();
            let mut fixed_lines = buggy.lines.clone();
            let li = rng.random_range(0..fixed_lines.len());
            fixed_lines[li] = statement(&words, &mut rng);
            let post = File {
                path: buggy.path.clone(),
                class: buggy.class.clone(),
                lines: fixed_lines,
            }
            .render();
            let mut changed = vec![ChangedFile {
                path: buggy.path.clone(),
                pre_content: Some(pre),
                post_content: Some(post),
            }];
            if b % 4 == 0 {
                changed.push(ChangedFile {
                    path: "CHANGES.md".into(),
                    pre_content: Some("changes\n".into()),
                    post_content: Some(format!("changes\n{bug_id}\n")),
                });
            }
            let sha = format!("{:016x}", crate::rng::derive_seed(config.seed, &[&"sha", &project, &b]));
            commits.push(CommitMeta {
                commit_id: sha.clone(),
                message: format!("{bug_id} fix {}", nl_pool.choose(&mut rng).unwrap()),
                changed_files: changed,
                timestamp: created_at + Duration::hours(2),
            });
            snapshots.insert(sha, snapshot.clone());
        }

        for n in 0..config.noise_per_project {
            let created_at = epoch + Duration::hours((n * config.projects + p) as i64 * 7 + 1);
            bugs.push(BugRecord {
                project_id: project.clone(),
                bug_id: format!("{project}-{}", config.bugs_per_project + n + 1),
                title: "feature request".into(),
                description: nl_pool.choose_multiple(&mut rng, 6).cloned().collect::<Vec<_>>().join(" "),
                created_at,
                status: BugStatus::Other,
            });
            // A sweeping change that mentions a real bug: dropped by the file-count filter.
            let mut bulk: Vec<ChangedFile> = files
                .iter()
                .take(BULK_FILES)
                .map(|f| ChangedFile {
                    path: f.path.clone(),
                    pre_content: Some(f.render()),
                    post_content: Some(f.render() + "\n"),
                })
                .collect();
            for i in bulk.len()..BULK_FILES {
                bulk.push(ChangedFile {
                    path: format!("docs/notes-{i}.txt"),
                    pre_content: None,
                    post_content: Some(String::from("reformatted\n")),
                });
            }
            commits.push(CommitMeta {
                commit_id: format!("{:016x}", crate::rng::derive_seed(config.seed, &[&"bulk", &project, &n])),
                message: format!("reformat sources, see {project}-1"),
                changed_files: bulk,
                timestamp: created_at,
            });
        }
    }

    SyntheticCorpus {
        bugs,
        commits,
        snapshots,
    }
}
