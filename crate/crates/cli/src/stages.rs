use std::collections::{BTreeMap, BTreeSet, HashSet};

use bugloc_core::corpus::{
    build_examples, filter_links, filter_projects, link_bug_to_commits, parse_commit_export,
    parse_issue_export, parse_snapshot_export, read_manifest, split_dataset, synthetic,
    write_manifest, write_snapshot_export, Snapshots,
};
use bugloc_core::encoder::{self, EncoderState};
use bugloc_core::eval::{difficulty_report, divergence_report, metric_report, random_baseline_mrr};
use bugloc_core::localizer::{candidate_pool, rank_files, read_rankings, train_head, write_rankings};
use bugloc_core::pretrain::pretrain;
use bugloc_core::rng::derive_seed;
use bugloc_core::tokenize::{token_frequency, train_vocabulary};
use bugloc_core::{
    BugRecord, BugStatus, CommitMeta, DatasetManifest, FixLink, HeadState, RankedResult,
    TokenDistribution, Vocabulary,
};
use serde::{Deserialize, Serialize};

use crate::artifacts::{execute, Inputs, Outcome, Output};
use crate::error::{CliError, Result};
use crate::manifest::{ExperimentManifest, MineConfig, Stage};

fn at(stage: Stage) -> impl Fn(bugloc_core::Error) -> CliError {
    move |source| CliError::Stage { stage, source }
}

fn json_lines<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("rows serialize");
        out.push(b'\n');
    }
    out
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str, stage: Stage) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(index, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Stage {
                stage,
                source: bugloc_core::Error::Parse {
                    index,
                    message: e.to_string(),
                },
            })
        })
        .collect()
}

fn dataset(inputs: &mut Inputs, role: &str, stage: Stage) -> Result<DatasetManifest> {
    read_manifest(inputs.artifact(Stage::Build, role)?).map_err(at(stage))
}

fn vocabulary(inputs: &mut Inputs, stage: Stage) -> Result<Vocabulary> {
    Vocabulary::read(inputs.artifact(Stage::Vocab, "vocab")?).map_err(at(stage))
}

fn encoder_state(inputs: &mut Inputs, stage: Stage) -> Result<EncoderState> {
    encoder::from_bytes(inputs.artifact(Stage::Pretrain, "encoder")?).map_err(at(stage))
}

/// Which commit fixed which bug.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FixRef {
    pub project_id: String,
    pub bug_id: String,
    pub commit_id: String,
}

/// Links fixed bugs to commits, applies the commit filter, then drops
/// projects with too few linked bugs.
pub fn mine_links(bugs: &[BugRecord], commits: &[CommitMeta]) -> Vec<FixLink> {
    let mut by_project: BTreeMap<String, Vec<FixLink>> = BTreeMap::new();
    for bug in bugs.iter().filter(|b| b.status == BugStatus::Fixed) {
        let links = filter_links(link_bug_to_commits(bug, commits));
        if !links.is_empty() {
            by_project.entry(bug.project_id.clone()).or_default().extend(links);
        }
    }
    let linked: BTreeMap<String, Vec<BugRecord>> = by_project
        .iter()
        .map(|(p, links)| {
            let mut seen = HashSet::new();
            let bugs = links
                .iter()
                .filter(|l| seen.insert(l.bug.bug_id.clone()))
                .map(|l| l.bug.clone())
                .collect();
            (p.clone(), bugs)
        })
        .collect();
    let kept = filter_projects(linked);
    by_project
        .into_iter()
        .filter(|(p, _)| kept.contains_key(p))
        .flat_map(|(_, links)| links)
        .collect()
}

enum MineSource {
    Synthetic(synthetic::SyntheticConfig),
    Export {
        issues: String,
        kind: bugloc_core::corpus::IssueKind,
        commits: String,
        snapshots: String,
    },
}

fn mine(m: &ExperimentManifest) -> Result<Outcome> {
    let stage = Stage::Mine;
    execute(
        m,
        stage,
        |inputs| match &m.mine {
            MineConfig::Synthetic(cfg) => Ok(MineSource::Synthetic(cfg.clone())),
            MineConfig::Export(src) => Ok(MineSource::Export {
                issues: inputs.external(&src.issues)?,
                kind: src.issue_kind,
                commits: inputs.external(&src.commits)?,
                snapshots: inputs.external(&src.snapshots)?,
            }),
        },
        |source| {
            let (bugs, commits, snapshots) = match source {
                MineSource::Synthetic(cfg) => {
                    let c = synthetic::generate(&cfg);
                    (c.bugs, c.commits, c.snapshots)
                }
                MineSource::Export {
                    issues,
                    kind,
                    commits,
                    snapshots,
                } => (
                    parse_issue_export(&issues, kind).map_err(at(stage))?,
                    parse_commit_export(&commits).map_err(at(stage))?,
                    parse_snapshot_export(&snapshots).map_err(at(stage))?,
                ),
            };
            let links = mine_links(&bugs, &commits);
            let used: BTreeSet<&str> = links.iter().map(|l| l.commit.commit_id.as_str()).collect();
            let kept: Snapshots = snapshots
                .into_iter()
                .filter(|(sha, _)| used.contains(sha.as_str()))
                .collect();
            Ok(vec![
                Output::new("links", "links.jsonl", json_lines(&links)),
                Output::new("snapshots", "snapshots.jsonl", write_snapshot_export(&kept).into_bytes()),
            ])
        },
    )
}

fn build(m: &ExperimentManifest) -> Result<Outcome> {
    let stage = Stage::Build;
    execute(
        m,
        stage,
        |inputs| {
            let links: Vec<FixLink> = parse_lines(&inputs.text(Stage::Mine, "links")?, stage)?;
            let snapshots =
                parse_snapshot_export(&inputs.text(Stage::Mine, "snapshots")?).map_err(at(stage))?;
            Ok((links, snapshots))
        },
        |(links, snapshots)| {
            let cfg = &m.build;
            let set = build_examples(&links, &snapshots, cfg.negatives_per_positive, cfg.seed)
                .map_err(at(stage))?;
            if set.warnings > 0 {
                eprintln!("build: {} links had no negative candidates", set.warnings);
            }
            let (train, test) = split_dataset(&set.examples, cfg.test_fraction, &m.experiment_id, cfg.seed)
                .map_err(at(stage))?;
            let mut fixes: Vec<FixRef> = links
                .iter()
                .map(|l| FixRef {
                    project_id: l.bug.project_id.clone(),
                    bug_id: l.bug.bug_id.clone(),
                    commit_id: l.commit.commit_id.clone(),
                })
                .collect();
            fixes.sort();
            fixes.dedup();
            let mut train_bytes = Vec::new();
            write_manifest(&train, &mut train_bytes).map_err(at(stage))?;
            let mut test_bytes = Vec::new();
            write_manifest(&test, &mut test_bytes).map_err(at(stage))?;
            Ok(vec![
                Output::new("train", "train.jsonl", train_bytes),
                Output::new("test", "test.jsonl", test_bytes),
                Output::new("fixes", "fixes.jsonl", json_lines(&fixes)),
            ])
        },
    )
}

/// Bug texts and file contents of a dataset, each distinct text once, in
/// record order.
fn dataset_texts<'a>(records: impl Iterator<Item = &'a bugloc_core::LocalizationExample>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in records {
        for text in [r.bug.text(), r.file_content.clone()] {
            if seen.insert(text.clone()) {
                out.push(text);
            }
        }
    }
    out
}

fn vocab(m: &ExperimentManifest) -> Result<Outcome> {
    let stage = Stage::Vocab;
    execute(
        m,
        stage,
        |inputs| dataset(inputs, "train", stage),
        |train| {
            let vocab = train_vocabulary(&dataset_texts(train.records.iter()), m.vocab.size)
                .map_err(at(stage))?;
            let mut bytes = Vec::new();
            vocab.write(&mut bytes).map_err(at(stage))?;
            Ok(vec![Output::new("vocab", "vocab.txt", bytes)])
        },
    )
}

fn pretrain_stage(m: &ExperimentManifest) -> Result<Outcome> {
    let stage = Stage::Pretrain;
    execute(
        m,
        stage,
        |inputs| Ok((dataset(inputs, "train", stage)?, vocabulary(inputs, stage)?)),
        |(train, vocab)| {
            let (state, log) = pretrain(&m.pretrain, &m.encoder, &train, &vocab).map_err(at(stage))?;
            Ok(vec![
                Output::new("encoder", "encoder.ckpt", encoder::to_bytes(&state).map_err(at(stage))?),
                Output::new("log", "log.csv", log.to_csv().into_bytes()),
            ])
        },
    )
}

fn train_head_stage(m: &ExperimentManifest) -> Result<Outcome> {
    let stage = Stage::TrainHead;
    execute(
        m,
        stage,
        |inputs| {
            Ok((
                encoder_state(inputs, stage)?,
                dataset(inputs, "train", stage)?,
                vocabulary(inputs, stage)?,
            ))
        },
        |(enc, train, vocab)| {
            let before = enc.content_hash();
            let (head, log) = train_head(&enc, &m.head, &train, &vocab, &m.head_train).map_err(at(stage))?;
            if enc.content_hash() != before {
                return Err(CliError::Stage {
                    stage,
                    source: bugloc_core::Error::InvalidArgument("encoder changed during head training".into()),
                });
            }
            Ok(vec![
                Output::new("head", "head.ckpt", head.to_bytes().map_err(at(stage))?),
                Output::new("log", "log.csv", log.to_csv().into_bytes()),
            ])
        },
    )
}

/// Headline numbers of an evaluation next to the random-ranking baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub n_bugs: usize,
    pub mrr: f64,
    pub map: f64,
    pub random_baseline_mrr: f64,
    pub pool_size: usize,
}

struct EvalInputs {
    encoder: EncoderState,
    head: HeadState,
    test: DatasetManifest,
    fixes: Vec<FixRef>,
    snapshots: Snapshots,
    vocab: Vocabulary,
}

/// Ranks a seeded candidate pool for every test bug. The pool comes from the
/// snapshots of the bug's fixing commits; relevant files missing there are
/// added with their pre-fix content.
fn rank_test_bugs(m: &ExperimentManifest, inp: &EvalInputs) -> bugloc_core::Result<Vec<RankedResult>> {
    let mut commits: BTreeMap<(&str, &str), Vec<&str>> = BTreeMap::new();
    for f in &inp.fixes {
        commits
            .entry((f.project_id.as_str(), f.bug_id.as_str()))
            .or_default()
            .push(f.commit_id.as_str());
    }
    let mut results = Vec::new();
    for (project, bug_id) in inp.test.bug_keys() {
        let records: Vec<_> = inp
            .test
            .records
            .iter()
            .filter(|r| r.bug.project_id == project && r.bug.bug_id == bug_id)
            .collect();
        let bug = &records[0].bug;
        let relevant: BTreeSet<String> =
            records.iter().filter(|r| r.label == 1).map(|r| r.file_path.clone()).collect();
        if relevant.is_empty() {
            continue;
        }
        let mut universe: BTreeMap<String, String> = BTreeMap::new();
        for sha in commits.get(&(project.as_str(), bug_id.as_str())).into_iter().flatten() {
            for (path, content) in inp.snapshots.get(*sha).into_iter().flatten() {
                universe.entry(path.clone()).or_insert_with(|| content.clone());
            }
        }
        for r in records.iter().filter(|r| r.label == 1) {
            universe.entry(r.file_path.clone()).or_insert_with(|| r.file_content.clone());
        }
        let snapshot: Vec<(String, String)> = universe.into_iter().collect();
        let seed = derive_seed(m.evaluate.seed, &[&project, &bug_id]);
        let pool = candidate_pool(&snapshot, &relevant, m.evaluate.pool_size, seed)?;
        let ranked = rank_files(&inp.encoder, &inp.head, bug, &pool, &inp.vocab)?;
        results.push(ranked.with_relevant(relevant)?);
    }
    Ok(results)
}

fn evaluate(m: &ExperimentManifest) -> Result<Outcome> {
    let stage = Stage::Evaluate;
    execute(
        m,
        stage,
        |inputs| {
            let encoder = encoder_state(inputs, stage)?;
            let head = HeadState::from_bytes(inputs.artifact(Stage::TrainHead, "head")?).map_err(at(stage))?;
            let test = dataset(inputs, "test", stage)?;
            let fixes = parse_lines(&inputs.text(Stage::Build, "fixes")?, stage)?;
            let snapshots =
                parse_snapshot_export(&inputs.text(Stage::Mine, "snapshots")?).map_err(at(stage))?;
            let vocab = vocabulary(inputs, stage)?;
            Ok(EvalInputs {
                encoder,
                head,
                test,
                fixes,
                snapshots,
                vocab,
            })
        },
        |inp| {
            let results = rank_test_bugs(m, &inp).map_err(at(stage))?;
            let report = metric_report(&results).map_err(at(stage))?;
            let summary = EvaluationSummary {
                n_bugs: report.overall.n_bugs,
                mrr: report.overall.mrr,
                map: report.overall.map,
                random_baseline_mrr: random_baseline_mrr(&results).map_err(at(stage))?,
                pool_size: m.evaluate.pool_size,
            };
            let mut rankings = Vec::new();
            write_rankings(&results, &mut rankings).map_err(at(stage))?;
            Ok(vec![
                Output::new("rankings", "rankings.jsonl", rankings),
                Output::new("metrics", "metrics.json", report.to_json().map_err(at(stage))?.into_bytes()),
                Output::new("metrics_csv", "metrics.csv", report.to_csv().into_bytes()),
                Output::new(
                    "summary",
                    "summary.json",
                    serde_json::to_vec_pretty(&summary).expect("summary serializes"),
                ),
            ])
        },
    )
}

/// Token distribution per project over the dataset's distinct texts.
pub fn project_distributions(data: &DatasetManifest) -> BTreeMap<String, TokenDistribution> {
    let mut grouped: BTreeMap<&str, Vec<&bugloc_core::LocalizationExample>> = BTreeMap::new();
    for r in &data.records {
        grouped.entry(&r.bug.project_id).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(p, recs)| (p.to_string(), token_frequency(&dataset_texts(recs.into_iter()))))
        .collect()
}

/// Token distribution of what pre-training sees: the positive pairs.
pub fn pretraining_distribution(train: &DatasetManifest) -> TokenDistribution {
    token_frequency(&dataset_texts(train.positives()))
}

fn analyze(m: &ExperimentManifest) -> Result<Outcome> {
    let stage = Stage::Analyze;
    execute(
        m,
        stage,
        |inputs| {
            let rankings = read_rankings(inputs.artifact(Stage::Evaluate, "rankings")?).map_err(at(stage))?;
            Ok((rankings, dataset(inputs, "train", stage)?, dataset(inputs, "test", stage)?))
        },
        |(rankings, train, test)| {
            let divergence = divergence_report(&project_distributions(&test), &pretraining_distribution(&train))
                .map_err(at(stage))?;
            let bugs: BTreeMap<String, BugRecord> = test
                .records
                .iter()
                .map(|r| (r.bug.bug_id.clone(), r.bug.clone()))
                .collect();
            let per_model = BTreeMap::from([(m.experiment_id.clone(), rankings)]);
            let difficulty = difficulty_report(&per_model, &bugs).map_err(at(stage))?;
            Ok(vec![
                Output::new(
                    "divergence",
                    "divergence.json",
                    serde_json::to_vec_pretty(&divergence).expect("report serializes"),
                ),
                Output::new(
                    "difficulty",
                    "difficulty.json",
                    serde_json::to_vec_pretty(&difficulty).expect("report serializes"),
                ),
            ])
        },
    )
}

/// Runs `stage` alone; its inputs must already exist.
pub fn run_stage(m: &ExperimentManifest, stage: Stage) -> Result<Outcome> {
    match stage {
        Stage::Mine => mine(m),
        Stage::Build => build(m),
        Stage::Vocab => vocab(m),
        Stage::Pretrain => pretrain_stage(m),
        Stage::TrainHead => train_head_stage(m),
        Stage::Evaluate => evaluate(m),
        Stage::Analyze => analyze(m),
    }
}

/// Runs the manifest's stages in pipeline order, or just `only`.
pub fn run(m: &ExperimentManifest, only: Option<Stage>) -> Result<Vec<(Stage, Outcome)>> {
    let stages: Vec<Stage> = match only {
        Some(s) => vec![s],
        None => m.stages.clone(),
    };
    let mut done = Vec::with_capacity(stages.len());
    for stage in stages {
        let outcome = run_stage(m, stage)?;
        eprintln!(
            "{}: {stage} {}",
            m.experiment_id,
            match outcome {
                Outcome::Ran => "done",
                Outcome::Skipped => "unchanged, skipped",
            }
        );
        done.push((stage, outcome));
    }
    Ok(done)
}
