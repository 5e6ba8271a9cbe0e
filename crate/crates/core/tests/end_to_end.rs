use std::collections::BTreeSet;

use bugloc_core::corpus::synthetic::{generate, SyntheticConfig};
use bugloc_core::corpus::{
    build_examples, filter_links, link_bug_to_commits, parse_commit_export, parse_issue_export,
    parse_snapshot_export, read_manifest, split_dataset, write_manifest, IssueKind,
};
use bugloc_core::encoder::{extend_positions, forward, load_checkpoint, save_checkpoint};
use bugloc_core::eval::{metric_report, random_baseline_mrr};
use bugloc_core::localizer::{candidate_pool, rank_files, train_head, HeadTrainConfig};
use bugloc_core::pretrain::pretrain;
use bugloc_core::tokenize::{encode_pair, train_vocabulary};
use bugloc_core::{
    AttentionKind, BugStatus, DatasetManifest, EncoderConfig, HeadConfig, HeadState, Objective, PretrainConfig,
    Split, Vocabulary,
};

struct Data {
    train: DatasetManifest,
    test: DatasetManifest,
    vocab: Vocabulary,
}

fn data() -> Data {
    let corpus = generate(&SyntheticConfig {
        projects: 3,
        bugs_per_project: 12,
        files_per_project: 10,
        seed: 11,
        ..SyntheticConfig::default()
    });
    // through the export formats, as the pipeline reads them
    let bugs = parse_issue_export(&corpus.issue_export(), IssueKind::Jira).unwrap();
    let commits = parse_commit_export(&corpus.commit_export()).unwrap();
    let snapshots = parse_snapshot_export(&corpus.snapshot_export()).unwrap();
    assert_eq!(bugs, corpus.bugs);

    let links = filter_links(
        bugs.iter()
            .filter(|b| b.status == BugStatus::Fixed)
            .flat_map(|b| link_bug_to_commits(b, &commits))
            .collect(),
    );
    assert_eq!(links.len(), 36);
    let set = build_examples(&links, &snapshots, 3, 1).unwrap();
    let (train, test) = split_dataset(&set.examples, 0.25, "e2e", 1).unwrap();
    assert_eq!(train.split, Split::Train);
    let texts: Vec<String> = train
        .records
        .iter()
        .flat_map(|r| [r.bug.text(), r.file_content.clone()])
        .collect();
    let vocab = train_vocabulary(&texts, 300).unwrap();
    Data { train, test, vocab }
}

fn encoder_config(kind: AttentionKind, vocab: &Vocabulary) -> EncoderConfig {
    EncoderConfig {
        attention_kind: kind,
        num_layers: 1,
        num_heads: 2,
        hidden_dim: 16,
        ffn_dim: 32,
        max_len: 64,
        vocab_size: vocab.len(),
        lsh_num_hashes: 2,
        lsh_bucket_size: 8,
        seed: 3,
    }
}

fn pretrain_config(objective: Objective) -> PretrainConfig {
    PretrainConfig {
        objective,
        epochs: 2,
        batch_size: 16,
        ..PretrainConfig::default()
    }
}

#[test]
fn split_is_chronological_and_round_trips() {
    let d = data();
    let latest_train = d.train.records.iter().map(|r| r.bug.created_at).max().unwrap();
    let earliest_test = d.test.records.iter().map(|r| r.bug.created_at).min().unwrap();
    assert!(latest_train <= earliest_test);

    let mut bytes = Vec::new();
    write_manifest(&d.test, &mut bytes).unwrap();
    assert_eq!(read_manifest(bytes.as_slice()).unwrap(), d.test);
}

#[test]
fn every_objective_and_attention_kind_trains_and_ranks() {
    let d = data();
    let head_config = HeadConfig {
        conv_channels: [4, 4, 4],
        kernel_size: 3,
        hidden_units: 4,
        seed: 2,
    };
    let train_cfg = HeadTrainConfig {
        epochs: 1,
        batch_size: 16,
        learning_rate: 1e-3,
    };
    for kind in [AttentionKind::Full, AttentionKind::Lsh] {
        for objective in [Objective::Mlm, Objective::Electra, Objective::MlmThenQa] {
            let (enc, log) = pretrain(&pretrain_config(objective), &encoder_config(kind, &d.vocab), &d.train, &d.vocab)
                .unwrap();
            assert!(log.epoch_means().iter().all(|(_, _, loss)| loss.is_finite()));
            let (head, _) = train_head(&enc, &head_config, &d.train, &d.vocab, &train_cfg).unwrap();

            let mut results = Vec::new();
            for ex in d.test.positives() {
                let universe: Vec<(String, String)> = d
                    .test
                    .records
                    .iter()
                    .filter(|r| r.bug.bug_id == ex.bug.bug_id)
                    .map(|r| (r.file_path.clone(), r.file_content.clone()))
                    .collect();
                let relevant = BTreeSet::from([ex.file_path.clone()]);
                let pool = candidate_pool(&universe, &relevant, 4, 5).unwrap();
                let ranked = rank_files(&enc, &head, &ex.bug, &pool, &d.vocab).unwrap();
                results.push(ranked.with_relevant(relevant).unwrap());
            }
            let report = metric_report(&results).unwrap();
            assert_eq!(report.overall.n_bugs, results.len());
            assert!(report.overall.mrr > 0.0 && report.overall.mrr <= 1.0);
            let baseline = random_baseline_mrr(&results).unwrap();
            assert!(baseline > 0.0 && baseline < 1.0, "{kind:?} {objective:?}");
        }
    }
}

#[test]
fn checkpoints_round_trip_through_files() {
    let d = data();
    let (enc, _) =
        pretrain(&pretrain_config(Objective::Mlm), &encoder_config(AttentionKind::Full, &d.vocab), &d.train, &d.vocab)
            .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.ckpt");
    save_checkpoint(&enc, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.content_hash(), enc.content_hash());

    let head_config = HeadConfig::default();
    let (head, _) = train_head(&enc, &head_config, &d.train, &d.vocab, &HeadTrainConfig {
        epochs: 1,
        ..HeadTrainConfig::default()
    })
    .unwrap();
    let head_path = dir.path().join("head.ckpt");
    head.save(&head_path).unwrap();
    assert_eq!(HeadState::load(&head_path).unwrap().content_hash(), head.content_hash());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load_checkpoint(&path).is_err());
    assert!(HeadState::load(&path).is_err(), "an encoder file is not a head");
}

#[test]
fn extended_encoder_accepts_longer_inputs() {
    let d = data();
    let cfg = encoder_config(AttentionKind::Full, &d.vocab);
    let (enc, _) = pretrain(&pretrain_config(Objective::Mlm), &cfg, &d.train, &d.vocab).unwrap();
    let long = extend_positions(&enc, 256).unwrap();
    let ex = &d.train.records[0];
    let short_seq = encode_pair(&ex.bug.text(), &ex.file_content, &d.vocab, 64).unwrap();
    let long_seq = encode_pair(&ex.bug.text(), &ex.file_content, &d.vocab, 256).unwrap();
    assert!(long_seq.non_pad_len() >= short_seq.non_pad_len());
    assert!(forward(&enc, &[long_seq.clone()]).is_err());
    let out = forward(&long, &[long_seq]).unwrap();
    assert_eq!(out.hidden.dim(), (1, 256, cfg.hidden_dim));
}
