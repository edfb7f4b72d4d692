mod common;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use common::{fixtures_dir, replay_config, replay_run};
use ensval_core::consensus::{rescore, Ensemble};
use ensval_core::domain::{ConfusionMatrix, ConsensusPolicy, FailureKind, Outcome, Verdict};
use ensval_core::error::StoreError;
use ensval_core::stats::{build_standard_report, confusion, ReportOptions};
use ensval_core::store::{
    load_questions, load_run, load_run_recovering, read_report, records_without_timestamps,
    write_report, RunStore, RECORDS_FILE,
};

#[tokio::test]
async fn replay_fixture_reproduces_outcome_counts() {
    let dir = tempfile::tempdir().unwrap();
    let records = replay_run(dir.path()).await;
    assert_eq!(records.len(), 78);
    assert_eq!(confusion(&records).unwrap(), ConfusionMatrix::new(43, 2, 14, 19));

    let cab = records.iter().find(|r| r.question.id == "q-cab-01").unwrap();
    let labels: Vec<char> = cab.votes.iter().map(|v| v.verdict.label().unwrap().as_char()).collect();
    assert_eq!(labels, ['g', 'e', 'b']);
    assert!(!cab.outcome.is_approved());

    let ulb = records.iter().find(|r| r.question.id == "q-ulb-01").unwrap();
    assert_eq!(ulb.outcome, Outcome::Approved('c'.to_string().parse().unwrap()));

    // records come back, and are stored, in dataset order
    let (_, stored) = load_run(dir.path()).unwrap();
    let ids: Vec<&str> = stored.iter().map(|r| r.question.id.as_str()).collect();
    let expected: Vec<String> = load_questions(&fixtures_dir().join("questions.jsonl"))
        .unwrap()
        .into_iter()
        .map(|q| q.id)
        .collect();
    assert_eq!(ids, expected.iter().map(String::as_str).collect::<Vec<_>>());
}

#[tokio::test]
async fn fixture_contains_format_variants_and_unparseable_votes() {
    let dir = tempfile::tempdir().unwrap();
    let records = replay_run(dir.path()).await;
    let raws: HashSet<&str> = records
        .iter()
        .flat_map(|r| &r.votes)
        .map(|v| v.raw_response.as_str())
        .collect();
    let shapes: [fn(char) -> String; 4] = [
        |c| c.to_string(),
        |c| format!("({c})"),
        |c| c.to_ascii_uppercase().to_string(),
        |c| format!("Option {}", c.to_ascii_uppercase()),
    ];
    for (i, shape) in shapes.iter().enumerate() {
        assert!(
            ('a'..='h').any(|c| raws.contains(shape(c).as_str())),
            "format variant {i} missing from the fixture"
        );
    }
    let unparseable = records
        .iter()
        .flat_map(|r| &r.votes)
        .filter(|v| v.verdict == Verdict::Unparseable)
        .count();
    assert_eq!(unparseable, 3);
}

#[tokio::test]
async fn stored_report_is_recomputable_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let records = replay_run(dir.path()).await;
    let names = replay_config().validator_names();
    let report = build_standard_report(&records, &names, ConsensusPolicy::unanimous(), &ReportOptions::default());
    write_report(dir.path(), &report).unwrap();

    let (config, reloaded) = load_run(dir.path()).unwrap();
    let again = build_standard_report(&reloaded, &config.validator_names(), config.policy, &ReportOptions::default());
    assert_eq!(again, read_report(dir.path()).unwrap());
    assert_eq!(
        serde_json::to_string(&again).unwrap(),
        serde_json::to_string(&report).unwrap()
    );
}

#[tokio::test]
async fn resume_finishes_an_interrupted_run_identically() {
    let full = tempfile::tempdir().unwrap();
    replay_run(full.path()).await;

    // keep the first 30 complete records plus half of the 31st
    let partial = tempfile::tempdir().unwrap();
    let config = replay_config();
    let text = fs::read_to_string(full.path().join(RECORDS_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    RunStore::create(partial.path(), &config).unwrap();
    let mut cut = lines[..30].join("\n");
    cut.push('\n');
    cut.push_str(&lines[30][..lines[30].len() / 2]);
    fs::write(partial.path().join(RECORDS_FILE), &cut).unwrap();

    let questions = load_questions(&fixtures_dir().join("questions.jsonl")).unwrap();
    let store = RunStore::open(partial.path()).unwrap();
    let ensemble = Ensemble::from_config(&config, Path::new(".")).unwrap();
    let records = ensemble.run_batch(&questions, Some(&store), true).await.unwrap();
    assert_eq!(records.len(), 78);
    assert_eq!(
        records_without_timestamps(partial.path()).unwrap(),
        records_without_timestamps(full.path()).unwrap()
    );
}

#[tokio::test]
async fn truncated_tail_names_offset_and_recovers() {
    let dir = tempfile::tempdir().unwrap();
    replay_run(dir.path()).await;
    let path = dir.path().join(RECORDS_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let keep: usize = text.lines().take(10).map(|l| l.len() + 1).sum();
    fs::write(&path, &text[..keep + 25]).unwrap();

    match load_run(dir.path()) {
        Err(StoreError::Truncated { offset, .. }) => assert_eq!(offset, keep as u64),
        other => panic!("expected truncation error, got {other:?}"),
    }
    let (_, recovered) = load_run_recovering(dir.path()).unwrap();
    assert_eq!(recovered.records.len(), 10);
    assert_eq!(recovered.truncated_at, Some(keep as u64));
}

#[tokio::test]
async fn duplicate_append_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let records = replay_run(dir.path()).await;
    let store = RunStore::open(dir.path()).unwrap();
    assert!(matches!(store.append_record(&records[0]), Err(StoreError::DuplicateId(_))));
    assert_eq!(load_run(dir.path()).unwrap().1.len(), 78);
}

#[tokio::test]
async fn missing_run_config_is_a_layout_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_run(dir.path()), Err(StoreError::Layout { .. })));
}

#[tokio::test]
async fn unknown_format_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    replay_run(dir.path()).await;
    let path = dir.path().join(RECORDS_FILE);
    let text = fs::read_to_string(&path).unwrap().replacen("\"format_version\":1", "\"format_version\":9", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(load_run(dir.path()), Err(StoreError::VersionMismatch { found: 9, .. })));
}

#[tokio::test]
async fn missing_fixture_entry_is_a_failed_vote() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixtures_dir().join("responses.jsonl")).unwrap();
    let trimmed: String = text
        .lines()
        .filter(|l| !(l.contains("\"gpt-4o\"") && l.contains("\"q-ulb-01\"")))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.path().join("responses.jsonl"), trimmed).unwrap();
    let mut config = replay_config();
    for v in &mut config.validators {
        if let ensval_core::EndpointConfig::Replay(r) = &mut v.endpoint {
            r.fixture = dir.path().join("responses.jsonl");
        }
    }
    let questions = load_questions(&fixtures_dir().join("questions.jsonl")).unwrap();
    let ensemble = Ensemble::from_config(&config, Path::new(".")).unwrap();
    let record = ensemble.run_validation(&questions[0]).await.unwrap();
    match &record.vote_of("gpt-4o").unwrap().verdict {
        Verdict::BackendError(f) => assert_eq!(f.kind, FailureKind::MissingFixture),
        other => panic!("{other:?}"),
    }
    assert!(!record.outcome.is_approved());
}

#[tokio::test]
async fn rescoring_under_majority_only_adds_approvals() {
    let dir = tempfile::tempdir().unwrap();
    let records = replay_run(dir.path()).await;
    let mut unanimous = 0;
    let mut majority = 0;
    for r in &records {
        let u = rescore(r, None, &ConsensusPolicy::unanimous()).unwrap();
        let m = rescore(r, None, &ConsensusPolicy::k_of_n(2)).unwrap();
        assert_eq!(u, r.outcome);
        if u.is_approved() {
            assert_eq!(u, m);
            unanimous += 1;
        }
        majority += usize::from(m.is_approved());
    }
    assert_eq!((unanimous, majority), (45, 61));
}

#[test]
fn dataset_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.jsonl");
    let good = fs::read_to_string(fixtures_dir().join("questions.jsonl")).unwrap();
    let first = good.lines().next().unwrap();

    let dup_label = first.replacen("{\"label\": \"b\"", "{\"label\": \"a\"", 1);
    fs::write(&path, format!("{first}\n{dup_label}\n").replacen("q-ulb-01", "other", 1)).unwrap();
    match load_questions(&path) {
        Err(StoreError::Invalid { line, field, .. }) => {
            assert_eq!(line, 2);
            assert_eq!(field, "options");
        }
        other => panic!("{other:?}"),
    }

    fs::write(&path, format!("{first}\n{{not json\n")).unwrap();
    assert!(matches!(load_questions(&path), Err(StoreError::Parse { line: 2, .. })));

    fs::write(&path, "").unwrap();
    assert!(load_questions(&path).unwrap().is_empty());
}
