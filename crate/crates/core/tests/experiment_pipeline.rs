mod common;

use hashdistill::experiment::{
    collect_reports, report_tables, run_distill, run_encode_and_evaluate, run_finetune, run_pretrain_teacher,
    AuditLog, Checkpoint, MetricsReport, RunOptions, RunPaths, StageTag,
};
use hashdistill::retrieval::CodeMatrix;
use hashdistill::Error;

fn losses(r: &MetricsReport) -> Vec<f64> {
    r.epochs.iter().map(|e| e.loss).collect()
}

#[test]
fn stages_chain_through_files_and_only_distill_loads_the_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::tiny_config(dir.path());
    let opts = RunOptions::default();
    let paths = RunPaths::new(dir.path());

    run_pretrain_teacher(&config, &opts).unwrap();
    let distill = run_distill(&config, &opts).unwrap();
    assert_eq!(distill.teacher_checksum_before, distill.teacher_checksum_after);
    let ck = Checkpoint::load(&paths.distill_checkpoint()).unwrap();
    assert_eq!(ck.header.stage, StageTag::Distill);
    assert_eq!(ck.header.epochs_completed, 2);

    let finetune = run_finetune(&config, &opts).unwrap();
    assert_eq!(finetune.input.as_ref().unwrap().config_hash, config.config_hash());
    let eval = run_encode_and_evaluate(&config, &opts).unwrap();
    let map = eval.map.unwrap();
    assert!((0.0..=1.0).contains(&map.map));
    assert_eq!(map.top_n, 10);

    let q = CodeMatrix::load(&paths.query_codes()).unwrap();
    let db = CodeMatrix::load(&paths.database_codes()).unwrap();
    assert_eq!(q.k_bits(), 8);
    assert_eq!((q.len(), db.len()), (map.queries, map.database));
    let listing = std::fs::read_to_string(paths.top_k()).unwrap();
    assert_eq!(listing.lines().count(), 1 + 3 * q.len());

    let entries = AuditLog::new(dir.path().join("audit.log")).entries().unwrap();
    let teacher_loads: Vec<_> = entries.iter().filter(|e| e.role == "teacher").collect();
    assert_eq!(teacher_loads.len(), 1);
    assert_eq!(teacher_loads[0].stage, "distill");
    let first_after_distill = entries.iter().position(|e| e.stage != "distill").unwrap();
    assert!(entries[first_after_distill..].iter().all(|e| e.role != "teacher"));
    assert!(entries.iter().any(|e| e.stage == "finetune" && e.role == "student"));

    let reports = collect_reports(dir.path()).unwrap();
    assert_eq!(reports.len(), 5);
    let tables = report_tables(&reports);
    assert_eq!(tables.len(), 1);
    let csv = tables[0].to_csv();
    assert!(csv.contains(&format!("{}", map.map)), "{csv} vs {}", map.map);
}

#[test]
fn reruns_reproduce_every_loss_history() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut histories = Vec::new();
    for dir in [a.path(), b.path()] {
        let config = common::tiny_config(dir);
        let opts = RunOptions::default();
        let p = run_pretrain_teacher(&config, &opts).unwrap();
        let d = run_distill(&config, &opts).unwrap();
        let f = run_finetune(&config, &opts).unwrap();
        let e = run_encode_and_evaluate(&config, &opts).unwrap();
        histories.push((losses(&p), losses(&d), losses(&f), e.map.unwrap().map));
    }
    assert_eq!(histories[0], histories[1]);
    let qa = std::fs::read(RunPaths::new(a.path()).query_codes()).unwrap();
    let qb = std::fs::read(RunPaths::new(b.path()).query_codes()).unwrap();
    assert_eq!(qa, qb);
}

#[test]
fn resume_needs_a_matching_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::tiny_config(dir.path());
    run_pretrain_teacher(&config, &RunOptions::default()).unwrap();
    let fresh = run_distill(&config, &RunOptions::default()).unwrap();

    let resume = RunOptions { resume: true, ..RunOptions::default() };
    // nothing left to do: the stored history is returned unchanged
    let again = run_distill(&config, &resume).unwrap();
    assert_eq!(losses(&again), losses(&fresh));

    let mut changed = config.clone();
    changed.distill.optimizer.learning_rate *= 2.0;
    match run_distill(&changed, &resume) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("config hash mismatch"), "{msg}"),
        other => panic!("expected a refusal, got {other:?}"),
    }
}

#[test]
fn finetune_refuses_a_checkpoint_of_another_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::tiny_config(dir.path());
    run_pretrain_teacher(&config, &RunOptions::default()).unwrap();
    let paths = RunPaths::new(dir.path());
    // a teacher checkpoint planted where the distilled student belongs
    std::fs::copy(config.teacher_weights(), paths.distill_checkpoint()).unwrap();
    assert!(matches!(run_finetune(&config, &RunOptions::default()), Err(Error::Checkpoint(_))));
    assert!(matches!(
        hashdistill::experiment::run_evaluate(&config, &RunOptions::default()),
        Err(Error::Missing(_))
    ));
}
