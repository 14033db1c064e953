use bftfl::runner::{run, Outcome};
use bftfl::scenario::Scenario;

#[test]
fn honest_three_rounds() {
    let s = Scenario::from_json(
        r#"{"seed": 1, "population": {"clients": 6, "f_s": 1, "f_r": 1},
            "task": {"k": 4, "min_clients": 6, "m": 4, "t_fin": 3, "dim": 5}}"#,
    )
    .unwrap();
    let out = run(&s);
    assert_eq!(out.outcome, Outcome::Final);
    assert_eq!(out.nr_commits, 3);
    assert_eq!(out.final_commits, 1);
    assert_eq!(out.losses.len(), 4);
    assert!(out.final_loss().unwrap() < out.losses[0].1);
    let reward = out.reward.as_ref().unwrap();
    assert_eq!(reward.total(), out.blocks.iter().flat_map(|b| &b.txs).map(|tx| match &tx.body {
        bftfl::ledger::TxBody::NewRound { cand, .. } => cand.len() as u64,
        _ => 0,
    }).sum::<u64>());
}

#[test]
fn same_seed_same_transcript_other_seed_differs() {
    let text = r#"{"seed": 3, "population": {"clients": 6, "f_s": 1, "f_r": 1},
        "task": {"k": 4, "min_clients": 6, "m": 3, "t_fin": 2, "dim": 3}}"#;
    let mut s = Scenario::from_json(text).unwrap();
    let a = run(&s);
    let b = run(&s);
    assert_eq!(a.transcript(), b.transcript());
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    s.seed = 4;
    assert_ne!(a.transcript(), run(&s).transcript());
}

#[test]
fn honest_run_audits_clean_and_tamper_fails() {
    let s = Scenario::from_json(
        r#"{"seed": 2, "population": {"clients": 8, "f_s": 1, "f_r": 1},
            "task": {"k": 5, "min_clients": 8, "m": 4, "t_fin": 3, "dim": 4}}"#,
    )
    .unwrap();
    let out = run(&s);
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let report = bftfl::audit::audit_dir(dir.path()).unwrap();
    assert_eq!(report.rounds, 3);
    assert!(report.models_checked >= 3);
    let t = std::fs::read_to_string(dir.path().join("transcript.log")).unwrap();
    let line = t.lines().find(|l| l.contains("ledger commit") && l.contains(" NR ")).unwrap();
    let flipped = format!("{}{}", &line[..line.len() - 1], if line.ends_with('0') { '1' } else { '0' });
    std::fs::write(dir.path().join("transcript.log"), t.replace(line, &flipped)).unwrap();
    let err = bftfl::audit::audit_dir(dir.path()).unwrap_err();
    assert_eq!(err.invariant, "transcript ledger lines");
}
