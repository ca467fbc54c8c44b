//! Crash safety: state rebuilt from the logs matches the state before the
//! process died.

use std::io::Write;
use std::time::{Duration, Instant};

use symscreen_core::corpus::{synthesize, SynthSpec};
use symscreen_core::Span;
use symscreen_service::{
    install_corpus, AdjudicationRequest, RunState, Service, ServiceConfig, Verdict, ADJUDICATIONS_LOG, RUNS_LOG,
};

fn wait_done(s: &Service, run_id: &str) {
    let deadline = Instant::now() + Duration::from_secs(30);
    while s.run(run_id).unwrap().state != RunState::Done {
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(10));
    }
}

fn populated(dir: &std::path::Path) -> (Service, String) {
    let corpus = synthesize(&SynthSpec::uniform(9, 4, 4, 0.3, 0.1)).unwrap();
    install_corpus(dir, "demo", &corpus).unwrap();
    let s = Service::open(ServiceConfig::new(dir)).unwrap();
    let run = s.start_run("mock", "demo").unwrap().run_id;
    wait_done(&s, &run);
    let dets = s.detections(&run).unwrap();
    let verdicts = [Verdict::Accept, Verdict::Reject, Verdict::Modify];
    for (i, d) in dets.iter().enumerate().step_by(7).take(30) {
        let text = &corpus.note(&d.note_id).unwrap().text;
        let verdict = verdicts[i % 3];
        let req = AdjudicationRequest {
            run_id: run.clone(),
            note_id: d.note_id.clone(),
            category_id: d.category_id.clone(),
            verdict,
            corrected_evidence: (verdict == Verdict::Modify).then(|| vec![Span::new(0, text.find(' ').unwrap())]),
            reviewer: ["a", "b"][i % 2].into(),
        };
        s.adjudicate(req, Some(format!("k{i}"))).unwrap();
    }
    (s, run)
}

#[test]
fn replay_reproduces_projection_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (service, run) = populated(dir.path());
    let before = service.gold_jsonl(&run, None).unwrap();
    let conflicts = service.conflicts(&run).unwrap();
    assert!(!before.is_empty());
    // no shutdown: the process just disappears
    std::mem::forget(service);

    let reopened = Service::open(ServiceConfig::new(dir.path())).unwrap();
    assert_eq!(reopened.gold_jsonl(&run, None).unwrap(), before);
    assert_eq!(reopened.conflicts(&run).unwrap(), conflicts);
    assert_eq!(reopened.run(&run).unwrap().state, RunState::Done);
}

#[test]
fn torn_trailing_writes_are_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let (service, run) = populated(dir.path());
    let before = service.gold_jsonl(&run, None).unwrap();
    drop(service);
    for log in [ADJUDICATIONS_LOG, RUNS_LOG] {
        let mut f = std::fs::OpenOptions::new().append(true).open(dir.path().join(log)).unwrap();
        f.write_all(br#"{"adjudication_id":"A9999","run_id":"#).unwrap();
    }
    let reopened = Service::open(ServiceConfig::new(dir.path())).unwrap();
    assert_eq!(reopened.gold_jsonl(&run, None).unwrap(), before);
    // the log accepts new records after the cut
    let d = reopened.detections(&run).unwrap()[0].clone();
    let req = AdjudicationRequest {
        run_id: run.clone(),
        note_id: d.note_id,
        category_id: d.category_id,
        verdict: Verdict::Accept,
        corrected_evidence: None,
        reviewer: "c".into(),
    };
    reopened.adjudicate(req, None).unwrap();
    let after = reopened.gold_jsonl(&run, None).unwrap();
    drop(reopened);
    let again = Service::open(ServiceConfig::new(dir.path())).unwrap();
    assert_eq!(again.gold_jsonl(&run, None).unwrap(), after);
}

#[test]
fn compaction_preserves_projection() {
    let dir = tempfile::tempdir().unwrap();
    let (service, run) = populated(dir.path());
    let d = service.detections(&run).unwrap()[0].clone();
    for verdict in [Verdict::Accept, Verdict::Reject, Verdict::Accept] {
        let req = AdjudicationRequest {
            run_id: run.clone(),
            note_id: d.note_id.clone(),
            category_id: d.category_id.clone(),
            verdict,
            corrected_evidence: None,
            reviewer: "z".into(),
        };
        service.adjudicate(req, None).unwrap();
    }
    let before = service.gold_jsonl(&run, None).unwrap();
    drop(service);
    let report = symscreen_service::compact(dir.path()).unwrap();
    assert!(report.adjudications_after < report.adjudications_before);
    let reopened = Service::open(ServiceConfig::new(dir.path())).unwrap();
    assert_eq!(reopened.gold_jsonl(&run, None).unwrap(), before);
}

#[test]
fn interrupted_runs_fail_and_pending_runs_resume() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthesize(&SynthSpec::uniform(2, 2, 2, 0.3, 0.1)).unwrap();
    install_corpus(dir.path(), "demo", &corpus).unwrap();
    {
        let mut store = symscreen_service::Store::open(dir.path()).unwrap();
        let a = store.create_run("mock", "demo", chrono::Utc::now()).unwrap();
        store.start_run(&a.run_id, 10).unwrap();
        store.create_run("mock", "demo", chrono::Utc::now()).unwrap();
    }
    let s = Service::open(ServiceConfig::new(dir.path())).unwrap();
    assert_eq!(s.run("R000001").unwrap().state, RunState::Failed);
    wait_done(&s, "R000002");
}
