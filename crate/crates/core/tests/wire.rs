//! Wire backends against an in-process fake inference server.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use chrono::NaiveDate;
use serde_json::{json, Value};
use symscreen_core::corpus::{Gender, Patient};
use symscreen_core::extract::{run_extraction, Extractor, HttpTransport};
use symscreen_core::taxonomy::taxonomy;
use symscreen_core::{BackendConfig, BackendKind, Corpus, DetectionStatus, Note};

type Reply = dyn Fn(&Value, usize) -> (u16, Value) + Send + Sync;
/// (path, body, authorization header) per request.
type Seen = Arc<Mutex<Vec<(String, Value, Option<String>)>>>;

#[derive(Clone)]
struct Fake {
    reply: Arc<Reply>,
    seen: Seen,
}

async fn handle(
    path: &'static str,
    State(fake): State<Fake>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string);
    let attempt = {
        let mut seen = fake.seen.lock().unwrap();
        seen.push((path.to_string(), body.clone(), auth));
        seen.len()
    };
    let (code, v) = (fake.reply)(&body, attempt);
    (StatusCode::from_u16(code).unwrap(), Json(v))
}

struct Server {
    addr: SocketAddr,
    seen: Seen,
    _rt: tokio::runtime::Runtime,
}

impl Server {
    fn start(reply: impl Fn(&Value, usize) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let fake = Fake { reply: Arc::new(reply), seen: Arc::default() };
        let seen = fake.seen.clone();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let app = Router::new()
            .route("/v1/chat/completions", post(|s, h, b| handle("chat", s, h, b)))
            .route("/v1/completions", post(|s, h, b| handle("completion", s, h, b)))
            .with_state(fake);
        rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
        Server { addr, seen, _rt: rt }
    }

    fn endpoint(&self) -> String {
        format!("http://{}/", self.addr)
    }

    fn requests(&self) -> Vec<(String, Value, Option<String>)> {
        self.seen.lock().unwrap().clone()
    }
}

fn chat_reply(text: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
}

fn corpus(texts: &[&str]) -> Corpus {
    let patient = Patient {
        patient_id: "P1".into(),
        birth_date: NaiveDate::from_ymd_opt(2008, 1, 1).unwrap(),
        gender: Gender::F,
        is_case: true,
        diagnosis_date: Some(NaiveDate::from_ymd_opt(2023, 1, 1).unwrap()),
    };
    let notes = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Note {
            note_id: format!("N{i}"),
            patient_id: "P1".into(),
            date: NaiveDate::from_ymd_opt(2022, 6, 1).unwrap(),
            department: "Adolescent Medicine".into(),
            text: t.to_string(),
        })
        .collect();
    Corpus::new(vec![patient], notes, Vec::new()).unwrap()
}

fn config(kind: BackendKind, server: &Server) -> BackendConfig {
    let mut c = BackendConfig::new("fake", kind);
    c.endpoint = Some(server.endpoint());
    c.model_name = "tiny".into();
    c.retry_base_ms = 1;
    c.max_retries = 3;
    c.parallelism = 1;
    c
}

fn extractor(c: BackendConfig, corpus: &Corpus, key: Option<&str>) -> Extractor {
    let t = HttpTransport::new(Duration::from_secs(5), key.map(str::to_string)).unwrap();
    Extractor::with_transport(c, corpus, Arc::new(t)).unwrap()
}

fn school() -> &'static symscreen_core::SymptomCategory {
    taxonomy().get("not_going_to_school").unwrap()
}

#[test]
fn no_answer_is_a_clean_negative() {
    let server = Server::start(|_, _| (200, chat_reply("No.")));
    let c = corpus(&["Seen for a sprained ankle."]);
    let det = extractor(config(BackendKind::Chat, &server), &c, None).detect(&c.notes()[0], school());
    assert!(!det.present);
    assert_eq!(det.status, DetectionStatus::Ok);
    assert!(det.evidence.is_empty());
    assert_eq!(det.raw_response.as_deref(), Some("No."));
}

#[test]
fn yes_answer_resolves_evidence_offsets() {
    let server = Server::start(|_, _| (200, chat_reply("Yes: 'She has been home-schooled since March.'")));
    let text = "Seen for asthma. She has been home-schooled since March. Lungs clear.";
    let c = corpus(&[text]);
    let det = extractor(config(BackendKind::Chat, &server), &c, None).detect(&c.notes()[0], school());
    assert!(det.present);
    assert_eq!(det.status, DetectionStatus::Ok);
    let span = det.evidence[0].span().unwrap();
    assert_eq!(span.slice(text), Some("She has been home-schooled since March."));
}

#[test]
fn request_body_follows_the_chat_protocol() {
    let server = Server::start(|_, _| (200, chat_reply("No.")));
    let c = corpus(&["Seen for a rash."]);
    extractor(config(BackendKind::Chat, &server), &c, Some("s3cret")).detect(&c.notes()[0], school());
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    let (path, body, auth) = &reqs[0];
    assert_eq!(path, "chat");
    assert_eq!(auth.as_deref(), Some("Bearer s3cret"));
    assert_eq!(body["model"], "tiny");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 128);
    let msgs = body["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 8);
    assert_eq!(msgs[0]["role"], "system");
    assert_eq!(msgs[0]["content"], "You are a medical AI assistant.");
    assert_eq!(
        msgs[7]["content"],
        "Here is an EHR note: 'Seen for a rash.' Does it contain evidence that the patient is not going to school?"
    );
}

#[test]
fn transient_failures_are_retried() {
    let server = Server::start(|_, attempt| if attempt <= 2 { (503, json!({})) } else { (200, chat_reply("No.")) });
    let c = corpus(&["Seen for a cold."]);
    let det = extractor(config(BackendKind::Chat, &server), &c, None).detect(&c.notes()[0], school());
    assert_eq!(det.status, DetectionStatus::Ok);
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn exhausted_retries_become_backend_errors() {
    let server = Server::start(|_, _| (500, json!({"error": "down"})));
    let c = corpus(&["Seen for a cold."]);
    let det = extractor(config(BackendKind::Chat, &server), &c, None).detect(&c.notes()[0], school());
    assert_eq!(det.status, DetectionStatus::BackendError);
    assert!(!det.present);
    assert_eq!(server.requests().len(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let server = Server::start(|_, _| (400, json!({"error": "bad request"})));
    let c = corpus(&["Seen for a cold."]);
    let det = extractor(config(BackendKind::Chat, &server), &c, None).detect(&c.notes()[0], school());
    assert_eq!(det.status, DetectionStatus::BackendError);
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn malformed_payload_is_a_backend_error() {
    let server = Server::start(|_, _| (200, json!({"unexpected": true})));
    let c = corpus(&["Seen for a cold."]);
    let det = extractor(config(BackendKind::Chat, &server), &c, None).detect(&c.notes()[0], school());
    assert_eq!(det.status, DetectionStatus::BackendError);
}

#[test]
fn unrecognized_answers_are_unparseable() {
    let server = Server::start(|_, _| (200, chat_reply("Perhaps, hard to say.")));
    let c = corpus(&["Seen for a cold."]);
    let det = extractor(config(BackendKind::Chat, &server), &c, None).detect(&c.notes()[0], school());
    assert_eq!(det.status, DetectionStatus::Unparseable);
    assert!(!det.present);
}

#[test]
fn long_notes_are_truncated_at_whitespace() {
    let server = Server::start(|_, _| (200, chat_reply("No.")));
    let text = "wordy ".repeat(2000);
    let c = corpus(&[&text]);
    let det = extractor(config(BackendKind::Chat, &server), &c, None).detect(&c.notes()[0], school());
    assert_eq!(det.status, DetectionStatus::TruncatedOk);
    let body = &server.requests()[0].1;
    let last = body["messages"][7]["content"].as_str().unwrap();
    let note = last
        .strip_prefix("Here is an EHR note: '")
        .and_then(|s| s.strip_suffix("' Does it contain evidence that the patient is not going to school?"))
        .unwrap();
    assert!(note.chars().count() <= 6000);
    assert!(note.ends_with("wordy"));
    assert!(text.starts_with(note));
}

#[test]
fn entailment_backend_uses_completions() {
    let server = Server::start(|body, _| {
        let prompt = body["prompt"].as_str().unwrap_or_default();
        let answer = if prompt.contains("insulin") { "Yes" } else { "No" };
        (200, json!({"choices": [{"text": answer}]}))
    });
    let c = corpus(&["She skips her insulin doses.", "Seen for a cold."]);
    let ex = extractor(config(BackendKind::Entailment, &server), &c, None);
    let cat = taxonomy().get("no_motivation").unwrap();
    let dets = run_extraction(&ex, &c, std::slice::from_ref(cat), None);
    assert_eq!(dets.iter().map(|d| d.present).collect::<Vec<_>>(), [true, false]);
    assert!(dets.iter().all(|d| d.status == DetectionStatus::Ok && d.evidence.is_empty()));
    let reqs = server.requests();
    assert!(reqs.iter().all(|(path, body, _)| path == "completion" && body["max_tokens"] == 128));
    let prompts: Vec<&str> = reqs.iter().map(|(_, b, _)| b["prompt"].as_str().unwrap()).collect();
    assert!(prompts.contains(&"Premise: This is an EHR note: She skips her insulin doses. Hypothesis: The patient is not taking proper care of themselves and their health. Does the premise entail the hypothesis?"));
}

#[test]
fn unreachable_endpoint_fails_every_pair_without_panicking() {
    let mut c = BackendConfig::new("gone", BackendKind::Chat);
    c.endpoint = Some("http://127.0.0.1:9/".into());
    c.max_retries = 1;
    c.retry_base_ms = 1;
    let corpus = corpus(&["a", "b"]);
    let ex = extractor(c, &corpus, None);
    let dets = run_extraction(&ex, &corpus, &taxonomy().categories()[..2], None);
    assert_eq!(dets.len(), 4);
    assert!(dets.iter().all(|d| d.status == DetectionStatus::BackendError));
}
