mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{spawn_stub, Step};
use ensval_core::backends::{
    render_prompt, Backend, HttpBackend, ReplayBackend, ResponseCache, RetryPolicy, FixtureEntry,
};
use ensval_core::consensus::{Ensemble, Validator};
use ensval_core::domain::{
    AnswerLabel, AnswerOption, ConsensusPolicy, FailureKind, HttpEndpointConfig, Outcome,
    Question, RejectReason, Verdict,
};

fn question() -> Question {
    Question {
        id: "q-http".into(),
        stem: "Which option?".into(),
        statements: vec![],
        question_line: None,
        options: AnswerLabel::first_n(5)
            .into_iter()
            .map(|label| AnswerOption { label, text: format!("choice {label}") })
            .collect(),
        claimed_answer: AnswerLabel::new('e'),
        ground_truth_correct: Some(true),
    }
}

/// Each test uses its own variable so parallel tests do not interfere.
fn endpoint(base_url: &str, token_env: &str) -> HttpEndpointConfig {
    std::env::set_var(token_env, "secret-token");
    HttpEndpointConfig {
        base_url: base_url.into(),
        model: "stub-model".into(),
        auth_env: token_env.into(),
        temperature: None,
        max_in_flight: 4,
        connect_timeout_secs: 2.0,
        timeout_secs: 5.0,
        retries: 3,
    }
}

fn fast_retry(retries: u32) -> RetryPolicy {
    RetryPolicy {
        retries,
        base_delay: Duration::from_millis(20),
        ..RetryPolicy::default()
    }
}

#[tokio::test]
async fn passes_content_through_and_sends_contracted_body() {
    let (url, stub) = spawn_stub(vec![Step::ok("(e)")]).await;
    let backend = HttpBackend::new("v", endpoint(&url, "ENSVAL_T_PASS")).unwrap();
    let q = question();
    let rendering = render_prompt(&q);
    assert_eq!(backend.query(&q, &rendering).await.unwrap(), "(e)");

    let seen = stub.requests.lock().unwrap()[0].clone();
    assert_eq!(seen.authorization.as_deref(), Some("Bearer secret-token"));
    assert_eq!(seen.body["model"], "stub-model");
    assert!(seen.body.get("temperature").is_none());
    let messages = seen.body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[0]["role"], "system");
    assert_eq!(messages[1]["role"], "user");
    assert_eq!(messages[1]["content"], rendering.user_text.as_str());
}

#[tokio::test]
async fn temperature_override_is_sent() {
    let (url, stub) = spawn_stub(vec![Step::ok("a")]).await;
    let mut cfg = endpoint(&url, "ENSVAL_T_TEMP");
    cfg.temperature = Some(0.0);
    let backend = HttpBackend::new("v", cfg).unwrap();
    let q = question();
    backend.query(&q, &render_prompt(&q)).await.unwrap();
    assert_eq!(stub.requests.lock().unwrap()[0].body["temperature"], 0.0);
}

#[tokio::test]
async fn retries_429_then_succeeds() {
    let (url, stub) = spawn_stub(vec![Step::status(429), Step::status(429), Step::ok("b")]).await;
    let backend = HttpBackend::new("v", endpoint(&url, "ENSVAL_T_429"))
        .unwrap()
        .with_retry(fast_retry(3));
    let q = question();
    let started = Instant::now();
    assert_eq!(backend.query(&q, &render_prompt(&q)).await.unwrap(), "b");
    assert_eq!(stub.hits(), 3);
    // two backoffs: 20ms and 40ms, each stretched by at most 20%
    let waited = started.elapsed();
    assert!(waited >= Duration::from_millis(60), "{waited:?}");
}

#[tokio::test]
async fn server_errors_exhaust_retries() {
    let (url, stub) = spawn_stub(vec![Step::status(503)]).await;
    let backend = HttpBackend::new("v", endpoint(&url, "ENSVAL_T_503"))
        .unwrap()
        .with_retry(fast_retry(2));
    let q = question();
    let err = backend.query(&q, &render_prompt(&q)).await.unwrap_err();
    assert_eq!(err.kind, FailureKind::HttpStatus);
    assert!(err.detail.contains("after 2 retries"), "{}", err.detail);
    assert_eq!(stub.hits(), 3);
}

#[tokio::test]
async fn unauthorized_fails_without_retry() {
    for status in [401, 403] {
        let (url, stub) = spawn_stub(vec![Step::status(status), Step::ok("a")]).await;
        let backend = HttpBackend::new("v", endpoint(&url, "ENSVAL_T_401"))
            .unwrap()
            .with_retry(fast_retry(3));
        let q = question();
        let err = backend.query(&q, &render_prompt(&q)).await.unwrap_err();
        assert_eq!(err.kind, FailureKind::Auth);
        assert_eq!(stub.hits(), 1, "status {status}");
    }
}

#[tokio::test]
async fn other_client_errors_are_not_retried() {
    let (url, stub) = spawn_stub(vec![Step::status(400), Step::ok("a")]).await;
    let backend = HttpBackend::new("v", endpoint(&url, "ENSVAL_T_400"))
        .unwrap()
        .with_retry(fast_retry(3));
    let q = question();
    let err = backend.query(&q, &render_prompt(&q)).await.unwrap_err();
    assert_eq!(err.kind, FailureKind::HttpStatus);
    assert_eq!(stub.hits(), 1);
}

#[tokio::test]
async fn malformed_body_is_protocol_error() {
    for body in ["not json", "{\"choices\": []}", "{\"choices\":[{\"message\":{}}]}"] {
        let (url, _stub) = spawn_stub(vec![Step::raw(200, body)]).await;
        let backend = HttpBackend::new("v", endpoint(&url, "ENSVAL_T_PROTO")).unwrap();
        let q = question();
        let err = backend.query(&q, &render_prompt(&q)).await.unwrap_err();
        assert_eq!(err.kind, FailureKind::Protocol, "{body}");
    }
}

#[tokio::test]
async fn missing_token_is_auth_error_without_request() {
    let (url, stub) = spawn_stub(vec![Step::ok("a")]).await;
    let mut cfg = endpoint(&url, "ENSVAL_T_UNUSED");
    cfg.auth_env = "ENSVAL_T_DEFINITELY_UNSET".into();
    let backend = HttpBackend::new("v", cfg).unwrap();
    let q = question();
    let err = backend.query(&q, &render_prompt(&q)).await.unwrap_err();
    assert_eq!(err.kind, FailureKind::Auth);
    assert_eq!(stub.hits(), 0);
}

#[tokio::test]
async fn timeout_becomes_failed_vote_and_rejection() {
    let (url, stub) = spawn_stub(vec![Step::ok("e").delayed(Duration::from_secs(3))]).await;
    let mut cfg = endpoint(&url, "ENSVAL_T_TIMEOUT");
    cfg.timeout_secs = 0.2;
    let http = HttpBackend::new("slow", cfg).unwrap().with_retry(fast_retry(1));
    let q = question();
    let replay = ReplayBackend::from_entries(
        "fast",
        [FixtureEntry {
            validator: "fast".into(),
            question_id: q.id.clone(),
            raw_response: "e".into(),
        }],
    )
    .unwrap();
    let ensemble = Ensemble::new(
        vec![Validator::new("slow", Arc::new(http)), Validator::new("fast", Arc::new(replay))],
        ConsensusPolicy::unanimous(),
    )
    .unwrap();
    let record = ensemble.run_validation(&q).await.unwrap();
    assert_eq!(record.outcome, Outcome::Rejected(RejectReason::VoteFailure));
    match &record.vote_of("slow").unwrap().verdict {
        Verdict::BackendError(f) => assert_eq!(f.kind, FailureKind::Timeout),
        other => panic!("expected timeout, got {other:?}"),
    }
    assert_eq!(record.vote_of("fast").unwrap().verdict, Verdict::Label(AnswerLabel::new('e').unwrap()));
    assert_eq!(stub.hits(), 2);
}

#[tokio::test]
async fn cache_avoids_second_request() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::open(dir.path().join("cache")).unwrap();
    let (url, stub) = spawn_stub(vec![Step::ok("c")]).await;
    let backend = HttpBackend::new("v", endpoint(&url, "ENSVAL_T_CACHE"))
        .unwrap()
        .with_cache(cache.clone());
    let q = question();
    let r = render_prompt(&q);
    assert_eq!(backend.query(&q, &r).await.unwrap(), "c");
    assert_eq!(backend.query(&q, &r).await.unwrap(), "c");
    assert_eq!(stub.hits(), 1);
    assert_eq!(cache.get("v", "stub-model", &r.content_hash()).as_deref(), Some("c"));
}

#[tokio::test]
async fn in_flight_requests_are_bounded() {
    let (url, stub) = spawn_stub(vec![Step::ok("a").delayed(Duration::from_millis(100))]).await;
    let mut cfg = endpoint(&url, "ENSVAL_T_BOUND");
    cfg.max_in_flight = 2;
    let backend = Arc::new(HttpBackend::new("v", cfg).unwrap());
    let q = question();
    let r = render_prompt(&q);
    let tasks: Vec<_> = (0..6)
        .map(|_| {
            let (b, q, r) = (backend.clone(), q.clone(), r.clone());
            tokio::spawn(async move { b.query(&q, &r).await })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap().unwrap(), "a");
    }
    assert_eq!(stub.hits(), 6);
    assert!(stub.max_active.load(std::sync::atomic::Ordering::SeqCst) <= 2);
}
