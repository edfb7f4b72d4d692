#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;
use ensval_core::consensus::Ensemble;
use ensval_core::domain::ValidationRecord;
use ensval_core::store::{load_questions, RunConfig, RunStore};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn replay_config() -> RunConfig {
    let path = fixtures_dir().join("replay-config.json");
    let mut config = RunConfig::load(&path).expect("fixture config loads");
    config.resolve_paths(&fixtures_dir()).unwrap();
    config
}

/// Runs the 78-item replay fixture into `run_dir` and returns the records.
pub async fn replay_run(run_dir: &Path) -> Vec<ValidationRecord> {
    let config = replay_config();
    let questions = load_questions(&fixtures_dir().join("questions.jsonl")).unwrap();
    let ensemble = Ensemble::from_config(&config, Path::new(".")).unwrap();
    let store = RunStore::create(run_dir, &config).unwrap();
    ensemble.run_batch(&questions, Some(&store), false).await.unwrap()
}

/// One scripted reply of the stub server.
#[derive(Debug, Clone)]
pub struct Step {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Step {
    pub fn ok(content: &str) -> Self {
        Self {
            status: 200,
            body: completion(content),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: "{\"error\":\"scripted\"}".into(),
            delay: Duration::ZERO,
        }
    }

    pub fn raw(status: u16, body: &str) -> Self {
        Self {
            status,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

pub fn completion(content: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Replies with the script in order, repeating the last step once it runs
/// out.
pub struct Stub {
    script: Vec<Step>,
    pub hits: AtomicUsize,
    active: AtomicUsize,
    pub max_active: AtomicUsize,
    pub requests: Mutex<Vec<SeenRequest>>,
}

impl Stub {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

async fn handle(State(stub): State<Arc<Stub>>, headers: HeaderMap, body: String) -> (StatusCode, String) {
    let n = stub.hits.fetch_add(1, Ordering::SeqCst);
    let now = stub.active.fetch_add(1, Ordering::SeqCst) + 1;
    stub.max_active.fetch_max(now, Ordering::SeqCst);
    stub.requests.lock().unwrap().push(SeenRequest {
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
        body: serde_json::from_str(&body).unwrap_or(serde_json::Value::Null),
    });
    let step = stub.script.get(n).or(stub.script.last()).cloned().expect("non-empty script");
    tokio::time::sleep(step.delay).await;
    stub.active.fetch_sub(1, Ordering::SeqCst);
    (StatusCode::from_u16(step.status).unwrap(), step.body)
}

/// Starts a stub on an ephemeral port; returns its base URL.
pub async fn spawn_stub(script: Vec<Step>) -> (String, Arc<Stub>) {
    let stub = Arc::new(Stub {
        script,
        hits: AtomicUsize::new(0),
        active: AtomicUsize::new(0),
        max_active: AtomicUsize::new(0),
        requests: Mutex::new(Vec::new()),
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(handle))
        .with_state(stub.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    (format!("http://{addr}/v1"), stub)
}

/// Cohen's κ from an explicit contingency table in exact rational
/// arithmetic: (p_o, p_e, κ).
pub fn kappa_oracle(a: &[u8], b: &[u8]) -> (num_rational::Ratio<i64>, num_rational::Ratio<i64>, num_rational::Ratio<i64>) {
    use num_rational::Ratio;
    assert_eq!(a.len(), b.len());
    let cats: std::collections::BTreeSet<u8> = a.iter().chain(b).copied().collect();
    let cats: Vec<u8> = cats.into_iter().collect();
    let k = cats.len();
    let idx = |x: u8| cats.iter().position(|&c| c == x).unwrap();
    let mut table = vec![vec![0i64; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        table[idx(x)][idx(y)] += 1;
    }
    let n = a.len() as i64;
    let diag: i64 = (0..k).map(|i| table[i][i]).sum();
    let p_o = Ratio::new(diag, n);
    let mut p_e = Ratio::from_integer(0);
    for i in 0..k {
        let row: i64 = table[i].iter().sum();
        let col: i64 = table.iter().map(|r| r[i]).sum();
        p_e += Ratio::new(row * col, n * n);
    }
    let one = Ratio::from_integer(1);
    let kappa = if p_e == one { one } else { (p_o - p_e) / (one - p_e) };
    (p_o, p_e, kappa)
}

pub fn ratio_f64(r: num_rational::Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
