//! End-to-end checks of the HTTP surface against a real listener.

use std::net::SocketAddr;
use std::sync::Arc;

use p2nia_core::data::split;
use p2nia_core::experiment::make_desk_data;
use p2nia_core::metrics::MetricKind;
use p2nia_core::model::train;
use p2nia_core::protocol::{
    auditor_evaluate, platform_respond, AuditRelease, AuditRequest, EpsilonMode, MechanismKind,
    PlatformInfo,
};
use p2nia_core::seed;
use p2nia_server::{router, PlatformState};

fn test_state(base_seed: u64) -> Arc<PlatformState> {
    let desk = make_desk_data(1200, 5).unwrap();
    let (train_part, audit_part) = split(&desk, 0.5, 1).unwrap();
    let model = train(&train_part).unwrap();
    Arc::new(PlatformState::new(
        "test-platform",
        EpsilonMode::PerColumn,
        base_seed,
        audit_part,
        model,
    ))
}

async fn spawn_server(state: Arc<PlatformState>) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(state)).await.unwrap();
    });
    addr
}

fn sample_request() -> AuditRequest {
    AuditRequest {
        n_prime: 400,
        protected_attribute: "sex".into(),
        requested_metrics: MetricKind::ALL.to_vec(),
        mechanism: MechanismKind::Grr,
        epsilon: 8.0,
    }
}

#[tokio::test]
async fn health_and_info_respond() {
    let state = test_state(7);
    let addr = spawn_server(state.clone()).await;
    let http = reqwest::Client::new();

    let health: serde_json::Value = http
        .get(format!("http://{addr}/api/v1/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(health["status"], "ok");

    let info: PlatformInfo = http
        .get(format!("http://{addr}/api/v1/info"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(info, state.info());
    assert_eq!(info.protected_attribute, "sex");
    assert_eq!(info.n_rows, 600);
}

#[tokio::test]
async fn audit_round_trip_matches_direct_call() {
    let state = test_state(99);
    let addr = spawn_server(state.clone()).await;
    let request = sample_request();

    let response = reqwest::Client::new()
        .post(format!("http://{addr}/api/v1/audit"))
        .body(request.to_json().unwrap())
        .send()
        .await
        .unwrap();
    assert_eq!(response.status(), 200);
    let document = response.text().await.unwrap();
    let release = AuditRelease::from_document(&document).unwrap();

    // Session 0 must equal a direct call with the derived seed.
    let desk = make_desk_data(1200, 5).unwrap();
    let (train_part, audit_part) = split(&desk, 0.5, 1).unwrap();
    let model = train(&train_part).unwrap();
    let direct = platform_respond(
        &request,
        &audit_part,
        &model,
        EpsilonMode::PerColumn,
        "test-platform",
        seed::derive(99, &[0]),
    )
    .unwrap();
    assert_eq!(release, direct);

    let report = auditor_evaluate(&release, &request).unwrap();
    assert!(report.demographic_parity.is_some());
}

#[tokio::test]
async fn sessions_advance_and_restarts_replay() {
    let addr = spawn_server(test_state(42)).await;
    let http = reqwest::Client::new();
    let body = sample_request().to_json().unwrap();
    let post = |b: String| {
        let http = http.clone();
        async move {
            http.post(format!("http://{addr}/api/v1/audit"))
                .body(b)
                .send()
                .await
                .unwrap()
                .text()
                .await
                .unwrap()
        }
    };
    let first = post(body.clone()).await;
    let second = post(body.clone()).await;
    assert_ne!(first, second, "sessions must not reuse noise");

    // A fresh server with the same base seed replays the same sequence.
    let addr2 = spawn_server(test_state(42)).await;
    let replay = http
        .post(format!("http://{addr2}/api/v1/audit"))
        .body(body)
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(first, replay);
}

#[tokio::test]
async fn bad_requests_map_to_http_errors() {
    let addr = spawn_server(test_state(3)).await;
    let http = reqwest::Client::new();

    // Policy rejection: unknown protected attribute.
    let mut rejected = sample_request();
    rejected.protected_attribute = "shoe_size".into();
    let response = http
        .post(format!("http://{addr}/api/v1/audit"))
        .body(rejected.to_json().unwrap())
        .send()
        .await
        .unwrap();
    assert_eq!(response.status(), 422);
    let err: serde_json::Value = response.json().await.unwrap();
    assert!(err["error"].as_str().unwrap().contains("shoe_size"));

    // Malformed body.
    let response = http
        .post(format!("http://{addr}/api/v1/audit"))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(response.status(), 400);
}
