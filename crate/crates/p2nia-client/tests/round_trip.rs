//! Client-against-server round trip over a real socket.

use std::sync::Arc;

use p2nia_client::PlatformClient;
use p2nia_core::data::split;
use p2nia_core::experiment::make_desk_data;
use p2nia_core::metrics::MetricKind;
use p2nia_core::model::train;
use p2nia_core::protocol::{auditor_evaluate, AuditRequest, EpsilonMode, MechanismKind};
use p2nia_core::Error;
use p2nia_server::{router, PlatformState};

#[test]
fn blocking_client_round_trip() {
    let desk = make_desk_data(1000, 21).unwrap();
    let (train_part, audit_part) = split(&desk, 0.5, 22).unwrap();
    let model = train(&train_part).unwrap();
    let state = Arc::new(PlatformState::new(
        "rt-platform",
        EpsilonMode::PerColumn,
        23,
        audit_part,
        model,
    ));

    // The server runs on its own runtime; the client blocks on this
    // thread, as it would in the CLI.
    let rt = tokio::runtime::Runtime::new().unwrap();
    let addr = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, router(state)).await.unwrap();
        });
        addr
    });

    let client = PlatformClient::new(&format!("http://{addr}/")).unwrap();
    client.health().unwrap();

    let info = client.info().unwrap();
    assert_eq!(info.platform_id, "rt-platform");
    assert_eq!(info.n_rows, 500);

    let request = AuditRequest {
        n_prime: 300,
        protected_attribute: info.protected_attribute.clone(),
        requested_metrics: MetricKind::ALL.to_vec(),
        mechanism: MechanismKind::Synth,
        epsilon: 6.0,
    };
    let release = client.audit(&request).unwrap();
    assert_eq!(release.dataset.n_rows(), 300);
    let report = auditor_evaluate(&release, &request).unwrap();
    assert!(report.demographic_parity.is_some());

    // Rejections surface with the platform's reason.
    let mut bad = request.clone();
    bad.protected_attribute = "unknown".into();
    match client.audit(&bad) {
        Err(Error::Rejected(reason)) => assert!(reason.contains("unknown")),
        other => panic!("expected rejection, got {other:?}"),
    }

    // URL validation happens before any traffic.
    assert!(PlatformClient::new("ftp://example").is_err());
}
