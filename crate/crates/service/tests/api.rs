use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use hilrag_core::corpus::KnowledgeDocument;
use hilrag_core::rag::{ChatClient, EchoClient, RagPipeline, RetrievalConfig, UnavailableClient};
use hilrag_core::{Encoder, SharedIndex, VectorIndex};
use hilrag_service::{
    router, AppState, AuditRecord, AuditStatus, JournalOptions, RecordStore, ServiceConfig,
};
use serde_json::{json, Value};
use tower::ServiceExt;

fn docs() -> Vec<KnowledgeDocument> {
    let mut tc = KnowledgeDocument::new(
        "TC-9",
        "Wiper stage two",
        "wiper speed stage two activates",
        "exterior",
    );
    tc.sequences = Some(vec!["Set ignition on".into(), "Select stage 2".into()]);
    vec![
        KnowledgeDocument::new(
            "REQ-1",
            "Wiper stage one",
            "wiper speed stage one activates",
            "exterior",
        ),
        tc,
        KnowledgeDocument::new(
            "REQ-3",
            "Radio volume",
            "radio volume follows speed",
            "infotainment",
        ),
    ]
}

fn state(dir: &std::path::Path, client: Arc<dyn ChatClient>, token: Option<&str>) -> AppState {
    let enc = Encoder::hash(64).unwrap();
    let index = SharedIndex::new(VectorIndex::build(&docs(), &enc).unwrap());
    let pipeline = RagPipeline::new(index, enc, docs(), RetrievalConfig::default()).unwrap();
    let mut config = ServiceConfig::in_dir(dir);
    config.journal_options = JournalOptions {
        durable: false,
        compact_every: Some(4),
    };
    config.bearer_token = token.map(str::to_string);
    AppState::new(pipeline, client, &config).unwrap()
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

#[tokio::test]
async fn query_audit_and_feedback_contract() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), Arc::new(EchoClient { with_source: true }), None);
    let app = router(st.clone());

    let (code, body) = call(
        &app,
        "POST",
        "/v1/query",
        Some(json!({"text": "wiper stage two"})),
        None,
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    let id = body["inference_id"].as_str().unwrap().to_string();
    assert_eq!(body["sources"][0]["doc_id"], "TC-9");
    assert_eq!(body["attributed_doc_id"], "TC-9");

    let (code, audit) = call(&app, "GET", &format!("/v1/audit/{id}"), None, None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(audit["raw_query"], "wiper stage two");
    assert_eq!(audit["status"], "ok");
    assert_eq!(audit["prompt_digest"].as_str().unwrap().len(), 64);

    let (code, _) = call(
        &app,
        "GET",
        "/v1/audit/0123456789abcdef0123456789abcdef",
        None,
        None,
    )
    .await;
    assert_eq!(code, StatusCode::NOT_FOUND);

    let (code, _) = call(
        &app,
        "POST",
        "/v1/query",
        Some(json!({"text": "   "})),
        None,
    )
    .await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);

    let (code, m) = call(&app, "GET", "/v1/metrics/feedback", None, None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(m["empty"], true);

    let (code, _) = call(
        &app,
        "POST",
        "/v1/feedback",
        Some(json!({"inference_id": id, "ratings": {"satisfaction": 4}, "helpful": true})),
        None,
    )
    .await;
    assert_eq!(code, StatusCode::CREATED);
    let (code, _) = call(
        &app,
        "POST",
        "/v1/feedback",
        Some(json!({"inference_id": id, "ratings": {"satisfaction": 6}})),
        None,
    )
    .await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let (code, _) = call(
        &app,
        "POST",
        "/v1/feedback",
        Some(json!({"inference_id": "nope", "ratings": {"satisfaction": 5}})),
        None,
    )
    .await;
    assert_eq!(code, StatusCode::NOT_FOUND);

    let (_, m) = call(&app, "GET", "/v1/metrics/feedback?mode=support", None, None).await;
    assert_eq!(m["empty"], false);
    assert_eq!(m["means"]["satisfaction"]["mean"], 4.0);
    let (_, m) = call(
        &app,
        "GET",
        "/v1/metrics/feedback?mode=interactive-control",
        None,
        None,
    )
    .await;
    assert_eq!(m["empty"], true);

    let (code, h) = call(&app, "GET", "/health", None, None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(h["indexed_documents"], 3);
}

#[tokio::test]
async fn client_failure_is_audited_before_503() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), Arc::new(UnavailableClient), None);
    let app = router(st.clone());
    let (code, body) = call(
        &app,
        "POST",
        "/v1/query",
        Some(json!({"text": "wiper"})),
        None,
    )
    .await;
    assert_eq!(code, StatusCode::SERVICE_UNAVAILABLE);
    let id = body["inference_id"].as_str().unwrap();
    let record = st.audit().get(id).unwrap();
    assert_eq!(record.status, AuditStatus::ClientFailure);
    assert!(record.answer.is_none());
    assert!(!record.retrieved.is_empty());
}

#[tokio::test]
async fn bearer_token_guards_api_but_not_health() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(
        dir.path(),
        Arc::new(EchoClient { with_source: true }),
        Some("s3cret"),
    ));
    let (code, _) = call(
        &app,
        "POST",
        "/v1/query",
        Some(json!({"text": "wiper"})),
        None,
    )
    .await;
    assert_eq!(code, StatusCode::UNAUTHORIZED);
    let (code, _) = call(
        &app,
        "POST",
        "/v1/query",
        Some(json!({"text": "wiper"})),
        Some("wrong"),
    )
    .await;
    assert_eq!(code, StatusCode::UNAUTHORIZED);
    let (code, _) = call(
        &app,
        "POST",
        "/v1/query",
        Some(json!({"text": "wiper"})),
        Some("s3cret"),
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    let (code, _) = call(&app, "GET", "/health", None, None).await;
    assert_eq!(code, StatusCode::OK);
}

#[tokio::test]
async fn journals_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let before: Vec<AuditRecord> = {
        let st = state(dir.path(), Arc::new(EchoClient { with_source: true }), None);
        let app = router(st.clone());
        for q in [
            "wiper",
            "radio volume",
            "stage two",
            "speed",
            "wiper stage one",
            "radio",
        ] {
            call(&app, "POST", "/v1/query", Some(json!({"text": q})), None).await;
        }
        st.audit()
            .all()
            .iter()
            .map(|r| r.as_ref().clone())
            .collect()
    };
    let st = state(dir.path(), Arc::new(EchoClient { with_source: true }), None);
    let after: Vec<AuditRecord> = st
        .audit()
        .all()
        .iter()
        .map(|r| r.as_ref().clone())
        .collect();
    assert_eq!(before.len(), 6);
    assert_eq!(before, after);
}

#[tokio::test]
async fn websocket_chat_round_trip() {
    use futures_util::{SinkExt, StreamExt};
    use tokio_tungstenite::tungstenite::Message;

    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), Arc::new(EchoClient { with_source: true }), None);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(hilrag_service::serve(
        listener,
        st.clone(),
        std::future::pending(),
    ));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws/chat"))
        .await
        .unwrap();
    ws.send(Message::text(json!({"text": "radio volume"}).to_string()))
        .await
        .unwrap();
    let reply: Value = match ws.next().await.unwrap().unwrap() {
        Message::Text(t) => serde_json::from_str(&t).unwrap(),
        other => panic!("{other:?}"),
    };
    assert_eq!(reply["type"], "answer");
    assert_eq!(reply["sources"][0]["doc_id"], "REQ-3");
    assert!(st
        .audit()
        .get(reply["inference_id"].as_str().unwrap())
        .is_some());

    ws.send(Message::text(json!({"text": ""}).to_string()))
        .await
        .unwrap();
    let reply: Value = match ws.next().await.unwrap().unwrap() {
        Message::Text(t) => serde_json::from_str(&t).unwrap(),
        other => panic!("{other:?}"),
    };
    assert_eq!(reply["type"], "error");
    assert_eq!(reply["status"], 422);
}
