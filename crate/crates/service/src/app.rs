use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use hilrag_core::rag::{ChatClient, GenerationStatus, RagError, RagPipeline, ToolStatus};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::journal::{Journal, JournalError, JournalOptions, RecordStore};
use crate::records::{
    aggregate_feedback, new_id, AuditRecord, AuditStatus, FeedbackError, FeedbackFilter,
    FeedbackRecord, FeedbackSubmission, FeedbackSummary, Mode,
};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub audit_journal: PathBuf,
    pub feedback_journal: PathBuf,
    pub journal_options: JournalOptions,
    /// When set, `/v1/*` and `/ws/*` require `Authorization: Bearer <token>`
    /// (or `?access_token=` on the WebSocket route).
    pub bearer_token: Option<String>,
}

impl ServiceConfig {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        Self {
            audit_journal: dir.join("audit.jsonl"),
            feedback_journal: dir.join("feedback.jsonl"),
            journal_options: JournalOptions::default(),
            bearer_token: None,
        }
    }
}

struct Inner {
    pipeline: RagPipeline,
    client: Arc<dyn ChatClient>,
    audit: Journal<AuditRecord>,
    feedback: Journal<FeedbackRecord>,
    token: Option<String>,
}

/// Shared service state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(
        pipeline: RagPipeline,
        client: Arc<dyn ChatClient>,
        config: &ServiceConfig,
    ) -> Result<Self, JournalError> {
        Ok(Self(Arc::new(Inner {
            audit: Journal::open(&config.audit_journal, config.journal_options)?,
            feedback: Journal::open(&config.feedback_journal, config.journal_options)?,
            pipeline,
            client,
            token: config.bearer_token.clone(),
        })))
    }

    pub fn audit(&self) -> &Journal<AuditRecord> {
        &self.0.audit
    }

    pub fn feedback(&self) -> &Journal<FeedbackRecord> {
        &self.0.feedback
    }

    pub fn pipeline(&self) -> &RagPipeline {
        &self.0.pipeline
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub doc_id: String,
    pub title: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolStep {
    pub call_id: String,
    pub tool: String,
    pub status: ToolStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub inference_id: String,
    pub answer: String,
    pub attributed_doc_id: Option<String>,
    pub sources: Vec<Source>,
    pub tool_trace_summary: Vec<ToolStep>,
    pub status: AuditStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference_id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                inference_id: None,
            },
        }
    }

    fn with_id(mut self, id: &str) -> Self {
        self.body.inference_id = Some(id.to_string());
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JournalError> for ApiError {
    fn from(e: JournalError) -> Self {
        tracing::error!(error = %e, "journal write failed");
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "audit journal unavailable",
        )
    }
}

fn failure_status(e: &RagError) -> (AuditStatus, StatusCode) {
    match e {
        RagError::ClientFailure(_) => (AuditStatus::ClientFailure, StatusCode::SERVICE_UNAVAILABLE),
        RagError::ToolDepthExceeded { .. } => {
            (AuditStatus::ToolDepthExceeded, StatusCode::BAD_GATEWAY)
        }
        _ => (AuditStatus::Error, StatusCode::INTERNAL_SERVER_ERROR),
    }
}

/// Runs one inference and journals its audit record before returning.
/// Blocking: call from a blocking-capable thread.
pub fn process_query(state: &AppState, req: &QueryRequest) -> Result<QueryResponse, ApiError> {
    if req.text.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "query text is empty",
        ));
    }
    if req.k == Some(0) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "k must be at least 1",
        ));
    }
    let inner = &state.0;
    let inference_id = new_id();
    let mode = req.mode.unwrap_or_default();
    let mut record = AuditRecord {
        inference_id: inference_id.clone(),
        timestamp: Utc::now(),
        raw_query: req.text.clone(),
        normalized_query: None,
        retrieved: Vec::new(),
        adapter_digest: inner.pipeline.encoder().adapter_digest(),
        prompt_digest: None,
        tool_trace: Vec::new(),
        answer: None,
        attributed_doc_id: None,
        mode,
        status: AuditStatus::Ok,
        error: None,
    };

    let trace = match inner
        .pipeline
        .answer(&req.text, req.k, inner.client.as_ref())
    {
        Ok(t) => t,
        Err(e) => {
            let (status, code) = failure_status(&e);
            record.status = status;
            record.error = Some(e.to_string());
            inner.audit.append(record)?;
            return Err(ApiError::new(code, e.to_string()).with_id(&inference_id));
        }
    };
    record.normalized_query = Some(trace.query.clone());
    record.retrieved = trace.hits.clone();
    record.prompt_digest = Some(trace.prompt_digest.clone());
    let generation = match trace.generation {
        Ok(g) => g,
        Err(e) => {
            let (status, code) = failure_status(&e);
            record.status = status;
            record.error = Some(e.to_string());
            inner.audit.append(record)?;
            return Err(ApiError::new(code, e.to_string()).with_id(&inference_id));
        }
    };
    record.status = match generation.status {
        GenerationStatus::Completed => AuditStatus::Ok,
        GenerationStatus::MalformedToolRequest => AuditStatus::MalformedToolRequest,
    };
    record.tool_trace = generation.tool_trace.clone();
    record.answer = Some(generation.answer.clone());
    record.attributed_doc_id = generation.attributed_doc_id.clone();
    let status = record.status;
    inner.audit.append(record)?;

    Ok(QueryResponse {
        inference_id,
        answer: generation.answer,
        attributed_doc_id: generation.attributed_doc_id,
        sources: trace
            .bundle
            .entries
            .iter()
            .map(|e| Source {
                doc_id: e.doc_id.clone(),
                title: e.title.clone(),
                score: e.score,
            })
            .collect(),
        tool_trace_summary: generation
            .tool_trace
            .iter()
            .map(|(c, r)| ToolStep {
                call_id: c.call_id.clone(),
                tool: c.name.clone(),
                status: r.status,
            })
            .collect(),
        status,
    })
}

/// Validates and journals one feedback submission.
pub fn process_feedback(
    state: &AppState,
    sub: FeedbackSubmission,
) -> Result<FeedbackRecord, ApiError> {
    let audit = state.0.audit.get(&sub.inference_id).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            FeedbackError::UnknownInference(sub.inference_id.clone()).to_string(),
        )
    })?;
    sub.check_ratings()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let record = FeedbackRecord {
        feedback_id: new_id(),
        inference_id: sub.inference_id,
        helpful: sub.helpful,
        ratings: sub.ratings,
        free_text: sub.free_text,
        flagged_inaccurate: sub.flagged_inaccurate,
        mode: audit.mode,
        timestamp: Utc::now(),
    };
    Ok(state.0.feedback.append(record)?.as_ref().clone())
}

async fn run_blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| {
        Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("worker failed: {e}"),
        ))
    })
}

async fn query_handler(
    State(state): State<AppState>,
    Json(req): Json<QueryRequest>,
) -> Result<Json<QueryResponse>, ApiError> {
    run_blocking(move || process_query(&state, &req))
        .await
        .map(Json)
}

async fn feedback_handler(
    State(state): State<AppState>,
    Json(sub): Json<FeedbackSubmission>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let record = run_blocking(move || process_feedback(&state, sub)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "feedback_id": record.feedback_id })),
    ))
}

async fn audit_handler(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<AuditRecord>, ApiError> {
    state
        .0
        .audit
        .get(&id)
        .map(|r| Json(r.as_ref().clone()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NotFound"))
}

async fn metrics_handler(
    State(state): State<AppState>,
    Query(filter): Query<FeedbackFilter>,
) -> Json<FeedbackSummary> {
    let records = state.0.feedback.all();
    Json(aggregate_feedback(
        records.iter().map(|r| r.as_ref()),
        &filter,
    ))
}

async fn health_handler(State(state): State<AppState>) -> Json<serde_json::Value> {
    let index = state.0.pipeline.index().snapshot();
    Json(json!({
        "status": "ok",
        "indexed_documents": index.len(),
        "adapter_digest": index.adapter_digest(),
        "client": state.0.client.id(),
        "audit_records": state.0.audit.len(),
        "feedback_records": state.0.feedback.len(),
    }))
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WsReply {
    Answer(QueryResponse),
    Error {
        status: u16,
        #[serde(flatten)]
        body: ErrorBody,
    },
}

async fn ws_handler(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| chat_session(socket, state))
}

async fn chat_session(mut socket: WebSocket, state: AppState) {
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match serde_json::from_str::<QueryRequest>(&text) {
            Ok(req) => {
                let st = state.clone();
                match run_blocking(move || process_query(&st, &req)).await {
                    Ok(resp) => WsReply::Answer(resp),
                    Err(e) => WsReply::Error {
                        status: e.status.as_u16(),
                        body: e.body,
                    },
                }
            }
            Err(e) => WsReply::Error {
                status: StatusCode::UNPROCESSABLE_ENTITY.as_u16(),
                body: ErrorBody {
                    error: format!("invalid request: {e}"),
                    inference_id: None,
                },
            },
        };
        let payload = serde_json::to_string(&reply).expect("reply serializes");
        if socket.send(Message::Text(payload.into())).await.is_err() {
            break;
        }
    }
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(expected) = state.0.token.as_deref() else {
        return next.run(req).await;
    };
    let from_header = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let from_query = req
        .uri()
        .query()
        .into_iter()
        .flat_map(|q| q.split('&'))
        .find_map(|kv| kv.strip_prefix("access_token="));
    if from_header.or(from_query) == Some(expected) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token").into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/v1/query", post(query_handler))
        .route("/v1/feedback", post(feedback_handler))
        .route("/v1/audit/{id}", get(audit_handler))
        .route("/v1/metrics/feedback", get(metrics_handler))
        .route("/ws/chat", get(ws_handler))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health_handler))
        .merge(protected)
        .with_state(state)
}
