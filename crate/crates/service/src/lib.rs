//! HTTP and WebSocket service over the retrieval pipeline, with append-only
//! audit and feedback journals.

mod app;
pub mod journal;
pub mod records;

pub use app::{
    process_feedback, process_query, router, ApiError, AppState, ErrorBody, QueryRequest,
    QueryResponse, ServiceConfig, Source, ToolStep,
};
pub use journal::{Journal, JournalError, JournalOptions, RecordStore};
pub use records::{
    aggregate_feedback, AuditRecord, AuditStatus, FeedbackFilter, FeedbackRecord,
    FeedbackSubmission, FeedbackSummary, Mode, RatingDimension,
};

use std::future::Future;
use std::net::SocketAddr;

/// Serves `state` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
