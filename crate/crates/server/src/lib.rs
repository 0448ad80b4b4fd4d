//! HTTP service for the fact-checking core: JSON API under `/api/v1`,
//! signed bearer tokens, and background analysis workers.

pub mod api;
pub mod auth;
pub mod rate_limit;
pub mod view;
pub mod wiring;
pub mod worker;

use std::future::Future;
use std::time::Duration;

pub use api::{AppState, ROUTES, ServiceOptions, openapi_document, router};
pub use view::{AnalysisStatusView, SourceView};
pub use worker::{AnalysisRunner, StatusEvent};

/// How long in-flight analyses may keep running after a shutdown signal.
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(10);

/// Serves until `shutdown` resolves, then drains the workers. Analyses still
/// running after `grace` are marked failed.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    grace: Duration,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let runner = std::sync::Arc::clone(state.runner());
    let (tx, rx) = tokio::sync::watch::channel(false);
    let drain = tokio::spawn(async move {
        shutdown.await;
        let _ = tx.send(true);
        runner.shutdown(grace).await;
    });
    let mut rx_http = rx.clone();
    let served = axum::serve(listener, router(state))
        .with_graceful_shutdown(async move {
            let _ = rx_http.wait_for(|stop| *stop).await;
        })
        .await;
    let _ = drain.await;
    served
}
