//! HTTP transport over [`Service::handle`].

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, Method as HttpMethod, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use bigthick_core::service::{ApiError, ApiRequest, ApiResponse, Method, Service};
use bigthick_core::time::{truncate_seconds, Timestamp};
use serde_json::Value;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

const PLACEHOLDER_UI: &str = include_str!("../ui/index.html");

pub type Shared = Arc<Mutex<Service>>;

fn wall_clock() -> Timestamp {
    truncate_seconds(chrono::Utc::now())
}

pub fn router(service: Shared, ui_dir: Option<PathBuf>) -> Router {
    let ui = match ui_dir {
        Some(dir) => Router::new().fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => Router::new().fallback(get(|| async { Html(PLACEHOLDER_UI) })),
    };
    Router::new()
        .route("/", get(|| async { axum::response::Redirect::to("/ui/") }))
        .nest_service("/ui", ui)
        .fallback(api)
        .with_state(service)
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let v = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    v.strip_prefix("Bearer ").map(|t| t.trim().to_string())
}

fn reply(r: ApiResponse) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], r.body.to_string()).into_response()
}

async fn api(
    State(service): State<Shared>,
    method: HttpMethod,
    uri: Uri,
    Query(query): Query<BTreeMap<String, String>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let started = Instant::now();
    let response = match to_request(&method, &uri, query, &headers, &body) {
        Ok(req) => dispatch(&service, req).await,
        Err(e) => e.to_response(),
    };
    log::info!("{} {} {} {:.1}ms", method, uri.path(), response.status, started.elapsed().as_secs_f64() * 1e3);
    reply(response)
}

fn to_request(
    method: &HttpMethod,
    uri: &Uri,
    query: BTreeMap<String, String>,
    headers: &HeaderMap,
    body: &Bytes,
) -> Result<ApiRequest, ApiError> {
    let method = Method::parse(method.as_str()).ok_or_else(|| ApiError::new(405, "method", "unsupported method"))?;
    let body = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        Some(
            serde_json::from_slice::<Value>(body)
                .map_err(|e| ApiError::new(422, "schema", format!("body is not JSON: {e}")))?,
        )
    };
    let mut req = ApiRequest::new(method, uri.path());
    req.query = query;
    req.token = bearer(headers);
    req.body = body;
    req.now = Some(wall_clock());
    Ok(req)
}

async fn dispatch(service: &Shared, req: ApiRequest) -> ApiResponse {
    if !req.is_training() {
        return service.lock().await.handle(&req);
    }
    let begun = service.lock().await.begin_training(&req);
    let (job, now) = match begun {
        Ok(j) => j,
        Err(r) => return r,
    };
    match tokio::task::spawn_blocking(move || job.run()).await {
        Ok(result) => service.lock().await.finish_training(result, now),
        Err(e) => ApiError::new(500, "internal", format!("training task failed: {e}")).to_response(),
    }
}

/// Tick the service on the wall clock every `every`.
pub async fn ticker(service: Shared, every: Duration) {
    let mut interval = tokio::time::interval(every);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        let mut s = service.lock().await;
        match s.tick(wall_clock()) {
            Ok(r) if r.expired + r.skipped + r.windows_published > 0 => log::info!("tick {r:?}"),
            Ok(_) => {}
            Err(e) => log::error!("tick failed: {e:?}"),
        }
    }
}
