use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use streetscape::dataset::{resolve_labels, resolve_raster, LabelRecord, Task};
use tower_http::services::ServeDir;

use crate::select::{next_item, SelectError, Strategy};
use crate::AppState;

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/api/tasks", get(tasks))
        .route("/api/next", get(next))
        .route("/api/labels", post(submit))
        .route("/api/stats", get(stats))
        .route("/images/{image_id}", get(image));
    let api = match &state.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    };
    api.with_state(state)
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), extra: None }
    }

    fn invalid(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let (Some(Value::Object(extra)), Value::Object(map)) = (self.extra, &mut body) {
            map.extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

fn parse_task(s: &str) -> Result<Task, ApiError> {
    s.parse().map_err(|_| ApiError::invalid(format!("unknown task {s:?}")))
}

async fn index() -> &'static str {
    "streetscape labeling service\n\nGET /api/tasks\nGET /api/next?task=T&rater=R&strategy=sequential|uncertain\n\
     POST /api/labels\nGET /api/stats?task=T\nGET /images/{image_id}\n"
}

async fn tasks(State(state): State<Shared>) -> Json<Value> {
    let records = state.store.snapshot();
    let total = state.images.len();
    let rows: Vec<Value> = Task::ALL
        .iter()
        .map(|&task| {
            let labeled = resolve_labels(&records, task).keys().filter(|id| state.images.contains_key(*id)).count();
            json!({ "task": task, "labeled": labeled, "total": total })
        })
        .collect();
    Json(Value::Array(rows))
}

#[derive(Deserialize)]
struct NextQuery {
    task: String,
    rater: String,
    strategy: Option<String>,
    skip: Option<String>,
}

async fn next(State(state): State<Shared>, Query(q): Query<NextQuery>) -> Result<Json<Value>, ApiError> {
    let task = parse_task(&q.task)?;
    if q.rater.trim().is_empty() {
        return Err(ApiError::invalid("rater must not be empty"));
    }
    let strategy: Strategy = match &q.strategy {
        Some(s) => s.parse().map_err(ApiError::invalid)?,
        None => Strategy::default(),
    };
    let labeled: BTreeSet<String> = state
        .store
        .snapshot()
        .into_iter()
        .filter(|r| r.task == task && r.rater_id == q.rater)
        .map(|r| r.image_id)
        .collect();
    let corpus: Vec<&str> = state.images.keys().map(String::as_str).collect();

    let mut sessions = state.sessions.lock().unwrap_or_else(|e| e.into_inner());
    let skipped = sessions.entry((q.rater.clone(), task)).or_default();
    if let Some(id) = q.skip {
        skipped.insert(id);
    }
    match next_item(task, &corpus, &labeled, skipped, strategy, state.models.get(&task), &state.features) {
        Ok(item) => {
            let mut body = serde_json::to_value(&item).expect("serializable");
            body["image_url"] = Value::String(format!("/images/{}", item.image_id));
            Ok(Json(body))
        }
        Err(e @ SelectError::CorpusExhausted { progress, .. }) => Err(ApiError {
            extra: Some(json!({ "task": task, "progress": progress })),
            ..ApiError::new(StatusCode::NOT_FOUND, "CorpusExhausted", e.to_string())
        }),
    }
}

#[derive(Deserialize)]
struct SubmitRequest {
    image_id: String,
    task: String,
    value: i64,
    rater_id: String,
}

async fn submit(
    State(state): State<Shared>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<LabelRecord>), ApiError> {
    let Json(req) = body.map_err(|e| ApiError::invalid(e.body_text()))?;
    let task = parse_task(&req.task)?;
    task.validate(req.value).map_err(|e| ApiError::invalid(e.to_string()))?;
    if req.rater_id.trim().is_empty() {
        return Err(ApiError::invalid("rater_id must not be empty"));
    }
    if !state.images.contains_key(&req.image_id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownImage", format!("unknown image {}", req.image_id)));
    }
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64);
    let record = LabelRecord { image_id: req.image_id, task, value: req.value, rater_id: req.rater_id, ts };
    let store = state.store.clone();
    let stored = record.clone();
    tokio::task::spawn_blocking(move || store.append(stored))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure", e.to_string()))?;
    Ok((StatusCode::CREATED, Json(record)))
}

#[derive(Deserialize)]
struct StatsQuery {
    task: String,
}

/// Percentage rounded to one decimal.
fn share(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        (1000.0 * count as f64 / total as f64).round() / 10.0
    }
}

async fn stats(State(state): State<Shared>, Query(q): Query<StatsQuery>) -> Result<Json<Value>, ApiError> {
    let task = parse_task(&q.task)?;
    let resolved = resolve_labels(&state.store.snapshot(), task);
    let mut counts: BTreeMap<String, usize> = task.classes().iter().map(|c| (c.to_string(), 0)).collect();
    for value in resolved.values() {
        *counts.entry(value.to_string()).or_default() += 1;
    }
    let total = resolved.len();
    let shares: BTreeMap<&String, f64> = counts.iter().map(|(k, &n)| (k, share(n, total))).collect();
    let reference: BTreeMap<String, f64> =
        task.reference_shares().iter().map(|(c, s)| (c.to_string(), *s)).collect();
    Ok(Json(json!({
        "task": task,
        "total": total,
        "counts": counts,
        "shares": shares,
        "reference_shares": reference,
    })))
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn image(State(state): State<Shared>, Path(image_id): Path<String>) -> Result<Response, ApiError> {
    let rec = state
        .images
        .get(&image_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownImage", format!("unknown image {image_id}")))?;
    let path = resolve_raster(&state.manifest_path, &rec.raster_path);
    let bytes = tokio::fs::read(&path).await.map_err(|e| {
        ApiError::new(StatusCode::NOT_FOUND, "MissingRaster", format!("{}: {e}", path.display()))
    })?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}
