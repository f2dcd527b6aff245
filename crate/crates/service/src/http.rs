use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chae::codec::ChaeCondition;
use chae::decoding::DecodingConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};

use crate::error::ServiceError;
use crate::store::{parse_chae_text, SessionStore};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type Reply<T> = Result<Json<T>, ServiceError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload.map(|Json(t)| t).map_err(|e| ServiceError::bad(e.body_text()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub beginning: String,
    #[serde(default)]
    pub config: DecodingConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
}

/// Either a list of `{char, actions, emotion}` objects or serialized Chae
/// text such as `<SEP> <soc> tom <soa> <no_action> <soe> joy`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ChaePayload {
    Conditions(Vec<Value>),
    Text(String),
}

impl ChaePayload {
    pub fn conditions(self) -> Result<Vec<ChaeCondition>, ServiceError> {
        match self {
            ChaePayload::Text(text) => parse_chae_text(&text),
            ChaePayload::Conditions(items) => items
                .into_iter()
                .enumerate()
                .map(|(i, v)| serde_json::from_value(v).map_err(|e| ServiceError::bad_at(format!("condition {i}: {e}"), i)))
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub chae: ChaePayload,
    #[serde(default)]
    pub overrides: Option<Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaeRequest {
    pub chae: ChaePayload,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChaeEcho {
    /// Normalized conditions as the server understood them.
    pub chae: Vec<ChaeCondition>,
    /// The padded serialization the model sees.
    pub tokens: Vec<String>,
    pub text: String,
}

async fn health(State(store): State<Arc<SessionStore>>) -> Json<Value> {
    let engine = store.engine();
    Json(json!({
        "status": "ok",
        "model_loaded": engine.is_some(),
        "sessions": store.len(),
        "k": engine.map(|e| e.k()),
        "vocab_size": engine.map(|e| e.vocab.len()),
    }))
}

async fn create(
    State(store): State<Arc<SessionStore>>,
    payload: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreateResponse>), ServiceError> {
    let req = body(payload)?;
    let id = store.create(&req.beginning, req.config)?;
    Ok((StatusCode::CREATED, Json(CreateResponse { id })))
}

async fn step(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    payload: Result<Json<StepRequest>, JsonRejection>,
) -> Reply<crate::StepOutcome> {
    let req = body(payload)?;
    let chae = req.chae.conditions()?;
    let out = tokio::task::spawn_blocking(move || store.step(&id, chae, req.overrides.as_ref()))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(out))
}

async fn undo(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> Reply<crate::Transcript> {
    Ok(Json(store.undo(&id)?))
}

async fn get_session(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> Reply<crate::Transcript> {
    Ok(Json(store.get(&id)?))
}

async fn story_spec(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> Reply<chae::decoding::StorySpec> {
    Ok(Json(store.get(&id)?.story_spec()))
}

async fn delete(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> Result<StatusCode, ServiceError> {
    store.delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn echo_chae(
    State(store): State<Arc<SessionStore>>,
    payload: Result<Json<ChaeRequest>, JsonRejection>,
) -> Reply<ChaeEcho> {
    let conditions = body(payload)?.chae.conditions()?;
    let tokens = store.serialize(conditions.clone())?;
    Ok(Json(ChaeEcho {
        chae: conditions.iter().map(ChaeCondition::normalized).collect(),
        text: tokens.join(" "),
        tokens,
    }))
}

/// The JSON API. `cors_origin` of `None` allows any origin.
pub fn router(store: Arc<SessionStore>, cors_origin: Option<&str>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => cors.allow_origin(origin),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/chae", post(echo_chae))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(get_session).delete(delete))
        .route("/v1/sessions/{id}/step", post(step))
        .route("/v1/sessions/{id}/undo", post(undo))
        .route("/v1/sessions/{id}/spec", get(story_spec))
        .layer(cors)
        .with_state(store)
}

/// Serves until ctrl-c, sweeping idle sessions once a minute.
pub async fn serve(store: Arc<SessionStore>, addr: SocketAddr, cors_origin: Option<String>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let sweeper = Arc::clone(&store);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.sweep();
        }
    });
    let app = router(store, cors_origin.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
