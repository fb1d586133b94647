//! HTTP JSON API.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use cbm_proposals::datagen::{gen_hexagon, gen_vitals, HexagonConfig, VitalsConfig};
use cbm_proposals::eval::{match_single, round_all};
use cbm_proposals::pipeline::PipelineConfig;
use cbm_proposals::Dataset;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{AppError, AppResult};
use crate::jobs::{load_proposals, score_proposals, JobKind, JobRequest, Registry};
use crate::sessions::{PinRequest, Sessions};
use crate::store::Store;
use crate::{openapi, SCHEMA_VERSION};

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    pub sessions: Arc<Sessions>,
}

impl AppState {
    fn store(&self) -> &Store {
        self.registry.store()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/spec", get(spec))
        .route("/datasets", post(create_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/jobs", post(create_job))
        .route("/jobs/{id}", get(get_job))
        .route("/proposals/{id}", get(get_proposals))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/pin", post(pin))
        .route("/sessions/{id}/complete", post(complete))
        .route("/sessions/{id}/report", get(session_report))
        .with_state(state)
}

/// Every body parse failure is a 422 with serde's diagnostic.
fn body<T>(payload: Result<Json<T>, JsonRejection>) -> AppResult<T> {
    payload.map(|Json(v)| v).map_err(|e| AppError::unprocessable(e.body_text()))
}

fn versioned(mut v: Value) -> Json<Value> {
    if let Value::Object(map) = &mut v {
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    Json(v)
}

fn to_value<T: serde::Serialize>(v: &T) -> AppResult<Value> {
    serde_json::to_value(v).map_err(AppError::internal)
}

async fn spec() -> Json<Value> {
    Json(openapi::document())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Hexagon,
    Vitals,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub kind: DatasetKind,
    #[serde(default)]
    pub config: Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRequest {
    #[serde(default)]
    generate: Option<GenerateRequest>,
    #[serde(default)]
    dataset: Option<Value>,
}

/// Parses `value` as `T`, naming the offending field on failure.
pub fn parse_config<T: serde::de::DeserializeOwned>(value: &Value) -> AppResult<T> {
    let value = if value.is_null() { json!({}) } else { value.clone() };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        AppError::unprocessable(format!("config field `{path}`: {}", e.into_inner()))
    })
}

pub fn generate(req: &GenerateRequest) -> AppResult<Dataset> {
    let data = match req.kind {
        DatasetKind::Hexagon => gen_hexagon(&parse_config::<HexagonConfig>(&req.config)?)?.0,
        DatasetKind::Vitals => gen_vitals(&parse_config::<VitalsConfig>(&req.config)?)?.0,
    };
    Ok(data)
}

fn dataset_summary(id: &str, data: &Dataset) -> Value {
    let cat = data.ground_truth();
    json!({
        "id": id,
        "n": data.n(),
        "d": data.d(),
        "feature_names": data.feature_names(),
        "content_hash": data.content_hash(),
        "concepts": cat.map(|c| c.concepts.len()),
        "valid_combinations": cat.map(|c| c.valid_combinations.len()),
        "min_concepts": cat.map(|c| c.min_concepts),
    })
}

async fn create_dataset(
    State(state): State<AppState>,
    payload: Result<Json<DatasetRequest>, JsonRejection>,
) -> AppResult<(StatusCode, Json<Value>)> {
    let req = body(payload)?;
    let data = match (req.generate, req.dataset) {
        (Some(g), None) => generate(&g)?,
        (None, Some(d)) => Dataset::from_json(&d.to_string())?,
        _ => return Err(AppError::unprocessable("give exactly one of `generate` or `dataset`")),
    };
    let id = state.store().put_dataset(&data)?;
    Ok((StatusCode::CREATED, versioned(dataset_summary(&id, &data))))
}

async fn get_dataset(State(state): State<AppState>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let data = state.store().dataset(&id)?;
    let mut summary = dataset_summary(&id, &data);
    let text = data.to_json()?;
    summary["dataset"] = serde_json::from_str(&text).map_err(AppError::internal)?;
    Ok(versioned(summary))
}

async fn create_job(
    State(state): State<AppState>,
    payload: Result<Json<Value>, JsonRejection>,
) -> AppResult<(StatusCode, Json<Value>)> {
    let req: JobRequest = parse_config(&body(payload)?)?;
    let job = state.registry.submit(req)?;
    Ok((StatusCode::ACCEPTED, versioned(to_value(&job)?)))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    Ok(versioned(to_value(&state.registry.get(&id)?)?))
}

/// Members of a stored selection with per-concept detail.
pub fn proposals_payload(store: &Store, id: &str) -> AppResult<Value> {
    let (props, model_data, pool) = load_proposals(store, id)?;
    let catalog = model_data.ground_truth();
    let pinned_col = pool.pinned.as_ref().map(|p| p.column_index);
    let members: Vec<Value> = props
        .set
        .origins
        .iter()
        .map(|origin| {
            let sample = &pool.samples[origin.sample];
            let columns: Vec<usize> = match origin.column {
                Some(c) => vec![c],
                None => (0..sample.k()).collect(),
            };
            let concepts: Vec<Value> = columns
                .iter()
                .map(|&c| {
                    let act = sample.activations.column(c);
                    let boundary = (model_data.d() == 2 && Some(c) != pinned_col).then(|| {
                        let w = sample.concept_params.weights.row(c);
                        [w[0], w[1], sample.concept_params.biases[c]]
                    });
                    let best = catalog.and_then(|cat| {
                        let m = match_single(&act, cat, 0.0)?;
                        let truth = &cat.concepts[m.concept].values;
                        let rounded = round_all(&act);
                        let agree = rounded.iter().zip(truth).filter(|(p, t)| (**p == **t) != m.negated).count();
                        Some(json!({
                            "concept": m.concept,
                            "name": cat.concepts[m.concept].name,
                            "f1": m.f1,
                            "negated": m.negated,
                            "accuracy": agree as f64 / truth.len() as f64,
                        }))
                    });
                    json!({
                        "column": c,
                        "pinned": Some(c) == pinned_col,
                        "activations": act,
                        "boundary": boundary,
                        "best_match": best,
                    })
                })
                .collect();
            json!({
                "origin": origin,
                "chain_id": sample.chain_id,
                "draw_index": sample.draw_index,
                "accuracy": sample.accuracy,
                "concepts": concepts,
            })
        })
        .collect();
    Ok(json!({
        "id": id,
        "dataset_id": props.dataset_id,
        "pool_ref": props.pool_ref,
        "method": props.set.method,
        "metric": props.set.metric,
        "M": props.set.m,
        "singles": props.singles,
        "truncated": props.set.truncated,
        "pool_size": pool.len(),
        "boundary_space": if props.config.standardize { "standardized" } else { "raw" },
        "members": members,
    }))
}

async fn get_proposals(State(state): State<AppState>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let store = state.store().clone();
    let payload = tokio::task::spawn_blocking(move || proposals_payload(&store, &id))
        .await
        .map_err(AppError::internal)??;
    Ok(versioned(payload))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRequest {
    dataset_id: String,
    #[serde(default)]
    config: Value,
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<SessionRequest>, JsonRejection>,
) -> AppResult<(StatusCode, Json<Value>)> {
    let req = body(payload)?;
    let config: PipelineConfig = parse_config(&req.config)?;
    let session = state.sessions.create(&req.dataset_id, config)?;
    Ok((StatusCode::CREATED, versioned(to_value(&session)?)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    Ok(versioned(to_value(&state.sessions.get(&id)?)?))
}

async fn pin(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<PinRequest>, JsonRejection>,
) -> AppResult<Json<Value>> {
    state.sessions.get(&id)?;
    let session = state.sessions.pin(&id, body(payload)?)?;
    Ok(versioned(to_value(&session)?))
}

async fn complete(State(state): State<AppState>, Path(id): Path<String>) -> AppResult<(StatusCode, Json<Value>)> {
    let session = state.sessions.get(&id)?;
    let pinned = match session.pins.as_slice() {
        [] => return Err(AppError::unprocessable("pin a concept before completing")),
        [one] => one.pinned.clone(),
        _ => return Err(AppError::unprocessable("completion conditions on one pinned column; this session has several")),
    };
    let job = state.registry.submit(JobRequest {
        kind: JobKind::ConditionalSample,
        dataset_id: session.dataset_id.clone(),
        config: session.config.clone(),
        pool_ref: None,
        proposals_ref: None,
        pinned: Some(pinned),
        session_id: Some(id.clone()),
    })?;
    state.sessions.add_job(&id, &job.id)?;
    Ok((StatusCode::ACCEPTED, versioned(to_value(&job)?)))
}

/// Scores every completed proposal set of a session and checks that each member carries the
/// pinned column verbatim.
pub fn session_report_payload(store: &Store, sessions: &Sessions, id: &str) -> AppResult<Value> {
    let session = sessions.get(id)?;
    let mut completions = Vec::new();
    for proposals_id in &session.history {
        let (props, _, pool) = load_proposals(store, proposals_id)?;
        let verbatim = pool.pinned.as_ref().is_some_and(|p| {
            props.set.origins.iter().all(|o| pool.samples[o.sample].activations.column(p.column_index) == p.values)
        });
        completions.push(json!({
            "proposals_id": proposals_id,
            "members": props.set.len(),
            "pinned_verbatim": verbatim,
            "report": score_proposals(store, proposals_id)?,
        }));
    }
    Ok(json!({ "session": session, "completions": completions }))
}

async fn session_report(State(state): State<AppState>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let store = state.store().clone();
    let sessions = Arc::clone(&state.sessions);
    let payload = tokio::task::spawn_blocking(move || session_report_payload(&store, &sessions, &id))
        .await
        .map_err(AppError::internal)??;
    Ok(versioned(payload))
}
