//! HTTP facade over the metacatalog: read endpoints, catalog verdicts, and
//! atomic constraint toggles.
//!
//! Every database lives in its own slot holding an immutable snapshot. Reads
//! clone the snapshot pointer and never wait on writers; mutations take the
//! slot's writer lock, work on a copy, persist it, and only then publish it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use smce_core::catalog_store::{Metacatalog, Registry, StoreError};
use smce_core::enforcement::{self, EnforcementError, Member, Outcome, Provenance, Status};
use smce_core::rule_catalog::{Compoundness, RuleCatalog, Verdict};
use smce_core::semantics;
use smce_core::{ConstraintFlags, ConstraintType};

mod views;

pub use views::{flag_cells, verdict_view, StateView};

struct DbSlot {
    snapshot: RwLock<Arc<Metacatalog>>,
    writer: tokio::sync::Mutex<()>,
}

impl DbSlot {
    fn new(meta: Metacatalog) -> Self {
        DbSlot {
            snapshot: RwLock::new(Arc::new(meta)),
            writer: tokio::sync::Mutex::new(()),
        }
    }

    fn read(&self) -> Arc<Metacatalog> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

/// Shared service state.
pub struct AppState {
    catalog: Arc<RuleCatalog>,
    dbs: BTreeMap<String, DbSlot>,
    data_dir: Option<PathBuf>,
}

impl AppState {
    /// `data_dir`, when given, receives `<db>.matbase.json` after every
    /// accepted mutation.
    pub fn new(catalog: Arc<RuleCatalog>, registry: Registry, data_dir: Option<PathBuf>) -> Self {
        AppState {
            catalog,
            dbs: registry
                .databases
                .into_iter()
                .map(|(id, meta)| (id, DbSlot::new(meta)))
                .collect(),
            data_dir,
        }
    }

    fn slot(&self, db: &str) -> Result<&DbSlot, ApiError> {
        self.dbs
            .get(db)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown database `{db}`")))
    }

    /// Slot owning a mapping id (`<db>.m<n>`).
    fn owner(&self, mapping: &str) -> Result<(&str, &DbSlot), ApiError> {
        let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("unknown mapping `{mapping}`"));
        let db = mapping.split('.').next().ok_or_else(not_found)?;
        let (id, slot) = self.dbs.get_key_value(db).ok_or_else(not_found)?;
        if !slot.read().mappings.contains_key(mapping) {
            return Err(not_found());
        }
        Ok((id.as_str(), slot))
    }

    fn persist(&self, meta: &Metacatalog) -> Result<(), ApiError> {
        if let Some(dir) = &self.data_dir {
            meta.save(&dir.join(meta.file_name())).map_err(|e| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
            })?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound { .. } => StatusCode::NOT_FOUND,
            StoreError::ReadOnly(_) => StatusCode::FORBIDDEN,
            StoreError::Conflict { .. } => StatusCode::CONFLICT,
            StoreError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<EnforcementError> for ApiError {
    fn from(e: EnforcementError) -> Self {
        match e {
            EnforcementError::Store(s) => s.into(),
            EnforcementError::ReadOnly(_) | EnforcementError::SystemConstraint(_) => {
                ApiError::new(StatusCode::FORBIDDEN, e.to_string())
            }
            EnforcementError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            EnforcementError::AlreadyMember(..) | EnforcementError::NotMember(..) => {
                ApiError::new(StatusCode::BAD_REQUEST, e.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/dbs", get(list_dbs))
        .route("/dbs/{db}/sets", get(list_sets))
        .route("/dbs/{db}/mappings", get(list_mappings))
        .route("/mappings/{id}/constraints", get(get_constraints).post(toggle))
        .route("/mappings/{id}/toggle", post(toggle))
        .route("/mappings/{id}/instance", get(get_instance).put(put_instance))
        .route("/catalog/verdict", get(verdict))
        .route("/catalog/export.csv", get(export_csv))
        .route("/catalog/export.json", get(export_json))
        .with_state(state)
}

async fn list_dbs(State(app): State<Arc<AppState>>) -> Json<Value> {
    let dbs: Vec<Value> = app
        .dbs
        .values()
        .map(|slot| {
            let meta = slot.read();
            json!({
                "id": meta.database.id,
                "name": meta.database.name,
                "sets": meta.sets.len(),
                "mappings": meta.mappings.len(),
            })
        })
        .collect();
    Json(Value::Array(dbs))
}

async fn list_sets(State(app): State<Arc<AppState>>, Path(db): Path<String>) -> ApiResult<Json<Value>> {
    let meta = app.slot(&db)?.read();
    Ok(Json(json!(meta.sets.values().collect::<Vec<_>>())))
}

async fn list_mappings(State(app): State<Arc<AppState>>, Path(db): Path<String>) -> ApiResult<Json<Value>> {
    let meta = app.slot(&db)?.read();
    let rows: Vec<Value> = meta
        .mappings
        .values()
        .map(|m| {
            let mut v = serde_json::to_value(m).expect("descriptor serializes");
            v["flags"] = json!(flag_cells(&meta.states[&m.id]));
            v
        })
        .collect();
    Ok(Json(Value::Array(rows)))
}

async fn get_constraints(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StateView>> {
    let (_, slot) = app.owner(&id)?;
    let meta = slot.read();
    Ok(Json(StateView::of(&meta, &id)))
}

#[derive(Debug, Deserialize)]
pub struct ToggleRequest {
    pub constraint: String,
    #[serde(default = "yes")]
    pub desired: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize)]
pub struct PropagatedView {
    pub mapping: String,
    pub state: StateView,
    pub plans: Vec<enforcement::EnforcementPlan>,
}

#[derive(Debug, Serialize)]
pub struct ToggleResponse {
    pub status: Status,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub message: String,
    /// Corollary id and description behind a rejection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub state: StateView,
    pub plans: Vec<enforcement::EnforcementPlan>,
    pub propagated: Vec<PropagatedView>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn parse_constraint(abbrev: &str) -> ApiResult<ConstraintType> {
    ConstraintType::from_abbrev(abbrev.trim()).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn toggle(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ToggleRequest>,
) -> ApiResult<Response> {
    let c = parse_constraint(&req.constraint)?;
    let (_, slot) = app.owner(&id)?;
    let _writer = slot.writer.lock().await;
    let mut next = (*slot.read()).clone();
    let report = enforcement::toggle(&mut next, &app.catalog, &id, c, req.desired)?;
    let Outcome {
        status,
        message,
        note,
        plans,
        notes,
        ..
    } = report.outcome;
    if status == Status::Accepted {
        app.persist(&next)?;
        *slot.snapshot.write().expect("snapshot lock") = Arc::new(next);
    }
    let meta = slot.read();
    let body = ToggleResponse {
        status,
        message,
        note,
        state: StateView::of(&meta, &id),
        plans,
        propagated: report
            .propagated
            .into_iter()
            .map(|o| PropagatedView {
                state: StateView::of(&meta, &o.mapping),
                mapping: o.mapping,
                plans: o.plans,
            })
            .collect(),
        notes,
    };
    let code = if status.is_rejection() {
        StatusCode::CONFLICT
    } else {
        StatusCode::OK
    };
    Ok((code, Json(body)).into_response())
}

async fn get_instance(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (_, slot) = app.owner(&id)?;
    let meta = slot.read();
    let inst = meta
        .effective_instance(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("mapping `{id}` has no instance")))?;
    Ok(Json(semantics::instance_to_json(&inst)))
}

async fn put_instance(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Json<StateView>> {
    let inst = semantics::parse_instance_json(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let (_, slot) = app.owner(&id)?;
    let _writer = slot.writer.lock().await;
    let mut next = (*slot.read()).clone();
    next.set_instance(&id, inst)?;
    app.persist(&next)?;
    let view = StateView::of(&next, &id);
    *slot.snapshot.write().expect("snapshot lock") = Arc::new(next);
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
pub struct VerdictQuery {
    #[serde(default)]
    pub flags: String,
    #[serde(default)]
    pub compound: bool,
}

async fn verdict(State(app): State<Arc<AppState>>, Query(q): Query<VerdictQuery>) -> ApiResult<Json<Value>> {
    let flags: ConstraintFlags = q
        .flags
        .parse()
        .map_err(|e: smce_core::ModelError| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let compound = if q.compound {
        Compoundness::Compound
    } else {
        Compoundness::Single
    };
    let v: Verdict = app.catalog.lookup(flags.code(), compound);
    Ok(Json(verdict_view(&app.catalog, &v)))
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    pub table: Option<String>,
}

async fn export_csv(State(app): State<Arc<AppState>>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let mut buf = Vec::new();
    let res = match q.table.as_deref().unwrap_or("coherencies") {
        "coherencies" => app.catalog.write_coherencies_csv(&mut buf),
        "redundancies" => app.catalog.write_redundancies_csv(&mut buf),
        "corollaries" => app.catalog.write_corollaries_csv(&mut buf),
        other => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown table `{other}`")));
        }
    };
    res.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
}

async fn export_json(State(app): State<Arc<AppState>>) -> ApiResult<Response> {
    let text = app
        .catalog
        .to_json()
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

/// Serves `router(state)` until ctrl-c.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Tri-state of one flag in a constraint state.
pub fn cell(member: Option<&Member>) -> &'static str {
    match member.map(|m| m.provenance) {
        None => "off",
        Some(Provenance::Asserted) => "asserted",
        Some(Provenance::Implied) => "implied",
    }
}
