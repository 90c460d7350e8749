use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use smce_api::{router, AppState};
use smce_core::catalog_store::{states_fixture, Metacatalog, Registry};
use smce_core::{generate_catalog, RuleCatalog};
use tower::ServiceExt;

fn catalog() -> Arc<RuleCatalog> {
    static CAT: OnceLock<Arc<RuleCatalog>> = OnceLock::new();
    CAT.get_or_init(|| Arc::new(generate_catalog())).clone()
}

fn app_with(meta: Metacatalog) -> axum::Router {
    let mut reg = Registry::default();
    reg.insert(meta).unwrap();
    router(Arc::new(AppState::new(catalog(), reg, None)))
}

fn app() -> (axum::Router, Metacatalog) {
    let meta = states_fixture();
    (app_with(meta.clone()), meta)
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn id(meta: &Metacatalog, name: &str) -> String {
    meta.mapping_by_name(name).unwrap().id.clone()
}

async fn set(app: &axum::Router, m: &str, c: &str, on: bool) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/mappings/{m}/toggle"), Some(json!({"constraint": c, "desired": on}))).await
}

#[tokio::test]
async fn listings() {
    let (app, _) = app();
    let (s, v) = call(&app, Method::GET, "/dbs", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["id"], "geo");
    let (_, v) = call(&app, Method::GET, "/dbs/geo/sets", None).await;
    assert_eq!(v.as_array().unwrap().len(), 2);
    let (_, v) = call(&app, Method::GET, "/dbs/geo/mappings", None).await;
    let unity = v.as_array().unwrap().iter().find(|m| m["name"] == "1_STATES").unwrap();
    assert_eq!(unity["flags"]["Q"], "asserted");
    assert_eq!(call(&app, Method::GET, "/dbs/nope/sets", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn toggle_one_to_one_with_injective_instance() {
    let (app, meta) = app();
    let sm = id(&meta, "State\u{2218}StateCapital");
    let (s, _) = call(
        &app,
        Method::PUT,
        &format!("/mappings/{sm}/instance"),
        Some(json!({"set": ["AL", "AK", "AZ"], "map": {"AL": "AK", "AK": "AZ", "AZ": "AL"}})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(set(&app, &sm, "T", true).await.0, StatusCode::OK);
    let (s, v) = set(&app, &sm, "UK", true).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "accepted");
    assert_eq!(v["state"]["flags"]["UK"], "asserted");
    assert_eq!(v["state"]["flags"]["OT"], "implied");
    assert_eq!(v["state"]["flags"]["B"], "implied");
    assert_eq!(v["state"]["satisfaction"]["UK"], true);
    let (_, fresh) = call(&app, Method::GET, &format!("/mappings/{sm}/constraints"), None).await;
    assert_eq!(fresh, v["state"]);
    // Repeating an accepted toggle is a no-op.
    let (s, again) = set(&app, &sm, "UK", true).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again["status"], "unchanged");
    assert_eq!(again["state"], fresh);
}

#[tokio::test]
async fn rejections_leave_state_untouched() {
    let (app, meta) = app();
    let sm = id(&meta, "State\u{2218}StateCapital");
    let capital = id(&meta, "StateCapital");
    set(&app, &sm, "A", true).await;
    set(&app, &sm, "T", true).await;
    set(&app, &sm, "OT", true).await;
    let cases: Vec<(&str, &str, bool, &str)> = vec![
        (&sm, "IR", false, "cannot be removed as it is implied by other constraints"),
        (&sm, "NP", true, "Non-prime cannot be added, as the constraint set of State\u{2218}StateCapital would become incoherent!"),
        (&sm, "DV", true, "the constraint set of State\u{2218}StateCapital would become incoherent!"),
        (&capital, "R", true, "would become incoherent!"),
    ];
    for (m, c, on, text) in cases {
        let (_, before) = call(&app, Method::GET, &format!("/mappings/{m}/constraints"), None).await;
        let (s, v) = set(&app, m, c, on).await;
        assert_eq!(s, StatusCode::CONFLICT, "{c}: {v}");
        assert!(v["message"].as_str().unwrap().contains(text), "{v}");
        assert!(v["note"].is_string());
        let (_, after) = call(&app, Method::GET, &format!("/mappings/{m}/constraints"), None).await;
        assert_eq!(before, after);
        assert_eq!(v["state"], after);
    }
}

#[tokio::test]
async fn unity_rejection_and_unsatisfied_instance() {
    let mut meta = states_fixture();
    let states = meta.set_by_name("STATES").unwrap().id.clone();
    let f = meta
        .register_mapping("Neighbor", &states, &states, smce_core::MappingKind::Plain)
        .unwrap()
        .id;
    let app = app_with(meta);
    set(&app, &f, "T", true).await;
    let (s, v) = set(&app, &f, "R", true).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["message"].as_str().unwrap().ends_with("Neighbor would become a unity mapping!"));
    call(
        &app,
        Method::PUT,
        &format!("/mappings/{f}/instance"),
        Some(json!({"set": [1, 2, 3], "map": {"1": 2, "2": 2, "3": 1}})),
    )
    .await;
    let (_, before) = call(&app, Method::GET, &format!("/mappings/{f}/constraints"), None).await;
    let (s, v) = set(&app, &f, "UK", true).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(
        v["message"],
        "One-to-one cannot be added to the constraint set of Neighbor , as its current instance does not satisfy it!"
    );
    let (_, after) = call(&app, Method::GET, &format!("/mappings/{f}/constraints"), None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn client_errors() {
    let (app, meta) = app();
    let unity = id(&meta, "1_STATES");
    let sm = id(&meta, "State\u{2218}StateCapital");
    assert_eq!(set(&app, &unity, "A", true).await.0, StatusCode::FORBIDDEN);
    assert_eq!(set(&app, &sm, "SM", false).await.0, StatusCode::FORBIDDEN);
    assert_eq!(set(&app, &sm, "XX", true).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(set(&app, "geo.m999", "T", true).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/mappings/geo.m999/constraints", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, &format!("/mappings/{sm}/instance"), None).await.0, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::PUT, &format!("/mappings/{sm}/instance"), Some(json!({"map": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn verdicts() {
    let (app, _) = app();
    let (s, v) = call(&app, Method::GET, "/catalog/verdict?flags=SM,OT,NP,T", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["verdict"], "incoherent");
    assert_eq!(v["note"], "A.6.1.1 (viii)");
    let (_, v) = call(&app, Method::GET, "/catalog/verdict?flags=", None).await;
    assert_eq!(v, json!({"verdict": "coherent", "redundant": []}));
    let (_, v) = call(&app, Method::GET, "/catalog/verdict?flags=SM,T,R", None).await;
    assert_eq!(v["verdict"], "rejected");
    let (_, v) = call(&app, Method::GET, "/catalog/verdict?flags=SM,T,R&compound=true", None).await;
    assert_eq!(v["verdict"], "coherent");
    assert_eq!(call(&app, Method::GET, "/catalog/verdict?flags=ZZ", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn exports() {
    let (app, _) = app();
    let (s, v) = call(&app, Method::GET, "/catalog/export.csv", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v.as_str().unwrap().starts_with("x,Ch,SM,"));
    let (_, v) = call(&app, Method::GET, "/catalog/export.csv?table=corollaries", None).await;
    assert!(v.as_str().unwrap().starts_with("CorId,CorType,CorDescription,CorSection"));
    let (s, v) = call(&app, Method::GET, "/catalog/export.json", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["corollaries"].is_array());
}

#[tokio::test]
async fn accepted_mutations_are_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let meta = states_fixture();
    let sm = id(&meta, "State\u{2218}StateCapital");
    let mut reg = Registry::default();
    reg.insert(meta).unwrap();
    let app = router(Arc::new(AppState::new(catalog(), reg, Some(dir.path().to_path_buf()))));
    set(&app, &sm, "A", true).await;
    let back = Registry::load_dir(dir.path()).unwrap();
    let st = back.databases["geo"].state(&sm).unwrap();
    assert!(st.flags().contains(smce_core::ConstraintType::Acyclic));
}
