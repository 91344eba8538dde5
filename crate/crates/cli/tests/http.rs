mod common;

use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use exforge::jobs::{self, Job, JobKind};
use exforge::{Config, Context};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn router_with(config: &Config) -> Router {
    exforge::server::app(Context::from_config(config).unwrap(), &config.server).unwrap()
}

fn router(dir: &Path) -> Router {
    router_with(&common::config(dir))
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let response = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    let reply = Reply {
        status,
        headers,
        body,
    };
    check_schemas(uri, &reply);
    reply
}

fn load_schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Schemas {
    error: jsonschema::Validator,
    job: jsonschema::Validator,
}

fn schemas() -> &'static Schemas {
    static SCHEMAS: OnceLock<Schemas> = OnceLock::new();
    SCHEMAS.get_or_init(|| {
        let error = load_schema("api_error.schema.json");
        let mut job = load_schema("job.schema.json");
        job["properties"]["error"] = error.clone();
        Schemas {
            error: jsonschema::validator_for(&error).unwrap(),
            job: jsonschema::validator_for(&job).unwrap(),
        }
    })
}

fn assert_valid(validator: &jsonschema::Validator, what: &str, v: &Value) {
    let errors: Vec<String> = validator.iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{what} violates its schema: {errors:?}\n{v}");
}

/// Every error body is an ApiError and every job body is a Job.
fn check_schemas(uri: &str, reply: &Reply) {
    let is_json = reply
        .headers
        .get(header::CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes().starts_with(b"application/json"));
    if !is_json {
        return;
    }
    let v = reply.json();
    if reply.status.is_client_error() || reply.status.is_server_error() {
        assert_valid(&schemas().error, "error body", &v);
    } else if reply.status == StatusCode::ACCEPTED || uri.starts_with("/jobs/") {
        assert_valid(&schemas().job, "job", &v);
    }
}

/// Polls a job until it leaves Pending.
async fn wait(app: &Router, accepted: &Reply) -> Value {
    assert_eq!(accepted.status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&accepted.body));
    let id = accepted.json()["id"].as_str().unwrap().to_string();
    assert_eq!(accepted.headers[header::LOCATION], format!("/jobs/{id}"));
    for _ in 0..400 {
        let job = call(app, "GET", &format!("/jobs/{id}"), None).await.json();
        if job["status"] != "Pending" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("job {id} did not finish");
}

async fn generate(app: &Router, body: Value) -> Value {
    let accepted = call(app, "POST", "/bundles:generate", Some(body)).await;
    wait(app, &accepted).await
}

fn assessment(verdict: &str) -> Value {
    json!({
        "rater_id": "r1",
        "sensible": verdict,
        "novel": "Yes",
        "solution_matches_statement": "Yes",
        "topic_matches_context": "Yes",
        "uses_function_or_class": "NA",
        "uses_list_or_dictionary": "NA",
    })
}

#[tokio::test]
async fn generate_job_completes_with_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    let job = generate(&app, json!({ "prime": "speeding_check", "context": "ice hockey" })).await;
    assert_eq!(job["status"], "Done", "{job}");
    assert_eq!(job["kind"], "generate");
    let id = job["result"]["bundle"]["id"].as_str().unwrap();

    let view = call(&app, "GET", &format!("/bundles/{id}"), None).await;
    assert_eq!(view.status, StatusCode::OK);
    assert_eq!(view.json()["report"]["tests_pass"], "Yes");

    let list = call(&app, "GET", "/bundles?offset=0&limit=10", None).await.json();
    assert_eq!(list["total"], 1);
    assert_eq!(list["items"][0]["id"], id);
    assert_eq!(list["items"][0]["tests_pass"], "Yes");
}

#[tokio::test]
async fn backend_miss_fails_the_job_with_503_code() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    let job = generate(&app, json!({ "prime": "speeding_check", "context": "books" })).await;
    assert_eq!(job["status"], "Failed");
    assert_eq!(job["error"]["code"], "backend_unavailable");
    assert_eq!(exforge::ErrorCode::BackendUnavailable.http_status(), 503);
}

#[tokio::test]
async fn invalid_bodies_are_400() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    let job = generate(&app, json!({ "prime": "speeding_check", "context": "ice hockey" })).await;
    let id = job["result"]["bundle"]["id"].as_str().unwrap().to_string();

    let r = call(&app, "POST", &format!("/bundles/{id}/assessment"), Some(assessment("Perhaps"))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let e = r.json();
    assert_eq!(e["code"], "validation");
    assert!(e["message"].as_str().unwrap().contains("Perhaps"));

    let r = call(&app, "POST", "/bundles:generate", Some(json!({ "prime": "speeding_check", "colour": 1 }))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    // NA is only allowed on the topicality questions.
    let mut body = assessment("Yes");
    body["novel"] = json!("NA");
    let r = call(&app, "POST", &format!("/bundles/{id}/assessment"), Some(body)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = call(&app, "POST", "/grids", Some(json!({ "spec": { "contexts": [], "concept_sets": [], "primes": [], "temperatures": [], "repeats": 1 } }))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn missing_resources_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    for (method, uri, body) in [
        ("GET", "/bundles/nope", None),
        ("POST", "/bundles/nope:evaluate", None),
        ("POST", "/bundles/nope/assessment", Some(assessment("Yes"))),
        ("POST", "/assessments/nope:resolve", Some(json!({ "field": "sensible", "resolved": "Yes", "resolvers": ["a", "b"] }))),
        ("GET", "/jobs/nope", None),
        ("GET", "/grids/nope/summary", None),
        ("GET", "/no/such/route", None),
    ] {
        let r = call(&app, method, uri, body).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{method} {uri}");
        assert_eq!(r.json()["code"], "not_found", "{method} {uri}");
    }
}

#[tokio::test]
async fn workbench_flow_exports_the_accepted_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    let job = generate(&app, json!({ "prime": "speeding_check", "context": "ice hockey" })).await;
    let id = job["result"]["bundle"]["id"].as_str().unwrap().to_string();

    let r = call(&app, "POST", &format!("/bundles/{id}:evaluate"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["tests_pass"], "Yes");

    let r = call(&app, "POST", &format!("/bundles/{id}/assessment"), Some(assessment("Maybe"))).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let record_id = r.json()["id"].as_str().unwrap().to_string();

    // Unresolved Maybe does not satisfy sensible = Yes.
    let r = call(&app, "GET", "/export?sensible=Yes", None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);

    let resolution = json!({ "field": "sensible", "resolved": "Yes", "resolvers": ["r1", "r2"], "rationale": "agreed" });
    let r = call(&app, "POST", &format!("/assessments/{record_id}:resolve"), Some(resolution.clone())).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    let effective = r.json();
    assert_eq!(effective["record"]["sensible"], "Yes");
    assert_eq!(effective["resolved_fields"], json!(["sensible"]));

    // Same resolution again is fine; a different one conflicts.
    let r = call(&app, "POST", &format!("/assessments/{record_id}:resolve"), Some(resolution)).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = call(
        &app,
        "POST",
        &format!("/assessments/{record_id}:resolve"),
        Some(json!({ "field": "sensible", "resolved": "No", "resolvers": ["r1", "r2"] })),
    )
    .await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["code"], "conflict");

    let r = call(&app, "GET", "/export?tests_pass=Yes&sensible=Yes", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers[header::CONTENT_TYPE], "application/zip");
    assert_eq!(r.headers["x-pack-count"], "1");
    let entry = format!("{id}/solution.py");
    assert!(r.body.windows(entry.len()).any(|w| w == entry.as_bytes()));

    let again = call(&app, "GET", "/export?tests_pass=Yes&sensible=Yes", None).await;
    assert_eq!(again.body, r.body);

    let view = call(&app, "GET", &format!("/bundles/{id}"), None).await.json();
    assert_eq!(view["assessment"]["record"]["sensible"], "Yes");
}

#[tokio::test]
async fn regenerate_is_single_flight_and_budgeted() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    let job = generate(&app, json!({ "prime": "speeding_check", "context": "ice hockey" })).await;
    let id = job["result"]["bundle"]["id"].as_str().unwrap().to_string();

    // Samples 1 (failing) and 2 (passing) follow the original's sample 0.
    let first = call(&app, "POST", &format!("/bundles/{id}:regenerate"), Some(json!({ "budget": 3 }))).await;
    let second = call(&app, "POST", &format!("/bundles/{id}:regenerate"), None).await;
    let a = wait(&app, &first).await;
    let b = wait(&app, &second).await;
    if first.json()["id"] == second.json()["id"] {
        assert_eq!(a, b);
    }
    assert_eq!(a["status"], "Done", "{a}");
    assert_eq!(a["result"]["attempts"], 2);
    assert_eq!(a["target"], id.as_str());

    let r = call(&app, "POST", &format!("/bundles/{id}:regenerate"), Some(json!({ "budget": 1 }))).await;
    let failed = wait(&app, &r).await;
    assert_eq!(failed["status"], "Failed");
    assert_eq!(failed["error"]["code"], "budget_exhausted");
    assert_eq!(failed["error"]["details"]["attempts"][0]["tests_pass"], "No");

    let r = call(&app, "POST", &format!("/bundles/{id}:frobnicate"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn explanation_judging_scores_lines() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    let accepted = call(&app, "POST", "/explanations:generate", Some(json!({ "program": "fisherman" }))).await;
    let job = wait(&app, &accepted).await;
    assert_eq!(job["status"], "Done", "{job}");
    let explanation = &job["result"][0];
    let id = explanation["id"].as_str().unwrap().to_string();
    assert_eq!(explanation["steps"].as_array().unwrap().len(), 9);

    let judgments: Vec<Value> = (1..=9)
        .map(|i| json!({ "step_index": i, "verdict": if i == 3 || i == 7 { "Incorrect" } else { "Correct" } }))
        .collect();
    let r = call(
        &app,
        "POST",
        &format!("/explanations/{id}/judgments"),
        Some(json!({ "rater_id": "r1", "all_parts_explained": true, "judgments": judgments })),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    let score = r.json();
    assert_eq!(score["correct_lines"], 7);
    assert_eq!(score["total_lines"], 9);

    let r = call(
        &app,
        "POST",
        &format!("/explanations/{id}/judgments"),
        Some(json!({ "rater_id": "r1", "all_parts_explained": true, "judgments": [{ "step_index": 1, "verdict": "Correct" }] })),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let stored = call(&app, "GET", &format!("/explanations/{id}"), None).await.json();
    assert_eq!(stored["judgments"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn grid_job_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(dir.path());
    let spec = json!({
        "contexts": ["ice hockey", "music"],
        "concept_sets": [{ "name": "none" }],
        "primes": ["speeding_check"],
        "temperatures": [0.0],
        "repeats": 1,
    });
    let accepted = call(&app, "POST", "/grids", Some(json!({ "id": "g1", "spec": spec }))).await;
    let job = wait(&app, &accepted).await;
    assert_eq!(job["status"], "Done", "{job}");
    assert_eq!(job["result"]["grid_id"], "g1");

    let summary = call(&app, "GET", "/grids/g1/summary", None).await.json();
    assert_eq!(summary["jobs"], 2);
    assert_eq!(summary["tests_pass"], json!({ "n": 1, "d": 2, "percentage": 50.0 }));
    let md = call(&app, "GET", "/grids/g1/summary?format=markdown", None).await;
    assert!(String::from_utf8(md.body).unwrap().contains("| 1 / 2 |"));
}

#[tokio::test]
async fn pending_jobs_fail_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::config(dir.path());
    let store = exforge_core::Store::open(&config.store).unwrap();
    let stale = Job::pending(JobKind::Generate, None);
    jobs::save(&store, &stale).unwrap();

    let app = router_with(&config);
    let job = call(&app, "GET", &format!("/jobs/{}", stale.id), None).await.json();
    assert_eq!(job["status"], "Failed");
    assert_eq!(job["error"]["code"], "interrupted");
}

#[tokio::test]
async fn shared_token_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::config(dir.path());
    config.server.token = Some("s3cret".into());
    let app = router_with(&config);
    let r = call(&app, "GET", "/bundles", None).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(r.json()["code"], "unauthorized");

    let req = Request::get("/bundles")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
    assert_eq!(call(&app, "GET", "/health", None).await.status, StatusCode::OK);
}

#[tokio::test]
async fn static_assets_are_served_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("assets");
    std::fs::create_dir_all(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<h1>workbench</h1>").unwrap();
    let mut config = common::config(dir.path());
    config.server.assets = Some(assets);
    let app = router_with(&config);
    let r = call(&app, "GET", "/index.html", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, b"<h1>workbench</h1>");
}
