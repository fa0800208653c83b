use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use speciescope::dataset;
use speciescope::synth::{write_synthetic, SynthConfig};
use speciescope::Split;
use speciescope_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

fn synth_root(n: usize, with_features: bool) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n, seed: 11, image_size: 32, train_fraction: 0.8, with_features };
    write_synthetic(dir.path(), &cfg).unwrap();
    dir
}

fn app(root: &Path) -> (Arc<AppState>, Router) {
    let state = AppState::open(&ServiceConfig::new(root)).unwrap();
    (state.clone(), router(state))
}

async fn raw(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get("content-type")
        .map(|h| h.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ctype)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes, _) = raw(app, method, uri, body).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

/// Polls a job to a terminal state, checking progress never decreases.
async fn wait_job(app: &Router, id: &str) -> Value {
    let start = Instant::now();
    let mut last = 0.0;
    loop {
        let (s, job) = call(app, "GET", &format!("/api/jobs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        let p = job["progress"].as_f64().unwrap();
        assert!(p >= last, "progress went from {last} to {p}");
        last = p;
        if job["state"] == "done" || job["state"] == "failed" {
            return job;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "job {id} did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

async fn train_tabular(app: &Router, target: &str) -> Value {
    let body = json!({"kind": "train_tabular", "target": target, "seed": 1, "hidden": [16], "schedule": [[2, 0.01]]});
    let (s, job) = call(app, "POST", "/api/jobs", Some(body)).await;
    assert!(s == StatusCode::ACCEPTED || s == StatusCode::OK, "{s} {job}");
    wait_job(app, job["job_id"].as_str().unwrap()).await
}

#[tokio::test(flavor = "multi_thread")]
async fn specimens_filter_and_serve_images() {
    let dir = synth_root(40, false);
    let (_, app) = app(dir.path());
    let (s, all) = call(&app, "GET", "/api/specimens", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(all["count"], 40);
    let (_, train) = call(&app, "GET", "/api/specimens?split=train", None).await;
    assert_eq!(train["count"], 32);
    let (_, black) = call(&app, "GET", "/api/specimens?category=BLACK", None).await;
    let n_black = all["specimens"].as_array().unwrap().iter().filter(|r| r["category"] == "black").count();
    assert_eq!(black["count"], n_black);
    let (s, _) = call(&app, "GET", "/api/specimens?split=bogus", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let img = all["specimens"][0]["image"].as_str().unwrap().to_string();
    assert!(img.starts_with("/static/") && img.ends_with(".png"));
    let (s, bytes, ctype) = raw(&app, "GET", &img, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype, "image/png");
    assert_eq!(&bytes[1..4], b"PNG");
    let (s, _, _) = raw(&app, "GET", "/static/..%2Fmanifest.csv", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn confidence_order_needs_a_model() {
    let dir = synth_root(40, false);
    let (_, app) = app(dir.path());
    let (s, _) = call(&app, "GET", "/api/specimens?order=confidence", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(train_tabular(&app, "category").await["state"], "done");
    let (s, v) = call(&app, "GET", "/api/specimens?order=confidence", None).await;
    assert_eq!(s, StatusCode::OK);
    let groups = v["groups"].as_array().unwrap();
    let flat: Vec<&str> = groups.iter().flat_map(|g| g["ids"].as_array().unwrap().iter().map(|i| i.as_str().unwrap())).collect();
    let listed: Vec<&str> = v["specimens"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(flat, listed);
    for g in groups {
        let ids = g["ids"].as_array().unwrap();
        let conf: Vec<f64> = ids
            .iter()
            .map(|id| v["specimens"].as_array().unwrap().iter().find(|r| r["id"] == *id).unwrap()["predicted"]["confidence"].as_f64().unwrap())
            .collect();
        assert!(conf.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn evaluations_persist_and_dedupe() {
    let dir = synth_root(20, false);
    {
        let (_, app) = app(dir.path());
        let body = json!({"id": "sp00003", "score": 9, "category": " Shell ", "author": "ana", "request_id": "r-1"});
        let (s, first) = call(&app, "POST", "/api/evaluations", Some(body.clone())).await;
        assert_eq!(s, StatusCode::CREATED);
        assert_eq!(first["duplicate"], false);
        let (s, again) = call(&app, "POST", "/api/evaluations", Some(body)).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(again["duplicate"], true);
        assert_eq!(again["entry"]["seq"], first["entry"]["seq"]);

        let (s, _) = call(&app, "POST", "/api/evaluations", Some(json!({"id": "nope", "score": 1}))).await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        let (s, _) = call(&app, "POST", "/api/evaluations", Some(json!({"id": "sp00001", "score": 11}))).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        let (s, _) = call(&app, "POST", "/api/evaluations", Some(json!({"id": "sp00001"}))).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
    }
    let lines = std::fs::read_to_string(dir.path().join("ledger.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);

    let (state, app) = app(dir.path());
    assert_eq!(state.ledger_seq(), 1);
    let (_, v) = call(&app, "GET", "/api/specimens?category=shell", None).await;
    let row = v["specimens"].as_array().unwrap().iter().find(|r| r["id"] == "sp00003").unwrap().clone();
    assert_eq!(row["score"], 9);
    let (_, again) = call(
        &app,
        "POST",
        "/api/evaluations",
        Some(json!({"id": "sp00003", "score": 2, "request_id": "r-1"})),
    )
    .await;
    assert_eq!(again["duplicate"], true);
    assert_eq!(again["entry"]["score"], 9);
}

#[tokio::test(flavor = "multi_thread")]
async fn maps_validate_and_render() {
    let dir = synth_root(60, false);
    let (_, app) = app(dir.path());
    let q = "/api/maps?base_id=sp00000&dim_x=0&dim_y=1&res=8";
    let (s, _) = call(&app, "GET", q, None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(train_tabular(&app, "category").await["state"], "done");
    let (s, _) = call(&app, "GET", "/api/maps?base_id=sp00000&dim_x=2&dim_y=2", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", "/api/maps?base_id=sp00000&dim_x=0&dim_y=1&res=1000", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", "/api/maps?base_id=zzz&dim_x=0&dim_y=1", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "GET", q, None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["map"]["cells"].as_array().unwrap().len(), 64);
    assert!(!v["legend"].as_array().unwrap().is_empty());
    let (s, bytes, ctype) = raw(&app, "GET", v["image"].as_str().unwrap(), None).await;
    assert_eq!((s, ctype.as_str()), (StatusCode::OK, "image/png"));
    let img = image::load_from_memory(&bytes).unwrap();
    assert_eq!(img.width(), 8 * 64);
}

#[tokio::test(flavor = "multi_thread")]
async fn jobs_cache_by_config_and_ledger() {
    let dir = synth_root(60, false);
    let (_, app) = app(dir.path());
    let body = json!({"kind": "train_tabular", "target": "score", "seed": 3, "hidden": [8], "schedule": [[1, 0.01]]});
    let (s, a) = call(&app, "POST", "/api/jobs", Some(body.clone())).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(a["cache_hit"], false);
    let done = wait_job(&app, a["job_id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "done");
    assert_eq!(done["progress"], 1.0);
    let model_ref = done["result_ref"].as_str().unwrap();
    assert!(model_ref.ends_with(".spcm"));
    let (s, bytes, _) = raw(&app, "GET", model_ref, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&bytes[..4], b"SPCM");

    let (s, b) = call(&app, "POST", "/api/jobs", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["cache_hit"], true);
    assert_eq!(b["job_id"], a["job_id"]);

    call(&app, "POST", "/api/evaluations", Some(json!({"id": "sp00001", "score": 4}))).await;
    let (_, c) = call(&app, "POST", "/api/jobs", Some(body)).await;
    assert_eq!(c["cache_hit"], false);
    assert_ne!(c["job_id"], a["job_id"]);
    wait_job(&app, c["job_id"].as_str().unwrap()).await;

    let (s, _) = call(&app, "GET", "/api/jobs/job-404", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/jobs", Some(json!({"kind": "teleport"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/jobs", Some(json!({"kind": "train_head", "target": "category"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "no features in this root");
    let (s, _) = call(&app, "POST", "/api/jobs", Some(json!({"kind": "embed", "space": "genotype", "perplexity": 50.0}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "perplexity infeasible for 60 points");
}

#[tokio::test(flavor = "multi_thread")]
async fn failing_job_reports_error() {
    let dir = synth_root(30, false);
    let manifest = dir.path().join("manifest.csv");
    let ds = dataset::load_manifest(&manifest).unwrap();
    let specimens = ds
        .specimens()
        .iter()
        .cloned()
        .map(|mut s| {
            s.split = Split::Unassigned;
            s
        })
        .collect();
    dataset::write_manifest(&speciescope::Dataset::new(specimens, &manifest).unwrap(), &manifest).unwrap();
    let (_, app) = app(dir.path());
    let job = train_tabular(&app, "category").await;
    assert_eq!(job["state"], "failed");
    assert!(job["error"].as_str().unwrap().contains("training"), "{job}");
    assert!(job["result_ref"].is_null());
}

#[tokio::test(flavor = "multi_thread")]
async fn embedding_job_then_fetch() {
    let dir = synth_root(40, false);
    let (_, app) = app(dir.path());
    let (s, _) = call(&app, "GET", "/api/embedding?space=genotype", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, job) = call(
        &app,
        "POST",
        "/api/jobs",
        Some(json!({"kind": "embed", "space": "genotype", "seed": 2, "perplexity": 8.0, "iterations": 300})),
    )
    .await;
    let job = wait_job(&app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "done", "{job}");
    let (s, v) = call(&app, "GET", "/api/embedding?space=genotype", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["rows"].as_array().unwrap().len(), 40);
    assert_eq!(v["stale"], false);
    call(&app, "POST", "/api/evaluations", Some(json!({"id": "sp00001", "score": 4}))).await;
    let (_, v) = call(&app, "GET", "/api/embedding?space=genotype", None).await;
    assert_eq!(v["stale"], true);
    let row = v["rows"].as_array().unwrap().iter().find(|r| r["id"] == "sp00001").unwrap().clone();
    assert_eq!(row["score"], 4);
}

#[tokio::test(flavor = "multi_thread")]
async fn measures_and_correlations() {
    let dir = synth_root(24, false);
    let (_, app) = app(dir.path());
    let (s, v) = call(&app, "GET", "/api/measures?ids=sp00000,sp00001", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["measures"].as_array().unwrap().len(), 2);
    assert!(v["measures"][0]["entropy"].as_f64().unwrap() >= 0.0);
    let (s, _) = call(&app, "GET", "/api/measures?ids=ghost", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, all) = call(&app, "GET", "/api/correlations?variant=all", None).await;
    assert_eq!(s, StatusCode::OK, "{all}");
    assert_eq!(all["matrix"]["labels"].as_array().unwrap().len(), 8);
    assert_eq!(all["n"], 24);
    assert!(all["top_score_correlate"][0].is_string());
    let (s, ne) = call(&app, "GET", "/api/correlations?variant=no_empty", None).await;
    assert_eq!(s, StatusCode::OK, "{ne}");
    let black = dataset::load_manifest(dir.path().join("manifest.csv"))
        .unwrap()
        .specimens()
        .iter()
        .filter(|s| s.category() == Some("black"))
        .count();
    assert_eq!(ne["n"].as_u64().unwrap() as usize, 24 - black);
}

#[tokio::test(flavor = "multi_thread")]
async fn proposals_render_and_become_rateable() {
    let dir = synth_root(30, false);
    let (state, app) = app(dir.path());
    let body = json!({"strategy": "random", "n": 3, "seed": 5, "request_id": "p-1"});
    let (s, v) = call(&app, "POST", "/api/proposals", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let rows = v["proposals"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let bounds = state.manifest_bounds();
    for r in rows {
        let g: Vec<f64> = serde_json::from_value(r["genotype"].clone()).unwrap();
        let g = speciescope::Genotype::from_slice(&g).unwrap();
        assert!(bounds.contains(&g));
        let (s, bytes, _) = raw(&app, "GET", r["image"].as_str().unwrap(), None).await;
        assert_eq!(s, StatusCode::OK);
        let img = image::load_from_memory(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (128, 128));
    }
    let (_, replay) = call(&app, "POST", "/api/proposals", Some(body)).await;
    assert_eq!(replay, v);

    let (_, listed) = call(&app, "GET", "/api/specimens?source=proposals", None).await;
    assert_eq!(listed["count"], 3);
    let (_, manifest) = call(&app, "GET", "/api/specimens", None).await;
    assert_eq!(manifest["count"], 30);
    let id = rows[0]["id"].as_str().unwrap();
    let (s, _) = call(&app, "POST", "/api/evaluations", Some(json!({"id": id, "score": 6}))).await;
    assert_eq!(s, StatusCode::CREATED);

    let (s, v) = call(
        &app,
        "POST",
        "/api/proposals",
        Some(json!({"strategy": "crossover", "n": 2, "parents": ["sp00001", "sp00002"]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["proposals"][0]["provenance"]["parents"].as_array().unwrap().len(), 2);
    let (s, _) = call(&app, "POST", "/api/proposals", Some(json!({"strategy": "mutation", "parents": []}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/proposals", Some(json!({"strategy": "random", "n": 1000}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/proposals", Some(json!({"strategy": "montecarlo", "min_score": 5.0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, v) = call(
        &app,
        "POST",
        "/api/proposals",
        Some(json!({"strategy": "explicit", "genotypes": [rows[1]["genotype"].clone()]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["proposals"][0]["id"], rows[1]["id"], "same genotype, same id");

    drop(app);
    drop(state);
    let (_, app) = self::app(dir.path());
    let (_, listed) = call(&app, "GET", "/api/specimens?source=proposals", None).await;
    assert_eq!(listed["count"], 5);
    let (_, rated) = call(&app, "GET", "/api/specimens?source=all", None).await;
    let r = rated["specimens"].as_array().unwrap().iter().find(|r| r["id"] == id).unwrap().clone();
    assert_eq!(r["score"], 6);
    assert_eq!(r["proposal"], true);
}

#[tokio::test(flavor = "multi_thread")]
async fn montecarlo_uses_the_score_model() {
    let dir = synth_root(60, false);
    let (_, app) = app(dir.path());
    assert_eq!(train_tabular(&app, "score").await["state"], "done");
    let (s, v) = call(
        &app,
        "POST",
        "/api/proposals",
        Some(json!({"strategy": "montecarlo", "n": 2, "min_score": 0.0, "max_attempts": 50})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["accepted"], 2);
    assert!(v["proposals"][0]["predicted_score"].as_f64().is_some());
}

#[test]
fn missing_dataset_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = AppState::open(&ServiceConfig::new(dir.path())).err().unwrap();
    assert!(err.to_string().contains("dataset missing"));
}
