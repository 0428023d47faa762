use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use signmix_core::grouping::{
    aggregate_votes, load_votes, Adjudication, CandidatePair, CandidateSource,
};
use signmix_core::review::{template_uri, ReviewBook};
use signmix_core::GlossId;
use signmix_review::router;
use tower::ServiceExt;

fn pair(a: &str, b: &str, rank: usize) -> CandidatePair {
    CandidatePair {
        a: GlossId::new(a),
        b: GlossId::new(b),
        rank,
        source: CandidateSource::TemplateSimilarity,
    }
}

fn experts() -> Vec<String> {
    (0..5).map(|e| format!("e{e}")).collect()
}

fn app(book: ReviewBook) -> Router {
    router(Arc::new(RwLock::new(book)))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn vote(expert: &str, a: &str, b: &str, verdict: bool) -> Request<Body> {
    let body = json!({"expert": expert, "pair_a": a, "pair_b": b, "verdict": verdict});
    Request::post("/votes")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn lowest_rank_first_and_no_repeats() {
    let book = ReviewBook::new(
        vec![pair("c", "d", 3), pair("a", "b", 1)],
        template_uri,
        experts(),
        5,
    )
    .unwrap();
    let app = app(book);
    let (status, body) = call(&app, get("/tasks/next?expert=e0")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["task"]["a"], "a");
    assert_eq!(body["task"]["media_a"], "template://a");
    assert_eq!(body["task"]["status"], "open");

    let (status, ack) = call(&app, vote("e0", "b", "a", true)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["votes_recorded"], 1);
    let (_, body) = call(&app, get("/tasks/next?expert=e0")).await;
    assert_eq!(body["task"]["a"], "c");
    call(&app, vote("e0", "c", "d", false)).await;
    let (_, body) = call(&app, get("/tasks/next?expert=e0")).await;
    assert_eq!(body["task"], Value::Null);
    let (_, body) = call(&app, get("/tasks/next?expert=e1")).await;
    assert_eq!(body["task"]["a"], "a");
}

#[tokio::test]
async fn quorum_closes_task_and_progress_counts() {
    let book = ReviewBook::new(vec![pair("a", "b", 1)], template_uri, experts(), 5).unwrap();
    let app = app(book);
    for (i, e) in experts().iter().enumerate() {
        let (status, ack) = call(&app, vote(e, "a", "b", i < 3)).await;
        assert_eq!(status, StatusCode::OK);
        let want = if i == 4 { "closed" } else { "open" };
        assert_eq!(ack["status"], want);
    }
    let (_, p) = call(&app, get("/progress")).await;
    assert_eq!(
        p,
        json!({"tasks_total": 1, "tasks_closed": 1, "votes_total": 5, "quorum": 5})
    );
}

#[tokio::test]
async fn error_statuses() {
    let book = ReviewBook::new(vec![pair("a", "b", 1)], template_uri, experts(), 2).unwrap();
    let app = app(book);
    let (status, body) = call(&app, get("/tasks/next?expert=mallory")).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "unknown_expert");
    let (status, _) = call(&app, vote("e0", "a", "zz", true)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, vote("e0", "a", "a", true)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    call(&app, vote("e0", "a", "b", true)).await;
    let (status, ack) = call(&app, vote("e0", "a", "b", true)).await;
    assert_eq!(
        status,
        StatusCode::OK,
        "identical resubmission is idempotent"
    );
    assert_eq!(ack["duplicate"], true);
    assert_eq!(ack["votes_recorded"], 1);
    let (status, body) = call(&app, vote("e0", "a", "b", false)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "duplicate_vote");

    call(&app, vote("e1", "a", "b", true)).await;
    let (status, body) = call(&app, vote("e2", "a", "b", true)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "task_closed");

    let bad = Request::post("/votes")
        .header("content-type", "application/json")
        .body(Body::from(r#"{"expert":"e0","pair_a":"a"}"#))
        .unwrap();
    let (status, _) = call(&app, bad).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn acknowledged_votes_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("votes.jsonl");
    let cands = || vec![pair("a", "b", 1), pair("b", "c", 2)];
    let open = || ReviewBook::open(&log, cands(), template_uri, experts(), 5).unwrap();

    let first = app(open());
    for e in experts().iter().take(3) {
        call(&first, vote(e, "a", "b", true)).await;
    }
    call(&first, vote("e4", "b", "c", false)).await;
    let (_, before) = call(&first, get("/progress")).await;
    drop(first);

    let second = app(open());
    let (_, after) = call(&second, get("/progress")).await;
    assert_eq!(before, after);
    let (_, body) = call(&second, get("/tasks/next?expert=e0")).await;
    assert_eq!(body["task"]["a"], "b");
    for e in experts().iter().skip(3) {
        call(&second, vote(e, "a", "b", false)).await;
    }

    // the log is the single source of truth for aggregation
    let votes = load_votes(&log).unwrap();
    assert_eq!(votes.len(), 6);
    let out = aggregate_votes(&votes, 5, 3).unwrap();
    assert_eq!(out[0].status, Adjudication::Matched);
    assert_eq!(out[1].status, Adjudication::Pending);
}
