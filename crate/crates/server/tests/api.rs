use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use dqa_core::session::SessionService;
use dqa_core::signal_io::Record;
use dqa_core::study_builder::{build_study, BlindingKey, RaterConfig, RecordSpec, StudyConfig, StudyManifest};
use dqa_core::synth::{synthetic_record, RecordRecipe};
use dqa_server::{router, NextStrip, StripView};

const ADMIN: &str = "admin-secret";

fn records(n: usize, noise: f64) -> Vec<Record> {
    (0..n)
        .map(|i| {
            synthetic_record(&RecordRecipe {
                id: format!("mgh{:03}", i + 1),
                beats: 4,
                noise_mv: noise,
                seed: i as u64,
                ..RecordRecipe::default()
            })
        })
        .collect()
}

fn study() -> (StudyManifest, BlindingKey) {
    let n = 6;
    let config = StudyConfig {
        study_id: "api".into(),
        records: (0..n)
            .map(|i| RecordSpec {
                id: format!("mgh{:03}", i + 1),
                leads: vec!["I".into(), "II".into(), "V1".into()],
                t_start: 0.0,
                duration: Some(2.0),
            })
            .collect(),
        n_duplicates: 2,
        n_subsets: 4,
        seed: 11,
        raters: vec![
            RaterConfig {
                id: "C1".into(),
                token: "tok-c1".into(),
            },
            RaterConfig {
                id: "C2".into(),
                token: "tok-c2".into(),
            },
        ],
        admin_token: ADMIN.into(),
        schema: Default::default(),
    };
    build_study(&config, &records(n, 0.0), &records(n, 0.01)).unwrap()
}

fn answers(n_leads: usize) -> Value {
    let lead = json!({
        "p_morphology": "positive",
        "qrs_morphology": "qR",
        "t_morphology": "positive",
        "st_morphology": "normal",
        "quality": 4
    });
    json!({ "leads": vec![lead; n_leads], "diagnosis": "sinus rhythm" })
}

struct Client {
    app: Router,
    bodies: Vec<String>,
}

impl Client {
    fn new(service: Arc<SessionService>) -> Self {
        Client {
            app: router(service),
            bodies: Vec::new(),
        }
    }

    async fn call(&mut self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        let text = String::from_utf8(bytes.to_vec()).unwrap();
        self.bodies.push(text.clone());
        (status, text)
    }

    async fn get(&mut self, uri: &str, token: &str) -> (StatusCode, String) {
        self.call(Method::GET, uri, Some(token), None).await
    }

    async fn post(&mut self, uri: &str, token: &str, body: Value) -> (StatusCode, String) {
        self.call(Method::POST, uri, Some(token), Some(body)).await
    }

    async fn next(&mut self, token: &str) -> NextStrip {
        let (status, body) = self.get("/session/next-strip", token).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        serde_json::from_str(&body).unwrap()
    }

    /// Answers the next strip and returns its id.
    async fn answer_next(&mut self, token: &str) -> String {
        let id = self.next(token).await.id.unwrap();
        let (status, body) = self.get(&format!("/strip/{id}"), token).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let view: StripView = serde_json::from_str(&body).unwrap();
        let (status, body) = self
            .post(&format!("/strip/{id}/response"), token, answers(view.leads.len()))
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        id
    }
}

fn service(manifest: &StudyManifest, dir: &std::path::Path) -> Arc<SessionService> {
    Arc::new(SessionService::open(manifest.clone(), dir).unwrap())
}

#[tokio::test]
async fn fresh_rater_starts_at_subset_zero() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(service(&manifest, dir.path()));
    let next = c.next("tok-c1").await;
    assert!(!next.done);
    assert_eq!(next.id.as_deref(), Some(manifest.presentations[0].id.as_str()));
    assert_eq!((next.subset, next.position), (Some(0), Some(0)));
}

#[tokio::test]
async fn strip_carries_samples_and_render_spec() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(service(&manifest, dir.path()));
    let id = &manifest.presentations[0].id;
    let (status, body) = c.get(&format!("/strip/{id}?mm_per_mv=20"), "tok-c1").await;
    assert_eq!(status, StatusCode::OK);
    let view: StripView = serde_json::from_str(&body).unwrap();
    assert_eq!(view.leads.len(), 3);
    for lead in &view.leads {
        assert_eq!(lead.samples.len(), 720);
        assert_eq!(lead.render.mm_per_mv, 20.0);
        assert_eq!(lead.render.mm_per_s, 25.0);
        assert!((lead.render.width_mm - 50.0).abs() < 1e-9);
    }
    let (status, _) = c.get("/strip/0123456789abcdef0123456789abcdef", "tok-c1").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn response_increments_progress_and_sequence() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(service(&manifest, dir.path()));
    let (_, body) = c.get("/session/progress", "tok-c1").await;
    let before: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(before["completed"], 0);
    assert_eq!(before["total"], manifest.presentations.len());

    let id = manifest.presentations[0].id.clone();
    let (_, ack) = c.post(&format!("/strip/{id}/response"), "tok-c1", answers(3)).await;
    let ack: Value = serde_json::from_str(&ack).unwrap();
    assert_eq!(ack["seq"], 1);
    assert_eq!(ack["replaced"], false);
    let (_, ack) = c.post(&format!("/strip/{id}/response"), "tok-c2", answers(3)).await;
    assert_eq!(serde_json::from_str::<Value>(&ack).unwrap()["seq"], 2);

    let (_, body) = c.get("/session/progress", "tok-c1").await;
    let after: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(after["completed"], 1);
    assert_eq!(after["subsets"][0]["completed"], 1);
}

#[tokio::test]
async fn missing_item_is_rejected_by_name() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(service(&manifest, dir.path()));
    let id = manifest.presentations[0].id.clone();
    let mut body = answers(3);
    body["leads"][1].as_object_mut().unwrap().remove("p_morphology");
    let (status, text) = c.post(&format!("/strip/{id}/response"), "tok-c1", body).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let err: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(err["issues"][0]["item"], "leads[1].p_morphology");
    let (_, body) = c.get("/session/progress", "tok-c1").await;
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["completed"], 0);
}

#[tokio::test]
async fn future_subsets_are_locked() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(service(&manifest, dir.path()));
    let later = manifest.presentations.iter().find(|p| p.subset == 1).unwrap().id.clone();
    let (status, _) = c.post(&format!("/strip/{later}/response"), "tok-c1", answers(3)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = c.get(&format!("/strip/{later}"), "tok-c1").await;
    assert_eq!(status, StatusCode::CONFLICT);

    let first = manifest.subset_sizes()[0];
    for _ in 0..first {
        c.answer_next("tok-c1").await;
    }
    assert_eq!(c.next("tok-c1").await.subset, Some(1));
    let (status, _) = c.post(&format!("/strip/{later}/response"), "tok-c1", answers(3)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn resubmission_replaces_and_keeps_history() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let svc = service(&manifest, dir.path());
    let mut c = Client::new(svc.clone());
    let id = manifest.presentations[0].id.clone();
    c.post(&format!("/strip/{id}/response"), "tok-c1", answers(3)).await;
    let mut second = answers(3);
    second["leads"][0]["quality"] = json!(2);
    let (_, ack) = c.post(&format!("/strip/{id}/response"), "tok-c1", second).await;
    let ack: Value = serde_json::from_str(&ack).unwrap();
    assert_eq!(ack["replaced"], true);
    assert_eq!(svc.history().unwrap().len(), 2);
    let export = svc.export();
    assert_eq!(export.len(), 1);
    assert_eq!(export[0].record.answers.leads[0].quality, Some(2));
    assert_eq!(export[0].record.replaces, Some(1));
}

#[tokio::test]
async fn acknowledged_responses_survive_restart() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut acked = Vec::new();
    {
        let mut c = Client::new(service(&manifest, dir.path()));
        for _ in 0..5 {
            acked.push(c.answer_next("tok-c1").await);
        }
        // dropped without a snapshot or shutdown hook
    }
    let svc = service(&manifest, dir.path());
    let mut c = Client::new(svc.clone());
    let (_, body) = c.get("/session/progress", "tok-c1").await;
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["completed"], 5);
    let exported: Vec<String> = svc.export().into_iter().map(|r| r.record.strip_id).collect();
    assert_eq!(exported, acked);
    let next = c.next("tok-c1").await.id.unwrap();
    let (_, ack) = c.post(&format!("/strip/{next}/response"), "tok-c1", answers(3)).await;
    assert_eq!(serde_json::from_str::<Value>(&ack).unwrap()["seq"], 6);
}

#[tokio::test]
async fn authentication_and_admin_gate() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(service(&manifest, dir.path()));
    let (status, _) = c.call(Method::GET, "/session/next-strip", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = c.get("/session/next-strip", "nope").await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = c.get("/study/schema", "tok-c2").await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = c.get("/admin/export", "tok-c1").await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = c.call(Method::GET, "/admin/export", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = c.get("/session/next-strip", ADMIN).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    c.answer_next("tok-c1").await;
    c.answer_next("tok-c2").await;
    let (status, body) = c.get("/admin/export", ADMIN).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.lines().count(), 2);
    let (status, body) = c.get("/admin/export?format=csv", ADMIN).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.lines().count(), 3);
    assert!(body.starts_with("rater,strip_id,subset,position"));
}

#[tokio::test]
async fn empty_export_has_header_only() {
    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(service(&manifest, dir.path()));
    let (_, body) = c.get("/admin/export?format=csv", ADMIN).await;
    assert_eq!(body.lines().count(), 1);
    let (_, body) = c.get("/admin/export", ADMIN).await;
    assert!(body.is_empty());
}

#[tokio::test]
async fn no_response_body_reveals_records_or_arms() {
    let (manifest, key) = study();
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(service(&manifest, dir.path()));
    for token in ["tok-c1", "tok-c2"] {
        while !c.next(token).await.done {
            c.answer_next(token).await;
            c.get("/session/progress", token).await;
        }
    }
    c.get("/study/schema", "tok-c1").await;
    c.get("/admin/export", ADMIN).await;
    c.get("/admin/export?format=csv", ADMIN).await;
    let id = manifest.presentations[3].id.clone();
    let mut bad = answers(3);
    bad["leads"][0]["t_morphology"] = json!("wavy");
    c.post(&format!("/strip/{id}/response"), "tok-c1", bad).await;
    c.get("/strip/ffffffffffffffffffffffffffffffff", "tok-c1").await;
    c.get("/admin/export", "tok-c1").await;

    let records: Vec<&str> = key.entries.iter().map(|e| e.record_id.as_str()).collect();
    assert!(c.bodies.len() > 4 * manifest.presentations.len());
    for body in &c.bodies {
        let lower = body.to_lowercase();
        for word in ["original", "reconstruct", "duplicate", "occurrence", "arm\""] {
            assert!(!lower.contains(word), "{word:?} in {body:.200}");
        }
        for r in &records {
            assert!(!body.contains(r), "{r} in {body:.200}");
        }
    }
}

#[tokio::test]
async fn serves_over_tcp() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let (manifest, _) = study();
    let dir = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(dqa_server::serve_on(service(&manifest, dir.path()), listener));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /study/schema HTTP/1.1\r\nHost: x\r\nAuthorization: Bearer tok-c1\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).await.unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("qrs_morphology"));
    server.abort();
}
