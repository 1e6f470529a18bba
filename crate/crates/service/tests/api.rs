use std::path::Path;
use std::sync::Arc;

use fidbench_core::image::{save_image, SaveFormat};
use fidbench_core::study::TrapAnswer;
use fidbench_core::{jsonl, synth, PairRecord};
use fidbench_service::{AppState, ServiceConfig};
use serde_json::{json, Value};

const TOKEN: &str = "secret";

struct Server {
    base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    fn start(config: ServiceConfig) -> Self {
        let state = AppState::open(config).unwrap();
        let rt = tokio::runtime::Runtime::new().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(fidbench_service::serve(state, listener, async {
                let _ = rx.await;
            }))
            .unwrap();
        });
        Self {
            base,
            stop: Some(tx),
            thread: Some(thread),
        }
    }

    fn get(&self, path: &str) -> (u16, String) {
        status_body(ureq::get(&format!("{}{path}", self.base)).call())
    }

    fn post(&self, path: &str, body: Value) -> (u16, String) {
        status_body(ureq::post(&format!("{}{path}", self.base)).send_json(body))
    }

    fn export(&self, what: &str, token: &str) -> (u16, String) {
        status_body(
            ureq::get(&format!("{}/api/admin/export?what={what}", self.base))
                .set("X-Admin-Token", token)
                .call(),
        )
    }

    fn session(&self, name: &str) -> (String, usize) {
        let (code, body) = self.post("/api/session", json!({ "annotator_name": name }));
        assert_eq!(code, 200, "{body}");
        let v: Value = serde_json::from_str(&body).unwrap();
        (v["session_id"].as_str().unwrap().to_string(), v["total_pairs"].as_u64().unwrap() as usize)
    }

    fn next(&self, sid: &str) -> Value {
        let (code, body) = self.get(&format!("/api/session/{sid}/next"));
        assert_eq!(code, 200, "{body}");
        serde_json::from_str(&body).unwrap()
    }

    fn answer(&self, sid: &str, pair_id: &str, yes: bool) -> (u16, String) {
        self.post(
            &format!("/api/session/{sid}/answer"),
            json!({ "pair_id": pair_id, "answer": if yes { "yes" } else { "no" }, "latency_ms": 1200 }),
        )
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn status_body(r: Result<ureq::Response, ureq::Error>) -> (u16, String) {
    match r {
        Ok(resp) => (resp.status(), resp.into_string().unwrap()),
        Err(ureq::Error::Status(code, resp)) => (code, resp.into_string().unwrap_or_default()),
        Err(e) => panic!("transport error: {e}"),
    }
}

/// Data dir with `regular` plain pairs and `traps` trap pairs sharing two PNGs.
fn fixture(root: &Path, regular: usize, traps: usize) -> ServiceConfig {
    let images = root.join("images");
    let data = root.join("data");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&data).unwrap();
    save_image(&synth::natural_image(16, 16, 1), images.join("gt.png"), SaveFormat::Png).unwrap();
    save_image(&synth::natural_image(16, 16, 2), images.join("sr.png"), SaveFormat::Png).unwrap();
    let mut pairs: Vec<PairRecord> = (0..regular)
        .map(|i| PairRecord::new(format!("p{i:02}"), "gt.png", "sr.png", "m"))
        .collect();
    for i in 0..traps {
        let mut t = PairRecord::new(format!("t{i:02}"), "gt.png", "sr.png", "m");
        t.is_trap = true;
        t.trap_expected = Some(TrapAnswer::No);
        pairs.push(t);
    }
    jsonl::write(data.join("manifest.jsonl"), &pairs).unwrap();
    ServiceConfig {
        bind_address: "127.0.0.1:0".into(),
        data_dir: data,
        admin_token: TOKEN.into(),
        trap_rate: 1.0 / 15.0,
        images_dir: images,
        ui_dir: None,
    }
}

#[test]
fn session_flow_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(fixture(dir.path(), 15, 2));
    let (sid, total) = server.session("alice");
    assert_eq!(total, 16, "15 regular pairs plus one trap");

    let first = server.next(&sid);
    let first_id = first["pair_id"].as_str().unwrap().to_string();
    let head = first_id.clone();
    assert_eq!(first["gt_url"], format!("/images/{head}/gt"));
    assert_eq!(server.next(&sid)["pair_id"], head, "next does not consume");

    let (code, body) = server.answer(&sid, &head, true);
    assert_eq!(code, 200, "{body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v, json!({ "accepted": true, "remaining": 15 }));
    assert_eq!(server.answer(&sid, &head, true).0, 409, "duplicate");

    // Pair two positions ahead.
    let head = server.next(&sid)["pair_id"].as_str().unwrap().to_string();
    let (code, body) = server.get("/api/admin/export?what=events");
    assert_eq!(code, 401, "{body}");
    let other = (0..15).map(|i| format!("p{i:02}")).find(|p| *p != head).unwrap();
    assert_eq!(server.answer(&sid, &other, true).0, 409);

    assert_eq!(server.get("/api/session/nope/next").0, 404);
    assert_eq!(server.answer("nope", &head, true).0, 404);
    assert_eq!(server.post("/api/session", json!({ "annotator_name": "  " })).0, 400);

    // Returning annotator resumes without the answered pair.
    let (sid2, total2) = server.session("alice");
    let expected = if first_id.starts_with('p') { 14 + 1 } else { 15 + 1 };
    assert_eq!(total2, expected);
    assert_ne!(sid, sid2);
}

#[test]
fn exhausted_queue_reports_done() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(fixture(dir.path(), 2, 0));
    let (sid, total) = server.session("bob");
    for _ in 0..total {
        let id = server.next(&sid)["pair_id"].as_str().unwrap().to_string();
        assert_eq!(server.answer(&sid, &id, false).0, 200);
    }
    assert_eq!(server.next(&sid), json!({ "done": true }));
    let (code, body) = server.export("events", TOKEN);
    assert_eq!(code, 200);
    assert_eq!(body.lines().count(), 2);
}

#[test]
fn trap_metadata_never_leaks() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(fixture(dir.path(), 4, 4));
    let mut payloads = Vec::new();
    let (sid, total) = server.session("carol");
    payloads.push(server.post("/api/session", json!({ "annotator_name": "carol" })).1);
    let mut saw_trap = false;
    for _ in 0..total {
        let (_, body) = server.get(&format!("/api/session/{sid}/next"));
        let v: Value = serde_json::from_str(&body).unwrap();
        let id = v["pair_id"].as_str().unwrap().to_string();
        saw_trap |= id.starts_with('t');
        payloads.push(body);
        payloads.push(server.answer(&sid, &id, true).1);
    }
    payloads.push(server.get(&format!("/api/session/{sid}/next")).1);
    payloads.push(server.get("/api/progress").1);
    assert!(saw_trap, "one trap is scheduled for four regular pairs");
    for p in &payloads {
        assert!(!p.contains("is_trap") && !p.contains("trap_expected"), "{p}");
    }
}

#[test]
fn images_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), 3, 0);
    let on_disk = std::fs::read(cfg.images_dir.join("sr.png")).unwrap();
    let server = Server::start(cfg);

    let resp = ureq::get(&format!("{}/images/p00/sr", server.base)).call().unwrap();
    assert_eq!(resp.content_type(), "image/png");
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut resp.into_reader(), &mut bytes).unwrap();
    assert_eq!(bytes, on_disk);
    assert_eq!(server.get("/images/p00/gt").0, 200);
    assert_eq!(server.get("/images/zz/gt").0, 404);
    assert_eq!(server.get("/images/p00/lr").0, 404);

    let (sid, _) = server.session("dan");
    for _ in 0..3 {
        let id = server.next(&sid)["pair_id"].as_str().unwrap().to_string();
        server.answer(&sid, &id, true);
    }
    assert_eq!(server.export("events", "wrong").0, 401);
    let (_, events) = server.export("events", TOKEN);
    assert_eq!(events.lines().count(), 3);
    let (_, scores) = server.export("scores", TOKEN);
    let scores: Vec<Value> = scores.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(scores.len(), 3);
    assert!(scores.iter().all(|s| s["score"] == 1.0 && s["n_valid"] == 1 && s["final"] == false));
    let (_, statuses) = server.export("statuses", TOKEN);
    assert!(statuses.contains("\"annotator_id\":\"dan\""));
    assert_eq!(server.export("other", TOKEN).0, 400);
}

#[test]
fn concurrent_sessions_for_one_annotator_dedupe() {
    let dir = tempfile::tempdir().unwrap();
    let server = Arc::new(Server::start(fixture(dir.path(), 6, 0)));
    let (a, _) = server.session("erin");
    let (b, _) = server.session("erin");
    // Same annotator, same seed: both queues start at the same pair.
    let head = server.next(&a)["pair_id"].as_str().unwrap().to_string();
    assert_eq!(server.next(&b)["pair_id"], head);
    let handles: Vec<_> = [a.clone(), b.clone()]
        .into_iter()
        .map(|sid| {
            let server = Arc::clone(&server);
            let head = head.clone();
            std::thread::spawn(move || server.answer(&sid, &head, true).0)
        })
        .collect();
    let mut codes: Vec<u16> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    codes.sort_unstable();
    assert_eq!(codes, vec![200, 409]);
    // The stale head is skipped in the other session.
    assert_ne!(server.next(&b)["pair_id"], head);
    assert_eq!(server.export("events", TOKEN).1.lines().count(), 1);
}

#[test]
fn answers_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), 8, 0);
    {
        let server = Server::start(cfg.clone());
        let (sid, _) = server.session("fay");
        for _ in 0..4 {
            let id = server.next(&sid)["pair_id"].as_str().unwrap().to_string();
            assert_eq!(server.answer(&sid, &id, true).0, 200);
        }
    }
    let server = Server::start(cfg);
    assert_eq!(server.export("events", TOKEN).1.lines().count(), 4);
    assert_eq!(server.session("fay").1, 4);
}

#[test]
fn config_file_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(
        &path,
        r#"{"bind_address":"127.0.0.1:8080","data_dir":"data","admin_token":"t","images_dir":"img"}"#,
    )
    .unwrap();
    let cfg = ServiceConfig::load(&path).unwrap();
    assert_eq!(cfg.data_dir, dir.path().join("data"));
    assert!((cfg.trap_rate - 1.0 / 15.0).abs() < 1e-15);

    std::fs::write(&path, r#"{"bind_address":"nowhere","data_dir":"d","admin_token":"t","images_dir":"i"}"#).unwrap();
    assert!(ServiceConfig::load(&path).is_err());
    std::fs::write(&path, r#"{"bind_address":"127.0.0.1:1","data_dir":"d","admin_token":"","images_dir":"i"}"#).unwrap();
    assert!(ServiceConfig::load(&path).is_err());
}
