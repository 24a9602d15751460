mod support;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::process::Command;
use std::time::{Duration, Instant};

use genquery_core::session::{load_log, pattern_report};
use genquery_server::config::BackendConfig;
use genquery_server::{start, ServeError};
use serde_json::{json, Value};
use support::{ids, query, Live, Workspace};

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap()
}

#[test]
fn health_answers_shortly_after_start() {
    let ws = Workspace::new();
    let began = Instant::now();
    let live = Live::start(ws.config.clone());
    let body = live.client("").get("/health").ok();
    assert!(began.elapsed() < Duration::from_secs(1));
    assert_eq!(body["status"], "ok");
    assert_eq!(body["images"], 24);
    assert_eq!(body["dimension"], 64);
}

#[test]
fn missing_corpus_refuses_to_start() {
    let ws = Workspace::new();
    let mut config = ws.config.clone();
    config.corpus_path = ws.root().join("nowhere");
    let err = runtime().block_on(start(config)).unwrap_err();
    assert!(matches!(err, ServeError::CorpusMissing(_)), "{err}");
}

#[test]
fn occupied_port_is_reported() {
    let ws = Workspace::new();
    let holder = TcpListener::bind("127.0.0.1:0").unwrap();
    let mut config = ws.config.clone();
    config.port = holder.local_addr().unwrap().port();
    let err = runtime().block_on(start(config)).unwrap_err();
    assert!(matches!(err, ServeError::PortInUse(_)), "{err}");
}

#[test]
fn session_id_is_minted_and_echoed() {
    let ws = Workspace::new();
    let live = Live::start(ws.config.clone());
    let anonymous = live.client("").get("/search?q=forest");
    assert_eq!(anonymous.status, 200);
    let minted = anonymous.session.expect("minted session header");
    assert!(minted.starts_with("s-"));

    let named = live.client("named").get("/search?q=forest");
    assert_eq!(named.session.as_deref(), Some("named"));

    let bad = live.client("../etc").get("/search?q=forest");
    assert_eq!(bad.status, 400);
}

#[test]
fn each_mutating_request_logs_exactly_one_event() {
    let ws = Workspace::new();
    let live = Live::start(ws.config.clone());
    let c = live.client("counted");

    let mut expected = Vec::new();
    let page = c.search("mountain poster");
    expected.push("TextSearch");
    let first = ids(&page)[0].clone();

    c.get(&format!(
        "/more?{}",
        query(&[("token", page["query_token"].as_str().unwrap()), ("k", "5")])
    ))
    .ok();
    expected.push("ShowMore");

    c.similar(&first);
    expected.push("ImageSearch");

    c.get("/suggest?q=hiking%20poster%20design").ok();
    expected.push("ConcretizeShown");

    c.post(
        "/suggest/accept",
        json!({"query": "vintage hiking poster design with mountain landscape"}),
    )
    .ok();
    expected.push("ConcretizeAccepted");

    // Read-only and preparatory calls log nothing.
    c.get(&format!("/segments?image_id={first}")).ok();
    let mask = c
        .post("/mask", json!({"image_id": first, "segment_ids": ["r0c0"]}))
        .ok();
    c.get(&format!("/keywords?image_id={first}")).ok();
    c.get("/session/report").ok();

    c.post(
        "/generate/keywords",
        json!({"image_id": first, "mask_id": mask["mask_id"], "keywords": ["neon"]}),
    )
    .ok();
    expected.push("Modify");

    c.post("/save", json!({"image_id": first})).ok();
    expected.push("Save");
    c.delete(&format!("/save?image_id={first}"), None).ok();
    expected.push("Unsave");
    c.delete("/save", Some(json!({"image_id": first}))).ok();
    expected.push("Unsave");

    let events = c.events();
    let kinds: Vec<&str> = events.iter().map(|e| e["type"].as_str().unwrap()).collect();
    assert_eq!(kinds, expected);
    let seqs: Vec<u64> = events.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..=expected.len() as u64).collect::<Vec<_>>());
}

#[test]
fn failed_requests_log_nothing() {
    let ws = Workspace::new();
    let live = Live::start(ws.config.clone());
    let c = live.client("errors");
    assert_eq!(c.get("/similar?image_id=missing").status, 404);
    assert_eq!(c.get("/search?q=%20%20").status, 400);
    assert_eq!(c.get("/more?token=qt-999").status, 404);
    assert_eq!(c.post("/save", json!({"image_id": "missing"})).status, 404);
    assert_eq!(c.post("/save", json!({})).status, 400);
    let r = c.post("/mask", json!({"image_id": "img000", "segment_ids": []}));
    assert_eq!(r.status, 400);
    assert_eq!(r.body["error"]["code"], "empty_selection");
    assert_eq!(c.get("/session/events").status, 404);
}

#[test]
fn pages_partition_the_ranking() {
    let ws = Workspace::new();
    let live = Live::start(ws.config.clone());
    let c = live.client("pager");
    let full = c.get("/search?q=poster&k=100").ok();
    let full_ids = ids(&full);
    assert_eq!(full_ids.len(), 24);

    let first = c.get("/search?q=poster&k=7").ok();
    let token = first["query_token"].as_str().unwrap().to_owned();
    let mut seen = ids(&first);
    let mut exhausted = first["exhausted"].as_bool().unwrap();
    while !exhausted {
        let page = c.get(&format!("/more?token={token}&k=7")).ok();
        seen.extend(ids(&page));
        exhausted = page["exhausted"].as_bool().unwrap();
    }
    assert_eq!(seen, full_ids);
}

#[test]
fn generated_image_is_served_and_searchable() {
    let ws = Workspace::new();
    let live = Live::start(ws.config.clone());
    let c = live.client("gen");
    let segments = c.get("/segments?image_id=img003").ok();
    assert_eq!(segments["segments"].as_array().unwrap().len(), 16);
    let mask = c
        .post(
            "/mask",
            json!({"image_id": "img003", "segment_ids": ["r1c1", "r1c2"]}),
        )
        .ok();
    assert_eq!(mask["area"], 128);
    let generated = c
        .post(
            "/generate/reference",
            json!({"image_id": "img003", "mask_id": mask["mask_id"], "reference_image_id": "img010"}),
        )
        .ok();
    let id = generated["image"]["image_id"].as_str().unwrap().to_owned();
    assert_eq!(generated["image"]["source"], "generated");
    assert_eq!(
        generated["image"]["provenance"]["parent_image_id"],
        "img003"
    );

    let (status, bytes) = c.get_bytes(&format!("/images/{id}"));
    assert_eq!(status, 200);
    let decoded = image::load_from_memory(&bytes).unwrap().to_rgb8();
    assert_eq!(decoded.dimensions(), (32, 32));

    let page = c.similar(&id);
    assert!(!ids(&page).contains(&id));
    assert_eq!(ids(&page).len(), 20);

    // Wrong image for the mask.
    let r = c.post(
        "/generate/keywords",
        json!({"image_id": "img004", "mask_id": mask["mask_id"], "keywords": ["neon"]}),
    );
    assert_eq!(r.status, 422);
}

#[test]
fn keywords_for_fresh_session_use_empty_history() {
    let ws = Workspace::new();
    let live = Live::start(ws.config.clone());
    let body = live.client("fresh").get("/keywords?image_id=img000").ok();
    assert_eq!(body["context"]["recent_queries"], json!([]));
    assert_eq!(body["context"]["saved_descriptions"], json!([]));
    let aligned = body["aligned"].as_array().unwrap();
    let diversified = body["diversified"].as_array().unwrap();
    assert!(aligned.len() <= 5 && diversified.len() <= 5);
    assert!(!aligned.iter().any(|t| t == "mountain"));
}

#[test]
fn superseded_suggest_request_answers_no_content() {
    let ws = Workspace::new();
    let mut config = ws.config.clone();
    config.debounce_ms = 300;
    let live = Live::start(config);
    let c = live.client("typist");
    let early = {
        let c = c.clone();
        std::thread::spawn(move || c.get("/suggest?q=hiking"))
    };
    std::thread::sleep(Duration::from_millis(100));
    let late = c.get("/suggest?q=hiking%20poster%20design");
    let early = early.join().unwrap();
    assert_eq!(early.status, 204);
    assert_eq!(late.status, 200);
    assert_eq!(late.body["suggestions"].as_array().unwrap().len(), 5);
    let events = c.events();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["query"], "hiking poster design");
}

#[test]
fn log_survives_restart() {
    let ws = Workspace::new();
    let before = {
        let live = Live::start(ws.config.clone());
        let c = live.client("durable");
        c.search("forest");
        c.post("/save", json!({"image_id": "img002"})).ok();
        c.events()
    };
    let live = Live::start(ws.config.clone());
    let c = live.client("durable");
    assert_eq!(c.events(), before);
    let seq = c.post("/save", json!({"image_id": "img005"})).ok()["seq"].as_u64();
    assert_eq!(seq, Some(3));
}

#[test]
fn analyze_cli_matches_live_report() {
    let ws = Workspace::new();
    let live = Live::start(ws.config.clone());
    let c = live.client("analyzed");
    let page = c.search("mountain");
    let first = ids(&page)[0].clone();
    let mask = c
        .post(
            "/mask",
            json!({"image_id": first, "segment_ids": ["r0c0", "r0c1"]}),
        )
        .ok();
    let generated = c
        .post(
            "/generate/keywords",
            json!({"image_id": first, "mask_id": mask["mask_id"], "keywords": ["sunset"]}),
        )
        .ok();
    let gen_id = generated["image"]["image_id"].as_str().unwrap().to_owned();
    let similar = c.similar(&gen_id);
    c.post("/save", json!({"image_id": ids(&similar)[1]})).ok();
    c.search("lake");
    let live_report = c.report();

    let log = ws.session_log("analyzed");
    let out = Command::new(env!("CARGO_BIN_EXE_genquery"))
        .args(["analyze", "--json"])
        .arg(&log)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cli: Value = serde_json::from_slice(&out.stdout).unwrap();
    let direct = serde_json::to_value(pattern_report(&load_log(&log).unwrap())).unwrap();
    assert_eq!(cli, direct);
    for key in [
        "counts",
        "transitions",
        "search_by_generation_rate",
        "saved_via_generation_rate",
    ] {
        assert_eq!(cli[key], live_report[key], "{key}");
    }
    assert_eq!(cli["saved_via_generation_rate"], 1.0);
    assert_eq!(cli["search_by_generation_rate"], 1.0);

    let table = Command::new(env!("CARGO_BIN_EXE_genquery"))
        .arg("analyze")
        .arg(&log)
        .output()
        .unwrap();
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("session analyzed"));
    assert!(text.contains("search_by_generation_rate  1.0000"));
}

#[test]
fn analyze_cli_reports_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    std::fs::write(
        &log,
        "{\"session_id\":\"s\",\"seq\":1,\"timestamp\":\"2024-05-01T10:00:00Z\",\"type\":\"TextSearch\",\"query\":\"a\"}\nnot json\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_genquery"))
        .arg("analyze")
        .arg(&log)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
}

#[test]
fn ingest_cli_builds_a_store() {
    let ws = Workspace::with_images(3, 16);
    let store = ws.root().join("fresh-store");
    let config = ws.root().join("genquery.toml");
    std::fs::write(
        &config,
        "corpus_path = \"fresh-store\"\n[embedding]\nkind = \"stub\"\nseed = 7\ndimension = 64\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_genquery"))
        .arg("ingest")
        .arg(ws.root().join("assets/manifest.jsonl"))
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["count"], 3);
    assert!(store.exists());
}

/// Answers generation calls after a delay by echoing the original image.
fn slow_backend(delay: Duration) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            std::thread::sleep(delay);
            let reply = json!({"output_png": request["original_png"]}).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
        }
    });
    format!("http://{addr}/generate")
}

#[test]
fn shutdown_waits_for_in_flight_generation() {
    let ws = Workspace::new();
    let mut config = ws.config.clone();
    config.generation.reference = BackendConfig::Remote {
        endpoint: slow_backend(Duration::from_millis(600)),
        timeout_ms: 5000,
    };
    let mut live = Live::start(config);
    let c = live.client("drain");
    let mask = c
        .post(
            "/mask",
            json!({"image_id": "img001", "segment_ids": ["r2c2"]}),
        )
        .ok();
    let pending = {
        let c = c.clone();
        std::thread::spawn(move || {
            c.post(
                "/generate/reference",
                json!({"image_id": "img001", "mask_id": mask["mask_id"], "reference_image_id": "img002"}),
            )
        })
    };
    std::thread::sleep(Duration::from_millis(200));
    live.shutdown();
    let reply = pending.join().unwrap();
    assert_eq!(reply.status, 200, "{}", reply.body);
    assert_eq!(reply.body["image"]["source"], "generated");
    let events = load_log(ws.session_log("drain")).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].kind.name(), "Modify");
}
