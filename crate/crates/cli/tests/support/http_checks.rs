//! HTTP contract checks against an in-process router on a temporary store.
//! Each check returns `Err(reason)` so that both the integration tests and
//! the acceptance report can use them.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, HeaderMap, Request, StatusCode};
use axum::Router;
use cmi_cli::api::SVG_CSP;
use cmi_cli::{router, AppState, BackendDescriptor, ServiceConfig};
use cmi_core::gateway::{BackendKind, LlmConfig, ModelDescriptor};
use cmi_core::interpreter::{Interpreter, InterpreterConfig, OutputFormat, RendererBindings, RendererKind};
use cmi_core::syntax::Language;
use cmi_core::{Engine, Store};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn replay_script(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/corpus/replay")
        .join(name)
}

pub struct TestApp {
    pub router: Router,
    pub engine: Arc<Engine>,
    pub dir: tempfile::TempDir,
}

pub fn app_with(config: ServiceConfig) -> TestApp {
    let dir = tempfile::tempdir().expect("tempdir");
    let store = Arc::new(Store::open(dir.path().join("store")).expect("store"));
    let engine = Arc::new(Engine::new(store, Interpreter::new(config.renderers.clone())));
    let router = router(AppState {
        engine: engine.clone(),
        config: Arc::new(config),
    });
    TestApp { router, engine, dir }
}

pub fn app() -> TestApp {
    app_with(ServiceConfig::default())
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Result<Value, String> {
        serde_json::from_slice(&self.body).map_err(|e| {
            format!(
                "{} body is not JSON ({e}): {}",
                self.status,
                String::from_utf8_lossy(&self.body)
            )
        })
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    /// Non-2xx replies must carry an ApiError body with a matching status.
    pub fn api_error(&self) -> Result<Value, String> {
        let v = self.json()?;
        ensure!(
            v["http_status"] == json!(self.status.as_u16()) && v["code"].is_string() && v["message"].is_string(),
            "not an ApiError body: {v}"
        );
        Ok(v)
    }
}

pub async fn call(router: &Router, method: &str, uri: &str, body: Option<Value>, accept: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    if let Some(a) = accept {
        req = req.header(header::ACCEPT, a);
    }
    let body = body.map_or_else(Body::empty, |v| Body::from(v.to_string()));
    let resp = router
        .clone()
        .oneshot(req.body(body).unwrap())
        .await
        .expect("infallible router");
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.expect("body").to_bytes().to_vec();
    Reply { status, headers, body }
}

pub async fn raw(router: &Router, method: &str, uri: &str, body: &'static str) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = router.clone().oneshot(req).await.expect("infallible router");
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.expect("body").to_bytes().to_vec();
    Reply { status, headers, body }
}

pub fn replay_llm(script: &str) -> LlmConfig {
    LlmConfig::replay(replay_script(script), ModelDescriptor::gpt4())
}

pub fn fallback_interp(language: Language) -> InterpreterConfig {
    InterpreterConfig::fallback(language)
}

pub async fn create(router: &Router, llm: &LlmConfig, interp: &InterpreterConfig) -> Result<String, String> {
    let r = call(
        router,
        "POST",
        "/api/conversations",
        Some(json!({ "llm_config": llm, "interpreter_config": interp })),
        None,
    )
    .await;
    ensure!(r.status == StatusCode::CREATED, "create: {} {}", r.status, r.text());
    let v = r.json()?;
    v["conversation"]["id"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| format!("no id in {v}"))
}

/// create → list → get → prompt → artifact → reconfigure → get.
pub async fn check_full_session() -> Check {
    let t = app();
    let id = create(
        &t.router,
        &replay_llm("order-gpt4.json"),
        &fallback_interp(Language::Plantuml),
    )
    .await?;

    let list = call(&t.router, "GET", "/api/conversations", None, None).await;
    ensure!(list.status == StatusCode::OK, "list: {}", list.status);
    let list = list.json()?;
    ensure!(
        list["conversations"]
            .as_array()
            .is_some_and(|a| a.len() == 1 && a[0]["id"] == json!(id)),
        "list: {list}"
    );

    let got = call(&t.router, "GET", &format!("/api/conversations/{id}"), None, None).await;
    ensure!(got.status == StatusCode::OK, "get: {}", got.status);
    let got = got.json()?;
    ensure!(got["conversation"]["status"] == json!("idle"), "status: {got}");
    ensure!(
        got["conversation"]["entries"].as_array().is_some_and(Vec::is_empty),
        "entries: {got}"
    );

    let p = call(
        &t.router,
        "POST",
        &format!("/api/conversations/{id}/prompts"),
        Some(json!({ "text": "Create a class diagram for online orders." })),
        None,
    )
    .await;
    ensure!(p.status == StatusCode::OK, "prompt: {} {}", p.status, p.text());
    let outcome = p.json()?["outcome"].clone();
    ensure!(outcome["llm_entry"]["role"] == json!("llm"), "outcome: {outcome}");
    let artifacts = outcome["interpreter_entries"][0]["artifacts"].clone();
    let hash = artifacts[0]["hash"]
        .as_str()
        .ok_or_else(|| format!("no artifact: {outcome}"))?
        .to_string();

    let a = call(&t.router, "GET", &format!("/api/artifacts/{hash}"), None, None).await;
    ensure!(a.status == StatusCode::OK, "artifact: {}", a.status);
    ensure!(
        a.headers[header::CONTENT_TYPE]
            .to_str()
            .unwrap()
            .starts_with("text/plain"),
        "artifact media type {:?}",
        a.headers[header::CONTENT_TYPE]
    );
    ensure!(
        a.text().starts_with("# plantuml fallback rendering"),
        "artifact body: {}",
        a.text()
    );
    ensure!(
        cmi_core::sha256_hex(&a.body) == hash,
        "artifact bytes do not hash to their address"
    );

    let mut interp = fallback_interp(Language::Plantuml);
    interp.timeout_ms = 5000;
    let patch = call(
        &t.router,
        "PATCH",
        &format!("/api/conversations/{id}/config"),
        Some(json!({ "interpreter_config": interp })),
        None,
    )
    .await;
    ensure!(
        patch.status == StatusCode::OK,
        "patch: {} {}",
        patch.status,
        patch.text()
    );
    ensure!(
        patch.json()?["conversation"]["interpreter_config"]["timeout_ms"] == json!(5000),
        "patch body"
    );

    let got = call(&t.router, "GET", &format!("/api/conversations/{id}"), None, None)
        .await
        .json()?;
    let entries = got["conversation"]["entries"].as_array().cloned().unwrap_or_default();
    let roles: Vec<&str> = entries.iter().filter_map(|e| e["role"].as_str()).collect();
    ensure!(
        roles == ["user", "llm", "interpreter", "config_change"],
        "roles: {roles:?}"
    );
    Ok(())
}

/// Accept: text/event-stream yields the stage events in order, then the outcome.
pub async fn check_event_stream() -> Check {
    let t = app();
    let id = create(
        &t.router,
        &replay_llm("graph-gpt4.json"),
        &fallback_interp(Language::Graphviz),
    )
    .await?;
    let r = call(
        &t.router,
        "POST",
        &format!("/api/conversations/{id}/prompts"),
        Some(json!({ "text": "Visualize the network." })),
        Some("text/event-stream"),
    )
    .await;
    ensure!(r.status == StatusCode::OK, "stream: {} {}", r.status, r.text());
    ensure!(
        r.headers[header::CONTENT_TYPE]
            .to_str()
            .unwrap()
            .starts_with("text/event-stream"),
        "content type {:?}",
        r.headers[header::CONTENT_TYPE]
    );
    let events: Vec<String> = r
        .text()
        .lines()
        .filter_map(|l| l.strip_prefix("event:").map(|e| e.trim().to_string()))
        .collect();
    ensure!(
        events == ["received", "generated", "validated", "rendered", "done", "outcome"],
        "events: {events:?}"
    );
    let data = r
        .text()
        .lines()
        .filter_map(|l| l.strip_prefix("data:"))
        .map(|d| serde_json::from_str::<Value>(d.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| format!("event data is not JSON: {e}"))?;
    ensure!(
        data.last().is_some_and(|d| d["outcome"]["llm_entry"].is_object()),
        "last event: {data:?}"
    );
    Ok(())
}

pub async fn check_not_found() -> Check {
    let t = app();
    let missing = "00000000-0000-4000-8000-000000000000";
    for (method, uri, body) in [
        ("GET", format!("/api/conversations/{missing}"), None),
        (
            "POST",
            format!("/api/conversations/{missing}/prompts"),
            Some(json!({ "text": "hi" })),
        ),
        ("PATCH", format!("/api/conversations/{missing}/config"), Some(json!({}))),
        ("GET", format!("/api/artifacts/{}", "ab".repeat(32)), None),
        ("GET", "/api/artifacts/not-a-hash".to_string(), None),
        ("GET", "/api/nothing-here".to_string(), None),
        ("GET", "/api/conversations/..%2F..%2Fetc".to_string(), None),
    ] {
        let r = call(&t.router, method, &uri, body, None).await;
        ensure!(r.status == StatusCode::NOT_FOUND, "{method} {uri}: {}", r.status);
        r.api_error()?;
    }
    let r = call(&t.router, "GET", &format!("/api/conversations/{missing}"), None, None).await;
    ensure!(r.json()?["code"] == json!("unknown_conversation"), "code: {}", r.text());
    Ok(())
}

pub async fn check_bad_requests() -> Check {
    let t = app();
    let r = raw(&t.router, "POST", "/api/conversations", "{not json").await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "malformed: {}", r.status);
    ensure!(r.api_error()?["code"] == json!("invalid_request"), "malformed code");

    let mut llm = replay_llm("order-gpt4.json");
    llm.sampling.temperature = -1.0;
    let r = call(
        &t.router,
        "POST",
        "/api/conversations",
        Some(json!({ "llm_config": llm, "interpreter_config": fallback_interp(Language::Plantuml) })),
        None,
    )
    .await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "bad temperature: {}", r.status);
    let v = r.api_error()?;
    ensure!(
        v["code"] == json!("config_invalid") && v["detail"]["field"].is_string(),
        "config_invalid body: {v}"
    );

    let id = create(
        &t.router,
        &replay_llm("order-gpt4.json"),
        &fallback_interp(Language::Plantuml),
    )
    .await?;
    let r = call(
        &t.router,
        "POST",
        &format!("/api/conversations/{id}/prompts"),
        Some(json!({ "text": "   " })),
        None,
    )
    .await;
    ensure!(r.status == StatusCode::BAD_REQUEST, "empty prompt: {}", r.status);
    r.api_error()?;

    let r = call(&t.router, "DELETE", "/api/conversations", None, None).await;
    ensure!(r.status == StatusCode::METHOD_NOT_ALLOWED, "delete: {}", r.status);
    r.api_error()?;
    Ok(())
}

pub async fn check_renderers_and_backends() -> Check {
    let t = app();
    let r = call(&t.router, "GET", "/api/renderers", None, None).await;
    ensure!(r.status == StatusCode::OK, "renderers: {}", r.status);
    let v = r.json()?;
    let probes = v["renderers"].as_array().cloned().unwrap_or_default();
    ensure!(
        probes
            .iter()
            .any(|p| p["renderer_id"] == json!("builtin-fallback") && p["available"] == json!(true)),
        "no available builtin renderer: {v}"
    );
    let r = call(&t.router, "GET", "/api/backends", None, None).await;
    ensure!(r.status == StatusCode::OK, "backends: {}", r.status);
    let v = r.json()?;
    ensure!(v["backends"].as_array().is_some_and(|b| !b.is_empty()), "backends: {v}");
    Ok(())
}

pub async fn check_svg_headers() -> Check {
    let t = app();
    let svg = b"<?xml version=\"1.0\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\"><script>alert(1)</script></svg>";
    let hash = t.engine.store().put_artifact(svg).map_err(|e| e.to_string())?;
    let r = call(&t.router, "GET", &format!("/api/artifacts/{hash}"), None, None).await;
    ensure!(r.status == StatusCode::OK, "svg: {}", r.status);
    ensure!(
        r.headers[header::CONTENT_TYPE] == "image/svg+xml",
        "type {:?}",
        r.headers[header::CONTENT_TYPE]
    );
    ensure!(r.headers[header::CONTENT_SECURITY_POLICY] == SVG_CSP, "csp missing");
    ensure!(
        r.headers[header::X_CONTENT_TYPE_OPTIONS] == "nosniff",
        "nosniff missing"
    );
    ensure!(r.body == svg, "svg bytes differ");

    let png = b"\x89PNG\r\n\x1a\n\0\0\0\rIHDR";
    let hash = t.engine.store().put_artifact(png).map_err(|e| e.to_string())?;
    let r = call(&t.router, "GET", &format!("/api/artifacts/{hash}"), None, None).await;
    ensure!(r.headers[header::CONTENT_TYPE] == "image/png", "png type");
    Ok(())
}

/// A second prompt while the first is still rendering gets 409 "busy".
/// The renderer binding is a stub that just sleeps.
pub async fn check_busy() -> Check {
    let config = ServiceConfig {
        renderers: RendererBindings {
            graphviz_command: "sleep 2".into(),
            ..RendererBindings::default()
        },
        ..ServiceConfig::default()
    };
    let t = app_with(config);
    let mut interp = InterpreterConfig::new(Language::Graphviz);
    interp.renderer = RendererKind::ExternalProcess;
    interp.output_format = OutputFormat::Txt;
    let id = create(&t.router, &replay_llm("graph-gpt4.json"), &interp).await?;

    let router = t.router.clone();
    let uri = format!("/api/conversations/{id}/prompts");
    let first = tokio::spawn(async move { call(&router, "POST", &uri, Some(json!({ "text": "one" })), None).await });

    let mut saw_busy_status = false;
    for _ in 0..100 {
        let v = call(&t.router, "GET", &format!("/api/conversations/{id}"), None, None)
            .await
            .json()?;
        let status = v["conversation"]["status"].clone();
        if status == json!("generating") || status == json!("interpreting") {
            saw_busy_status = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    ensure!(saw_busy_status, "status never left idle");

    let second = call(
        &t.router,
        "POST",
        &format!("/api/conversations/{id}/prompts"),
        Some(json!({ "text": "two" })),
        None,
    )
    .await;
    ensure!(
        second.status == StatusCode::CONFLICT,
        "second prompt: {} {}",
        second.status,
        second.text()
    );
    ensure!(second.api_error()?["code"] == json!("busy"), "code: {}", second.text());
    let stream = call(
        &t.router,
        "POST",
        &format!("/api/conversations/{id}/prompts"),
        Some(json!({ "text": "three" })),
        Some("text/event-stream"),
    )
    .await;
    ensure!(
        stream.status == StatusCode::CONFLICT,
        "stream while busy: {}",
        stream.status
    );
    let patch = call(
        &t.router,
        "PATCH",
        &format!("/api/conversations/{id}/config"),
        Some(json!({ "interpreter_config": fallback_interp(Language::Graphviz) })),
        None,
    )
    .await;
    ensure!(
        patch.status == StatusCode::CONFLICT,
        "patch while busy: {}",
        patch.status
    );

    let first = first.await.map_err(|e| e.to_string())?;
    ensure!(
        first.status == StatusCode::OK,
        "first prompt: {} {}",
        first.status,
        first.text()
    );
    let v = call(&t.router, "GET", &format!("/api/conversations/{id}"), None, None)
        .await
        .json()?;
    ensure!(v["conversation"]["status"] == json!("idle"), "status after: {v}");
    Ok(())
}

/// No response ever contains the value of a credential variable.
pub async fn check_no_secret_leak() -> Check {
    const VAR: &str = "CMI_ACCEPTANCE_SECRET";
    const SECRET: &str = "sk-acceptance-7f3c9e1b2d";
    std::env::set_var(VAR, SECRET);
    let mut config = ServiceConfig::default();
    config.backends.push(BackendDescriptor {
        name: "test-remote".into(),
        backend: BackendKind::RemoteChatApi,
        model: ModelDescriptor::gpt4(),
        endpoint_url: Some("http://127.0.0.1:9/v1".into()),
        credential_ref: Some(VAR.into()),
        local_command: None,
        local_model_path: None,
    });
    let t = app_with(config);
    let llm = LlmConfig::remote_chat("http://127.0.0.1:9/v1", VAR, ModelDescriptor::gpt4());
    let id = create(&t.router, &llm, &fallback_interp(Language::Plantuml)).await?;
    let mut replies = vec![
        call(&t.router, "GET", "/api/backends", None, None).await,
        call(&t.router, "GET", "/api/conversations", None, None).await,
        call(&t.router, "GET", &format!("/api/conversations/{id}"), None, None).await,
        call(&t.router, "GET", "/api/renderers", None, None).await,
    ];
    // Port 9 refuses the connection, so generation fails; the error must
    // not echo the credential either.
    let failed = call(
        &t.router,
        "POST",
        &format!("/api/conversations/{id}/prompts"),
        Some(json!({ "text": "hello" })),
        None,
    )
    .await;
    ensure!(!failed.status.is_success(), "prompt to a closed port succeeded");
    failed.api_error()?;
    replies.push(failed);
    let backends = replies[0].json()?;
    ensure!(
        backends["backends"].as_array().is_some_and(|b| b
            .iter()
            .any(|d| d["name"] == json!("test-remote") && d["credential_present"] == json!(true))),
        "descriptor missing: {backends}"
    );
    for r in &replies {
        ensure!(!r.text().contains(SECRET), "credential value leaked: {}", r.text());
    }
    Ok(())
}

/// Strip identifiers and timestamps so that two stores can be compared.
fn normalize(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["id", "created_at", "timestamp"] {
                map.remove(key);
            }
            map.values_mut().for_each(normalize);
        }
        Value::Array(items) => items.iter_mut().for_each(normalize),
        _ => {}
    }
}

/// Normalized log lines per conversation, and (hash, bytes) per blob.
type Snapshot = (Vec<Vec<Value>>, Vec<(String, Vec<u8>)>);

fn store_snapshot(root: &Path) -> Result<Snapshot, String> {
    let mut logs = Vec::new();
    let mut files: Vec<PathBuf> = std::fs::read_dir(root.join("conversations"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| e.to_string())?;
        let mut lines = Vec::new();
        for line in text.lines() {
            let mut v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
            normalize(&mut v);
            lines.push(v);
        }
        logs.push(lines);
    }
    let mut blobs = Vec::new();
    let artifacts = root.join("artifacts");
    if artifacts.is_dir() {
        for shard in std::fs::read_dir(&artifacts).map_err(|e| e.to_string())? {
            for blob in std::fs::read_dir(shard.unwrap().path()).map_err(|e| e.to_string())? {
                let p = blob.unwrap().path();
                let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
                blobs.push((p.file_name().unwrap().to_string_lossy().into_owned(), bytes));
            }
        }
    }
    blobs.sort();
    Ok((logs, blobs))
}

/// The same session through HTTP and through direct engine calls leaves
/// equivalent stores (identical modulo ids and timestamps).
pub async fn check_api_engine_equivalence() -> Check {
    let llm = replay_llm("order-gpt4.json");
    let interp = fallback_interp(Language::Plantuml);
    let mut interp2 = interp.clone();
    interp2.timeout_ms = 2500;
    let prompts = ["Create the order model.", "Add an Article class."];

    let via_http = app();
    let id = create(&via_http.router, &llm, &interp).await?;
    let r = call(
        &via_http.router,
        "POST",
        &format!("/api/conversations/{id}/prompts"),
        Some(json!({ "text": prompts[0] })),
        None,
    )
    .await;
    ensure!(r.status == StatusCode::OK, "prompt 1: {}", r.status);
    let r = call(
        &via_http.router,
        "PATCH",
        &format!("/api/conversations/{id}/config"),
        Some(json!({ "interpreter_config": interp2 })),
        None,
    )
    .await;
    ensure!(r.status == StatusCode::OK, "patch: {}", r.status);
    let r = call(
        &via_http.router,
        "POST",
        &format!("/api/conversations/{id}/prompts"),
        Some(json!({ "text": prompts[1] })),
        Some("text/event-stream"),
    )
    .await;
    ensure!(r.status == StatusCode::OK, "prompt 2: {}", r.status);

    let direct = app();
    let engine = direct.engine.clone();
    let (llm2, interp_a, interp_b) = (llm.clone(), interp.clone(), interp2.clone());
    tokio::task::spawn_blocking(move || -> Result<(), String> {
        let c = engine.create_conversation(llm2, interp_a).map_err(|e| e.to_string())?;
        engine.submit_prompt(&c.id, prompts[0]).map_err(|e| e.to_string())?;
        engine
            .reconfigure(&c.id, None, Some(interp_b))
            .map_err(|e| e.to_string())?;
        engine.submit_prompt(&c.id, prompts[1]).map_err(|e| e.to_string())?;
        Ok(())
    })
    .await
    .map_err(|e| e.to_string())??;

    let a = store_snapshot(&via_http.dir.path().join("store"))?;
    let b = store_snapshot(&direct.dir.path().join("store"))?;
    ensure!(a.1 == b.1, "artifact blobs differ");
    ensure!(a.0 == b.0, "conversation logs differ:\n{:#?}\n{:#?}", a.0, b.0);
    ensure!(
        a.0.first().is_some_and(|l| l.len() == 8),
        "unexpected log length: {:?}",
        a.0.first().map(Vec::len)
    );
    Ok(())
}
