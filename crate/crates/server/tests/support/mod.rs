#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use dbox_core::llm::{Orchestrator, OrchestratorConfig, Pipeline, ScriptedProvider, TemplateSet};
use dbox_server::{api, EventKind, PythonRunner, Runner, RunnerLimits, ServiceConfig, Session, SessionService, Store};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const PROBLEM: &str = "search-in-rotated-sorted-array";

pub fn python_runner() -> Arc<dyn Runner> {
    Arc::new(PythonRunner::new("python3", RunnerLimits::default()))
}

pub struct Harness {
    pub service: Arc<SessionService>,
    pub provider: Arc<ScriptedProvider>,
    pub router: Router,
}

impl Harness {
    pub fn memory() -> Self {
        Harness::with(Store::memory(), Vec::new(), Duration::ZERO, python_runner())
    }

    pub fn with(store: Store, loaded: Vec<Session>, interval: Duration, runner: Arc<dyn Runner>) -> Self {
        let provider = Arc::new(ScriptedProvider::new());
        let orchestrator = Orchestrator::new(provider.clone(), TemplateSet::bundled(), OrchestratorConfig::default());
        let service = Arc::new(SessionService::new(
            dbox_server::ProblemBank::bundled(),
            Arc::new(orchestrator),
            runner,
            store,
            loaded,
            ServiceConfig { check_interval: interval },
        ));
        let router = api::router(service.clone());
        Harness { service, provider, router }
    }

    pub async fn raw(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, String) {
        let request = Request::builder()
            .method(method)
            .uri(path)
            .header("content-type", "application/json")
            .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
            .unwrap();
        let response = self.router.clone().oneshot(request).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, text) = self.raw(method, path, body).await;
        let value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
        (status, value)
    }

    pub async fn ok(&self, method: Method, path: &str, body: Option<Value>) -> Value {
        let (status, value) = self.call(method.clone(), path, body).await;
        assert!(status.is_success(), "{method} {path} -> {status}: {value}");
        value
    }

    pub async fn create(&self, problem: &str) -> String {
        let (status, view) = self.call(Method::POST, "/sessions", Some(json!({ "problemId": problem }))).await;
        assert_eq!(status, StatusCode::CREATED, "{view}");
        view["id"].as_str().unwrap().to_string()
    }

    pub async fn kinds(&self, session: &str) -> Vec<EventKind> {
        let events = self.ok(Method::GET, &format!("/sessions/{session}/events"), None).await;
        serde_json::from_value::<Vec<dbox_server::Event>>(events).unwrap().into_iter().map(|e| e.kind).collect()
    }
}

/// Finds a node in a wire tree by id.
pub fn node<'a>(tree: &'a Value, id: &str) -> &'a Value {
    fn find<'a>(nodes: &'a Value, id: &str) -> Option<&'a Value> {
        nodes.as_array()?.iter().find_map(|n| if n["id"] == id { Some(n) } else { find(&n["children"], id) })
    }
    find(&tree["roots"], id).unwrap_or_else(|| panic!("node {id} not in {tree}"))
}

pub fn ids(value: &Value) -> Vec<String> {
    value.as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
}

pub const STEP_1: &str = "Find the middle element of the current search range";
pub const STEP_2: &str = "Search the half that contains the target";
pub const SUB_1: &str = "Check which half of the range is sorted by comparing nums[lo] and nums[mid]";
pub const SUB_2: &str = "Test whether the target lies inside the sorted half's bounds";
pub const STEP_3: &str = "Return -1 when the range becomes empty";

pub struct Walkthrough {
    pub session: String,
    pub kinds: Vec<EventKind>,
    /// Successful state-changing calls made by the script.
    pub mutating_calls: usize,
    pub tree: Value,
    pub run: Value,
}

fn ladder(general: &str, detailed: &str, reveal: &str) -> Value {
    json!({ "general": general, "detailed": detailed, "reveal": reveal })
}

/// A learner works one problem from an empty tree to passing tests, with
/// every provider answer scripted.
pub async fn alice(h: &Harness) -> Walkthrough {
    let s = h.create(PROBLEM).await;
    let path = |tail: &str| format!("/sessions/{s}/{tail}");
    let mut calls = 0;

    // two initial steps
    let reply = h
        .ok(
            Method::PUT,
            &path("tree"),
            Some(json!({ "ops": [{ "op": "add", "text": STEP_1 }, { "op": "add", "text": STEP_2 }] })),
        )
        .await;
    calls += 1;
    let [a, b] = <[String; 2]>::try_from(ids(&reply["created"])).unwrap();

    let step2_hints = ladder(
        "A rotated array is two sorted runs. What can you learn from one comparison?",
        "At least one half around mid is always sorted; decide which one first.",
        "Once you know the sorted half, check if the target falls inside it and move lo or hi accordingly.",
    );
    let step3_hints = ladder(
        "What should happen when the target is absent?",
        "The loop ends when lo passes hi.",
        "Return -1 after the loop.",
    );
    let first = json!({ "nodes": [
        { "id": a, "text": STEP_1, "status": "correct" },
        { "id": b, "text": STEP_2, "status": "incorrect", "hints": step2_hints },
        { "text": "", "status": "missing", "insertAfter": b, "hints": step3_hints },
    ]});
    h.provider.push_for(&s, Pipeline::FromStepTree, first);
    let reply = h.ok(Method::POST, &path("check-step-tree"), None).await;
    calls += 1;
    let m = ids(&reply["created"]).remove(0);
    let tree = &reply["tree"];
    assert_eq!(node(tree, &a)["status"], "correct");
    assert_eq!(node(tree, &b)["status"], "incorrect");
    assert_eq!(node(tree, &m)["status"], "missing");
    assert_eq!(tree["roots"][2]["id"], m.as_str(), "missing step lands after step 2");
    assert_eq!(node(tree, &b)["hints"]["general"], Value::Null, "hints stay hidden until asked for");

    let general = h.ok(Method::POST, &path("hint"), Some(json!({ "nodeId": b }))).await;
    assert_eq!(general["hint"]["level"], 1);
    assert_eq!(general["hint"]["text"], step2_hints["general"]);
    let detailed = h.ok(Method::POST, &path("hint"), Some(json!({ "nodeId": b }))).await;
    assert_eq!(detailed["hint"]["level"], 2);
    calls += 2;
    let (status, early) = h.call(Method::POST, &path("hint"), Some(json!({ "nodeId": b }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(early["error"]["kind"], "hintNotYetAvailable");

    let second = json!({ "nodes": [
        { "id": a, "text": STEP_1, "status": "correct" },
        { "id": b, "text": STEP_2, "status": "incorrect", "hints": step2_hints },
        { "id": m, "text": "", "status": "missing", "hints": step3_hints },
    ]});
    h.provider.push_for(&s, Pipeline::FromStepTree, second);
    let reply = h.ok(Method::POST, &path("check-step-tree"), None).await;
    calls += 1;
    assert_eq!(node(&reply["tree"], &b)["failedAttempts"], 2);

    let reveal = h.ok(Method::POST, &path("hint"), Some(json!({ "nodeId": b }))).await;
    calls += 1;
    assert_eq!(reveal["hint"]["level"], 3);
    let r = reveal["hint"]["revealedNode"].as_str().expect("reveal creates a sub-step").to_string();
    assert_eq!(node(&reveal["tree"], &r)["systemGenerated"], true);

    // the learner fills in sub-steps 2-1 and 2-2 and writes step 3
    let reply = h
        .ok(
            Method::PUT,
            &path("tree"),
            Some(json!({ "ops": [
                { "op": "add", "parent": b, "index": 0, "text": SUB_1 },
                { "op": "add", "parent": b, "index": 1, "text": SUB_2 },
                { "op": "editText", "node": m, "text": STEP_3 },
            ]})),
        )
        .await;
    calls += 1;
    let [c1, c2] = <[String; 2]>::try_from(ids(&reply["created"])).unwrap();
    let children: Vec<&str> =
        node(&reply["tree"], &b)["children"].as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap()).collect();
    assert_eq!(children, [c1.as_str(), c2.as_str(), r.as_str()], "revealed step is 2-3");

    let reveal_text = step2_hints["reveal"].as_str().unwrap();
    let third = json!({ "nodes": [
        { "id": a, "text": STEP_1, "status": "correct" },
        { "id": b, "text": STEP_2, "status": "correct", "children": [
            { "id": c1, "text": SUB_1, "status": "correct" },
            { "id": c2, "text": SUB_2, "status": "correct" },
            { "id": r, "text": reveal_text, "status": "correct" },
        ]},
        { "id": m, "text": STEP_3, "status": "correct" },
    ]});
    h.provider.push_for(&s, Pipeline::FromStepTree, third);
    let reply = h.ok(Method::POST, &path("check-step-tree"), None).await;
    calls += 1;
    assert_eq!(reply["advanced"], true);
    assert_eq!(reply["tree"]["stage"], "implementation");

    // implementation: comments first, all appended below the starter code
    let starter = "def search(nums, target):\n    pass\n";
    let all = [&a, &b, &c1, &c2, &r, &m];
    let echo: Vec<Value> = all.iter().map(|id| json!({ "id": id, "text": "" })).collect();
    h.provider.push_for(&s, Pipeline::CopyToComments, json!({ "nodes": echo }));
    let reply = h.ok(Method::POST, &path("copy-to-comments"), None).await;
    calls += 1;
    let annotated = reply["code"].as_str().unwrap().to_string();
    assert!(annotated.starts_with(starter), "{annotated}");
    assert_eq!(annotated.matches(dbox_core::mapping::DEFAULT_MARKER).count(), all.len());

    let partial = annotated.replacen(
        starter,
        "def search(nums, target):\n    lo, hi = 0, len(nums) - 1\n    mid = (lo + hi) // 2\n    return mid\n",
        1,
    );
    h.ok(Method::PUT, &path("code"), Some(json!({ "code": partial }))).await;
    calls += 1;
    let judged = |step2: &str, step3: &str| {
        json!({ "nodes": [
            { "id": a, "text": STEP_1, "status": "implemented", "lines": [3, 3] },
            { "id": b, "text": STEP_2, "status": step2, "children": [
                { "id": c1, "text": SUB_1, "status": step2 },
                { "id": c2, "text": SUB_2, "status": step2 },
                { "id": r, "text": reveal_text, "status": step2 },
            ]},
            { "id": m, "text": STEP_3, "status": step3, "hints": step3_hints },
        ]})
    };
    h.provider.push_for(&s, Pipeline::CheckMatch, judged("to_be_coded", "incorrectly_implemented"));
    let reply = h.ok(Method::POST, &path("check-match"), None).await;
    calls += 1;
    assert_eq!(reply["tree"]["roots"][1]["implStatus"], "to_be_coded");
    assert_eq!(reply["tree"]["roots"][2]["implStatus"], "incorrectly_implemented");

    let problem = dbox_server::ProblemBank::bundled();
    let reference = &problem.get(PROBLEM).unwrap().reference_solutions[0];
    let solved = annotated.replacen(starter, reference, 1);
    h.ok(Method::PUT, &path("code"), Some(json!({ "code": solved }))).await;
    calls += 1;
    h.provider.push_for(&s, Pipeline::CheckMatch, judged("implemented", "implemented"));
    let reply = h.ok(Method::POST, &path("check-match"), None).await;
    calls += 1;
    let tree = reply["tree"].clone();

    let run = h.ok(Method::POST, &path("run"), None).await;
    calls += 1;

    Walkthrough { kinds: h.kinds(&s).await, session: s, mutating_calls: calls, tree, run }
}

/// The walkthrough's event log as it must come out.
pub const ALICE_KINDS: [EventKind; 14] = [
    EventKind::TreeEdit,
    EventKind::CheckStepTree,
    EventKind::HintGeneral,
    EventKind::HintDetailed,
    EventKind::CheckStepTree,
    EventKind::HintReveal,
    EventKind::TreeEdit,
    EventKind::CheckStepTree,
    EventKind::CopyToComments,
    EventKind::CodeEdit,
    EventKind::CheckMatch,
    EventKind::CodeEdit,
    EventKind::CheckMatch,
    EventKind::RunCode,
];

/// Checks the button-level sequence: exact counts, and each kind's first
/// occurrence after the previous kind's.
pub fn button_sequence_holds(kinds: &[EventKind]) -> Result<(), String> {
    let expected = [
        (EventKind::CheckStepTree, 3),
        (EventKind::HintGeneral, 1),
        (EventKind::HintDetailed, 1),
        (EventKind::HintReveal, 1),
        (EventKind::CopyToComments, 1),
        (EventKind::CheckMatch, 2),
        (EventKind::RunCode, 1),
    ];
    let mut previous = None;
    for (kind, count) in expected {
        let seen = kinds.iter().filter(|k| **k == kind).count();
        if seen != count {
            return Err(format!("{kind} appears {seen} times, expected {count}"));
        }
        let first = kinds.iter().position(|k| *k == kind).unwrap();
        if let Some((before, at)) = previous {
            if first <= at {
                return Err(format!("{kind} first occurs before {before}"));
            }
        }
        previous = Some((kind, first));
    }
    let last_check = kinds.iter().rposition(|k| *k == EventKind::CheckStepTree).unwrap();
    let copy = kinds.iter().position(|k| *k == EventKind::CopyToComments).unwrap();
    let last_match = kinds.iter().rposition(|k| *k == EventKind::CheckMatch).unwrap();
    let run = kinds.iter().position(|k| *k == EventKind::RunCode).unwrap();
    if last_check > copy || last_match > run {
        return Err("a formation check follows implementation, or a match check follows the run".into());
    }
    Ok(())
}

fn all_ids(tree: &Value) -> Vec<String> {
    fn walk(nodes: &Value, out: &mut Vec<String>) {
        for n in nodes.as_array().into_iter().flatten() {
            out.push(n["id"].as_str().unwrap().to_string());
            walk(&n["children"], out);
        }
    }
    let mut out = Vec::new();
    walk(&tree["roots"], &mut out);
    out
}

/// Everything a client can read about a session, as raw response bytes.
async fn snapshot(h: &Harness, ids: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for id in ids {
        for tail in ["", "/events", "/events?format=ndjson"] {
            let (status, body) = h.raw(Method::GET, &format!("/sessions/{id}{tail}"), None).await;
            assert!(status.is_success(), "{id}{tail}: {status}");
            out.push(body);
        }
    }
    out
}

/// Drives `count` sessions through random edits against a durable store,
/// then checks that a reopened store, with a torn final record, serves
/// byte-identical state and keeps a monotone clock.
pub async fn persistence_round_trip(count: usize, seed: u64) -> Result<(), String> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (store, loaded) = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let h = Harness::with(store, loaded, Duration::ZERO, python_runner());
    let mut rng = StdRng::seed_from_u64(seed);
    let mut sessions = vec![alice(&h).await.session];
    while sessions.len() < count {
        sessions.push(h.create(PROBLEM).await);
    }
    let alphabet = ["a", "b", "ünï", "→", "\"q\"", "\n", " ", "λ", "x"];
    for _ in 0..count * 8 {
        let s = sessions[rng.random_range(0..sessions.len())].clone();
        let view = h.ok(Method::GET, &format!("/sessions/{s}"), None).await;
        let existing = all_ids(&view["tree"]);
        let text: String = (0..rng.random_range(1..12)).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let pick = |rng: &mut StdRng| existing[rng.random_range(0..existing.len())].clone();
        let (tail, body) = match rng.random_range(0..5) {
            0 | 1 if !existing.is_empty() && rng.random_bool(0.5) => {
                ("tree", json!({ "ops": [{ "op": "add", "parent": pick(&mut rng), "text": text }] }))
            }
            0 | 1 => ("tree", json!({ "ops": [{ "op": "add", "text": text }] })),
            2 if !existing.is_empty() => ("tree", json!({ "ops": [{ "op": "editText", "node": pick(&mut rng), "text": text }] })),
            3 if !existing.is_empty() => ("tree", json!({ "ops": [{ "op": "delete", "node": pick(&mut rng) }] })),
            _ => ("code", json!({ "code": format!("def f(x):\n    return {text:?}\n") })),
        };
        let (status, reply) = h.call(Method::PUT, &format!("/sessions/{s}/{tail}"), Some(body)).await;
        let refused = status == StatusCode::CONFLICT && ["wrongStage", "nodeLocked"].contains(&reply["error"]["kind"].as_str().unwrap_or(""));
        if !status.is_success() && !refused {
            return Err(format!("PUT {tail} -> {status}: {reply}"));
        }
    }
    let before = snapshot(&h, &sessions).await;
    let newest = h.service.events(&sessions[0]).await.map_err(|e| e.to_string())?.last().map(|e| e.t);
    drop(h);

    let (store, loaded) = Store::open(dir.path()).map_err(|e| e.to_string())?;
    if loaded.len() != count {
        return Err(format!("reloaded {} of {count} sessions", loaded.len()));
    }
    let reference = loaded.clone();
    let h = Harness::with(store, loaded, Duration::ZERO, python_runner());
    if snapshot(&h, &sessions).await != before {
        return Err("reloaded sessions differ from what was served before".into());
    }
    // the clock continues after the newest persisted event
    let s = &sessions[0];
    h.ok(Method::PUT, &format!("/sessions/{s}/code"), Some(json!({ "code": "pass\n" }))).await;
    let after = h.service.events(s).await.map_err(|e| e.to_string())?;
    if after.last().map(|e| e.t) <= newest {
        return Err("clock went backwards after reload".into());
    }
    drop(h);

    // a crash mid-write leaves a torn tail, which must be ignored
    let log = dir.path().join(dbox_server::store::LOG_FILE);
    let mut bytes = std::fs::read(&log).map_err(|e| e.to_string())?;
    bytes.extend_from_slice(br#"{"type":"event","sessionId":"#);
    std::fs::write(&log, bytes).map_err(|e| e.to_string())?;
    let (_, torn) = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let (_, again) = Store::open(dir.path()).map_err(|e| e.to_string())?;
    if torn != again || torn.len() != count {
        return Err("torn tail changed the reloaded state".into());
    }
    let grown = torn.iter().find(|x| &x.id == s).ok_or("session lost")?;
    let old = reference.iter().find(|x| &x.id == s).ok_or("session lost")?;
    if grown.events.len() != old.events.len() + 1 {
        return Err("event written after reload was not persisted".into());
    }
    Ok(())
}

/// The real server binary on a free local port.
pub struct Server {
    child: Child,
    addr: String,
}

impl Server {
    pub fn start(data: &std::path::Path) -> Server {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let addr = format!("127.0.0.1:{port}");
        let child = Command::new(env!("CARGO_BIN_EXE_dbox-server"))
            .env("DBOX_DATA_DIR", data)
            .env("DBOX_BIND", &addr)
            .env("DBOX_CHECK_INTERVAL_MS", "0")
            .env_remove("DBOX_PROVIDER_URL")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let deadline = Instant::now() + Duration::from_secs(20);
        while TcpStream::connect(&addr).is_err() {
            assert!(Instant::now() < deadline, "server did not start");
            std::thread::sleep(Duration::from_millis(20));
        }
        Server { child, addr }
    }

    pub fn request(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        let (status, payload) = self.raw(method, path, body);
        (status, serde_json::from_str(&payload).unwrap_or(Value::Null))
    }

    pub fn raw(&self, method: &str, path: &str, body: Option<Value>) -> (u16, String) {
        let body = body.map(|b| b.to_string()).unwrap_or_default();
        let mut stream = TcpStream::connect(&self.addr).unwrap();
        write!(
            stream,
            "{method} {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).unwrap();
        let status = response[9..12].parse().unwrap();
        let (_, payload) = response.split_once("\r\n\r\n").unwrap();
        (status, payload.to_string())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
