mod support;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::http::{Method, StatusCode};
use dbox_core::llm::{Orchestrator, OrchestratorConfig, Pipeline, Provider, ProviderError, ProviderRequest, ScriptedProvider, TemplateSet};
use dbox_server::{api, EventKind, ProblemBank, ServiceConfig, SessionService, Store};
use serde_json::{json, Value};
use support::*;
use tokio::sync::{Notify, Semaphore};

#[tokio::test]
async fn walkthrough_runs_from_empty_tree_to_passing_tests() {
    let h = Harness::memory();
    let w = alice(&h).await;
    assert_eq!(w.kinds, ALICE_KINDS);
    assert_eq!(w.kinds.len(), w.mutating_calls);
    button_sequence_holds(&w.kinds).unwrap();
    assert_eq!(w.run["allPassed"], true);
    assert!(w.run["perTest"].as_array().unwrap().iter().all(|t| t["passed"] == true));
    let statuses: Vec<Value> = dbox_core::steptree::StepTree::from_wire_json(&w.tree.to_string())
        .unwrap()
        .nodes()
        .map(|n| json!(n.impl_status))
        .collect();
    assert!(statuses.iter().all(|s| s == "implemented"), "{statuses:?}");
    assert_eq!(h.provider.pending(), 0);

    let events = h.ok(Method::GET, &format!("/sessions/{}/events", w.session), None).await;
    let times: Vec<&str> = events.as_array().unwrap().iter().map(|e| e["t"].as_str().unwrap()).collect();
    let parsed: Vec<_> = times.iter().map(|t| chrono::DateTime::parse_from_rfc3339(t).unwrap()).collect();
    assert!(parsed.windows(2).all(|w| w[0] < w[1]), "{times:?}");

    let (status, export) = h.raw(Method::GET, &format!("/sessions/{}/events?format=ndjson", w.session), None).await;
    assert_eq!(status, StatusCode::OK);
    let lines: Vec<Value> = export.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), ALICE_KINDS.len());
    for line in &lines {
        let keys: Vec<&String> = line.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["kind", "payload", "t"]);
        assert!(line["payload"].is_object());
    }
    assert_eq!(lines.last().unwrap()["payload"]["allPassed"], true);
}

#[tokio::test]
async fn sessions_are_created_isolated_and_problems_redacted() {
    let h = Harness::memory();
    let (status, body) = h.call(Method::POST, "/sessions", Some(json!({ "problemId": "nope" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["kind"], "unknownProblem");

    let a = h.create(PROBLEM).await;
    let b = h.create(PROBLEM).await;
    assert_ne!(a, b);
    let view = h.ok(Method::GET, &format!("/sessions/{a}"), None).await;
    assert_eq!(view["tree"]["stage"], "formation");
    assert_eq!(view["tree"]["roots"], json!([]));
    assert_eq!(view["code"], "def search(nums, target):\n    pass\n");
    assert_eq!(h.ok(Method::GET, &format!("/sessions/{a}/events"), None).await, json!([]));

    h.ok(Method::PUT, &format!("/sessions/{a}/tree"), Some(json!({ "ops": [{ "op": "add", "text": "x" }] }))).await;
    h.ok(Method::PUT, &format!("/sessions/{a}/code"), Some(json!({ "code": "print(1)\n" }))).await;
    assert_eq!(h.kinds(&a).await, [EventKind::TreeEdit, EventKind::CodeEdit]);
    assert!(h.kinds(&b).await.is_empty());
    let other = h.ok(Method::GET, &format!("/sessions/{b}"), None).await;
    assert_eq!(other["tree"]["roots"], json!([]));

    let problem = h.ok(Method::GET, &format!("/problems/{PROBLEM}"), None).await;
    assert!(problem["tests"][0].get("expected").is_none());
    assert!(problem.get("referenceSolutions").is_none());
    let (status, _) = h.call(Method::GET, "/problems/none", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = h.call(Method::GET, "/sessions/none/events", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["kind"], "unknownSession");
}

async fn two_steps(h: &Harness) -> (String, String, String) {
    let s = h.create(PROBLEM).await;
    let reply = h
        .ok(
            Method::PUT,
            &format!("/sessions/{s}/tree"),
            Some(json!({ "ops": [{ "op": "add", "text": "one" }, { "op": "add", "text": "two" }] })),
        )
        .await;
    let [a, b] = <[String; 2]>::try_from(ids(&reply["created"])).unwrap();
    (s, a, b)
}

#[tokio::test]
async fn all_correct_check_advances_and_logs() {
    let h = Harness::memory();
    let (s, a, b) = two_steps(&h).await;
    h.provider.push_for(
        &s,
        Pipeline::FromStepTree,
        json!({ "nodes": [{ "id": a, "text": "one", "status": "correct" }, { "id": b, "text": "two", "status": "correct" }] }),
    );
    let reply = h.ok(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
    assert_eq!(reply["advanced"], true);
    assert_eq!(node(&reply["tree"], &a)["status"], "correct");
    assert_eq!(reply["tree"]["stage"], "implementation");
    assert_eq!(h.kinds(&s).await.last(), Some(&EventKind::CheckStepTree));

    // formation checks are over; implementation checks are not available before
    let (status, body) = h.call(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["kind"], "wrongStage");
}

#[tokio::test]
async fn rechecks_requery_and_count_only_failing_nodes() {
    let h = Harness::memory();
    let (s, a, b) = two_steps(&h).await;
    let judged = json!({ "nodes": [
        { "id": a, "text": "one", "status": "incorrect", "hints": { "general": "g", "detailed": "d", "reveal": "r" } },
        { "id": b, "text": "two", "status": "correct" },
    ]});
    for _ in 0..3 {
        h.provider.push_for(&s, Pipeline::FromStepTree, judged.clone());
    }
    let mut tree = Value::Null;
    for _ in 0..3 {
        tree = h.ok(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await["tree"].clone();
    }
    assert_eq!(h.provider.requests().len(), 3, "identical trees are re-sent every time");
    assert_eq!(node(&tree, &a)["failedAttempts"], 3);
    assert_eq!(node(&tree, &b)["failedAttempts"], 0);
}

#[tokio::test]
async fn check_match_before_implementation_is_wrong_stage() {
    let h = Harness::memory();
    let (s, _, _) = two_steps(&h).await;
    for endpoint in ["check-match", "copy-to-comments"] {
        let (status, body) = h.call(Method::POST, &format!("/sessions/{s}/{endpoint}"), None).await;
        assert_eq!(status, StatusCode::CONFLICT, "{endpoint}");
        assert_eq!(body["error"]["kind"], "wrongStage");
    }
    assert!(h.provider.requests().is_empty());
}

#[tokio::test]
async fn hints_emit_level_events_and_ineligible_nodes_log_nothing() {
    let h = Harness::memory();
    let (s, a, b) = two_steps(&h).await;
    h.provider.push_for(
        &s,
        Pipeline::FromStepTree,
        json!({ "nodes": [
            { "id": a, "text": "one", "status": "incorrect", "hints": { "general": "g", "detailed": "d", "reveal": "r" } },
            { "id": b, "text": "two", "status": "correct" },
        ]}),
    );
    h.ok(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
    let before = h.kinds(&s).await.len();
    let (status, body) = h.call(Method::POST, &format!("/sessions/{s}/hint"), Some(json!({ "nodeId": b }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["kind"], "nodeNotEligible");
    let (status, _) = h.call(Method::POST, &format!("/sessions/{s}/hint"), Some(json!({ "nodeId": "ghost" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(h.kinds(&s).await.len(), before);

    let reply = h.ok(Method::POST, &format!("/sessions/{s}/hint"), Some(json!({ "nodeId": a }))).await;
    assert_eq!(reply["hint"], json!({ "level": 1, "text": "g", "revealedNode": null }));
    assert_eq!(node(&reply["tree"], &a)["hints"], json!({ "general": "g", "detailed": null, "reveal": null, "viewed": 1 }));
    assert_eq!(h.kinds(&s).await.last(), Some(&EventKind::HintGeneral));
}

#[tokio::test]
async fn from_editor_adopts_an_inferred_tree() {
    let h = Harness::memory();
    let s = h.create(PROBLEM).await;
    let reference = ProblemBank::bundled().get(PROBLEM).unwrap().reference_solutions[0].clone();
    h.ok(Method::PUT, &format!("/sessions/{s}/code"), Some(json!({ "code": reference }))).await;
    h.provider.push_for(
        &s,
        Pipeline::FromCode,
        json!({ "nodes": [
            { "text": "Keep lo and hi bounds", "lines": [2, 2] },
            { "text": "Halve the range around mid", "lines": [3, 17], "children": [
                { "text": "Return mid on a hit", "lines": [5, 6] },
            ]},
            { "text": "Return -1", "lines": [18, 18] },
        ]}),
    );
    h.provider.push_for(
        &s,
        Pipeline::FromStepTree,
        json!({ "nodes": [
            { "id": "d1", "text": "Keep lo and hi bounds", "status": "correct" },
            { "id": "d2", "text": "Halve the range around mid", "status": "correct", "children": [
                { "id": "d3", "text": "Return mid on a hit", "status": "correct" },
            ]},
            { "id": "d4", "text": "Return -1", "status": "correct" },
        ]}),
    );
    let reply = h.ok(Method::POST, &format!("/sessions/{s}/from-editor"), None).await;
    assert_eq!(reply["adopted"], true);
    assert_eq!(reply["created"].as_array().unwrap().len(), 4);
    assert_eq!(reply["advanced"], true);
    let tree = dbox_core::steptree::StepTree::from_wire_json(&reply["tree"].to_string()).unwrap();
    assert_eq!(tree.nodes().map(|n| n.text.as_str()).collect::<Vec<_>>()[2], "Return mid on a hit");
    let created = ids(&reply["created"]);
    assert_eq!(reply["mapping"]["entries"][&created[1]], json!([[3, 17]]));
    assert_eq!(h.kinds(&s).await, [EventKind::CodeEdit, EventKind::FromEditorToStepTree]);
}

#[tokio::test]
async fn from_editor_flags_a_logic_slip() {
    let h = Harness::memory();
    let s = h.create(PROBLEM).await;
    let buggy = "def search(nums, target):\n    lo, hi = 0, len(nums)\n    while lo < hi:\n        mid = (lo + hi) // 2\n        if nums[mid] == target:\n            return mid\n        lo = mid + 1\n    return -1\n";
    h.ok(Method::PUT, &format!("/sessions/{s}/code"), Some(json!({ "code": buggy }))).await;
    h.provider.push_for(
        &s,
        Pipeline::FromCode,
        json!({ "nodes": [{ "text": "Scan forward from mid", "lines": [2, 7] }, { "text": "Return -1", "lines": [8, 8] }] }),
    );
    h.provider.push_for(
        &s,
        Pipeline::FromStepTree,
        json!({ "nodes": [
            { "id": "d1", "text": "Scan forward from mid", "status": "incorrect",
              "hints": { "general": "Is half the array always skipped safely?", "detailed": "Compare against the sorted half.", "reveal": "Pick the sorted half first." } },
            { "id": "d2", "text": "Return -1", "status": "correct" },
        ]}),
    );
    let reply = h.ok(Method::POST, &format!("/sessions/{s}/from-editor"), None).await;
    assert_eq!(reply["advanced"], false);
    let tree = &reply["tree"];
    let flagged: Vec<&Value> = tree["roots"].as_array().unwrap().iter().filter(|n| n["status"] == "incorrect").collect();
    assert_eq!(flagged.len(), 1);
    let id = flagged[0]["id"].as_str().unwrap();
    for level in 1..=2 {
        let hint = h.ok(Method::POST, &format!("/sessions/{s}/hint"), Some(json!({ "nodeId": id }))).await;
        assert_eq!(hint["hint"]["level"], level);
    }
    let session = h.service.session(&s).await.unwrap();
    assert!(session.tree.get().contains("Compare against the sorted half."));
}

#[tokio::test]
async fn empty_code_is_rejected_before_the_provider() {
    let h = Harness::memory();
    let s = h.create(PROBLEM).await;
    h.ok(Method::PUT, &format!("/sessions/{s}/code"), Some(json!({ "code": "  \n" }))).await;
    let (status, body) = h.call(Method::POST, &format!("/sessions/{s}/from-editor"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["kind"], "emptyCode");
    assert!(h.provider.requests().is_empty());
}

#[tokio::test]
async fn copy_to_comments_on_empty_code_appends_every_step() {
    let h = Harness::memory();
    let (s, a, b) = two_steps(&h).await;
    h.provider.push_for(
        &s,
        Pipeline::FromStepTree,
        json!({ "nodes": [{ "id": a, "text": "one", "status": "correct" }, { "id": b, "text": "two", "status": "correct" }] }),
    );
    h.ok(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
    h.ok(Method::PUT, &format!("/sessions/{s}/code"), Some(json!({ "code": "" }))).await;
    let reply = h.ok(Method::POST, &format!("/sessions/{s}/copy-to-comments"), None).await;
    let code = reply["code"].as_str().unwrap();
    assert_eq!(code.lines().count(), 2, "{code}");
    assert!(code.lines().all(|l| l.starts_with('#') && l.contains(dbox_core::mapping::DEFAULT_MARKER)));
    assert_eq!(h.provider.requests().len(), 1, "empty code needs no mapping call");
    assert_eq!(h.ok(Method::GET, &format!("/sessions/{s}"), None).await["code"], code);
}

#[tokio::test]
async fn tree_batches_are_atomic() {
    let h = Harness::memory();
    let (s, a, _) = two_steps(&h).await;
    let before = h.ok(Method::GET, &format!("/sessions/{s}"), None).await["tree"].clone();
    let (status, body) = h
        .call(
            Method::PUT,
            &format!("/sessions/{s}/tree"),
            Some(json!({ "ops": [{ "op": "editText", "node": a, "text": "changed" }, { "op": "delete", "node": "ghost" }] })),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["kind"], "unknownNode");
    assert_eq!(h.ok(Method::GET, &format!("/sessions/{s}"), None).await["tree"], before);
    assert_eq!(h.kinds(&s).await, [EventKind::TreeEdit]);

    let (status, _) = h.call(Method::PUT, &format!("/sessions/{s}/tree"), Some(json!({ "ops": [] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = h.call(Method::PUT, &format!("/sessions/{s}/tree"), Some(json!({ "ops": [{ "op": "fly" }] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let reply = h
        .ok(
            Method::PUT,
            &format!("/sessions/{s}/tree"),
            Some(json!({ "ops": [{ "op": "split", "node": a, "count": 2 }, { "op": "move", "node": a, "index": 1 }] })),
        )
        .await;
    assert_eq!(reply["created"].as_array().unwrap().len(), 2);
    assert_eq!(reply["tree"]["roots"][1]["id"], a.as_str());
}

#[tokio::test]
async fn provider_failures_are_502_with_an_anomaly_id() {
    let h = Harness::memory();
    let (s, _, _) = two_steps(&h).await;
    for _ in 0..3 {
        h.provider.push_for(&s, Pipeline::FromStepTree, "not json");
    }
    let (status, body) = h.call(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"]["kind"], "schemaViolation");
    assert!(uuid_like(body["error"]["anomalyId"].as_str().unwrap()));
    assert_eq!(h.kinds(&s).await, [EventKind::TreeEdit]);
}

fn uuid_like(text: &str) -> bool {
    text.len() == 36 && text.chars().filter(|c| *c == '-').count() == 4
}

#[tokio::test]
async fn checks_are_rate_limited_per_session() {
    let h = Harness::with(Store::memory(), Vec::new(), Duration::from_secs(1), python_runner());
    let (s, a, b) = two_steps(&h).await;
    let judged = json!({ "nodes": [{ "id": a, "text": "one", "status": "incorrect" }, { "id": b, "text": "two", "status": "correct" }] });
    h.provider.push_for(&s, Pipeline::FromStepTree, judged.clone());
    h.provider.push_for(&s, Pipeline::FromStepTree, judged);
    h.ok(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
    let (status, body) = h.call(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
    assert!(body["error"]["retryAfterMs"].as_u64().unwrap() <= 1000);

    // another session is not affected
    let (t, c, d) = two_steps(&h).await;
    h.provider.push_for(
        &t,
        Pipeline::FromStepTree,
        json!({ "nodes": [{ "id": c, "text": "one", "status": "incorrect" }, { "id": d, "text": "two", "status": "correct" }] }),
    );
    h.ok(Method::POST, &format!("/sessions/{t}/check-step-tree"), None).await;

    tokio::time::sleep(Duration::from_millis(1050)).await;
    h.ok(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
}

/// Holds every request until released.
struct Gate {
    inner: ScriptedProvider,
    arrived: Notify,
    release: Semaphore,
}

#[async_trait]
impl Provider for Gate {
    async fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        self.arrived.notify_one();
        self.release.acquire().await.unwrap().forget();
        self.inner.complete(request).await
    }
}

fn gated() -> (Arc<Gate>, Harness) {
    let gate = Arc::new(Gate { inner: ScriptedProvider::new(), arrived: Notify::new(), release: Semaphore::new(0) });
    let orchestrator = Orchestrator::new(gate.clone(), TemplateSet::bundled(), OrchestratorConfig::default());
    let service = Arc::new(SessionService::new(
        ProblemBank::bundled(),
        Arc::new(orchestrator),
        python_runner(),
        Store::memory(),
        Vec::new(),
        ServiceConfig { check_interval: Duration::ZERO },
    ));
    let router = api::router(service.clone());
    (gate, Harness { service, provider: Arc::new(ScriptedProvider::new()), router })
}

#[tokio::test]
async fn a_second_click_while_pending_is_busy() {
    let (gate, h) = gated();
    let h = Arc::new(h);
    let (s, a, b) = two_steps(&h).await;
    gate.inner.push_for(
        &s,
        Pipeline::FromStepTree,
        json!({ "nodes": [{ "id": a, "text": "one", "status": "correct" }, { "id": b, "text": "two", "status": "incorrect" }] }),
    );
    let first = tokio::spawn({
        let h = h.clone();
        let s = s.clone();
        async move { h.call(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await }
    });
    gate.arrived.notified().await;
    let (status, body) = h.call(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["kind"], "busy");
    // edits and reads still go through while the check is pending
    h.ok(Method::GET, &format!("/sessions/{s}"), None).await;
    gate.release.add_permits(1);
    let (status, _) = first.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h.kinds(&s).await, [EventKind::TreeEdit, EventKind::CheckStepTree]);
}

#[tokio::test]
async fn answers_for_an_edited_tree_are_discarded() {
    let (gate, h) = gated();
    let h = Arc::new(h);
    let (s, a, b) = two_steps(&h).await;
    gate.inner.push_for(
        &s,
        Pipeline::FromStepTree,
        json!({ "nodes": [{ "id": a, "text": "one", "status": "correct" }, { "id": b, "text": "two", "status": "correct" }] }),
    );
    let check = tokio::spawn({
        let h = h.clone();
        let s = s.clone();
        async move { h.call(Method::POST, &format!("/sessions/{s}/check-step-tree"), None).await }
    });
    gate.arrived.notified().await;
    h.ok(
        Method::PUT,
        &format!("/sessions/{s}/tree"),
        Some(json!({ "ops": [{ "op": "editText", "node": b, "text": "two, reworded" }] })),
    )
    .await;
    gate.release.add_permits(1);
    let (status, body) = check.await.unwrap();
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["kind"], "staleResult");
    assert_eq!(body["error"]["anomaly"]["kind"], "staleResult");
    let view = h.ok(Method::GET, &format!("/sessions/{s}"), None).await;
    assert_eq!(view["tree"]["stage"], "formation");
    assert_eq!(node(&view["tree"], &b)["text"], "two, reworded");
    assert_eq!(node(&view["tree"], &a)["status"], "unchecked");
    assert_eq!(h.kinds(&s).await, [EventKind::TreeEdit, EventKind::TreeEdit]);
}
