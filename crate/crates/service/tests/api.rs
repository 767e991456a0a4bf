use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

use dfa_core::adapt::{run_dfa, SessionLog};
use dfa_core::env::{replay, Action, Domain, Provenance};
use dfa_core::harness::{gen_shift_task, gen_train_task, train_base_policy, ShiftKind, TaskSpec};
use dfa_core::oracle::{expert_actions, success, UserConfig, UserModel};
use dfa_service::api::{CounterfactualView, DemoResponse, ErrorBody, EvalView, SessionView, StreamEvent};
use dfa_service::{app, AppState, ServiceConfig};

async fn spawn() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let router = app(AppState::new(ServiceConfig::default()));
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    format!("127.0.0.1:{}", addr.port())
}

fn task(domain: Domain, shift: ShiftKind, seed: u64) -> TaskSpec {
    gen_shift_task(&gen_train_task(domain, seed).unwrap(), shift, seed).unwrap()
}

async fn create(client: &Client, base: &str, domain: &str, shift: &str, seed: u64) -> SessionView {
    let res = client
        .post(format!("http://{base}/sessions"))
        .json(&json!({"domain": domain, "shift": shift, "seed": seed}))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::CREATED);
    res.json().await.unwrap()
}

async fn error(res: reqwest::Response, status: StatusCode) -> ErrorBody {
    assert_eq!(res.status(), status);
    res.json().await.unwrap()
}

/// Poll the evaluation until the finetuning job is done.
async fn eval(client: &Client, base: &str, id: &str) -> EvalView {
    loop {
        let res = client.get(format!("http://{base}/sessions/{id}/eval")).send().await.unwrap();
        if res.status() == StatusCode::ACCEPTED {
            assert!(res.headers().contains_key("retry-after"));
            let body: ErrorBody = res.json().await.unwrap();
            assert_eq!(body.code, "job_pending");
            tokio::time::sleep(Duration::from_millis(50)).await;
            continue;
        }
        assert_eq!(res.status(), StatusCode::OK);
        return res.json().await.unwrap();
    }
}

/// Drive a session the way a noiseless user would, answering from the task.
async fn scripted_client(client: &Client, base: &str, domain: Domain, shift: ShiftKind, seed: u64) -> SessionLog {
    let task = task(domain, shift, seed);
    let mut user = UserModel::new(task.reward.clone(), task.shifted.clone(), UserConfig::oracle(seed)).unwrap();
    let view = create(client, base, domain.name(), shift.name(), seed).await;
    let id = view.id.clone();
    let mut rollout = view.rollout.actions;
    loop {
        let shown = replay(&task.test_scene, &rollout, Provenance::Rollout).unwrap();
        let verdict = user.judge_success(&shown);
        let res = client.post(format!("http://{base}/sessions/{id}/verdict")).json(&json!({"success": verdict})).send().await.unwrap();
        assert_eq!(res.status(), StatusCode::OK);
        if verdict {
            break;
        }
        let demo = user.provide_demo(&task.test_scene).unwrap().actions();
        let res = client.post(format!("http://{base}/sessions/{id}/demo")).json(&json!({"actions": demo})).send().await.unwrap();
        assert_eq!(res.status(), StatusCode::OK);
        let submitted: DemoResponse = res.json().await.unwrap();
        if let Some(cf) = submitted.counterfactual {
            let shown: CounterfactualView =
                client.get(format!("http://{base}/sessions/{id}/counterfactual")).send().await.unwrap().json().await.unwrap();
            assert_eq!(shown.edit, cf.edit);
            let cf_traj = replay(&shown.scene, &shown.trajectory.actions, Provenance::Counterfactual).unwrap();
            let valid = user.verify_counterfactual(&shown.edit, &cf_traj).given;
            let relevance = user.label_relevance(&shown.edit).given;
            let res = client
                .post(format!("http://{base}/sessions/{id}/feedback"))
                .json(&json!({"valid": valid, "relevance": relevance}))
                .send()
                .await
                .unwrap();
            assert_eq!(res.status(), StatusCode::OK);
        }
        let evaluated = eval(client, base, &id).await;
        if evaluated.phase.name() == "closed" {
            break;
        }
        rollout = evaluated.rollout.actions;
    }
    client.get(format!("http://{base}/sessions/{id}/log")).send().await.unwrap().json().await.unwrap()
}

fn headless(domain: Domain, shift: ShiftKind, seed: u64) -> SessionLog {
    let cfg = ServiceConfig::default();
    let train = gen_train_task(domain, seed).unwrap();
    let policy = train_base_policy(&train, &cfg.train).unwrap();
    let task = gen_shift_task(&train, shift, seed).unwrap();
    let mut user = UserModel::new(task.reward.clone(), task.shifted.clone(), UserConfig::oracle(seed)).unwrap();
    run_dfa(policy, &task, &mut user, &cfg.dfa_config(seed, None)).unwrap().1
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn scripted_client_matches_headless_loop() {
    let base = spawn().await;
    let client = Client::new();
    let cases = [
        (Domain::Nav2d, ShiftKind::ConceptTi, 1),
        (Domain::Nav2d, ShiftKind::ConceptTr, 2),
        (Domain::Nav2d, ShiftKind::Other, 3),
        (Domain::Doorkey, ShiftKind::DistractorTi, 4),
    ];
    // Concurrent sessions must not see each other.
    let runs = cases.map(|(d, s, seed)| {
        let (client, base) = (client.clone(), base.clone());
        tokio::spawn(async move { scripted_client(&client, &base, d, s, seed).await })
    });
    for ((d, s, seed), run) in cases.into_iter().zip(runs) {
        let served = run.await.unwrap();
        let expected = tokio::task::spawn_blocking(move || headless(d, s, seed)).await.unwrap();
        assert_eq!(served, expected, "{d} {s} {seed}");
    }
}

#[tokio::test]
async fn session_creation() {
    let base = spawn().await;
    let client = Client::new();
    let a = create(&client, &base, "nav2d", "concept_ti", 7).await;
    let b = create(&client, &base, "nav2d", "concept_ti", 7).await;
    assert_ne!(a.id, b.id);
    assert_eq!(a.rollout.frames.len(), 20);
    assert_eq!(a.rollout, b.rollout);
    assert_eq!(a.phase.name(), "awaiting_verdict");
    assert_eq!(a.allowed, vec!["verdict"]);
    let frame = a.rollout.frames[0].decode().unwrap();
    assert_eq!(frame.len(), 36 * 36 * 3);

    let res = client.post(format!("http://{base}/sessions")).json(&json!({"domain": "nav2d", "shift": "sideways", "seed": 0})).send().await.unwrap();
    let body = error(res, StatusCode::BAD_REQUEST).await;
    assert!(body.allowed.contains(&"distractor_tr".to_string()), "{body:?}");
    let res = client.post(format!("http://{base}/sessions")).json(&json!({"domain": "maze", "shift": "other", "seed": 0})).send().await.unwrap();
    assert_eq!(error(res, StatusCode::BAD_REQUEST).await.allowed, vec!["nav2d", "doorkey"]);

    let res = client.get(format!("http://{base}/sessions/nope")).send().await.unwrap();
    assert_eq!(error(res, StatusCode::NOT_FOUND).await.code, "not_found");
    let res = client.get(format!("http://{base}/sessions/nope/eval")).send().await.unwrap();
    assert_eq!(error(res, StatusCode::NOT_FOUND).await.code, "not_found");
}

#[tokio::test]
async fn phase_machine_over_http() {
    let base = spawn().await;
    let client = Client::new();
    let task = task(Domain::Nav2d, ShiftKind::ConceptTi, 1);
    let id = create(&client, &base, "nav2d", "concept_ti", 1).await.id;
    let url = |p: &str| format!("http://{base}/sessions/{id}/{p}");

    let res = client.post(url("feedback")).json(&json!({"valid": true, "relevance": "TI"})).send().await.unwrap();
    let body = error(res, StatusCode::CONFLICT).await;
    assert_eq!((body.code.as_str(), body.allowed.clone()), ("phase_violation", vec!["verdict".to_string()]));
    let res = client.get(url("eval")).send().await.unwrap();
    assert_eq!(error(res, StatusCode::CONFLICT).await.code, "phase_violation");

    assert_eq!(client.post(url("verdict")).json(&json!({"success": false})).send().await.unwrap().status(), StatusCode::OK);
    let res = client.post(url("verdict")).json(&json!({"success": false})).send().await.unwrap();
    assert_eq!(error(res, StatusCode::CONFLICT).await.allowed, vec!["demo"]);

    let demo = expert_actions(&task.test_scene, &task.reward).unwrap();
    let res = client.post(url("demo")).json(&json!({"actions": demo[..19]})).send().await.unwrap();
    assert_eq!(error(res, StatusCode::UNPROCESSABLE_ENTITY).await.code, "length_mismatch");
    let res = client.post(url("demo")).json(&json!({"actions": vec!["up"; 20]})).send().await.unwrap();
    assert_eq!(error(res, StatusCode::UNPROCESSABLE_ENTITY).await.code, "malformed_action");
    let res = client.post(url("demo")).json(&json!({"actions": vec![[0.0, 0.0]; 20]})).send().await.unwrap();
    assert_eq!(error(res, StatusCode::UNPROCESSABLE_ENTITY).await.code, "demo_fails_task");

    let res = client.post(url("demo")).json(&json!({"actions": demo})).send().await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let submitted: DemoResponse = res.json().await.unwrap();
    let cf = submitted.counterfactual.expect("goal recolor explains the failure");
    assert_eq!(cf.edit_count, 1);
    assert!(cf.description.starts_with("goal color changed"), "{}", cf.description);
    assert_eq!((cf.trajectory.frames.len(), cf.demo.frames.len(), cf.rollout.frames.len()), (20, 20, 20));

    let res = client.post(url("feedback")).json(&json!({"valid": true, "relevance": "TI"})).send().await.unwrap();
    let job: Value = res.json().await.unwrap();
    assert_eq!((job["demos"].as_u64(), job["augmented"].as_u64()), (Some(5), Some(4)));
    let evaluated = eval(&client, &base, &id).await;
    assert_eq!(evaluated.eval.scene_success.len(), 10);
    assert_eq!(evaluated.round, 1);
    assert!(matches!(evaluated.phase.name(), "awaiting_verdict" | "closed"));
}

async fn next_event<S>(ws: &mut S) -> StreamEvent
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        if let Message::Text(t) = ws.next().await.unwrap().unwrap() {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[tokio::test]
async fn streamed_demo_round_trips() {
    let base = spawn().await;
    let client = Client::new();
    let task = task(Domain::Doorkey, ShiftKind::ConceptTi, 2);
    let id = create(&client, &base, "doorkey", "concept_ti", 2).await.id;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{base}/sessions/{id}/stream")).await.unwrap();
    assert!(matches!(next_event(&mut ws).await, StreamEvent::Frame { steps: 0, horizon: 35, .. }));

    // Steps before the verdict are refused.
    ws.send(Message::text(json!({"type": "step", "action": "up"}).to_string())).await.unwrap();
    match next_event(&mut ws).await {
        StreamEvent::Error { error } => assert_eq!(error.code, "phase_violation"),
        other => panic!("{other:?}"),
    }
    client.post(format!("http://{base}/sessions/{id}/verdict")).json(&json!({"success": false})).send().await.unwrap();

    let actions = expert_actions(&task.test_scene, &task.reward).unwrap();
    let expected = replay(&task.test_scene, &actions, Provenance::HumanDemo).unwrap();
    ws.send(Message::text(json!({"type": "step", "action": [0.1, 0.1]}).to_string())).await.unwrap();
    assert!(matches!(next_event(&mut ws).await, StreamEvent::Error { .. }));
    ws.send(Message::text(json!({"type": "step", "action": "left"}).to_string())).await.unwrap();
    next_event(&mut ws).await;
    ws.send(Message::text(json!({"type": "reset"}).to_string())).await.unwrap();
    assert!(matches!(next_event(&mut ws).await, StreamEvent::Frame { steps: 0, .. }));
    for (i, a) in actions.iter().enumerate() {
        ws.send(Message::text(json!({"type": "step", "action": a}).to_string())).await.unwrap();
        match next_event(&mut ws).await {
            StreamEvent::Frame { steps, frame, .. } => {
                assert_eq!(steps, i + 1);
                let state = expected.steps.get(i + 1).map_or(&expected.final_state, |s| &s.state);
                assert_eq!(frame.scene, state.scene);
            }
            other => panic!("{other:?}"),
        }
    }
    ws.send(Message::text(json!({"type": "commit"}).to_string())).await.unwrap();
    match next_event(&mut ws).await {
        StreamEvent::Submitted { response } => assert_eq!(response.padding, 0),
        other => panic!("{other:?}"),
    }
    let log: SessionLog = client.get(format!("http://{base}/sessions/{id}/log")).send().await.unwrap().json().await.unwrap();
    let demo = log.rounds[0].demo.as_ref().unwrap();
    assert_eq!(demo.actions, actions);
    assert!(success(&demo.replay().unwrap(), &task.reward));
}

#[tokio::test]
async fn short_streamed_demo_is_padded_on_request() {
    let base = spawn().await;
    let client = Client::new();
    let task = task(Domain::Nav2d, ShiftKind::Other, 5);
    let id = create(&client, &base, "nav2d", "other", 5).await.id;
    client.post(format!("http://{base}/sessions/{id}/verdict")).json(&json!({"success": false})).send().await.unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{base}/sessions/{id}/stream")).await.unwrap();
    next_event(&mut ws).await;
    let actions = expert_actions(&task.test_scene, &task.reward).unwrap();
    let moving: Vec<Action> = actions.iter().copied().take_while(|a| *a != Action::Continuous([0.0, 0.0])).collect();
    assert!(moving.len() < 20);
    for a in &moving {
        ws.send(Message::text(json!({"type": "step", "action": a}).to_string())).await.unwrap();
        next_event(&mut ws).await;
    }
    ws.send(Message::text(json!({"type": "commit"}).to_string())).await.unwrap();
    match next_event(&mut ws).await {
        StreamEvent::Error { error } => assert_eq!(error.code, "length_mismatch"),
        other => panic!("{other:?}"),
    }
    ws.send(Message::text(json!({"type": "commit", "pad_to_horizon": true}).to_string())).await.unwrap();
    match next_event(&mut ws).await {
        StreamEvent::Submitted { response } => {
            assert_eq!(response.padding, 20 - moving.len());
            assert!(response.counterfactual.is_none(), "other shifts have no counterfactual");
            assert_eq!(response.job.unwrap().demos, 1);
        }
        other => panic!("{other:?}"),
    }
}
