//! Incremental demo capture over a WebSocket: each step is echoed back as a
//! rendered frame; a commit submits the captured actions as the demo.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::Response;

use dfa_core::adapt::session::DemoSubmission;
use dfa_core::adapt::Phase;
use dfa_core::env::{reset, step, Action, Observation, WorldState};
use dfa_core::DfaError;

use crate::api::{FrameView, StreamEvent, StreamRequest};
use crate::error::ApiError;
use crate::routes::{submit_demo, Shared};

pub async fn upgrade(State(state): State<Shared>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    state.get(&id).await?;
    Ok(ws.on_upgrade(move |socket| capture(socket, state, id)))
}

struct Capture {
    state: WorldState,
    obs: Observation,
    actions: Vec<Action>,
    horizon: usize,
}

impl Capture {
    fn frame(&self) -> Result<StreamEvent, ApiError> {
        Ok(StreamEvent::Frame { steps: self.actions.len(), horizon: self.horizon, frame: FrameView::new(&self.state, &self.obs)? })
    }
}

async fn start(state: &Shared, id: &str) -> Result<Capture, ApiError> {
    let guard = state.lock(id).await?;
    let task = guard.session.task();
    let (world, obs) = reset(&task.test_scene)?;
    Ok(Capture { state: world, obs, actions: Vec::new(), horizon: task.domain.horizon() })
}

async fn handle(state: &Shared, id: &str, capture: &mut Capture, req: StreamRequest) -> Result<StreamEvent, ApiError> {
    match req {
        StreamRequest::Reset => {
            *capture = start(state, id).await?;
            capture.frame()
        }
        StreamRequest::Step { action } => {
            let phase = state.lock(id).await?.session.phase();
            if phase != Phase::AwaitingDemo {
                return Err(DfaError::PhaseViolation {
                    phase: phase.name().into(),
                    allowed: phase.allowed().iter().map(|s| s.to_string()).collect(),
                }
                .into());
            }
            action.validate(capture.state.scene.domain)?;
            if capture.actions.len() >= capture.horizon {
                return Err(DfaError::LengthMismatch { expected: capture.horizon, got: capture.actions.len() + 1 }.into());
            }
            let (next, obs) = step(&capture.state, &action);
            capture.state = next;
            capture.obs = obs;
            capture.actions.push(action);
            capture.frame()
        }
        StreamRequest::Commit { pad_to_horizon, allow_failing } => {
            let submission = DemoSubmission { actions: capture.actions.clone(), pad_to_horizon, allow_failing };
            let response = submit_demo(state, id, submission).await?;
            Ok(StreamEvent::Submitted { response: Box::new(response) })
        }
    }
}

async fn send(socket: &mut WebSocket, event: &StreamEvent) -> bool {
    match serde_json::to_string(event) {
        Ok(text) => socket.send(Message::Text(text.into())).await.is_ok(),
        Err(_) => false,
    }
}

fn error_event(e: ApiError) -> StreamEvent {
    StreamEvent::Error { error: e.body() }
}

async fn capture(mut socket: WebSocket, state: Shared, id: String) {
    let mut cap = match start(&state, &id).await {
        Ok(c) => c,
        Err(e) => {
            send(&mut socket, &error_event(e)).await;
            return;
        }
    };
    if !send(&mut socket, &cap.frame().unwrap_or_else(error_event)).await {
        return;
    }
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let event = match serde_json::from_str::<StreamRequest>(&text) {
            Ok(req) => handle(&state, &id, &mut cap, req).await.unwrap_or_else(error_event),
            Err(e) => error_event(ApiError::bad_request(format!("unreadable stream message: {e}"))),
        };
        if !send(&mut socket, &event).await {
            break;
        }
    }
}
