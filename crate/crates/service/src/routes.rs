use std::str::FromStr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};

use dfa_core::adapt::session::DemoSubmission;
use dfa_core::adapt::{Phase, SessionLog};
use dfa_core::concept::abstract_scene;
use dfa_core::counterfactual::SearchStatus;
use dfa_core::env::Domain;
use dfa_core::harness::ShiftKind;
use dfa_core::DfaError;

use crate::api::*;
use crate::error::ApiError;
use crate::state::{locked, AppState, Entry};
use crate::stream;

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/verdict", post(verdict))
        .route("/sessions/{id}/demo", post(demo))
        .route("/sessions/{id}/counterfactual", get(counterfactual))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/eval", get(eval))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/stream", get(stream::upgrade))
        .with_state(state)
}

fn parse<T: FromStr>(value: &str, what: &str, allowed: Vec<&'static str>) -> Result<T, ApiError> {
    value
        .parse()
        .map_err(|_| ApiError::bad_request(format!("unknown {what} {value:?}")).with_allowed(allowed))
}

fn allowed(phase: Phase) -> Vec<String> {
    phase.allowed().iter().map(|s| s.to_string()).collect()
}

fn phase_violation(phase: Phase) -> ApiError {
    DfaError::PhaseViolation { phase: phase.name().into(), allowed: allowed(phase) }.into()
}

fn phase_view(entry: &Entry) -> PhaseView {
    let phase = entry.session.phase();
    PhaseView { version: API_VERSION, phase, allowed: allowed(phase), status: entry.session.log().status }
}

pub fn session_view(entry: &Entry) -> Result<SessionView, ApiError> {
    let s = &entry.session;
    let task = s.task();
    let log = s.log();
    Ok(SessionView {
        version: API_VERSION,
        id: entry.id.clone(),
        task_id: task.id.clone(),
        domain: task.domain.to_string(),
        shift: entry.shift.to_string(),
        seed: task.seed,
        phase: s.phase(),
        allowed: allowed(s.phase()),
        status: log.status,
        round: log.rounds.len(),
        adaptation_rounds: log.adaptation_rounds(),
        max_rounds: log.max_rounds,
        instruction: task.reward.describe(),
        horizon: task.domain.horizon(),
        pre_eval_mean: log.pre_eval_mean,
        created_at_ms: entry.created_at_ms,
        rollout: TrajectoryView::new(s.rollout())?,
    })
}

fn counterfactual_view(entry: &Entry) -> Result<CounterfactualView, ApiError> {
    let s = &entry.session;
    let (Some(cf), Some(demo)) = (s.counterfactual(), s.demo()) else {
        return Err(phase_violation(s.phase()));
    };
    let (Some(edit), Some(scene), Some(traj)) = (cf.edit.clone(), cf.scene.clone(), cf.replay()?) else {
        return Err(phase_violation(s.phase()));
    };
    let schema = s.task().domain.schema();
    let before = abstract_scene(&s.task().test_scene, &schema)?;
    Ok(CounterfactualView {
        version: API_VERSION,
        status: cf.status,
        description: edit.describe(&before, &schema),
        edit_count: cf.edit_count,
        edit,
        scene,
        trajectory: TrajectoryView::new(&traj)?,
        demo: TrajectoryView::new(demo)?,
        rollout: TrajectoryView::new(s.rollout())?,
    })
}

fn job_view(entry: &Entry) -> Option<JobView> {
    let set = entry.session.pending_set()?;
    Some(JobView {
        version: API_VERSION,
        round: entry.session.log().rounds.len(),
        phase: entry.session.phase(),
        demos: set.len(),
        augmented: set.augmented_count(),
    })
}

async fn create(State(state): State<Shared>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let domain: Domain = parse(&req.domain, "domain", Domain::ALL.iter().map(|d| d.name()).collect())?;
    let shift: ShiftKind = parse(&req.shift, "shift", ShiftKind::allowed())?;
    if req.max_rounds == Some(0) {
        return Err(ApiError::bad_request("max_rounds must be at least 1"));
    }
    let entry = state.create(domain, shift, req.seed, req.max_rounds).await?;
    let view = session_view(&*entry.lock().await)?;
    tracing::info!(id = %view.id, task = %view.task_id, "session created");
    Ok((StatusCode::CREATED, Json(view)))
}

async fn show(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let guard = state.lock(&id).await?;
    let (_, view) = locked(guard, |e| session_view(e)).await?;
    Ok(Json(view))
}

async fn log(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionLog>, ApiError> {
    Ok(Json(state.lock(&id).await?.session.log().clone()))
}

async fn verdict(State(state): State<Shared>, Path(id): Path<String>, Json(req): Json<VerdictRequest>) -> Result<Json<PhaseView>, ApiError> {
    let mut guard = state.lock(&id).await?;
    guard.session.submit_verdict(req.success)?;
    Ok(Json(phase_view(&guard)))
}

/// Submit a demonstration and start finetuning when no counterfactual exists.
pub async fn submit_demo(state: &AppState, id: &str, submission: DemoSubmission) -> Result<DemoResponse, ApiError> {
    let guard = state.lock(id).await?;
    if guard.session.phase() != Phase::AwaitingDemo {
        return Err(phase_violation(guard.session.phase()));
    }
    let (mut guard, _) = locked(guard, move |e| Ok(e.session.submit_demo(submission)?)).await?;
    state.start_job(&mut guard)?;
    let (_, response) = locked(guard, |e| {
        let phase = e.session.phase();
        let found = e.session.counterfactual().is_some_and(|c| c.is_found());
        Ok(DemoResponse {
            version: API_VERSION,
            phase,
            allowed: allowed(phase),
            search: if found { SearchStatus::Found } else { SearchStatus::None },
            padding: e.session.log().rounds.last().map_or(0, |r| r.demo_padding),
            counterfactual: if found { Some(counterfactual_view(e)?) } else { None },
            job: job_view(e),
        })
    })
    .await?;
    Ok(response)
}

async fn demo(State(state): State<Shared>, Path(id): Path<String>, Json(req): Json<DemoSubmission>) -> Result<Json<DemoResponse>, ApiError> {
    Ok(Json(submit_demo(&state, &id, req).await?))
}

async fn counterfactual(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<CounterfactualView>, ApiError> {
    let guard = state.lock(&id).await?;
    if guard.session.phase() != Phase::AwaitingFeedback {
        return Err(phase_violation(guard.session.phase()));
    }
    let (_, view) = locked(guard, |e| counterfactual_view(e)).await?;
    Ok(Json(view))
}

async fn feedback(State(state): State<Shared>, Path(id): Path<String>, Json(req): Json<FeedbackRequest>) -> Result<Json<JobView>, ApiError> {
    let guard = state.lock(&id).await?;
    if guard.session.phase() != Phase::AwaitingFeedback {
        return Err(phase_violation(guard.session.phase()));
    }
    let (mut guard, _) = locked(guard, move |e| Ok(e.session.submit_feedback(req.valid, req.relevance)?)).await?;
    let view = job_view(&guard).ok_or_else(|| ApiError::internal("no finetuning job queued"))?;
    state.start_job(&mut guard)?;
    Ok(Json(view))
}

/// Pending while finetuning runs; once done, returns the evaluation and
/// moves the session on to its next round (or closes it).
async fn eval(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<EvalView>, ApiError> {
    let mut guard = state.lock(&id).await?;
    match guard.session.phase() {
        Phase::Finetuning => {
            if !state.poll_job(&mut guard).await? {
                return Err(ApiError::job_pending());
            }
        }
        Phase::Evaluated => {}
        other => return Err(phase_violation(other)),
    }
    let (_, view) = locked(guard, |e| {
        let round = e.session.log().rounds.len();
        let eval = e.session.last_eval().cloned().ok_or_else(|| ApiError::internal("evaluation missing"))?;
        let rollout = TrajectoryView::new(e.session.rollout())?;
        let phase = e.session.advance()?;
        Ok(EvalView {
            version: API_VERSION,
            round,
            pre_eval_mean: e.session.log().pre_eval_mean,
            eval,
            rollout,
            phase,
            allowed: allowed(phase),
            status: e.session.log().status,
        })
    })
    .await?;
    Ok(Json(view))
}
