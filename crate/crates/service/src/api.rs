//! Request and response bodies. Every response carries `version`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use dfa_core::adapt::session::EvalSummary;
use dfa_core::adapt::{Phase, SessionStatus};
use dfa_core::concept::ConceptEdit;
use dfa_core::counterfactual::SearchStatus;
use dfa_core::env::{Action, Observation, Provenance, SceneDescriptor, Trajectory, WorldState};
use dfa_core::oracle::Relevance;

use crate::error::ApiError;

pub const API_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub domain: String,
    pub shift: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
}

/// One raster frame, PNG in base64, with the scene it shows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameView {
    pub t: usize,
    pub png: String,
    pub scene: SceneDescriptor,
}

impl FrameView {
    pub fn new(state: &WorldState, obs: &Observation) -> Result<Self, ApiError> {
        Ok(Self { t: state.t, png: STANDARD.encode(obs.to_png()?), scene: state.scene.clone() })
    }

    pub fn decode(&self) -> Result<Observation, ApiError> {
        let bytes = STANDARD.decode(&self.png).map_err(|e| ApiError::bad_request(format!("frame is not base64: {e}")))?;
        Ok(Observation::from_png(&bytes)?)
    }
}

/// A trajectory as frames: one per step, before that step's action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryView {
    pub provenance: Provenance,
    pub actions: Vec<Action>,
    pub frames: Vec<FrameView>,
    pub final_scene: SceneDescriptor,
}

impl TrajectoryView {
    pub fn new(traj: &Trajectory) -> Result<Self, ApiError> {
        Ok(Self {
            provenance: traj.provenance,
            actions: traj.actions(),
            frames: traj.steps.iter().map(|s| FrameView::new(&s.state, &s.observation)).collect::<Result<_, _>>()?,
            final_scene: traj.final_state.scene.clone(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub version: u32,
    pub id: String,
    pub task_id: String,
    pub domain: String,
    pub shift: String,
    pub seed: u64,
    pub phase: Phase,
    pub allowed: Vec<String>,
    pub status: SessionStatus,
    /// Index of the current round, from 1.
    pub round: usize,
    pub adaptation_rounds: usize,
    pub max_rounds: usize,
    /// What the intended task asks for.
    pub instruction: String,
    pub horizon: usize,
    pub pre_eval_mean: f64,
    pub created_at_ms: u64,
    /// Rollout of the current policy on the test scene.
    pub rollout: TrajectoryView,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseView {
    pub version: u32,
    pub phase: Phase,
    pub allowed: Vec<String>,
    pub status: SessionStatus,
}

/// A proposed counterfactual next to the demonstration and the failed rollout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterfactualView {
    pub version: u32,
    pub status: SearchStatus,
    pub edit: ConceptEdit,
    /// The edit in schema terms, e.g. "goal color changed yellow -> red".
    pub description: String,
    pub edit_count: usize,
    pub scene: SceneDescriptor,
    pub trajectory: TrajectoryView,
    pub demo: TrajectoryView,
    pub rollout: TrajectoryView,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DemoResponse {
    pub version: u32,
    pub phase: Phase,
    pub allowed: Vec<String>,
    pub search: SearchStatus,
    /// No-op actions appended to reach the horizon.
    pub padding: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<CounterfactualView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<JobView>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub valid: bool,
    pub relevance: Relevance,
}

/// A queued finetuning job: the set it trains on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub version: u32,
    pub round: usize,
    pub phase: Phase,
    pub demos: usize,
    pub augmented: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalView {
    pub version: u32,
    pub round: usize,
    pub pre_eval_mean: f64,
    pub eval: EvalSummary,
    pub rollout: TrajectoryView,
    /// Phase after this read: the next round's verdict, or closed.
    pub phase: Phase,
    pub allowed: Vec<String>,
    pub status: SessionStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub allowed: Vec<String>,
}

/// Messages a client sends on the demo-capture stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamRequest {
    Step { action: Action },
    /// Discard captured steps and start again from the test scene.
    Reset,
    /// Submit the captured actions as the demonstration.
    Commit {
        #[serde(default)]
        pad_to_horizon: bool,
        #[serde(default)]
        allow_failing: bool,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    /// The environment after `steps` captured actions.
    Frame { steps: usize, horizon: usize, frame: FrameView },
    Submitted { response: Box<DemoResponse> },
    Error { error: ErrorBody },
}
