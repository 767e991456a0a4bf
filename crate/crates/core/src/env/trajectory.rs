use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{replay, Action, Domain, Observation, SceneDescriptor, WorldState};
use crate::error::{DfaError, Result};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Rollout,
    HumanDemo,
    Counterfactual,
    Augmented,
}

/// Initial scene and actions: enough to replay a trajectory exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub provenance: Provenance,
    pub initial: SceneDescriptor,
    pub actions: Vec<Action>,
}

impl ActionTrace {
    pub fn replay(&self) -> Result<Trajectory> {
        replay(&self.initial, &self.actions, self.provenance)
    }
}

/// Observation and action at time `state.t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: WorldState,
    pub observation: Observation,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub provenance: Provenance,
    pub initial: SceneDescriptor,
    pub steps: Vec<Step>,
    pub final_state: WorldState,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.initial.domain
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.steps.iter().map(|s| &s.observation)
    }

    /// Every visited state, including the one after the last action.
    pub fn states(&self) -> impl Iterator<Item = &WorldState> {
        self.steps.iter().map(|s| &s.state).chain(std::iter::once(&self.final_state))
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn trace(&self) -> ActionTrace {
        ActionTrace { provenance: self.provenance, initial: self.initial.clone(), actions: self.actions() }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W, encoding: FrameEncoding) -> Result<()> {
        let header = Header {
            version: TRAJECTORY_FORMAT_VERSION,
            provenance: self.provenance,
            domain: self.domain(),
            horizon: self.len(),
            initial: self.initial.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&Line::Header(header))?)?;
        for step in &self.steps {
            let line = Line::Step(StepLine {
                t: step.state.t,
                digest: step.state.digest(),
                action: step.action,
                observation: EncodedFrame::encode(&step.observation, encoding)?,
            });
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        let end = Line::Final { t: self.final_state.t, digest: self.final_state.digest() };
        writeln!(out, "{}", serde_json::to_string(&end)?)?;
        Ok(())
    }

    /// Parse a JSONL trajectory and rebuild it by replaying its actions. Every
    /// stored digest and frame must agree with the replay.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Trajectory> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut end = None;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line)? {
                Line::Header(h) if n == 0 => header = Some(h),
                Line::Step(s) if header.is_some() && end.is_none() => steps.push(s),
                Line::Final { t, digest } if header.is_some() && end.is_none() => end = Some((t, digest)),
                _ => return Err(DfaError::ReplayDiverged(format!("unexpected record on line {}", n + 1))),
            }
        }
        let header = header.ok_or_else(|| DfaError::ReplayDiverged("missing header".into()))?;
        if header.version != TRAJECTORY_FORMAT_VERSION {
            return Err(DfaError::ReplayDiverged(format!("unsupported format version {}", header.version)));
        }
        if header.initial.domain != header.domain {
            return Err(DfaError::DomainMismatch {
                expected: header.domain.to_string(),
                got: header.initial.domain.to_string(),
            });
        }
        let actions: Vec<Action> = steps.iter().map(|s| s.action).collect();
        let traj = replay(&header.initial, &actions, header.provenance)?;
        for (stored, ours) in steps.iter().zip(&traj.steps) {
            if stored.t != ours.state.t || stored.digest != ours.state.digest() {
                return Err(DfaError::ReplayDiverged(format!("state digest differs at t={}", stored.t)));
            }
            if stored.observation.decode()? != ours.observation {
                return Err(DfaError::ReplayDiverged(format!("frame differs at t={}", stored.t)));
            }
        }
        if let Some((t, digest)) = end {
            if t != traj.final_state.t || digest != traj.final_state.digest() {
                return Err(DfaError::ReplayDiverged("final state digest differs".into()));
            }
        }
        Ok(traj)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameEncoding {
    #[default]
    Png,
    Raw,
}

/// Base64 frame, either a PNG file or the raw 8-bit RGB buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedFrame {
    pub encoding: FrameEncoding,
    pub data: String,
}

impl EncodedFrame {
    pub fn encode(obs: &Observation, encoding: FrameEncoding) -> Result<Self> {
        let bytes = match encoding {
            FrameEncoding::Png => obs.to_png()?,
            FrameEncoding::Raw => obs.to_rgb8(),
        };
        Ok(Self { encoding, data: B64.encode(bytes) })
    }

    pub fn decode(&self) -> Result<Observation> {
        let bytes = B64.decode(&self.data).map_err(|e| DfaError::Image(e.to_string()))?;
        match self.encoding {
            FrameEncoding::Png => Observation::from_png(&bytes),
            FrameEncoding::Raw => Observation::from_rgb8(&bytes),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    provenance: Provenance,
    domain: Domain,
    horizon: usize,
    initial: SceneDescriptor,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepLine {
    t: usize,
    digest: String,
    action: Action,
    observation: EncodedFrame,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(Header),
    Step(StepLine),
    Final { t: usize, digest: String },
}
