use thiserror::Error;

/// Errors surfaced by the adaptation pipeline.
#[derive(Debug, Error)]
pub enum DfaError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("illegal edit: {0}")]
    IllegalEdit(String),

    #[error("placement of {object} at {position} collides with an existing footprint")]
    PlacementCollision { object: String, position: String },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("malformed action: {0}")]
    MalformedAction(String),

    #[error("observation shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("sequence length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("domain mismatch: expected {expected}, got {got}")]
    DomainMismatch { expected: String, got: String },

    #[error("non-finite loss at epoch {epoch} (last finite epoch loss {last_loss:?})")]
    NonFiniteLoss { epoch: usize, last_loss: Option<f64> },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no goal satisfies the reward in this scene")]
    NoSatisfyingGoal,

    #[error("expert could not find a plan: {0}")]
    NoPlan(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("replay diverged: {0}")]
    ReplayDiverged(String),

    #[error("condition does not apply to task: {0}")]
    ConditionMismatch(String),

    #[error("request not allowed in phase {phase}; allowed: {allowed:?}")]
    PhaseViolation { phase: String, allowed: Vec<String> },

    #[error("demonstration does not accomplish the task: {0}")]
    DemoFailsTask(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image encoding: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DfaError> = std::result::Result<T, E>;
