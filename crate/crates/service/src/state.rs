use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use tokio::sync::{Mutex, OnceCell, OwnedMutexGuard, RwLock, Semaphore};
use tokio::task::JoinHandle;

use dfa_core::adapt::session::FinetuneOutcome;
use dfa_core::adapt::{DfaConfig, DfaSession, Phase};
use dfa_core::env::Domain;
use dfa_core::harness::{gen_shift_task, gen_train_task, train_base_policy, FinetuneSettings, ShiftKind, TrainSettings};
use dfa_core::policy::PolicyParams;
use dfa_core::DfaError;

use crate::error::ApiError;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub train: TrainSettings,
    pub finetune: FinetuneSettings,
    pub max_rounds: usize,
    /// Finetuning jobs allowed to run at once across all sessions.
    pub finetune_workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            train: TrainSettings::default(),
            finetune: FinetuneSettings::default(),
            max_rounds: DfaConfig::new(0).max_rounds,
            finetune_workers: 2,
        }
    }
}

impl ServiceConfig {
    /// Session settings for a task seed; the headless loop uses the same.
    pub fn dfa_config(&self, seed: u64, max_rounds: Option<usize>) -> DfaConfig {
        let mut cfg = DfaConfig::new(seed);
        cfg.max_rounds = max_rounds.unwrap_or(self.max_rounds);
        cfg.finetune_learning_rate = self.finetune.learning_rate;
        cfg.finetune_epochs = self.finetune.epochs;
        cfg
    }
}

type Job = JoinHandle<Result<FinetuneOutcome, DfaError>>;

pub struct Entry {
    pub id: String,
    pub session: DfaSession,
    pub shift: ShiftKind,
    pub created_at_ms: u64,
    job: Option<Job>,
}

pub type SharedEntry = Arc<Mutex<Entry>>;
type PolicyCache = HashMap<(Domain, u64), Arc<OnceCell<Arc<PolicyParams>>>>;

pub struct AppState {
    pub config: ServiceConfig,
    sessions: RwLock<HashMap<String, SharedEntry>>,
    policies: Mutex<PolicyCache>,
    workers: Arc<Semaphore>,
    next_id: AtomicU64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Run `f` on a locked session from a blocking thread and hand the lock back.
pub async fn locked<T, F>(mut guard: OwnedMutexGuard<Entry>, f: F) -> Result<(OwnedMutexGuard<Entry>, T), ApiError>
where
    F: FnOnce(&mut Entry) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    let (guard, out) = tokio::task::spawn_blocking(move || {
        let out = f(&mut guard);
        (guard, out)
    })
    .await
    .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?;
    Ok((guard, out?))
}

/// Run blocking work off the async runtime.
pub async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let workers = Arc::new(Semaphore::new(config.finetune_workers.max(1)));
        Arc::new(Self {
            config,
            sessions: RwLock::new(HashMap::new()),
            policies: Mutex::new(HashMap::new()),
            workers,
            next_id: AtomicU64::new(1),
        })
    }

    /// Base policy for a train task, trained once per (domain, seed).
    pub async fn base_policy(&self, domain: Domain, seed: u64) -> Result<Arc<PolicyParams>, ApiError> {
        let cell = self.policies.lock().await.entry((domain, seed)).or_default().clone();
        let train = self.config.train.clone();
        cell.get_or_try_init(|| async move {
            blocking(move || {
                let task = gen_train_task(domain, seed)?;
                Ok(Arc::new(train_base_policy(&task, &train)?))
            })
            .await
        })
        .await
        .cloned()
    }

    pub async fn create(&self, domain: Domain, shift: ShiftKind, seed: u64, max_rounds: Option<usize>) -> Result<SharedEntry, ApiError> {
        let policy = self.base_policy(domain, seed).await?;
        let cfg = self.config.dfa_config(seed, max_rounds);
        let session = blocking(move || {
            let task = gen_shift_task(&gen_train_task(domain, seed)?, shift, seed)?;
            Ok(DfaSession::new((*policy).clone(), task, cfg)?)
        })
        .await?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let entry = Arc::new(Mutex::new(Entry { id: id.clone(), session, shift, created_at_ms: now_ms(), job: None }));
        self.sessions.write().await.insert(id, entry.clone());
        Ok(entry)
    }

    pub async fn get(&self, id: &str) -> Result<SharedEntry, ApiError> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    /// Lock a session; requests on one session are serialized by the lock.
    pub async fn lock(&self, id: &str) -> Result<OwnedMutexGuard<Entry>, ApiError> {
        Ok(self.get(id).await?.lock_owned().await)
    }

    /// Start the queued finetuning job, if any, on the bounded worker pool.
    pub fn start_job(&self, entry: &mut Entry) -> Result<(), ApiError> {
        if entry.session.phase() != Phase::Finetuning || entry.job.is_some() {
            return Ok(());
        }
        let Some(job) = entry.session.take_job()? else {
            return Ok(());
        };
        let workers = self.workers.clone();
        entry.job = Some(tokio::spawn(async move {
            let _permit = workers.acquire_owned().await.map_err(|e| DfaError::InvalidConfig(e.to_string()))?;
            tokio::task::spawn_blocking(move || job.run())
                .await
                .map_err(|e| DfaError::InvalidConfig(format!("finetuning worker failed: {e}")))?
        }));
        Ok(())
    }

    /// Fold a finished job into the session. Returns false while it runs.
    pub async fn poll_job(&self, entry: &mut Entry) -> Result<bool, ApiError> {
        self.start_job(entry)?;
        match &entry.job {
            Some(handle) if handle.is_finished() => {
                let handle = entry.job.take().expect("checked above");
                let outcome = handle.await.map_err(|e| ApiError::internal(format!("finetuning worker failed: {e}")))??;
                entry.session.complete_job(outcome)?;
                Ok(true)
            }
            Some(_) => Ok(false),
            None => Ok(entry.session.phase() != Phase::Finetuning),
        }
    }
}
