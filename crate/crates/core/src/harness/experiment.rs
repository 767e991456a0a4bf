//! Cartesian sweeps over domains, shifts, conditions and seeds.
//!
//! Records are appended to `records.jsonl` as each cell finishes, so an
//! interrupted sweep resumes where it stopped. Failed cells go to
//! `failures.jsonl` and are retried on the next run.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gen_shift_task, gen_train_task, run_condition, train_base_policy, ConditionKind, FinetuneSettings, ResultRecord, ShiftKind, TrainSettings};
use crate::env::Domain;
use crate::error::{DfaError, Result};

/// Overrides the output directory of `run_experiment`.
pub const OUTPUT_DIR_ENV: &str = "DFA_OUTPUT_DIR";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub domains: Vec<Domain>,
    pub shifts: Vec<ShiftKind>,
    pub conditions: Vec<ConditionKind>,
    pub seeds: u64,
    pub first_seed: u64,
    pub train: TrainSettings,
    pub finetune: FinetuneSettings,
    /// Concurrent (domain, seed) jobs; 0 uses every core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domains: Domain::ALL.to_vec(),
            shifts: vec![ShiftKind::ConceptTi, ShiftKind::DistractorTi],
            conditions: ConditionKind::defaults().to_vec(),
            seeds: 20,
            first_seed: 0,
            train: TrainSettings::default(),
            finetune: FinetuneSettings::default(),
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.conditions {
            c.validate()?;
        }
        if let Some(s) = self.shifts.iter().find(|s| !s.is_ti()) {
            return Err(DfaError::InvalidConfig(format!("sweeps cover task-irrelevant shifts only, got {s}")));
        }
        let labels: HashSet<String> = self.conditions.iter().map(|c| c.label()).collect();
        if labels.len() != self.conditions.len() {
            return Err(DfaError::InvalidConfig("duplicate conditions".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.domains.len() * self.shifts.len() * self.conditions.len() * self.seeds as usize
    }
}

/// Output directory: the environment override if set, else `requested`.
pub fn output_dir(requested: &Path) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| requested.to_path_buf())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub domain: Domain,
    pub seed: u64,
    pub shift: Option<ShiftKind>,
    pub condition: Option<String>,
    pub error: String,
}

/// Aggregate over one group of records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub domain: Domain,
    /// `None` pools every shift of the domain.
    pub shift: Option<ShiftKind>,
    pub condition: String,
    pub n: usize,
    pub pre_mean: f64,
    pub post_mean: f64,
    pub post_stderr: f64,
    pub true_concept_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub records: usize,
    pub failures: usize,
    pub cells: Vec<CellSummary>,
}

impl ExperimentSummary {
    pub fn cell(&self, domain: Domain, shift: Option<ShiftKind>, condition: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.domain == domain && c.shift == shift && c.condition == condition)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,shift,condition,n,pre_mean,post_mean,post_stderr,true_concept_rate\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
                c.domain,
                c.shift.map_or("all", |s| s.name()),
                c.condition,
                c.n,
                c.pre_mean,
                c.post_mean,
                c.post_stderr,
                c.true_concept_rate
            ));
        }
        out
    }
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Means and standard errors per (domain, shift, condition) and per
/// (domain, condition), in sorted order.
pub fn summarize(records: &[ResultRecord], failures: usize) -> ExperimentSummary {
    let mut groups: BTreeMap<(Domain, Option<ShiftKind>, String), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        let label = r.condition.label();
        groups.entry((r.domain, Some(r.shift), label.clone())).or_default().push(r);
        groups.entry((r.domain, None, label)).or_default().push(r);
    }
    let cells = groups
        .into_iter()
        .map(|((domain, shift, condition), rs)| {
            let post: Vec<f64> = rs.iter().map(|r| r.post_success).collect();
            let (post_mean, post_stderr) = mean_stderr(&post);
            let n = rs.len();
            CellSummary {
                domain,
                shift,
                condition,
                n,
                pre_mean: rs.iter().map(|r| r.pre_success).sum::<f64>() / n as f64,
                post_mean,
                post_stderr,
                true_concept_rate: rs.iter().filter(|r| r.chose_true_concept).count() as f64 / n as f64,
            }
        })
        .collect();
    ExperimentSummary { records: records.len(), failures, cells }
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn final line from an interrupted run is dropped and redone.
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) => tracing::warn!(%e, "skipping unreadable record"),
        }
    }
    Ok(out)
}

struct Sink {
    records: File,
    failures: File,
    new_records: Vec<ResultRecord>,
    new_failures: usize,
}

impl Sink {
    fn record(&mut self, r: ResultRecord) -> Result<()> {
        writeln!(self.records, "{}", serde_json::to_string(&r)?)?;
        self.records.flush()?;
        self.new_records.push(r);
        Ok(())
    }

    fn fail(&mut self, f: FailedCell) -> Result<()> {
        tracing::warn!(domain = %f.domain, seed = f.seed, error = %f.error, "sweep cell failed");
        writeln!(self.failures, "{}", serde_json::to_string(&f)?)?;
        self.failures.flush()?;
        self.new_failures += 1;
        Ok(())
    }
}

fn append(path: &Path) -> Result<File> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

/// All cells of one (domain, seed): one base policy shared by every shift and condition.
fn run_job(cfg: &ExperimentConfig, domain: Domain, seed: u64, done: &HashSet<String>, sink: &Mutex<Sink>) -> Result<()> {
    let fail = |shift: Option<ShiftKind>, condition: Option<String>, e: DfaError| {
        sink.lock().expect("sink lock").fail(FailedCell { domain, seed, shift, condition, error: e.to_string() })
    };
    let train = match gen_train_task(domain, seed) {
        Ok(t) => t,
        Err(e) => return fail(None, None, e),
    };
    let mut base = None;
    for &shift in &cfg.shifts {
        let task = match gen_shift_task(&train, shift, seed) {
            Ok(t) => t,
            Err(e) => {
                fail(Some(shift), None, e)?;
                continue;
            }
        };
        for condition in &cfg.conditions {
            let key = format!("{}|{}|{}", task.id, condition.label(), seed);
            if done.contains(&key) {
                continue;
            }
            if base.is_none() {
                match train_base_policy(&train, &cfg.train) {
                    Ok(p) => base = Some(p),
                    Err(e) => return fail(None, None, e),
                }
            }
            let policy = base.as_ref().expect("trained above");
            match run_condition(policy, &task, *condition, &cfg.finetune, seed) {
                Ok(r) => sink.lock().expect("sink lock").record(r)?,
                Err(e) => fail(Some(shift), Some(condition.label()), e)?,
            }
        }
    }
    Ok(())
}

/// Run (or resume) a sweep, writing records and summaries into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let records_path = out.join(RECORDS_FILE);
    let existing = read_records(&records_path)?;
    let done: HashSet<String> = existing.iter().map(ResultRecord::key).collect();
    let _ = fs::remove_file(out.join(FAILURES_FILE));
    let sink = Mutex::new(Sink {
        records: append(&records_path)?,
        failures: append(&out.join(FAILURES_FILE))?,
        new_records: Vec::new(),
        new_failures: 0,
    });
    let jobs: Vec<(Domain, u64)> = cfg
        .domains
        .iter()
        .flat_map(|&d| (cfg.first_seed..cfg.first_seed + cfg.seeds).map(move |s| (d, s)))
        .collect();
    let run = || jobs.par_iter().try_for_each(|&(d, s)| run_job(cfg, d, s, &done, &sink));
    if cfg.workers == 0 {
        run()?;
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| DfaError::InvalidConfig(e.to_string()))?
            .install(run)?;
    }
    let sink = sink.into_inner().expect("sink lock");

    // Keep only cells of this configuration, in case the directory is shared.
    let wanted: HashSet<String> = cfg.conditions.iter().map(|c| c.label()).collect();
    let mut records: Vec<ResultRecord> = existing
        .into_iter()
        .chain(sink.new_records)
        .filter(|r| {
            cfg.domains.contains(&r.domain)
                && cfg.shifts.contains(&r.shift)
                && wanted.contains(&r.condition.label())
                && (cfg.first_seed..cfg.first_seed + cfg.seeds).contains(&r.seed)
        })
        .collect();
    records.sort_by_key(|a| a.key());
    records.dedup_by(|a, b| a.key() == b.key());
    let summary = summarize(&records, sink.new_failures);
    fs::write(out.join(SUMMARY_JSON), serde_json::to_string_pretty(&summary)?)?;
    fs::write(out.join(SUMMARY_CSV), summary.to_csv())?;
    Ok(summary)
}
