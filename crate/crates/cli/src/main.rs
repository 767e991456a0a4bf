use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use dfa_core::adapt::session::{evaluate, mean};
use dfa_core::adapt::run_dfa;
use dfa_core::env::{Domain, Trajectory};
use dfa_core::harness::experiment::output_dir;
use dfa_core::harness::{gen_shift_task, gen_train_task, run_experiment, train_base_policy, ExperimentConfig, ShiftKind, TrainSettings};
use dfa_core::oracle::{UserConfig, UserModel};
use dfa_core::policy::checkpoint;
use dfa_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "dfa", version, about = "Counterfactual diagnosis and concept-augmented finetuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Behaviour-clone a base policy on a train task and save a checkpoint.
    Train {
        #[arg(long)]
        domain: Domain,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the weights as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run a feedback-condition sweep; resumes from records already in the output directory.
    Experiment {
        /// JSON config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (DFA_OUTPUT_DIR takes precedence).
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Check a JSONL trajectory by replaying its actions, and summarize it.
    Replay {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// One full session with a simulated user; prints the session log.
    Session {
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        shift: ShiftKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability that feedback answers are correct.
        #[arg(long, default_value_t = 1.0)]
        accuracy: f64,
    },
    /// Serve sessions over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Concurrent finetuning jobs.
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Train { domain, seed, out, json } => {
            let task = gen_train_task(domain, seed)?;
            let policy = train_base_policy(&task, &TrainSettings::default())?;
            checkpoint::save(&policy, &out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_string(&checkpoint::to_json(&policy))?)?;
            }
            let scenes: Vec<_> = task.demos.iter().map(|d| d.initial.clone()).collect();
            let train_success = mean(&evaluate(&policy, &scenes, &task.reward)?);
            println!("{}", json!({"domain": domain, "seed": seed, "checkpoint": out, "train_success": train_success}));
        }
        Command::Experiment { config, out } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::from_file(&path).with_context(|| format!("reading {}", path.display()))?,
                None => ExperimentConfig::default(),
            };
            let out = output_dir(&out);
            let summary = run_experiment(&cfg, &out)?;
            print!("{}", summary.to_csv());
            eprintln!("{} records, {} failures, written to {}", summary.records, summary.failures, out.display());
        }
        Command::Replay { trajectory } => {
            let file = File::open(&trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
            let traj = Trajectory::read_jsonl(BufReader::new(file))?;
            println!(
                "{}",
                json!({
                    "provenance": traj.provenance,
                    "domain": traj.domain(),
                    "steps": traj.len(),
                    "actions": traj.actions(),
                    "final_scene": traj.final_state.scene,
                })
            );
        }
        Command::Session { domain, shift, seed, accuracy } => {
            let cfg = ServiceConfig::default();
            let train = gen_train_task(domain, seed)?;
            let policy = train_base_policy(&train, &cfg.train)?;
            let task = gen_shift_task(&train, shift, seed)?;
            let user_cfg = UserConfig { relevance_accuracy: accuracy, identification_accuracy: accuracy, seed };
            let mut user = UserModel::new(task.reward.clone(), task.shifted.clone(), user_cfg)?;
            let (_, log) = run_dfa(policy, &task, &mut user, &cfg.dfa_config(seed, None))?;
            println!("{}", log.to_json());
        }
        Command::Serve { port, host, workers } => {
            let config = ServiceConfig { finetune_workers: workers, ..ServiceConfig::default() };
            tokio::runtime::Runtime::new()?.block_on(dfa_service::serve(SocketAddr::new(host, port), config))?;
        }
    }
    Ok(())
}
