use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use companion_cli::api::AppState;
use companion_cli::commands::{self, CollectArgs, RunArgs, TrainArgs};
use companion_cli::config::{read_json, BackendsConfig};
use companion_core::scripted::ScriptedMode;
use companion_core::{Condition, InterventionMode};

#[derive(Parser)]
#[command(
    name = "companion",
    version,
    about = "Monitor multi-step reasoning agents for degradation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionArg {
    Baseline,
    Llm,
    Probe,
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::Baseline => Condition::Baseline,
            ConditionArg::Llm => Condition::LlmCompanion,
            ConditionArg::Probe => Condition::ProbeCompanion,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Whisper,
    Surface,
    Autonomous,
}

impl From<ModeArg> for InterventionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Whisper => InterventionMode::Whisper,
            ModeArg::Surface => InterventionMode::Surface,
            ModeArg::Autonomous => InterventionMode::Autonomous,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScriptedArg {
    Loop,
    Progress,
    Drift,
    Stuck,
}

impl From<ScriptedArg> for ScriptedMode {
    fn from(m: ScriptedArg) -> Self {
        match m {
            ScriptedArg::Loop => ScriptedMode::Loop,
            ScriptedArg::Progress => ScriptedMode::Progress,
            ScriptedArg::Drift => ScriptedMode::Drift,
            ScriptedArg::Stuck => ScriptedMode::Stuck,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a single session and write its run record.
    Run {
        #[arg(long)]
        task_file: PathBuf,
        #[arg(long, value_enum, default_value = "baseline")]
        condition: ConditionArg,
        #[arg(long, default_value_t = 6)]
        steps: u32,
        #[arg(long, default_value_t = 2)]
        watch_every: u32,
        #[arg(long, value_enum, default_value = "whisper")]
        mode: ModeArg,
        #[arg(long)]
        backend_url: Option<String>,
        #[arg(long, default_value = "default")]
        model: String,
        /// Companion judge endpoint; defaults to the agent endpoint.
        #[arg(long)]
        judge_url: Option<String>,
        #[arg(long)]
        judge_model: Option<String>,
        #[arg(long)]
        probe_model: Option<PathBuf>,
        /// Use an offline scripted agent instead of a model server.
        #[arg(long, value_enum)]
        scripted: Option<ScriptedArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Run every task x condition x seed cell of a plan file.
    Experiment {
        #[arg(long)]
        plan_file: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Run tasks unassisted and record the LLM companion's verdict per step.
    CollectLabels {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, default_value_t = 8)]
        steps_per_task: u32,
        #[arg(long)]
        backend_url: Option<String>,
        #[arg(long, default_value = "default")]
        model: String,
        #[arg(long)]
        judge_url: Option<String>,
        #[arg(long, value_enum)]
        scripted: Option<ScriptedArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "labels.jsonl")]
        out: PathBuf,
    },
    /// Sweep layers on labelled traces, pick the best by CV AUROC and save the probe.
    TrainProbe {
        #[arg(long, num_args = 1.., required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "20,28,34,40")]
        layers: Vec<u32>,
        #[arg(long, default_value_t = 1.0)]
        l2: f64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "probe.json")]
        out: PathBuf,
    },
    /// Recompute the evaluation report from run records.
    Eval {
        #[arg(long)]
        runs_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the REST API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Backend configuration; scripted backends when omitted.
        #[arg(long)]
        backends: Option<PathBuf>,
        #[arg(long)]
        runs_dir: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            task_file,
            condition,
            steps,
            watch_every,
            mode,
            backend_url,
            model,
            judge_url,
            judge_model,
            probe_model,
            scripted,
            seed,
            out_dir,
        } => commands::run(RunArgs {
            task_file,
            condition: condition.into(),
            steps,
            watch_every,
            mode: mode.into(),
            backend_url,
            model,
            judge_url,
            judge_model,
            probe_model,
            scripted: scripted.map(Into::into),
            seed,
            out_dir,
        }),
        Command::Experiment { plan_file, out_dir } => commands::experiment(&plan_file, &out_dir),
        Command::CollectLabels {
            tasks,
            steps_per_task,
            backend_url,
            model,
            judge_url,
            scripted,
            seed,
            out,
        } => commands::collect_labels(CollectArgs {
            tasks,
            steps_per_task,
            backend_url,
            model,
            judge_url,
            scripted: scripted.map(Into::into),
            seed,
            out,
        }),
        Command::TrainProbe {
            traces,
            layers,
            l2,
            folds,
            out,
        } => commands::train_probe(TrainArgs {
            traces,
            layers,
            l2,
            folds,
            out,
        })
        .map(|_| ()),
        Command::Eval { runs_dir, out } => commands::eval(&runs_dir, out.as_deref()),
        Command::Serve {
            port,
            host,
            backends,
            runs_dir,
        } => {
            let config = match backends {
                Some(p) => read_json::<BackendsConfig>(&p)?,
                None => BackendsConfig::default(),
            };
            let state = AppState::new(config.build()?, runs_dir);
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            tokio::runtime::Runtime::new()?.block_on(companion_cli::serve(addr, state))
        }
    }
}
