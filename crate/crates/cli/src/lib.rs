//! Command-line front end: `lsr <command>` plus one `lsr-<command>` binary per
//! pipeline stage.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lsr_core::mapping::EncoderMode;
use lsr_core::roadmap::Clustering;
use lsr_core::task::TaskKind;
use lsr_core::MetricKind;

pub use config::{Paths, RunFile};

#[derive(Debug, Parser)]
#[command(name = "lsr", version, about = "Latent space roadmaps for visual action planning")]
pub struct Cli {
    /// TOML run file; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a training dataset of observation pairs.
    Gen(GenArgs),
    /// Train the mapping module and encode its dataset.
    Train(TrainArgs),
    /// Build a roadmap from an encoded dataset.
    Build(BuildArgs),
    /// Plan between two task states.
    Plan(PlanArgs),
    /// Train an action proposal network or annotate roadmap edges.
    #[command(subcommand)]
    Apm(ApmCommand),
    /// Score a roadmap, or run the full pipeline from a run file.
    Score(ScoreArgs),
    /// Sweep one setting over every seed of a run file.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Share of action pairs; the task default when omitted.
    #[arg(long = "action-frac")]
    pub action_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub ld: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub mode: Option<EncoderMode>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Shorthand for `--gamma 0`.
    #[arg(long, conflicts_with = "gamma")]
    pub baseline: bool,
    /// Static minimum action distance instead of the dynamic schedule.
    #[arg(long = "static-dm")]
    pub static_dm: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Encoded dataset; defaults to `<out>.latent`.
    #[arg(long = "latent-out")]
    pub latent_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub latent: Option<PathBuf>,
    #[arg(long)]
    pub metric: Option<MetricKind>,
    #[arg(long)]
    pub cmax: Option<usize>,
    #[arg(long = "tau-min")]
    pub tau_min: Option<f64>,
    #[arg(long = "tau-max")]
    pub tau_max: Option<f64>,
    /// Use this threshold as is instead of optimizing it.
    #[arg(long, conflicts_with_all = ["tau_min", "tau_max", "grid"])]
    pub tau: Option<f64>,
    /// Dense grid search with this many steps instead of Brent's method.
    #[arg(long)]
    pub grid: Option<usize>,
    /// avg, single, complete or epsilon:<radius>.
    #[arg(long)]
    pub clustering: Option<Clustering>,
    /// Embed majority-vote action annotations for every edge.
    #[arg(long)]
    pub annotate: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub roadmap: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "start-state")]
    pub start_state: usize,
    #[arg(long = "goal-state")]
    pub goal_state: usize,
    /// Seeds the start and goal renders.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Propose actions with this network instead of the roadmap annotations.
    #[arg(long)]
    pub apn: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ApmCommand {
    /// Train an action proposal network.
    Train(ApmTrainArgs),
    /// Attach a majority-vote action to every roadmap edge.
    Annotate(ApmAnnotateArgs),
}

#[derive(Debug, Args)]
pub struct ApmTrainArgs {
    /// Encoded dataset (latent input).
    #[arg(long, conflicts_with = "decoded")]
    pub latent: Option<PathBuf>,
    /// Train on decoded observations of `--dataset` through `--model`.
    #[arg(long, requires_all = ["dataset", "model"])]
    pub decoded: bool,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Needed when the encoded dataset does not record its task.
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApmAnnotateArgs {
    #[arg(long)]
    pub roadmap: Option<PathBuf>,
    /// Defaults to rewriting the input roadmap.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Score this roadmap; without it the whole pipeline runs per seed.
    #[arg(long)]
    pub roadmap: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Metrics CSV for a single roadmap, output directory otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// cmax=1,5,20 | dm=dynamic,100 | clustering=avg,single | ld=4,8 |
    /// pairs=500,2500 | mode=vae:100,ae:0
    #[arg(long)]
    pub spec: String,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Raised for problems with the invocation rather than the run.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli, argv) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

/// Entry point for `lsr` (`None`) and the per-stage `lsr-<sub>` binaries.
pub fn main_for(sub: Option<&str>) -> ExitCode {
    let mut args = std::env::args_os();
    let _ = args.next();
    let mut argv: Vec<OsString> = vec!["lsr".into()];
    argv.extend(sub.map(OsString::from));
    argv.extend(args);
    ExitCode::from(run(argv))
}
