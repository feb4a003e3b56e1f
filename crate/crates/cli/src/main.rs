//! `rnav`: world generation, fields, rollouts, training and benchmarks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures end
//! with one JSON line on stderr: `{"error":{"kind":…,"message":…}}`.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "rnav", version, about = "Reactive 3-D navigation from ray distances")]
pub struct Cli {
    /// JSON file with `dense`, `network`, `train`, `dagger`, `bench` and
    /// `rollout` sections; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every stage derives a named sub-stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Directory for relative output paths.
    #[arg(long, global = true, env = "RNAV_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate procedural worlds as JSON files.
    GenWorlds(GenWorldsArgs),
    /// Compute the geodesic distance field of a world.
    Field(FieldArgs),
    /// Run one planner from start to goal and write per-step JSON lines.
    Rollout(RolloutArgs),
    /// Generate (or load) a dense dataset and train the feed-forward network.
    Train(TrainArgs),
    /// Insert an LSTM into a trained network and train it on learner rollouts.
    Dagger(DaggerArgs),
    /// Paired success/noise sweeps with CSV, JSON and gnuplot reports.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenWorldsArgs {
    #[arg(long)]
    pub kind: rnav::worldgen::WorldKind,
    /// Obstacles per world.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value = "worlds")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FieldArgs {
    #[arg(long)]
    pub world: PathBuf,
    /// Goal as `x,y,z`.
    #[arg(long, value_parser = parse_point)]
    pub goal: [f64; 3],
    #[arg(long)]
    pub cell: Option<f64>,
    /// Unit travel cost (no clearance weighting).
    #[arg(long)]
    pub plain: bool,
    #[arg(long, default_value = "field.rngf")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlannerKind {
    Baseline,
    Expert,
    Ffn,
    Rnn,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long, value_enum)]
    pub planner: PlannerKind,
    /// Network checkpoint for `ffn` and `rnn`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Start as `x,y,z` (sampled with the goal if omitted).
    #[arg(long, value_parser = parse_point)]
    pub start: Option<[f64; 3]>,
    #[arg(long, value_parser = parse_point)]
    pub goal: Option<[f64; 3]>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value = "rollout.jsonl")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value = "ffn.ckpt")]
    pub out: PathBuf,
    /// Load this dataset instead of generating one.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Also write the generated dataset here.
    #[arg(long)]
    pub save_dataset: Option<PathBuf>,
    #[arg(long)]
    pub n_worlds: Option<usize>,
    #[arg(long)]
    pub samples_per_world: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DaggerArgs {
    /// Trained feed-forward checkpoint; its weights stay frozen.
    #[arg(long)]
    pub frozen: PathBuf,
    #[arg(long, default_value = "rnn.ckpt")]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub val_rollouts: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Write the aggregated training rollouts as a dataset.
    #[arg(long)]
    pub save_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Comma-separated: `base`, `expert`, `ffn=PATH`, `rnn=PATH`.
    #[arg(long, value_delimiter = ',', default_value = "base,expert")]
    pub planners: Vec<rnav::bench::PlannerSpec>,
    /// World classes to sweep.
    #[arg(long, value_delimiter = ',')]
    pub worlds: Option<Vec<rnav::worldgen::WorldKind>>,
    /// Density grid for every class (default: six steps up to the cap).
    #[arg(long, value_delimiter = ',')]
    pub densities: Option<Vec<usize>>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Report path prefix; writes `.csv`, `.json` and `.dat`.
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok([x, y, z]),
        _ => Err(format!("expected three finite numbers `x,y,z`, got `{s}`")),
    }
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if e.use_stderr() {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or_default();
                error_line("usage", first.trim_start_matches("error: "));
                return ExitCode::from(2);
            }
            return ExitCode::from(code as u8);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match cmd::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(cmd::CliError::Usage(m)) => {
            error_line("usage", &m);
            ExitCode::from(2)
        }
        Err(cmd::CliError::Runtime(e)) => {
            error_line("runtime", &format!("{e:#}"));
            ExitCode::from(1)
        }
    }
}
