use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use rnav::bench::{emit_report, load_planners, run_sweep, BenchError, BenchmarkSpec, ReportFormat, WorldSweep};
use rnav::geodesic::{compute_field_with, ExpertPlanner, FieldOptions};
use rnav::neural::{load_params, save_params, LearnedPlanner, Network, NetworkConfig, NeuralError};
use rnav::rmp::{rollout, BaselinePlanner, Planner, RolloutParams};
use rnav::rng;
use rnav::trainer::{
    dagger_train, generate_dense_dataset, load_dataset, save_dataset, train_ffn, DaggerConfig, DenseConfig,
    TrainConfig, TrainError,
};
use rnav::worldgen::{gen_world, import_world, sample_start_goal, Point, SampleConfig, WorldKind};

use crate::{BenchArgs, Cli, Command, DaggerArgs, FieldArgs, GenWorldsArgs, PlannerKind, Profile, RolloutArgs, TrainArgs};

pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage<T>(m: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(m.into()))
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Usage(m),
        other => CliError::Runtime(other.into()),
    }
}

fn bench_err(e: BenchError) -> CliError {
    match e {
        BenchError::Config(m) => CliError::Usage(m),
        other => CliError::Runtime(other.into()),
    }
}

/// Optional sections of a `--config` file. A present section replaces the
/// profile's defaults for that section; missing fields take their defaults.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    dense: Option<DenseConfig>,
    network: Option<NetworkConfig>,
    train: Option<TrainConfig>,
    dagger: Option<DaggerConfig>,
    bench: Option<BenchmarkSpec>,
    rollout: Option<RolloutParams>,
}

/// The effective configuration, echoed into every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub profile: Profile,
    pub dense: DenseConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub dagger: DaggerConfig,
    pub bench: BenchmarkSpec,
    pub rollout: RolloutParams,
}

impl RunConfig {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut c = match cli.profile {
            Profile::Desk => Self {
                tool: "rnav",
                version: env!("CARGO_PKG_VERSION"),
                seed: cli.seed,
                profile: cli.profile,
                dense: DenseConfig::desk(0),
                network: NetworkConfig::desk(rnav::raycast::DEFAULT_RAYS),
                train: TrainConfig::default(),
                dagger: DaggerConfig::default(),
                bench: BenchmarkSpec::default(),
                rollout: RolloutParams::default(),
            },
            Profile::Paper => Self {
                tool: "rnav",
                version: env!("CARGO_PKG_VERSION"),
                seed: cli.seed,
                profile: cli.profile,
                dense: DenseConfig::paper(0),
                network: NetworkConfig::paper(rnav::raycast::DEFAULT_RAYS),
                train: TrainConfig::default(),
                dagger: DaggerConfig::default(),
                bench: BenchmarkSpec::paper(),
                rollout: RolloutParams::default(),
            },
        };
        if let Some(path) = &cli.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let f: FileConfig = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            c.dense = f.dense.unwrap_or(c.dense);
            c.network = f.network.unwrap_or(c.network);
            c.train = f.train.unwrap_or(c.train);
            c.dagger = f.dagger.unwrap_or(c.dagger);
            c.bench = f.bench.unwrap_or(c.bench);
            c.rollout = f.rollout.unwrap_or(c.rollout);
        }
        let s = cli.seed;
        c.dense.seed = rng::derive_seed(s, &[rng::tag("dataset")]);
        c.train.seed = rng::derive_seed(s, &[rng::tag("train")]);
        c.dagger.seed = rng::derive_seed(s, &[rng::tag("dagger")]);
        c.bench.seed = rng::derive_seed(s, &[rng::tag("bench")]);
        Ok(c)
    }

    fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn out_path(cli: &Cli, p: &Path) -> Result<PathBuf, CliError> {
    let full = match &cli.out_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_path_buf(),
    };
    if let Some(parent) = full.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(full)
}

fn print_line(v: serde_json::Value) {
    println!("{v}");
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = RunConfig::new(cli)?;
    match &cli.command {
        Command::GenWorlds(a) => gen_worlds(cli, &cfg, a),
        Command::Field(a) => field(cli, &cfg, a),
        Command::Rollout(a) => rollout_cmd(cli, &cfg, a),
        Command::Train(a) => train(cli, cfg, a),
        Command::Dagger(a) => dagger(cli, cfg, a),
        Command::Bench(a) => bench(cli, cfg, a),
    }
}

fn gen_worlds(cli: &Cli, cfg: &RunConfig, a: &GenWorldsArgs) -> Result<(), CliError> {
    if a.kind == WorldKind::Imported {
        return usage("imported worlds cannot be generated");
    }
    let dir = out_path(cli, &a.out.join("manifest.json"))?;
    let dir = dir.parent().expect("joined path").to_path_buf();
    let mut files = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let seed = rng::derive_seed(cfg.seed, &[rng::tag("worldgen"), rng::tag(a.kind.as_str()), a.n as u64, i as u64]);
        let world = gen_world(a.kind, seed, a.n, &cfg.dense.gen);
        let name = format!("{}_{:03}_{:04}.json", a.kind, a.n, i);
        let path = dir.join(&name);
        std::fs::write(&path, world.to_json()?).with_context(|| format!("writing {}", path.display()))?;
        print_line(serde_json::json!({"file": path, "kind": a.kind, "seed": seed, "obstacles": a.n}));
        files.push(name);
    }
    let manifest = serde_json::json!({"config": cfg.json(), "kind": a.kind, "n": a.n, "files": files});
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn field(cli: &Cli, cfg: &RunConfig, a: &FieldArgs) -> Result<(), CliError> {
    let mut opts = if a.plain { FieldOptions::default() } else { FieldOptions::expert() };
    if let Some(c) = a.cell {
        if !(c > 0.0) {
            return usage("--cell must be positive");
        }
        opts.cell_size = c;
    }
    let world = import_world(&a.world).with_context(|| format!("loading {}", a.world.display()))?;
    let f = compute_field_with(&world, &Point::from(a.goal), &opts)?;
    let out = out_path(cli, &a.out)?;
    std::fs::write(&out, f.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
    let meta = serde_json::json!({
        "config": cfg.json(),
        "world": a.world,
        "goal": a.goal,
        "field": opts,
        "dims": f.dims,
        "reachable": f.reachable_count(),
    });
    let mut side = out.clone().into_os_string();
    side.push(".json");
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?)?;
    print_line(serde_json::json!({"file": out, "dims": f.dims, "reachable": f.reachable_count()}));
    Ok(())
}

fn load_network(path: &Path, recurrent: bool) -> Result<Arc<Network<f32>>, CliError> {
    let (net, _) = load_params(path).with_context(|| format!("loading {}", path.display()))?;
    if net.config.use_lstm != recurrent {
        return Err(CliError::Runtime(
            NeuralError::Config(format!(
                "{} holds a {} network",
                path.display(),
                if net.config.use_lstm { "recurrent" } else { "feed-forward" }
            ))
            .into(),
        ));
    }
    Ok(Arc::new(net.cast()))
}

fn rollout_cmd(cli: &Cli, cfg: &RunConfig, a: &RolloutArgs) -> Result<(), CliError> {
    if !(a.sigma >= 0.0) {
        return usage("--sigma must be non-negative");
    }
    let network = match (a.planner, &a.checkpoint) {
        (PlannerKind::Ffn | PlannerKind::Rnn, None) => return usage("learned planners need --checkpoint"),
        (PlannerKind::Ffn, Some(p)) => Some(load_network(p, false)?),
        (PlannerKind::Rnn, Some(p)) => Some(load_network(p, true)?),
        _ => None,
    };
    let mut params = cfg.rollout.clone();
    if let Some(m) = a.max_steps {
        params.max_steps = m;
    }
    if let Some(n) = &network {
        params.n_rays = n.config.n_rays;
    }
    let world = import_world(&a.world).with_context(|| format!("loading {}", a.world.display()))?;
    let (start, goal) = match (a.start, a.goal) {
        (Some(s), Some(g)) => (Point::from(s), Point::from(g)),
        (None, None) => {
            let sample = SampleConfig {
                require_no_los: !world.is_empty(),
                ..SampleConfig::default()
            };
            sample_start_goal(&world, &mut rng::stream(cfg.seed, &[rng::tag("rollout")]), &sample)?
        }
        _ => return usage("give both --start and --goal or neither"),
    };
    let mut planner: Box<dyn Planner> = match a.planner {
        PlannerKind::Baseline => Box::new(BaselinePlanner),
        PlannerKind::Expert => Box::new(ExpertPlanner::new(Arc::new(compute_field_with(
            &world,
            &goal,
            &cfg.bench.field,
        )?))),
        PlannerKind::Ffn | PlannerKind::Rnn => Box::new(LearnedPlanner::new(network.expect("loaded above"))),
    };
    let r = rollout(
        &world,
        planner.as_mut(),
        start,
        goal,
        &params,
        a.sigma,
        &mut rng::stream(cfg.seed, &[rng::tag("rollout_noise")]),
    )?;
    let header = serde_json::json!({
        "config": cfg.json(),
        "rollout": params,
        "world": a.world,
        "planner": planner.name(),
        "checkpoint": a.checkpoint,
        "sigma": a.sigma,
        "start": start.to_array(),
        "goal": goal.to_array(),
    });
    let out = out_path(cli, &a.out)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    r.write_jsonl(&mut w, &header)?;
    std::io::Write::flush(&mut w)?;
    print_line(serde_json::json!({
        "status": r.status,
        "steps": r.steps,
        "length": r.length,
        "sigma": a.sigma,
        "planner": planner.name(),
        "file": out,
    }));
    Ok(())
}

fn history_json(h: &[rnav::trainer::EpochStats]) -> serde_json::Value {
    h.iter()
        .map(|e| serde_json::json!({"epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss}))
        .collect()
}

fn train(cli: &Cli, mut cfg: RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    if let Some(n) = a.n_worlds {
        cfg.dense.n_worlds = n;
    }
    if let Some(n) = a.samples_per_world {
        cfg.dense.samples_per_world = n;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let ds = match &a.dataset {
        Some(p) => load_dataset(p).with_context(|| format!("loading {}", p.display()))?,
        None => generate_dense_dataset(&cfg.dense).map_err(train_err)?,
    };
    if let Some(p) = &a.save_dataset {
        save_dataset(&ds, out_path(cli, p)?)?;
    }
    cfg.network.n_rays = ds.meta.n_rays;
    cfg.network.k_top = cfg.network.k_top.min(ds.meta.n_rays);
    let out = train_ffn::<f32>(&ds, &cfg.network, &cfg.train).map_err(train_err)?;
    let meta = serde_json::json!({
        "config": cfg.json(),
        "dataset": {"samples": ds.len(), "worlds": ds.worlds.len(), "config_hash": ds.meta.config_hash, "path": a.dataset},
        "history": history_json(&out.history),
    });
    let path = out_path(cli, &a.out)?;
    save_params(&out.network, &meta, &path)?;
    let last = out.history.last();
    print_line(serde_json::json!({
        "checkpoint": path,
        "samples": ds.len(),
        "epochs": out.history.len(),
        "train_loss": last.map(|h| h.train_loss),
        "val_loss": last.and_then(|h| h.val_loss),
    }));
    Ok(())
}

fn dagger(cli: &Cli, mut cfg: RunConfig, a: &DaggerArgs) -> Result<(), CliError> {
    let frozen = load_network(&a.frozen, false)?;
    let d = &mut cfg.dagger;
    if let Some(v) = a.iterations {
        d.iterations = v;
    }
    if let Some(v) = a.rollouts {
        d.rollouts_per_iter = v;
    }
    if let Some(v) = a.val_rollouts {
        d.val_rollouts_per_iter = v;
    }
    if let Some(v) = a.epochs {
        d.epochs = v;
    }
    if let Some(v) = a.max_steps {
        d.rollout.max_steps = v;
    }
    d.rollout.n_rays = frozen.config.n_rays;
    let out = dagger_train(&frozen, &cfg.dagger).map_err(train_err)?;
    if let Some(p) = &a.save_data {
        save_dataset(&out.train, out_path(cli, p)?)?;
    }
    let meta = serde_json::json!({
        "config": cfg.json(),
        "frozen": a.frozen,
        "history": out.history.iter().map(|h| serde_json::json!({
            "iteration": h.iteration,
            "successes": h.successes,
            "aggregated": h.aggregated,
            "val_samples": h.val_samples,
            "train_loss": h.train_loss,
            "loss_ratio": h.loss_ratio,
        })).collect::<Vec<_>>(),
    });
    let path = out_path(cli, &a.out)?;
    save_params(&out.network, &meta, &path)?;
    print_line(serde_json::json!({
        "checkpoint": path,
        "samples": out.train.len(),
        "val_samples": out.val.len(),
        "loss_ratio": out.history.last().map(|h| h.loss_ratio),
    }));
    Ok(())
}

fn bench(cli: &Cli, mut cfg: RunConfig, a: &BenchArgs) -> Result<(), CliError> {
    let spec = &mut cfg.bench;
    spec.planners = a.planners.clone();
    if let Some(kinds) = &a.worlds {
        spec.worlds = kinds.iter().map(|k| WorldSweep::desk(*k)).collect();
    }
    if let Some(d) = &a.densities {
        spec.worlds.iter_mut().for_each(|w| w.densities = d.clone());
    }
    if let Some(r) = a.runs {
        spec.runs = r;
    }
    if let Some(s) = &a.sigmas {
        spec.sigmas = s.clone();
    }
    if let Some(m) = a.max_steps {
        spec.rollout.max_steps = m;
    }
    spec.validate().map_err(bench_err)?;
    let planners = load_planners(spec).map_err(bench_err)?;
    let report = run_sweep(spec, &planners).map_err(bench_err)?;
    let prefix = out_path(cli, &a.out)?;
    let with_ext = |ext: &str| {
        let mut p = prefix.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    emit_report(&report, with_ext(".csv"), ReportFormat::Csv).map_err(bench_err)?;
    emit_report(&report, with_ext(".json"), ReportFormat::Json).map_err(bench_err)?;
    emit_report(&report, with_ext(".dat"), ReportFormat::Gnuplot).map_err(bench_err)?;
    let config = serde_json::json!({"config": cfg.json()});
    std::fs::write(with_ext(".config.json"), serde_json::to_string_pretty(&config)?)?;
    print_line(serde_json::json!({
        "csv": with_ext(".csv"),
        "json": with_ext(".json"),
        "cells": report.cells.len(),
        "runs": report.records.len(),
        "skipped_runs": report.skipped_runs,
    }));
    Ok(())
}
