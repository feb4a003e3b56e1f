//! Paired benchmark sweeps over planners, world classes, densities and ray
//! noise, with common-success statistics and CSV/JSON/gnuplot reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodesic::{compute_field_with, ExpertPlanner, FieldOptions};
use crate::neural::{load_params, LearnedPlanner, Network, NeuralError};
use crate::rmp::{rollout, BaselinePlanner, Planner, RolloutParams, Status};
use crate::rng;
use crate::worldgen::{gen_world, sample_start_goal, GenConfig, SampleConfig, WorldKind};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark: {0}")]
    Config(String),
    #[error("planner {planner}")]
    Planner { planner: String, source: NeuralError },
    #[error("report: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A planner to benchmark. Learned planners name their checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerSpec {
    Baseline,
    Expert,
    Ffn { checkpoint: PathBuf },
    Rnn { checkpoint: PathBuf },
}

impl PlannerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PlannerSpec::Baseline => "baseline",
            PlannerSpec::Expert => "expert",
            PlannerSpec::Ffn { .. } => "ffn",
            PlannerSpec::Rnn { .. } => "rnn",
        }
    }
}

impl std::str::FromStr for PlannerSpec {
    type Err = String;
    /// `baseline` (or `base`), `expert`, `ffn=PATH`, `rnn=PATH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, path) = match s.split_once('=') {
            Some((h, p)) => (h, Some(PathBuf::from(p))),
            None => (s, None),
        };
        match (head, path) {
            ("baseline" | "base", None) => Ok(PlannerSpec::Baseline),
            ("expert", None) => Ok(PlannerSpec::Expert),
            ("ffn", Some(checkpoint)) => Ok(PlannerSpec::Ffn { checkpoint }),
            ("rnn", Some(checkpoint)) => Ok(PlannerSpec::Rnn { checkpoint }),
            ("ffn" | "rnn", None) => Err(format!("planner `{head}` needs a checkpoint: `{head}=PATH`")),
            _ => Err(format!("unknown planner `{s}`")),
        }
    }
}

/// One world class and its density grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSweep {
    pub kind: WorldKind,
    pub densities: Vec<usize>,
}

impl WorldSweep {
    /// Six evenly spaced densities from empty up to the generator cap.
    pub fn desk(kind: WorldKind) -> Self {
        let cap = kind.soft_cap();
        Self {
            kind,
            densities: (0..=5).map(|i| i * cap / 5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub planners: Vec<PlannerSpec>,
    pub worlds: Vec<WorldSweep>,
    pub runs: usize,
    pub sigmas: Vec<f64>,
    pub rollout: RolloutParams,
    pub sample: SampleConfig,
    pub gen: GenConfig,
    /// Field used by the expert planner.
    pub field: FieldOptions,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            planners: vec![PlannerSpec::Baseline, PlannerSpec::Expert],
            worlds: vec![WorldSweep::desk(WorldKind::SphereBox), WorldSweep::desk(WorldKind::Plane)],
            runs: 30,
            sigmas: vec![0.0],
            rollout: RolloutParams::default(),
            sample: SampleConfig::default(),
            gen: GenConfig::default(),
            field: FieldOptions::expert(),
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn paper() -> Self {
        Self {
            runs: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.planners.is_empty() || self.worlds.is_empty() || self.sigmas.is_empty() {
            return bad("planners, worlds and sigmas must be non-empty".into());
        }
        let dup = |i: usize| self.planners[..i].contains(&self.planners[i]);
        if let Some(i) = (0..self.planners.len()).find(|&i| dup(i)) {
            return bad(format!("planner {} appears more than once", self.planners[i].name()));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return bad(format!("noise level {s} is invalid"));
        }
        for w in &self.worlds {
            if w.kind == WorldKind::Imported {
                return bad("imported worlds cannot be swept".into());
            }
            if let Some(d) = w.densities.iter().find(|d| **d > w.kind.soft_cap()) {
                return bad(format!("{} density {d} exceeds the cap {}", w.kind, w.kind.soft_cap()));
            }
        }
        self.rollout
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))
    }
}

/// A ready-to-run planner.
#[derive(Clone, Debug)]
pub enum PlannerHandle {
    Baseline,
    Expert,
    Learned { name: String, network: Arc<Network<f32>> },
}

impl PlannerHandle {
    pub fn name(&self) -> &str {
        match self {
            PlannerHandle::Baseline => "baseline",
            PlannerHandle::Expert => "expert",
            PlannerHandle::Learned { name, .. } => name,
        }
    }
}

/// Loads every checkpoint up front so a bad one fails before any rollout.
pub fn load_planners(spec: &BenchmarkSpec) -> Result<Vec<PlannerHandle>, BenchError> {
    spec.planners
        .iter()
        .map(|p| {
            let learned = |path: &Path, recurrent: bool| {
                let shared = spec.planners.iter().filter(|q| q.name() == p.name()).count() > 1;
                let name = match path.file_stem() {
                    Some(stem) if shared => format!("{}:{}", p.name(), stem.to_string_lossy()),
                    _ => p.name().to_string(),
                };
                let fail = |source| BenchError::Planner {
                    planner: name.clone(),
                    source,
                };
                let (net, _) = load_params(path).map_err(fail)?;
                if net.config.use_lstm != recurrent || net.config.n_rays != spec.rollout.n_rays {
                    return Err(fail(NeuralError::Config(format!(
                        "checkpoint has use_lstm = {} and {} rays, expected use_lstm = {recurrent} and {} rays",
                        net.config.use_lstm, net.config.n_rays, spec.rollout.n_rays
                    ))));
                }
                Ok(PlannerHandle::Learned {
                    name: name.clone(),
                    network: Arc::new(net.cast()),
                })
            };
            match p {
                PlannerSpec::Baseline => Ok(PlannerHandle::Baseline),
                PlannerSpec::Expert => Ok(PlannerHandle::Expert),
                PlannerSpec::Ffn { checkpoint } => learned(checkpoint, false),
                PlannerSpec::Rnn { checkpoint } => learned(checkpoint, true),
            }
        })
        .collect()
}

/// Outcome of one planner on one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub planner: String,
    pub world: WorldKind,
    pub density: usize,
    pub sigma_n: f64,
    pub run: usize,
    pub world_seed: u64,
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub status: Status,
    pub length_m: f64,
    pub steps: usize,
    /// Whole-rollout wall time.
    pub tta_ms: f64,
    /// Mean time of one policy evaluation.
    pub qt_ms: f64,
    pub min_clearance: f64,
}

impl RunRecord {
    pub fn success(&self) -> bool {
        self.status == Status::Success
    }
}

/// Aggregates for one (planner, world, density, σ) cell. Length and timing
/// means cover the runs where every planner of the cell group succeeded;
/// `None` marks an empty common subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub planner: String,
    pub world: WorldKind,
    pub density: usize,
    pub sigma_n: f64,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub len_m: Option<f64>,
    pub tta_ms: Option<f64>,
    pub qt_ms: Option<f64>,
    pub n_common: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub version: String,
    pub spec: BenchmarkSpec,
    /// Planner order as run.
    pub planners: Vec<String>,
    /// Run indices dropped because no start/goal pair could be drawn.
    pub skipped_runs: usize,
    pub cells: Vec<CellSummary>,
    pub records: Vec<RunRecord>,
}

fn sigma_tag(s: f64) -> u64 {
    s.to_bits()
}

/// The world seed for one run index of a cell.
pub fn run_world_seed(seed: u64, kind: WorldKind, density: usize, run: usize) -> u64 {
    rng::derive_seed(seed, &[rng::tag("world"), rng::tag(kind.as_str()), density as u64, run as u64])
}

/// Runs every planner on the same worlds and start/goal pairs. The expert
/// field is computed once per run and shared across noise levels.
pub fn run_sweep(spec: &BenchmarkSpec, planners: &[PlannerHandle]) -> Result<BenchmarkReport, BenchError> {
    spec.validate()?;
    if planners.is_empty() {
        return Err(BenchError::Config("no planners".into()));
    }
    for (i, p) in planners.iter().enumerate() {
        if planners[..i].iter().any(|q| q.name() == p.name()) {
            return Err(BenchError::Config(format!("planner name `{}` is used twice", p.name())));
        }
    }
    let jobs: Vec<(WorldKind, usize, usize)> = spec
        .worlds
        .iter()
        .flat_map(|w| w.densities.iter().flat_map(move |&d| (0..spec.runs).map(move |r| (w.kind, d, r))))
        .collect();
    let results: Vec<Option<Vec<RunRecord>>> = jobs
        .par_iter()
        .map(|&(kind, density, run)| run_one(spec, planners, kind, density, run))
        .collect::<Result<_, _>>()?;
    let skipped_runs = results.iter().filter(|r| r.is_none()).count();
    let records: Vec<RunRecord> = results.into_iter().flatten().flatten().collect();
    let names: Vec<String> = planners.iter().map(|p| p.name().to_string()).collect();
    let cells = common_success_stats(&records, &names);
    Ok(BenchmarkReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        planners: names,
        skipped_runs,
        cells,
        records,
    })
}

fn run_one(
    spec: &BenchmarkSpec,
    planners: &[PlannerHandle],
    kind: WorldKind,
    density: usize,
    run: usize,
) -> Result<Option<Vec<RunRecord>>, BenchError> {
    let world_seed = run_world_seed(spec.seed, kind, density, run);
    let world = gen_world(kind, world_seed, density, &spec.gen);
    let mut rg = rng::stream(
        spec.seed,
        &[rng::tag("start_goal"), rng::tag(kind.as_str()), density as u64, run as u64],
    );
    // Without obstacles every pair has line of sight.
    let sample = SampleConfig {
        require_no_los: spec.sample.require_no_los && !world.is_empty(),
        ..spec.sample.clone()
    };
    let Ok((start, goal)) = sample_start_goal(&world, &mut rg, &sample) else {
        log::warn!("{kind} density {density} run {run}: no start/goal pair, run skipped");
        return Ok(None);
    };
    let field = if planners.iter().any(|p| matches!(p, PlannerHandle::Expert)) {
        match compute_field_with(&world, &goal, &spec.field) {
            Ok(f) => Some(Arc::new(f)),
            Err(e) => return Err(BenchError::Config(format!("{kind} density {density} run {run}: {e}"))),
        }
    } else {
        None
    };
    let mut out = Vec::with_capacity(planners.len() * spec.sigmas.len());
    for &sigma in &spec.sigmas {
        for p in planners {
            let mut planner: Box<dyn Planner> = match p {
                PlannerHandle::Baseline => Box::new(BaselinePlanner),
                PlannerHandle::Expert => Box::new(ExpertPlanner::new(Arc::clone(field.as_ref().expect("computed above")))),
                PlannerHandle::Learned { name, network } => {
                    Box::new(LearnedPlanner::new(Arc::clone(network)).with_name(name.clone()))
                }
            };
            let mut noise = rng::stream(
                spec.seed,
                &[rng::tag("noise"), rng::tag(kind.as_str()), density as u64, run as u64, sigma_tag(sigma)],
            );
            let r = rollout(&world, planner.as_mut(), start, goal, &spec.rollout, sigma, &mut noise)
                .map_err(|e| BenchError::Config(format!("{} on {kind} density {density} run {run}: {e}", p.name())))?;
            out.push(RunRecord {
                planner: p.name().to_string(),
                world: kind,
                density,
                sigma_n: sigma,
                run,
                world_seed,
                start: start.to_array(),
                goal: goal.to_array(),
                status: r.status,
                length_m: r.length,
                steps: r.steps,
                tta_ms: r.wall_time_s * 1e3,
                qt_ms: r.query_time_s * 1e3,
                min_clearance: r.min_clearance,
            });
        }
    }
    Ok(Some(out))
}

/// Per-cell success rates and common-success means, in planner order
/// within each (world, density, σ) group, groups in order of appearance.
pub fn common_success_stats(records: &[RunRecord], planners: &[String]) -> Vec<CellSummary> {
    type Key = (WorldKind, usize, u64);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<(u8, usize, u64), Vec<&RunRecord>> = BTreeMap::new();
    let kind_id = |k: WorldKind| k as u8;
    for r in records {
        let key = (r.world, r.density, r.sigma_n.to_bits());
        let entry = groups.entry((kind_id(key.0), key.1, key.2)).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r);
    }
    let mut out = Vec::new();
    for (world, density, sbits) in order {
        let rs = &groups[&(kind_id(world), density, sbits)];
        let mut by_run: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
        for r in rs {
            by_run.entry(r.run).or_default().push(r);
        }
        let common: Vec<usize> = by_run
            .iter()
            .filter(|(_, v)| planners.iter().all(|p| v.iter().any(|r| &r.planner == p && r.success())))
            .map(|(k, _)| *k)
            .collect();
        for p in planners {
            let mine: Vec<&&RunRecord> = rs.iter().filter(|r| &r.planner == p).collect();
            let n = mine.len();
            let successes = mine.iter().filter(|r| r.success()).count();
            let sub: Vec<&&RunRecord> = mine.iter().copied().filter(|r| common.binary_search(&r.run).is_ok()).collect();
            let mean = |f: fn(&RunRecord) -> f64| {
                (!sub.is_empty()).then(|| sub.iter().map(|r| f(r)).sum::<f64>() / sub.len() as f64)
            };
            out.push(CellSummary {
                planner: p.clone(),
                world,
                density,
                sigma_n: f64::from_bits(sbits),
                n,
                successes,
                success_rate: if n > 0 { successes as f64 / n as f64 } else { 0.0 },
                len_m: mean(|r| r.length_m),
                tta_ms: mean(|r| r.tta_ms),
                qt_ms: mean(|r| r.qt_ms),
                n_common: sub.len(),
            });
        }
    }
    out
}

impl BenchmarkReport {
    /// The cell summary for one planner, if present.
    pub fn cell(&self, planner: &str, world: WorldKind, density: usize, sigma_n: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.planner == planner && c.world == world && c.density == density && c.sigma_n == sigma_n)
    }

    /// True if the stored cells equal a recomputation from the records.
    pub fn is_consistent(&self) -> bool {
        common_success_stats(&self.records, &self.planners) == self.cells
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        serde_json::to_string_pretty(self).map_err(|e| BenchError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Format(e.to_string()))
    }

    /// One row per cell; unavailable means are written as `NA`.
    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "planner",
            "world",
            "density",
            "sigma_n",
            "success_rate",
            "len_m",
            "tta_ms",
            "qt_ms",
            "n",
            "n_common",
        ])?;
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        for c in &self.cells {
            w.write_record([
                c.planner.clone(),
                c.world.to_string(),
                c.density.to_string(),
                c.sigma_n.to_string(),
                format!("{:.6}", c.success_rate),
                opt(c.len_m),
                opt(c.tta_ms),
                opt(c.qt_ms),
                c.n.to_string(),
                c.n_common.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| BenchError::Format(e.to_string()))
    }

    /// Whitespace-separated blocks per (planner, world, σ), separated by two
    /// blank lines so gnuplot can address them with `index`.
    pub fn to_gnuplot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# rnav {} benchmark, seed {}", self.version, self.spec.seed);
        let mut blocks: Vec<(String, WorldKind, u64)> = Vec::new();
        for c in &self.cells {
            let k = (c.planner.clone(), c.world, c.sigma_n.to_bits());
            if !blocks.contains(&k) {
                blocks.push(k);
            }
        }
        for (i, (p, world, sbits)) in blocks.iter().enumerate() {
            if i > 0 {
                s.push_str("\n\n");
            }
            let _ = writeln!(s, "# planner={p} world={world} sigma_n={}", f64::from_bits(*sbits));
            let _ = writeln!(s, "# density success_rate len_m tta_ms qt_ms n n_common");
            let na = |v: Option<f64>| v.map_or("NaN".to_string(), |x| format!("{x:.6}"));
            for c in self
                .cells
                .iter()
                .filter(|c| &c.planner == p && c.world == *world && c.sigma_n.to_bits() == *sbits)
            {
                let _ = writeln!(
                    s,
                    "{} {:.6} {} {} {} {} {}",
                    c.density,
                    c.success_rate,
                    na(c.len_m),
                    na(c.tta_ms),
                    na(c.qt_ms),
                    c.n,
                    c.n_common
                );
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Gnuplot,
}

pub fn emit_report(report: &BenchmarkReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<(), BenchError> {
    let text = match format {
        ReportFormat::Csv => report.to_csv()?,
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Gnuplot => report.to_gnuplot(),
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<BenchmarkReport, BenchError> {
    BenchmarkReport::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests;
