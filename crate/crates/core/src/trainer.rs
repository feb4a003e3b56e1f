//! Dense dataset generation from geodesic labels, feed-forward training,
//! second-stage recurrent training on aggregated learner rollouts and the
//! loss-ratio metric.

pub mod dagger;
pub mod io;

use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodesic::{compute_field_with, FieldError, FieldOptions, GeodesicField};
use crate::math::Vec3;
use crate::neural::layers::bce_loss;
use crate::neural::{
    encode, label_one_hot, Adam, AdamConfig, FreezeMask, Network, NetworkConfig, NetworkParams, NeuralError,
    RecurrentState, SeqBatch, GOAL_FEATURES,
};
use crate::raycast::{cast_bundle, DirectionSet, DEFAULT_MAX_RANGE, DEFAULT_RAYS};
use crate::rmp::rollout::shared_directions;
use crate::rmp::RolloutError;
use crate::rng::{self, Rng};
use crate::worldgen::{gen_world, sample_free_point, GenConfig, Point, World, WorldError, WorldKind};
use crate::Real;

pub use dagger::{dagger_train, DaggerConfig, DaggerIteration, DaggerOutcome};
pub use io::{load_dataset, save_dataset, sidecar_path, DATASET_MAGIC, DATASET_VERSION};

/// Rows per forward pass when evaluating.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("sample {index} does not match its provenance: {what}")]
    Integrity { index: usize, what: String },
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("dataset version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One world class with an inclusive obstacle-count range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldMixEntry {
    pub kind: WorldKind,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
}

/// Sphere-box worlds with 0..=200 obstacles and plane worlds with 0..=100,
/// drawn with equal probability.
pub fn default_world_mix() -> Vec<WorldMixEntry> {
    vec![
        WorldMixEntry {
            kind: WorldKind::SphereBox,
            min_obstacles: 0,
            max_obstacles: WorldKind::SphereBox.soft_cap(),
        },
        WorldMixEntry {
            kind: WorldKind::Plane,
            min_obstacles: 0,
            max_obstacles: WorldKind::Plane.soft_cap(),
        },
    ]
}

fn check_mix(mix: &[WorldMixEntry]) -> Result<(), TrainError> {
    if mix.is_empty() {
        return Err(TrainError::Config("world mix is empty".into()));
    }
    for e in mix {
        if e.kind == WorldKind::Imported || e.min_obstacles > e.max_obstacles {
            return Err(TrainError::Config(format!("bad world mix entry {e:?}")));
        }
    }
    Ok(())
}

/// Class and obstacle count for one world.
pub fn draw_world(mix: &[WorldMixEntry], rng: &mut Rng) -> (WorldKind, usize) {
    let e = mix[rng.random_range(0..mix.len())];
    (e.kind, rng.random_range(e.min_obstacles..=e.max_obstacles))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseConfig {
    pub n_worlds: usize,
    pub samples_per_world: usize,
    pub world_mix: Vec<WorldMixEntry>,
    pub gen: GenConfig,
    pub field: FieldOptions,
    pub n_rays: usize,
    pub max_range: f64,
    /// Minimum obstacle clearance of sampled positions.
    pub position_clearance: f64,
    /// Positions closer than this to the goal are discarded.
    pub goal_exclusion: f64,
    pub goal_clearance: f64,
    /// Position draws allowed per requested sample.
    pub attempts_per_sample: usize,
    pub seed: u64,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self::desk(0)
    }
}

impl DenseConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            n_worlds: 200,
            samples_per_world: 256,
            world_mix: default_world_mix(),
            gen: GenConfig::default(),
            field: FieldOptions::expert(),
            n_rays: DEFAULT_RAYS,
            max_range: DEFAULT_MAX_RANGE,
            position_clearance: 0.1,
            goal_exclusion: 0.25,
            goal_clearance: 0.3,
            attempts_per_sample: 50,
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        Self {
            n_worlds: 6400,
            samples_per_world: 1024,
            ..Self::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_worlds == 0 || self.samples_per_world == 0 || self.n_rays == 0 || self.attempts_per_sample == 0 {
            return Err(TrainError::Config("counts must be at least 1".into()));
        }
        if !(self.max_range > 0.0 && self.field.cell_size > 0.0) {
            return Err(TrainError::Config("ray range and cell size must be positive".into()));
        }
        check_mix(&self.world_mix)
    }
}

/// Where the records of a world came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldRecord {
    pub kind: WorldKind,
    pub seed: u64,
    pub n_obstacles: usize,
    pub goal: [f64; 3],
    /// Rollout start, for rollout-collected data.
    pub start: Option<[f64; 3]>,
}

impl WorldRecord {
    pub fn world(&self, gen: &GenConfig) -> World {
        gen_world(self.kind, self.seed, self.n_obstacles, gen)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Ray distances over the ray range.
    pub rays: Vec<f32>,
    pub goal: [f32; GOAL_FEATURES],
    pub label: u32,
    /// Index into [`Dataset::worlds`].
    pub world: u32,
    pub position: [f64; 3],
    /// Sequence id and step for rollout data.
    pub seq: Option<(u32, u32)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscardCounts {
    /// Draws inside an obstacle or closer to one than the clearance.
    pub occupied: u64,
    pub near_goal: u64,
    /// Positions where the field has no descent direction.
    pub unreachable: u64,
    pub skipped_worlds: u64,
    pub skipped_rollouts: u64,
}

impl DiscardCounts {
    fn add(&mut self, o: &Self) {
        self.occupied += o.occupied;
        self.near_goal += o.near_goal;
        self.unreachable += o.unreachable;
        self.skipped_worlds += o.skipped_worlds;
        self.skipped_rollouts += o.skipped_rollouts;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Dense,
    Rollouts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub source: DatasetSource,
    pub n_rays: usize,
    pub max_range: f64,
    pub robot_radius: f64,
    pub field: FieldOptions,
    pub gen: GenConfig,
    pub world_mix: Vec<WorldMixEntry>,
    pub label_interpolation: String,
    /// The generating configuration and its FNV-1a hash.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub discarded: DiscardCounts,
}

impl DatasetMeta {
    pub fn new<C: Serialize>(
        source: DatasetSource,
        config: &C,
        n_rays: usize,
        max_range: f64,
        field: FieldOptions,
        gen: GenConfig,
        world_mix: Vec<WorldMixEntry>,
    ) -> Self {
        let config = serde_json::to_value(config).expect("configs serialize");
        Self {
            source,
            n_rays,
            max_range,
            robot_radius: 0.0,
            field,
            gen,
            world_mix,
            label_interpolation: "trilinear field, central differences over half a cell".into(),
            config_hash: config_hash(&config),
            config,
            discarded: DiscardCounts::default(),
        }
    }
}

/// FNV-1a over the compact JSON form, as 16 hex digits.
pub fn config_hash(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("values serialize");
    format!("{:016x}", rng::tag(&text))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub worlds: Vec<WorldRecord>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn empty(meta: DatasetMeta) -> Self {
        Self {
            meta,
            worlds: Vec::new(),
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn next_seq(&self) -> u32 {
        self.samples.iter().filter_map(|s| s.seq.map(|q| q.0 + 1)).max().unwrap_or(0)
    }

    /// Appends `worlds` and their samples, rebasing world indices and
    /// sequence ids past the existing ones. Existing records are untouched.
    pub fn extend(&mut self, worlds: Vec<WorldRecord>, samples: Vec<Sample>) {
        let w0 = self.worlds.len() as u32;
        let s0 = self.next_seq();
        self.worlds.extend(worlds);
        self.samples.extend(samples.into_iter().map(|mut s| {
            s.world += w0;
            s.seq = s.seq.map(|(q, t)| (q + s0, t));
            s
        }));
    }

    /// [`Dataset::extend`] with another dataset's records.
    pub fn append(&mut self, other: &Dataset) {
        self.extend(other.worlds.clone(), other.samples.clone());
    }

    /// Maximal runs of consecutive samples sharing a sequence id; samples
    /// without one form runs of length 1.
    pub fn sequences(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            let split = i == self.samples.len() || {
                let (a, b) = (self.samples[i - 1].seq, self.samples[i].seq);
                a.is_none() || b.is_none() || a.map(|q| q.0) != b.map(|q| q.0)
            };
            if split {
                if i > start {
                    out.push(start..i);
                }
                start = i;
            }
        }
        out
    }

    /// Sample indices split by world: about `fraction` of the worlds (at
    /// least one if there are two or more) go to the second set.
    pub fn split_by_world(&self, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let n = self.worlds.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[rng::tag("split")]));
        let n_val = if n >= 2 && fraction > 0.0 {
            ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        let mut is_val = vec![false; n];
        for &w in &order[..n_val] {
            is_val[w] = true;
        }
        (0..self.samples.len()).partition(|&i| !is_val[self.samples[i].world as usize])
    }
}

/// Ray and goal encoding of a state exactly as stored in a [`Sample`].
pub fn encode_state(
    world: &World,
    x: &Point,
    goal: &Point,
    set: &Arc<DirectionSet<f64>>,
    max_range: f64,
    robot_radius: f64,
) -> (Vec<f32>, [f32; GOAL_FEATURES]) {
    let mut bundle = cast_bundle(world, x, set, max_range);
    bundle.offset(robot_radius);
    let e = encode::<f32>(&bundle, x, goal);
    let g = e.goal_features();
    (e.rays_rel, g)
}

/// Label index of the expert direction at `x`, if the field has one.
pub fn expert_label(field: &GeodesicField, x: &Point, set: &DirectionSet<f64>) -> Option<u32> {
    let d = field.expert_direction(x).ok()?;
    if d == Vec3::zeros() {
        return None;
    }
    label_one_hot(&d, set).ok().map(|i| i as u32)
}

struct WorldBatch {
    record: Option<WorldRecord>,
    samples: Vec<Sample>,
    discarded: DiscardCounts,
}

fn dense_world(cfg: &DenseConfig, w: usize, set: &Arc<DirectionSet<f64>>) -> WorldBatch {
    let mut discarded = DiscardCounts::default();
    let wseed = rng::derive_seed(cfg.seed, &[rng::tag("dense"), w as u64]);
    let mut r = rng::stream(wseed, &[rng::tag("layout")]);
    let (kind, n) = draw_world(&cfg.world_mix, &mut r);
    let world = gen_world(kind, wseed, n, &cfg.gen);
    let skip = |mut d: DiscardCounts, why: String| {
        log::warn!("dense world {w} ({kind}, {n} obstacles) skipped: {why}");
        d.skipped_worlds += 1;
        WorldBatch {
            record: None,
            samples: Vec::new(),
            discarded: d,
        }
    };
    let Some(goal) = sample_free_point(&world, &mut r, cfg.goal_clearance, 20_000) else {
        return skip(discarded, "no free goal".into());
    };
    let field = match compute_field_with(&world, &goal, &cfg.field) {
        Ok(f) => f,
        Err(e) => return skip(discarded, e.to_string()),
    };
    let mut samples = Vec::with_capacity(cfg.samples_per_world);
    for _ in 0..cfg.samples_per_world * cfg.attempts_per_sample {
        if samples.len() == cfg.samples_per_world {
            break;
        }
        let Some(x) = sample_free_point(&world, &mut r, cfg.position_clearance, 1) else {
            discarded.occupied += 1;
            continue;
        };
        if x.distance(&goal) < cfg.goal_exclusion {
            discarded.near_goal += 1;
            continue;
        }
        let Some(label) = expert_label(&field, &x, set) else {
            discarded.unreachable += 1;
            continue;
        };
        let (rays, g) = encode_state(&world, &x, &goal, set, cfg.max_range, 0.0);
        samples.push(Sample {
            rays,
            goal: g,
            label,
            world: 0,
            position: x.to_array(),
            seq: None,
        });
    }
    if samples.is_empty() {
        return skip(discarded, "no reachable free positions".into());
    }
    WorldBatch {
        record: Some(WorldRecord {
            kind,
            seed: wseed,
            n_obstacles: n,
            goal: goal.to_array(),
            start: None,
        }),
        samples,
        discarded,
    }
}

/// Per world: a random goal, its expert field and up to
/// `samples_per_world` free, reachable positions labeled with the expert
/// direction. Worlds are processed in parallel on independent streams, so
/// the result depends only on the configuration.
pub fn generate_dense_dataset(cfg: &DenseConfig) -> Result<Dataset, TrainError> {
    cfg.validate()?;
    let set = shared_directions(cfg.n_rays);
    let clock = Instant::now();
    let batches: Vec<WorldBatch> = (0..cfg.n_worlds).into_par_iter().map(|w| dense_world(cfg, w, &set)).collect();
    let mut ds = Dataset::empty(DatasetMeta::new(
        DatasetSource::Dense,
        cfg,
        cfg.n_rays,
        cfg.max_range,
        cfg.field,
        cfg.gen.clone(),
        cfg.world_mix.clone(),
    ));
    for b in batches {
        ds.meta.discarded.add(&b.discarded);
        if let Some(rec) = b.record {
            ds.extend(vec![rec], b.samples);
        }
    }
    log::info!(
        "dense dataset: {} samples from {} worlds in {:.1} s",
        ds.len(),
        ds.worlds.len(),
        clock.elapsed().as_secs_f64()
    );
    Ok(ds)
}

/// Regenerates world, field, rays and label of the given samples from
/// their provenance and checks that they match bit for bit. Returns the
/// number of samples checked.
pub fn verify_samples(ds: &Dataset, indices: &[usize]) -> Result<usize, TrainError> {
    let hash = config_hash(&ds.meta.config);
    if hash != ds.meta.config_hash {
        return Err(TrainError::Corrupt(format!(
            "config hash {} does not match stored {}",
            hash, ds.meta.config_hash
        )));
    }
    let set = shared_directions(ds.meta.n_rays);
    let mut by_world: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in indices {
        let s = ds.samples.get(i).ok_or(TrainError::Integrity {
            index: i,
            what: "index out of range".into(),
        })?;
        let w = s.world as usize;
        match by_world.iter_mut().find(|(k, _)| *k == w) {
            Some((_, v)) => v.push(i),
            None => by_world.push((w, vec![i])),
        }
    }
    for (w, idx) in &by_world {
        let rec = ds.worlds.get(*w).ok_or(TrainError::Integrity {
            index: idx[0],
            what: format!("world {w} missing"),
        })?;
        let world = rec.world(&ds.meta.gen);
        let goal = Point::from(rec.goal);
        let field = compute_field_with(&world, &goal, &ds.meta.field)?;
        for &i in idx {
            let s = &ds.samples[i];
            let x = Point::from(s.position);
            let fail = |what: &str| TrainError::Integrity {
                index: i,
                what: what.into(),
            };
            let label = expert_label(&field, &x, &set).ok_or_else(|| fail("no expert direction"))?;
            if label != s.label {
                return Err(fail(&format!("label {} re-derived as {label}", s.label)));
            }
            let (rays, g) = encode_state(&world, &x, &goal, &set, ds.meta.max_range, ds.meta.robot_radius);
            if rays != s.rays || g != s.goal {
                return Err(fail("encoded input differs"));
            }
        }
    }
    Ok(indices.len())
}

/// Rows `idx` of the dataset as network inputs.
pub fn stack_samples<T: Real>(ds: &Dataset, idx: &[usize]) -> (Array2<T>, Array2<T>, Vec<usize>) {
    let n_rays = ds.meta.n_rays;
    let mut rays = Array2::zeros((idx.len(), n_rays));
    let mut goal = Array2::zeros((idx.len(), GOAL_FEATURES));
    let mut targets = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        let s = &ds.samples[i];
        rays.row_mut(r).iter_mut().zip(&s.rays).for_each(|(o, v)| *o = T::lit(*v as f64));
        goal.row_mut(r).iter_mut().zip(&s.goal).for_each(|(o, v)| *o = T::lit(*v as f64));
        targets.push(s.label as usize);
    }
    (rays, goal, targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Share of worlds held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            adam: AdamConfig::default(),
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub network: Network<T>,
    pub history: Vec<EpochStats>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Mini-batch Adam on the mean BCE over shuffled samples, with a per-world
/// validation split. Deterministic for a given seed.
pub fn train_ffn<T: Real>(ds: &Dataset, net_cfg: &NetworkConfig, cfg: &TrainConfig) -> Result<TrainOutcome<T>, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if net_cfg.use_lstm || net_cfg.n_rays != ds.meta.n_rays {
        return Err(TrainError::Config(format!(
            "feed-forward training needs use_lstm = false and n_rays = {}",
            ds.meta.n_rays
        )));
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let mut net = Network::<T>::init(net_cfg.clone(), &mut rng::stream(cfg.seed, &[rng::tag("init")]))?;
    let (mut train, val) = ds.split_by_world(cfg.val_fraction, cfg.seed);
    let mut adam = Adam::new(cfg.adam, &net.params);
    let mask = FreezeMask::none();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let clock = Instant::now();
        train.shuffle(&mut rng::stream(cfg.seed, &[rng::tag("shuffle"), epoch as u64]));
        let mut total = 0.0;
        for (b, idx) in train.chunks(cfg.batch_size).enumerate() {
            let (rays, goal, targets) = stack_samples::<T>(ds, idx);
            let (loss, grads) = net.loss_and_grad(&SeqBatch::flat(rays, goal, targets), &mask);
            let loss = loss.as_f64();
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b, loss });
            }
            adam.step(&mut net.params, &grads, &mask);
            total += loss * idx.len() as f64;
        }
        let val_loss = (!val.is_empty()).then(|| mean_loss_at(&net, ds, &val));
        let stats = EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            seconds: clock.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4}, val {}, {:.1} s",
            stats.train_loss,
            val_loss.map_or("-".to_string(), |v| format!("{v:.4}")),
            stats.seconds
        );
        history.push(stats);
    }
    Ok(TrainOutcome {
        network: net,
        history,
        train_indices: train,
        val_indices: val,
    })
}

/// Per-row BCE in `f64`.
fn row_losses<T: Real>(logits: &Array2<T>, targets: &[usize]) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(row, &t)| bce_loss(&row.to_vec(), t).0.as_f64())
        .collect()
}

/// Per-sample losses of a feed-forward evaluation of rows `idx`.
fn ffn_losses<T: Real>(net: &Network<T>, ds: &Dataset, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (rays, goal, targets) = stack_samples::<T>(ds, chunk);
        let (logits, _, _) = net.forward_batch(rays.view(), goal.view(), None).expect("shapes checked");
        out.extend(row_losses(&logits, &targets));
    }
    out
}

/// Mean loss of a feed-forward network over rows `idx`.
pub fn mean_loss_at<T: Real>(net: &Network<T>, ds: &Dataset, idx: &[usize]) -> f64 {
    let l = ffn_losses(net, ds, idx);
    l.iter().sum::<f64>() / l.len().max(1) as f64
}

/// Loss of every sample in dataset order. Recurrent networks consume each
/// sequence from a zero state; feed-forward networks see samples alone.
pub fn sample_losses<T: Real>(net: &Network<T>, ds: &Dataset) -> Vec<f64> {
    let Some(lstm) = &net.params.lstm else {
        let all: Vec<usize> = (0..ds.len()).collect();
        return ffn_losses(net, ds, &all);
    };
    let mut out = vec![0.0; ds.len()];
    let seqs = ds.sequences();
    for group in seqs.chunks(32) {
        let steps = group.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut state = RecurrentState::zeros(group.len(), lstm.hidden());
        for t in 0..steps {
            // Finished sequences repeat their last row; those outputs are ignored.
            let idx: Vec<usize> = group.iter().map(|r| (r.start + t).min(r.end - 1)).collect();
            let (rays, goal, targets) = stack_samples::<T>(ds, &idx);
            let (logits, _, _) = net
                .forward_batch(rays.view(), goal.view(), Some(&mut state))
                .expect("shapes checked");
            for ((r, l), &i) in group.iter().zip(row_losses(&logits, &targets)).zip(&idx) {
                if r.start + t < r.end {
                    out[i] = l;
                }
            }
        }
    }
    out
}

/// Mean per-sample loss, see [`sample_losses`].
pub fn mean_loss<T: Real>(net: &Network<T>, ds: &Dataset) -> Result<f64, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(sample_losses(net, ds).iter().sum::<f64>() / ds.len() as f64)
}

/// `L(model) / L(reference)` with both losses the mean BCE over `ds`.
pub fn loss_ratio<T: Real>(model: &Network<T>, reference: &Network<T>, ds: &Dataset) -> Result<f64, TrainError> {
    Ok(mean_loss(model, ds)? / mean_loss(reference, ds)?)
}

/// Copy of a feed-forward network with a fresh residual LSTM after the
/// bottleneck. A fresh LSTM leaves the latent unchanged, so the new network
/// starts out computing the same outputs.
pub fn insert_lstm<T: Real>(frozen: &Network<T>, rng: &mut Rng) -> Result<Network<T>, TrainError> {
    if frozen.config.use_lstm {
        return Err(TrainError::Config("network already has an LSTM".into()));
    }
    let mut cfg = frozen.config.clone().with_lstm(true);
    cfg.lstm_width = cfg.bottleneck_width;
    let fresh = NetworkParams::<T>::init(&cfg, rng)?;
    let mut params = frozen.params.clone();
    params.lstm = fresh.lstm;
    Ok(Network::new(cfg, params)?)
}

/// Time-major targets and weights for sequences `seqs` over steps
/// `t0..t1`; rows past a sequence's end get weight 0.
fn window_rows(seqs: &[Range<usize>], t0: usize, t1: usize) -> (Vec<Option<usize>>, usize) {
    let b = seqs.len();
    let mut rows = Vec::with_capacity((t1 - t0) * b);
    for t in t0..t1 {
        for r in seqs {
            rows.push((r.start + t < r.end).then_some(r.start + t));
        }
    }
    (rows, b)
}

/// One pass of truncated back-propagation through time over `seqs` in
/// groups of `group` sequences and windows of `window` steps, carrying the
/// recurrent state across windows. Only unfrozen groups move. Returns the
/// mean training loss.
pub(crate) fn tbptt_epoch<T: Real>(
    net: &mut Network<T>,
    adam: &mut Adam<T>,
    latents: &Array2<T>,
    labels: &[usize],
    seqs: &[Range<usize>],
    group: usize,
    window: usize,
    mask: &FreezeMask,
) -> Result<f64, TrainError> {
    let width = latents.ncols();
    let (mut total, mut count) = (0.0, 0usize);
    for (bi, chunk) in seqs.chunks(group.max(1)).enumerate() {
        let steps = chunk.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut state = None;
        let mut t0 = 0;
        while t0 < steps {
            let t1 = (t0 + window.max(1)).min(steps);
            let (rows, b) = window_rows(chunk, t0, t1);
            let mut lat = Array2::zeros((rows.len(), width));
            let mut weights = Array1::zeros(rows.len());
            let mut targets = vec![0; rows.len()];
            for (k, r) in rows.iter().enumerate() {
                if let Some(i) = *r {
                    lat.row_mut(k).assign(&latents.row(i));
                    weights[k] = T::one();
                    targets[k] = labels[i];
                }
            }
            let n = rows.iter().flatten().count();
            let batch = SeqBatch {
                // The latent path reads neither rays nor goal features.
                rays: Array2::zeros((0, 0)),
                goal: Array2::zeros((0, 0)),
                targets,
                weights,
                steps: t1 - t0,
                batch: b,
                init: state.take(),
            };
            let (loss, grads, last) = net.latent_window(&lat, &batch, mask);
            let loss = loss.as_f64();
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch: 0, batch: bi, loss });
            }
            adam.step(&mut net.params, &grads, mask);
            total += loss * n as f64;
            count += n;
            state = last;
            t0 = t1;
        }
    }
    Ok(if count > 0 { total / count as f64 } else { 0.0 })
}

#[cfg(test)]
mod tests;
