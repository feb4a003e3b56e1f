//! Second-stage training: learner rollouts on fresh worlds, expert labels
//! for every visited state, append-only aggregation and LSTM-only updates
//! on top of a frozen feed-forward network.

use std::sync::Arc;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_mix, default_world_mix, draw_world, encode_state, expert_label, insert_lstm, loss_ratio, stack_samples,
    tbptt_epoch, Dataset, DatasetMeta, DatasetSource, DiscardCounts, Sample, TrainError, WorldMixEntry, WorldRecord,
};
use crate::geodesic::{compute_field_with, FieldOptions};
use crate::neural::{Adam, AdamConfig, FreezeMask, LearnedPlanner, Network};
use crate::rmp::{rollout, RolloutParams, Status};
use crate::rng;
use crate::worldgen::{gen_world, sample_start_goal, GenConfig, Point, SampleConfig};
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaggerConfig {
    pub iterations: usize,
    pub rollouts_per_iter: usize,
    /// Held-out rollouts collected alongside each iteration.
    pub val_rollouts_per_iter: usize,
    pub epochs: usize,
    /// Truncation length of back-propagation through time.
    pub tbptt: usize,
    pub seqs_per_batch: usize,
    pub adam: AdamConfig,
    pub world_mix: Vec<WorldMixEntry>,
    pub gen: GenConfig,
    pub field: FieldOptions,
    pub sample: SampleConfig,
    pub rollout: RolloutParams,
    /// Ray noise during learner rollouts; labels use noise-free rays.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            rollouts_per_iter: 50,
            val_rollouts_per_iter: 10,
            epochs: 5,
            tbptt: 64,
            seqs_per_batch: 8,
            adam: AdamConfig::default(),
            world_mix: default_world_mix(),
            gen: GenConfig::default(),
            field: FieldOptions::expert(),
            sample: SampleConfig::default(),
            rollout: RolloutParams::default(),
            sigma: 0.0,
            seed: 0,
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 || self.rollouts_per_iter == 0 || self.tbptt == 0 || self.seqs_per_batch == 0 {
            return Err(TrainError::Config("iteration, rollout, window and batch counts must be positive".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(TrainError::Config("sigma must be non-negative".into()));
        }
        self.rollout.validate()?;
        check_mix(&self.world_mix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaggerIteration {
    pub iteration: usize,
    pub rollouts: usize,
    pub successes: usize,
    pub new_samples: usize,
    pub aggregated: usize,
    pub val_samples: usize,
    pub dropped_steps: u64,
    pub train_loss: f64,
    /// Loss of the recurrent network over that of the frozen reference on
    /// the validation rollouts gathered so far.
    pub loss_ratio: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct DaggerOutcome<T> {
    pub network: Network<T>,
    pub train: Dataset,
    pub val: Dataset,
    pub history: Vec<DaggerIteration>,
}

struct Collected {
    worlds: Vec<WorldRecord>,
    samples: Vec<Sample>,
    successes: usize,
    discarded: DiscardCounts,
}

/// Rolls out `net` from random start/goal pairs on fresh worlds and labels
/// every visited state with the expert. Each rollout has its own stream.
fn collect<T: Real>(net: &Arc<Network<T>>, cfg: &DaggerConfig, purpose: &str, iteration: usize, count: usize) -> Collected {
    let set = cfg.rollout.directions();
    let runs: Vec<_> = (0..count)
        .into_par_iter()
        .map(|r| {
            let seed = rng::derive_seed(cfg.seed, &[rng::tag(purpose), iteration as u64, r as u64]);
            let mut rg = rng::stream(seed, &[rng::tag("layout")]);
            let (kind, n) = draw_world(&cfg.world_mix, &mut rg);
            let world = gen_world(kind, seed, n, &cfg.gen);
            let (start, goal) = sample_start_goal(&world, &mut rg, &cfg.sample).ok()?;
            let field = compute_field_with(&world, &goal, &cfg.field).ok()?;
            let mut planner = LearnedPlanner::new(Arc::clone(net));
            let out = rollout(&world, &mut planner, start, goal, &cfg.rollout, cfg.sigma, &mut rg).ok()?;
            let mut samples = Vec::with_capacity(out.records.len());
            let mut dropped = 0;
            for (step, rec) in out.records.iter().enumerate() {
                let x = Point::from(rec.x);
                let Some(label) = expert_label(&field, &x, &set) else {
                    dropped += 1;
                    continue;
                };
                let (rays, g) = encode_state(&world, &x, &goal, &set, cfg.rollout.max_range, cfg.rollout.robot_radius);
                samples.push(Sample {
                    rays,
                    goal: g,
                    label,
                    world: 0,
                    position: rec.x,
                    seq: Some((0, step as u32)),
                });
            }
            let record = WorldRecord {
                kind,
                seed,
                n_obstacles: n,
                goal: goal.to_array(),
                start: Some(start.to_array()),
            };
            Some((record, samples, out.status == Status::Success, dropped))
        })
        .collect();
    let mut c = Collected {
        worlds: Vec::new(),
        samples: Vec::new(),
        successes: 0,
        discarded: DiscardCounts::default(),
    };
    for run in runs {
        let Some((record, samples, ok, dropped)) = run else {
            c.discarded.skipped_rollouts += 1;
            continue;
        };
        c.discarded.unreachable += dropped;
        c.successes += ok as usize;
        if samples.is_empty() {
            continue;
        }
        let w = c.worlds.len() as u32;
        let q = w;
        c.worlds.push(record);
        c.samples.extend(samples.into_iter().map(|mut s| {
            s.world = w;
            s.seq = s.seq.map(|(_, t)| (q, t));
            s
        }));
    }
    c
}

fn rollout_meta(cfg: &DaggerConfig) -> DatasetMeta {
    let mut m = DatasetMeta::new(
        DatasetSource::Rollouts,
        cfg,
        cfg.rollout.n_rays,
        cfg.rollout.max_range,
        cfg.field,
        cfg.gen.clone(),
        cfg.world_mix.clone(),
    );
    m.robot_radius = cfg.rollout.robot_radius;
    m
}

/// Bottleneck latents of rows `from..` of `ds`.
fn latents_of<T: Real>(net: &Network<T>, ds: &Dataset, from: usize) -> Array2<T> {
    let idx: Vec<usize> = (from..ds.len()).collect();
    let parts: Vec<Array2<T>> = idx
        .chunks(512)
        .map(|c| {
            let (rays, goal, _) = stack_samples::<T>(ds, c);
            net.latents(rays.view(), goal.view())
        })
        .collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    if views.is_empty() {
        Array2::zeros((0, net.config.bottleneck_width))
    } else {
        concatenate(Axis(0), &views).expect("equal widths")
    }
}

/// Inserts an LSTM into the frozen feed-forward network and trains only
/// the LSTM on aggregated learner rollouts (pure learner rollouts, no
/// expert mixing). Everything but the LSTM stays bit-identical to `frozen`.
pub fn dagger_train<T: Real>(frozen: &Network<T>, cfg: &DaggerConfig) -> Result<DaggerOutcome<T>, TrainError> {
    cfg.validate()?;
    if frozen.config.n_rays != cfg.rollout.n_rays {
        return Err(TrainError::Config(format!(
            "network expects {} rays, rollouts cast {}",
            frozen.config.n_rays, cfg.rollout.n_rays
        )));
    }
    let mut net = insert_lstm(frozen, &mut rng::stream(cfg.seed, &[rng::tag("lstm_init")]))?;
    let mask = FreezeMask::all_but_lstm();
    let mut adam = Adam::new(cfg.adam, &net.params);
    let mut train = Dataset::empty(rollout_meta(cfg));
    let mut val = Dataset::empty(rollout_meta(cfg));
    // The trunk never changes, so latents are computed once per sample.
    let mut latents = Array2::<T>::zeros((0, net.config.bottleneck_width));
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let clock = Instant::now();
        let current = Arc::new(net.clone());
        let got = collect(&current, cfg, "dagger", it, cfg.rollouts_per_iter);
        let held = collect(&current, cfg, "dagger_val", it, cfg.val_rollouts_per_iter);
        let (new_samples, successes, dropped) = (got.samples.len(), got.successes, got.discarded.unreachable);
        let before = train.len();
        train.meta.discarded.add(&got.discarded);
        train.extend(got.worlds, got.samples);
        val.meta.discarded.add(&held.discarded);
        val.extend(held.worlds, held.samples);
        let fresh = latents_of(&net, &train, before);
        latents = concatenate(Axis(0), &[latents.view(), fresh.view()]).expect("equal widths");

        let labels: Vec<usize> = train.samples.iter().map(|s| s.label as usize).collect();
        let mut seqs = train.sequences();
        let mut train_loss = 0.0;
        for epoch in 0..cfg.epochs {
            seqs.shuffle(&mut rng::stream(cfg.seed, &[rng::tag("dagger_shuffle"), it as u64, epoch as u64]));
            train_loss = tbptt_epoch(&mut net, &mut adam, &latents, &labels, &seqs, cfg.seqs_per_batch, cfg.tbptt, &mask)
                .map_err(|e| match e {
                    TrainError::Diverged { batch, loss, .. } => TrainError::Diverged { epoch, batch, loss },
                    other => other,
                })?;
        }
        let ratio = if val.is_empty() { f64::NAN } else { loss_ratio(&net, frozen, &val)? };
        let stats = DaggerIteration {
            iteration: it,
            rollouts: cfg.rollouts_per_iter,
            successes,
            new_samples,
            aggregated: train.len(),
            val_samples: val.len(),
            dropped_steps: dropped,
            train_loss,
            loss_ratio: ratio,
            seconds: clock.elapsed().as_secs_f64(),
        };
        log::info!(
            "dagger iteration {it}: {successes}/{} successes, {} samples, loss {:.4}, ratio {:.4}, {:.1} s",
            cfg.rollouts_per_iter,
            stats.aggregated,
            train_loss,
            ratio,
            stats.seconds
        );
        history.push(stats);
    }
    Ok(DaggerOutcome {
        network: net,
        train,
        val,
        history,
    })
}
