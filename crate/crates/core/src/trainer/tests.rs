use super::*;
use crate::neural::layers::bce_loss;
use crate::raycast::halton_directions;
use crate::rmp::RolloutParams;

fn small_dense(n_worlds: usize, per_world: usize, seed: u64) -> DenseConfig {
    DenseConfig {
        n_worlds,
        samples_per_world: per_world,
        field: FieldOptions {
            cell_size: 0.2,
            ..FieldOptions::expert()
        },
        n_rays: 64,
        seed,
        ..DenseConfig::desk(seed)
    }
}

fn small_train(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        val_fraction: 0.25,
        seed,
    }
}

#[test]
fn single_world_single_sample() {
    let ds = generate_dense_dataset(&small_dense(1, 1, 3)).unwrap();
    assert!(ds.len() <= 1);
    let Some(s) = ds.samples.first() else { return };
    let rec = &ds.worlds[0];
    let world = rec.world(&ds.meta.gen);
    let field = compute_field_with(&world, &Point::from(rec.goal), &ds.meta.field).unwrap();
    let e = field.expert_direction(&Point::from(s.position)).unwrap();
    let set = halton_directions::<f64>(64);
    let best = set
        .directions
        .iter()
        .map(|d| d.dot(&e))
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(set.directions[s.label as usize].dot(&e), best);
    assert!((e.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn dense_generation_is_deterministic_and_rederivable() {
    let cfg = small_dense(4, 12, 7);
    let a = generate_dense_dataset(&cfg).unwrap();
    let b = generate_dense_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.meta.config_hash, config_hash(&serde_json::to_value(&cfg).unwrap()));
    let all: Vec<usize> = (0..a.len()).collect();
    assert_eq!(verify_samples(&a, &all).unwrap(), a.len());
    for s in &a.samples {
        let rec = &a.worlds[s.world as usize];
        let x = Point::from(s.position);
        let world = rec.world(&a.meta.gen);
        assert!(!world.occupancy(&x));
        assert!(world.clearance(&x) >= cfg.position_clearance);
        assert!(x.distance(&Point::from(rec.goal)) >= cfg.goal_exclusion);
        assert!((s.label as usize) < 64 && s.seq.is_none());
    }
}

#[test]
fn tampered_sample_fails_verification() {
    let mut ds = generate_dense_dataset(&small_dense(1, 4, 11)).unwrap();
    ds.samples[0].label = (ds.samples[0].label + 1) % 64;
    assert!(matches!(verify_samples(&ds, &[0]), Err(TrainError::Integrity { index: 0, .. })));
    let mut ds = generate_dense_dataset(&small_dense(1, 4, 11)).unwrap();
    ds.samples[1].rays[5] += 0.001;
    assert!(matches!(verify_samples(&ds, &[1]), Err(TrainError::Integrity { index: 1, .. })));
    let mut ds = generate_dense_dataset(&small_dense(1, 4, 11)).unwrap();
    ds.meta.config["n_worlds"] = serde_json::json!(2);
    assert!(matches!(verify_samples(&ds, &[1]), Err(TrainError::Corrupt(_))));
}

#[test]
fn split_keeps_worlds_apart() {
    let ds = generate_dense_dataset(&small_dense(6, 5, 2)).unwrap();
    let (tr, va) = ds.split_by_world(0.1, 0);
    assert_eq!(tr.len() + va.len(), ds.len());
    assert!(!va.is_empty());
    for i in &va {
        assert!(tr.iter().all(|j| ds.samples[*j].world != ds.samples[*i].world));
    }
    let one = generate_dense_dataset(&small_dense(1, 5, 2)).unwrap();
    assert!(one.split_by_world(0.5, 0).1.is_empty());
}

#[test]
fn dataset_files_round_trip_exactly() {
    let mut ds = generate_dense_dataset(&small_dense(2, 6, 5)).unwrap();
    let extra = ds.samples[..3]
        .iter()
        .enumerate()
        .map(|(t, s)| Sample {
            seq: Some((0, t as u32 * 2)),
            ..s.clone()
        })
        .collect();
    ds.extend(vec![ds.worlds[0].clone()], extra);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.rnds");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    save_dataset(&back, dir.path().join("again.rnds")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("again.rnds")).unwrap());
}

#[test]
fn malformed_dataset_files_are_rejected() {
    let ds = generate_dense_dataset(&small_dense(1, 3, 5)).unwrap();
    let bytes = io::records_to_bytes(&ds.samples);
    let n = ds.meta.n_rays;
    assert!(io::records_from_bytes(&bytes, n).is_ok());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(io::records_from_bytes(&bad, n), Err(TrainError::Corrupt(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(io::records_from_bytes(&bad, n), Err(TrainError::Version { found: 9, .. })));
    assert!(matches!(io::records_from_bytes(&bytes[..bytes.len() - 3], n), Err(TrainError::Corrupt(_))));
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(io::records_from_bytes(&bad, n), Err(TrainError::Corrupt(_))));
    assert!(matches!(io::records_from_bytes(&bytes, n + 1), Err(TrainError::Corrupt(_))));

    let mut s = ds.samples[0].clone();
    s.label = n as u32;
    let bad = io::records_to_bytes(&[s]);
    assert!(matches!(io::records_from_bytes(&bad, n), Err(TrainError::Corrupt(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.rnds");
    save_dataset(&ds, &path).unwrap();
    std::fs::write(&path, io::records_to_bytes(&ds.samples[..1])).unwrap();
    assert!(matches!(load_dataset(&path), Err(TrainError::Corrupt(_))));
    std::fs::write(io::sidecar_path(&path), "{}").unwrap();
    assert!(matches!(load_dataset(&path), Err(TrainError::Corrupt(_))));
    assert!(matches!(load_dataset(dir.path().join("missing")), Err(TrainError::Io(_))));
}

#[test]
fn first_epoch_beats_uniform_prediction() {
    let ds = generate_dense_dataset(&small_dense(8, 48, 21)).unwrap();
    let cfg = NetworkConfig::uniform(64, 32);
    let out = train_ffn::<f64>(&ds, &cfg, &small_train(1, 1)).unwrap();
    let uniform = 64.0 * std::f64::consts::LN_2;
    assert!(out.history[0].train_loss < uniform);
    assert!(out.history[0].val_loss.unwrap() < uniform);
}

#[test]
fn training_is_deterministic() {
    let ds = generate_dense_dataset(&small_dense(3, 20, 22)).unwrap();
    let cfg = NetworkConfig::uniform(64, 16);
    let a = train_ffn::<f32>(&ds, &cfg, &small_train(3, 9)).unwrap();
    let b = train_ffn::<f32>(&ds, &cfg, &small_train(3, 9)).unwrap();
    assert_eq!(a.history.last().unwrap().train_loss, b.history.last().unwrap().train_loss);
    assert_eq!(a.network, b.network);
    let v1 = mean_loss_at(&a.network, &ds, &a.val_indices);
    let v2 = mean_loss_at(&a.network, &ds, &a.val_indices);
    assert_eq!(v1, v2);
}

#[test]
fn overfits_a_small_set() {
    let mut ds = generate_dense_dataset(&small_dense(4, 16, 23)).unwrap();
    ds.samples.truncate(64);
    let cfg = NetworkConfig::uniform(64, 32);
    let train = TrainConfig {
        epochs: 500,
        batch_size: 64,
        val_fraction: 0.0,
        ..small_train(0, 4)
    };
    let out = train_ffn::<f32>(&ds, &cfg, &train).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let (rays, goal, targets) = stack_samples::<f32>(&ds, &all);
    let (logits, _, _) = out.network.forward_batch(rays.view(), goal.view(), None).unwrap();
    let hits = logits
        .rows()
        .into_iter()
        .zip(&targets)
        .filter(|(row, t)| {
            let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best == **t
        })
        .count();
    assert!(hits as f64 >= 0.95 * ds.len() as f64, "{hits}/{} correct", ds.len());
}

#[test]
fn empty_and_divergent_training_fail() {
    let mut ds = generate_dense_dataset(&small_dense(1, 4, 24)).unwrap();
    let cfg = NetworkConfig::uniform(64, 8);
    let mut empty = ds.clone();
    empty.samples.clear();
    assert!(matches!(train_ffn::<f64>(&empty, &cfg, &small_train(1, 0)), Err(TrainError::EmptyDataset)));
    assert!(matches!(mean_loss(&Network::<f64>::init(cfg.clone(), &mut rng::rng_from_seed(0)).unwrap(), &empty), Err(TrainError::EmptyDataset)));
    assert!(matches!(train_ffn::<f64>(&ds, &cfg.clone().with_lstm(true), &small_train(1, 0)), Err(TrainError::Config(_))));
    ds.samples[0].rays[0] = f32::NAN;
    assert!(matches!(train_ffn::<f64>(&ds, &cfg, &small_train(1, 0)), Err(TrainError::Diverged { epoch: 1, .. })));
}

#[test]
fn loss_ratio_properties() {
    let ds = generate_dense_dataset(&small_dense(3, 30, 25)).unwrap();
    let cfg = NetworkConfig::uniform(64, 16);
    let trained = train_ffn::<f64>(&ds, &cfg, &small_train(3, 2)).unwrap().network;
    assert_eq!(loss_ratio(&trained, &trained, &ds).unwrap(), 1.0);

    let mut uniform = trained.clone();
    uniform.params.decoder.w.fill(0.0);
    uniform.params.decoder.b.fill(0.0);
    let lu = mean_loss(&uniform, &ds).unwrap();
    let expected = 64.0 * std::f64::consts::LN_2;
    assert!((lu - expected).abs() < 1e-12 * expected);
    assert!(loss_ratio(&uniform, &trained, &ds).unwrap() > 1.0);

    let mut twice = ds.clone();
    twice.append(&ds);
    let (r1, r2) = (loss_ratio(&uniform, &trained, &ds).unwrap(), loss_ratio(&uniform, &trained, &twice).unwrap());
    assert!((r1 - r2).abs() < 1e-12, "{r1} vs {r2}");
    assert!(matches!(loss_ratio(&trained, &trained, &Dataset::empty(ds.meta.clone())), Err(TrainError::EmptyDataset)));
}

#[test]
fn inserted_lstm_starts_as_identity() {
    let ds = generate_dense_dataset(&small_dense(2, 10, 26)).unwrap();
    let ffn = Network::<f64>::init(NetworkConfig::uniform(64, 16), &mut rng::rng_from_seed(1)).unwrap();
    let rnn = insert_lstm(&ffn, &mut rng::rng_from_seed(2)).unwrap();
    assert!(rnn.config.use_lstm);
    let mut seq = ds.clone();
    seq.samples.iter_mut().enumerate().for_each(|(i, s)| s.seq = Some((0, i as u32)));
    assert_eq!(seq.sequences().len(), 1);
    let a = sample_losses(&rnn, &seq);
    let b = sample_losses(&ffn, &seq);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * y.abs(), "{x} vs {y}");
    }
    assert!(matches!(insert_lstm(&rnn, &mut rng::rng_from_seed(2)), Err(TrainError::Config(_))));
}

#[test]
fn sequences_follow_ids() {
    let ds = generate_dense_dataset(&small_dense(1, 6, 27)).unwrap();
    let mut d = Dataset::empty(ds.meta.clone());
    let mk = |q: Option<(u32, u32)>| Sample { seq: q, ..ds.samples[0].clone() };
    d.extend(
        vec![ds.worlds[0].clone()],
        vec![mk(Some((0, 0))), mk(Some((0, 1))), mk(Some((1, 0))), mk(None), mk(None), mk(Some((2, 0)))],
    );
    assert_eq!(d.sequences(), vec![0..2, 2..3, 3..4, 4..5, 5..6]);
    let n = d.len();
    d.append(&d.clone());
    assert_eq!(d.samples[n].seq, Some((3, 0)));
    assert_eq!(d.samples[n].world, 1);
    assert_eq!(d.sequences().len(), 10);
}

fn tiny_dagger(seed: u64) -> DaggerConfig {
    DaggerConfig {
        iterations: 3,
        rollouts_per_iter: 2,
        val_rollouts_per_iter: 1,
        epochs: 2,
        tbptt: 16,
        seqs_per_batch: 2,
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        world_mix: vec![WorldMixEntry {
            kind: WorldKind::SphereBox,
            min_obstacles: 20,
            max_obstacles: 40,
        }],
        field: FieldOptions {
            cell_size: 0.2,
            ..FieldOptions::expert()
        },
        rollout: RolloutParams {
            n_rays: 64,
            max_steps: 120,
            ..RolloutParams::default()
        },
        seed,
        ..DaggerConfig::default()
    }
}

#[test]
fn dagger_changes_only_the_lstm_and_aggregates() {
    let ffn = Network::<f64>::init(NetworkConfig::uniform(64, 16), &mut rng::rng_from_seed(5)).unwrap();
    let out = dagger_train(&ffn, &tiny_dagger(3)).unwrap();
    let p = &out.network.params;
    assert_eq!(p.ray_encoder, ffn.params.ray_encoder);
    assert_eq!(p.goal_encoder, ffn.params.goal_encoder);
    assert_eq!(p.bottleneck, ffn.params.bottleneck);
    assert_eq!(p.decoder, ffn.params.decoder);
    let fresh = insert_lstm(&ffn, &mut rng::stream(3, &[rng::tag("lstm_init")])).unwrap();
    assert_ne!(p.lstm, fresh.params.lstm);
    let sizes: Vec<usize> = out.history.iter().map(|h| h.aggregated).collect();
    assert!(sizes.windows(2).all(|w| w[1] > w[0]), "{sizes:?}");
    assert_eq!(*sizes.last().unwrap(), out.train.len());
    assert!(out.history.iter().all(|h| h.loss_ratio.is_finite()));
    assert!(out.train.samples.iter().all(|s| s.seq.is_some()));
    let picks: Vec<usize> = (0..out.train.len()).step_by(37).collect();
    verify_samples(&out.train, &picks).unwrap();
}

#[test]
fn dagger_aggregation_is_append_only() {
    let ffn = Network::<f64>::init(NetworkConfig::uniform(64, 16), &mut rng::rng_from_seed(6)).unwrap();
    let short = dagger_train(&ffn, &DaggerConfig { iterations: 1, ..tiny_dagger(4) }).unwrap();
    let long = dagger_train(&ffn, &DaggerConfig { iterations: 2, ..tiny_dagger(4) }).unwrap();
    assert_eq!(short.train.samples[..], long.train.samples[..short.train.len()]);
    assert_eq!(short.train.worlds[..], long.train.worlds[..short.train.worlds.len()]);
}

#[test]
fn dagger_rejects_recurrent_or_mismatched_input() {
    let ffn = Network::<f64>::init(NetworkConfig::uniform(32, 8), &mut rng::rng_from_seed(7)).unwrap();
    assert!(matches!(dagger_train(&ffn, &tiny_dagger(0)), Err(TrainError::Config(_))));
    let rnn = insert_lstm(
        &Network::<f64>::init(NetworkConfig::uniform(64, 8), &mut rng::rng_from_seed(7)).unwrap(),
        &mut rng::rng_from_seed(8),
    )
    .unwrap();
    assert!(matches!(dagger_train(&rnn, &tiny_dagger(0)), Err(TrainError::Config(_))));
}

#[test]
fn bce_of_zero_logits_is_n_ln2() {
    let (l, _) = bce_loss(&[0.0f64; 10], 3);
    assert!((l - 10.0 * std::f64::consts::LN_2).abs() < 1e-12);
}
