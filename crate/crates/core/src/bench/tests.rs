use super::*;
use crate::neural::{save_params, NetworkConfig};

fn tiny(planners: Vec<PlannerSpec>, densities: Vec<usize>, runs: usize) -> BenchmarkSpec {
    BenchmarkSpec {
        planners,
        worlds: vec![WorldSweep {
            kind: WorldKind::SphereBox,
            densities,
        }],
        runs,
        rollout: RolloutParams {
            n_rays: 128,
            max_steps: 400,
            ..RolloutParams::default()
        },
        field: FieldOptions {
            cell_size: 0.2,
            ..FieldOptions::expert()
        },
        seed: 4,
        ..BenchmarkSpec::default()
    }
}

fn untimed(mut r: Vec<RunRecord>) -> Vec<RunRecord> {
    for x in &mut r {
        x.tta_ms = 0.0;
        x.qt_ms = 0.0;
    }
    r
}

fn rec(planner: &str, run: usize, ok: bool, len: f64, tta: f64, qt: f64) -> RunRecord {
    RunRecord {
        planner: planner.into(),
        world: WorldKind::Plane,
        density: 20,
        sigma_n: 0.0,
        run,
        world_seed: run as u64,
        start: [1.0; 3],
        goal: [5.0; 3],
        status: if ok { Status::Success } else { Status::Stuck },
        length_m: len,
        steps: 10,
        tta_ms: tta,
        qt_ms: qt,
        min_clearance: 1.0,
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn empty_worlds_always_succeed() {
    let spec = tiny(vec![PlannerSpec::Baseline, PlannerSpec::Expert], vec![0], 3);
    let rep = run_sweep(&spec, &load_planners(&spec).unwrap()).unwrap();
    assert_eq!(rep.skipped_runs, 0);
    for p in ["baseline", "expert"] {
        let c = rep.cell(p, WorldKind::SphereBox, 0, 0.0).unwrap();
        assert_eq!((c.n, c.success_rate), (3, 1.0));
    }
}

#[test]
fn sweeps_are_paired_and_reproducible() {
    let spec = tiny(vec![PlannerSpec::Baseline, PlannerSpec::Expert], vec![40], 4);
    let planners = load_planners(&spec).unwrap();
    let a = run_sweep(&spec, &planners).unwrap();
    let b = run_sweep(&spec, &planners).unwrap();
    assert_eq!(untimed(a.records.clone()), untimed(b.records.clone()));
    for run in 0..4 {
        let rs: Vec<&RunRecord> = a.records.iter().filter(|r| r.run == run).collect();
        assert_eq!(rs.len(), 2);
        assert_eq!((rs[0].start, rs[0].goal, rs[0].world_seed), (rs[1].start, rs[1].goal, rs[1].world_seed));
        let d = Point::from(rs[0].start).distance(&Point::from(rs[0].goal));
        assert!(d >= spec.sample.min_separation);
    }
    for r in &a.records {
        assert!(r.qt_ms <= r.tta_ms);
    }
    assert!(a.is_consistent());
}

use crate::worldgen::Point;

#[test]
fn zero_noise_matches_the_noise_free_sweep() {
    let spec = tiny(vec![PlannerSpec::Baseline], vec![40], 3);
    let planners = load_planners(&spec).unwrap();
    let plain = run_sweep(&spec, &planners).unwrap();
    let noisy = run_sweep(
        &BenchmarkSpec {
            sigmas: vec![0.0, 0.1],
            ..spec.clone()
        },
        &planners,
    )
    .unwrap();
    let zero: Vec<RunRecord> = noisy.records.iter().filter(|r| r.sigma_n == 0.0).cloned().collect();
    assert_eq!(untimed(zero), untimed(plain.records));
    assert_eq!(noisy.records.iter().filter(|r| r.sigma_n == 0.1).count(), 3);
}

#[test]
fn common_subset_statistics_by_hand() {
    let records = vec![
        rec("a", 0, true, 10.0, 100.0, 1.0),
        rec("b", 0, true, 12.0, 200.0, 2.0),
        rec("a", 1, true, 20.0, 300.0, 3.0),
        rec("b", 1, false, 99.0, 900.0, 9.0),
        rec("a", 2, true, 30.0, 500.0, 5.0),
        rec("b", 2, true, 16.0, 400.0, 4.0),
    ];
    let cells = common_success_stats(&records, &names(&["a", "b"]));
    assert_eq!(cells.len(), 2);
    let a = &cells[0];
    assert_eq!((a.n, a.successes, a.n_common), (3, 3, 2));
    assert_eq!(a.len_m, Some(20.0));
    assert_eq!(a.tta_ms, Some(300.0));
    assert_eq!(a.qt_ms, Some(3.0));
    let b = &cells[1];
    assert_eq!(b.success_rate, 2.0 / 3.0);
    assert_eq!((b.len_m, b.tta_ms, b.qt_ms), (Some(14.0), Some(300.0), Some(3.0)));

    let solo = common_success_stats(&records[..4], &names(&["a"]));
    assert_eq!(solo[0].n_common, 2);
    assert_eq!(solo[0].len_m, Some(15.0));

    let disjoint = vec![rec("a", 0, true, 1.0, 1.0, 1.0), rec("b", 0, false, 1.0, 1.0, 1.0), rec("a", 1, false, 1.0, 1.0, 1.0), rec("b", 1, true, 1.0, 1.0, 1.0)];
    let cells = common_success_stats(&disjoint, &names(&["a", "b"]));
    assert!(cells.iter().all(|c| c.len_m.is_none() && c.tta_ms.is_none() && c.qt_ms.is_none() && c.n_common == 0));
}

fn fixture_report() -> BenchmarkReport {
    let mut records = vec![
        rec("a", 0, true, 10.0, 100.0, 1.0),
        rec("b", 0, false, 12.0, 200.0, 2.0),
        rec("a", 1, true, 20.0, 300.0, 3.0),
        rec("b", 1, true, 0.1 + 0.2, 400.0, 4.0),
    ];
    let mut more: Vec<RunRecord> = records.clone();
    for r in &mut more {
        r.density = 40;
        r.sigma_n = 0.3;
    }
    records.extend(more);
    let planners = names(&["a", "b"]);
    BenchmarkReport {
        version: "test".into(),
        spec: BenchmarkSpec::default(),
        cells: common_success_stats(&records, &planners),
        planners,
        skipped_runs: 0,
        records,
    }
}

#[test]
fn report_formats() {
    let rep = fixture_report();
    assert!(rep.is_consistent());
    let back = BenchmarkReport::from_json(&rep.to_json().unwrap()).unwrap();
    assert_eq!(back, rep);

    let csv = rep.to_csv().unwrap();
    let mut rd = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 * 2);
    assert_eq!(rd.headers().unwrap().len(), 10);
    for (row, c) in rows.iter().zip(&rep.cells) {
        assert_eq!(&row[0], c.planner);
        assert_eq!(row[4].parse::<f64>().unwrap(), (c.successes as f64 / c.n as f64 * 1e6).round() / 1e6);
    }
    assert_eq!(&rows[0][5], "20.000000");
    assert_eq!(&rows[0][9], "1");

    let gp = rep.to_gnuplot();
    assert_eq!(gp.matches("# planner=").count(), 4);
    assert_eq!(gp.matches("\n\n\n").count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    emit_report(&rep, &p, ReportFormat::Json).unwrap();
    assert_eq!(load_report(&p).unwrap(), rep);
    std::fs::write(&p, "{\"version\": 3}").unwrap();
    assert!(matches!(load_report(&p), Err(BenchError::Format(_))));
}

#[test]
fn disjoint_successes_are_marked_unavailable_in_csv() {
    let records = vec![rec("a", 0, true, 1.0, 1.0, 1.0), rec("b", 0, false, 1.0, 1.0, 1.0)];
    let planners = names(&["a", "b"]);
    let rep = BenchmarkReport {
        version: "test".into(),
        spec: BenchmarkSpec::default(),
        cells: common_success_stats(&records, &planners),
        planners,
        skipped_runs: 0,
        records,
    };
    let csv = rep.to_csv().unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "a,plane,20,0,1.000000,NA,NA,NA,1,0");
}

#[test]
fn invalid_specs_fail_before_running() {
    let ok = tiny(vec![PlannerSpec::Baseline], vec![0], 1);
    assert!(ok.validate().is_ok());
    let bad = [
        BenchmarkSpec { runs: 0, ..ok.clone() },
        BenchmarkSpec {
            planners: vec![PlannerSpec::Baseline, PlannerSpec::Baseline],
            ..ok.clone()
        },
        BenchmarkSpec {
            worlds: vec![WorldSweep {
                kind: WorldKind::Plane,
                densities: vec![101],
            }],
            ..ok.clone()
        },
        BenchmarkSpec {
            sigmas: vec![-0.1],
            ..ok.clone()
        },
    ];
    for b in bad {
        assert!(matches!(run_sweep(&b, &[PlannerHandle::Baseline]), Err(BenchError::Config(_))));
    }
}

#[test]
fn checkpoints_load_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let missing = tiny(
        vec![
            PlannerSpec::Baseline,
            PlannerSpec::Ffn {
                checkpoint: dir.path().join("none.ckpt"),
            },
        ],
        vec![0],
        1,
    );
    assert!(matches!(load_planners(&missing), Err(BenchError::Planner { .. })));

    let net = Network::<f64>::init(NetworkConfig::uniform(128, 8), &mut rng::rng_from_seed(0)).unwrap();
    let path = dir.path().join("ffn.ckpt");
    save_params(&net, &serde_json::Value::Null, &path).unwrap();
    let as_rnn = tiny(vec![PlannerSpec::Rnn { checkpoint: path.clone() }], vec![0], 1);
    assert!(matches!(load_planners(&as_rnn), Err(BenchError::Planner { .. })));
    let spec = tiny(vec![PlannerSpec::Ffn { checkpoint: path }], vec![0], 2);
    let planners = load_planners(&spec).unwrap();
    assert_eq!(planners[0].name(), "ffn");
    let rep = run_sweep(&spec, &planners).unwrap();
    assert_eq!(rep.records.len(), 2);

    let other = dir.path().join("other.ckpt");
    std::fs::copy(dir.path().join("ffn.ckpt"), &other).unwrap();
    let two = tiny(
        vec![
            PlannerSpec::Ffn {
                checkpoint: dir.path().join("ffn.ckpt"),
            },
            PlannerSpec::Ffn { checkpoint: other },
        ],
        vec![0],
        1,
    );
    let handles = load_planners(&two).unwrap();
    assert_eq!((handles[0].name(), handles[1].name()), ("ffn:ffn", "ffn:other"));
    assert!(two.validate().is_ok());
    let mut twice = two.clone();
    twice.planners[1] = twice.planners[0].clone();
    assert!(matches!(twice.validate(), Err(BenchError::Config(_))));
    let same = [handles[0].clone(), handles[0].clone()];
    assert!(matches!(run_sweep(&two, &same), Err(BenchError::Config(_))));
}

#[test]
fn planner_specs_parse() {
    assert_eq!("base".parse::<PlannerSpec>().unwrap(), PlannerSpec::Baseline);
    assert_eq!("expert".parse::<PlannerSpec>().unwrap(), PlannerSpec::Expert);
    assert_eq!(
        "rnn=a/b.ckpt".parse::<PlannerSpec>().unwrap(),
        PlannerSpec::Rnn {
            checkpoint: "a/b.ckpt".into()
        }
    );
    assert!("ffn".parse::<PlannerSpec>().is_err());
    assert!("chomp".parse::<PlannerSpec>().is_err());
    assert_eq!(WorldSweep::desk(WorldKind::Plane).densities, vec![0, 20, 40, 60, 80, 100]);
    assert_eq!(WorldSweep::desk(WorldKind::SphereBox).densities, vec![0, 40, 80, 120, 160, 200]);
}
