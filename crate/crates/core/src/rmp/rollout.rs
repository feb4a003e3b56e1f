//! Closed-loop simulation of a point robot driven by summed policies.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{accumulate_obstacles, goal_policy, Policy, PolicySum, RmpConfig};
use crate::math::Vec3;
use crate::raycast::{apply_noise, cast_bundle, DirectionSet, RayBundle, DEFAULT_MAX_RANGE, DEFAULT_RAYS};
use crate::rng::Rng;
use crate::worldgen::{Point, World};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize + Copy", deserialize = "T: Deserialize<'de>"))]
pub struct RobotState<T> {
    pub x: Vec3<T>,
    pub xdot: Vec3<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutParams {
    pub dt: f64,
    pub max_steps: usize,
    pub goal_radius: f64,
    pub v_max: f64,
    pub stuck_window: usize,
    pub stuck_speed: f64,
    pub collision_margin: f64,
    /// Constant subtracted from every ray to model a robot body.
    pub robot_radius: f64,
    pub n_rays: usize,
    pub max_range: f64,
    pub rmp: RmpConfig,
}

impl Default for RolloutParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            max_steps: 2000,
            goal_radius: 0.25,
            v_max: 1.5,
            stuck_window: 100,
            stuck_speed: 0.02,
            collision_margin: 0.05,
            robot_radius: 0.0,
            n_rays: DEFAULT_RAYS,
            max_range: DEFAULT_MAX_RANGE,
            rmp: RmpConfig::default(),
        }
    }
}

impl RolloutParams {
    pub fn validate(&self) -> Result<(), RolloutError> {
        let positive = [
            self.dt,
            self.goal_radius,
            self.v_max,
            self.stuck_speed,
            self.collision_margin,
            self.max_range,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.n_rays == 0 || self.max_steps == 0 {
            return Err(RolloutError::InvalidParams("rollout parameters must be positive".into()));
        }
        if self.stuck_window == 0 || self.stuck_window >= self.max_steps {
            return Err(RolloutError::InvalidParams(
                "stuck_window must be positive and below max_steps".into(),
            ));
        }
        if self.robot_radius < 0.0 {
            return Err(RolloutError::InvalidParams("robot_radius must be non-negative".into()));
        }
        Ok(())
    }

    /// The shared Halton direction set for `n_rays`.
    pub fn directions(&self) -> Arc<DirectionSet<f64>> {
        shared_directions(self.n_rays)
    }
}

/// Process-wide cache of Halton direction sets keyed by ray count.
pub fn shared_directions(n: usize) -> Arc<DirectionSet<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DirectionSet<f64>>>>> = OnceLock::new();
    let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
    Arc::clone(map.entry(n).or_insert_with(|| Arc::new(DirectionSet::halton(n))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Stuck,
    Collision,
    Timeout,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Success => "success",
            Status::Stuck => "stuck",
            Status::Collision => "collision",
            Status::Timeout => "timeout",
        }
    }
}

/// State and diagnostics at the start of one integration step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub x: [f64; 3],
    pub v: [f64; 3],
    /// Summed acceleration applied during the step.
    pub f: [f64; 3],
    pub lstm_influence: f64,
    /// Smallest noise-free ray distance.
    pub min_ray: f64,
    /// Goal-policy direction chosen by the planner.
    pub direction: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub status: Status,
    pub path: Vec<[f64; 3]>,
    pub length: f64,
    pub steps: usize,
    pub records: Vec<StepRecord>,
    /// Smallest noise-free ray distance over every visited position.
    pub min_clearance: f64,
    /// Mean wall time of one policy evaluation, seconds.
    pub query_time_s: f64,
    /// Wall time of the whole rollout, seconds.
    pub wall_time_s: f64,
}

impl TrajectoryResult {
    pub fn final_position(&self) -> Point {
        (*self.path.last().expect("path holds the start")).into()
    }

    /// JSON Lines: one record per step, then `{"summary": …}` carrying
    /// `header` alongside status, length and step count.
    pub fn write_jsonl(&self, mut w: impl Write, header: &serde_json::Value) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        let summary = serde_json::json!({
            "summary": {
                "status": self.status,
                "length": self.length,
                "steps": self.steps,
                "min_clearance": self.min_clearance,
                "query_time_s": self.query_time_s,
                "wall_time_s": self.wall_time_s,
                "final": self.path.last(),
                "config": header,
            }
        });
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("invalid rollout parameters: {0}")]
    InvalidParams(String),
    #[error("{which} position {pos:?} is not in free space")]
    Occupied { which: &'static str, pos: [f64; 3] },
    #[error("planner failure: {0}")]
    Planner(String),
}

/// What a planner sees at each step.
pub struct PlannerContext<'a> {
    pub state: &'a RobotState<f64>,
    pub goal: &'a Point,
    /// Possibly noisy rays, as given to the avoidance policies.
    pub bundle: &'a RayBundle,
    pub step: usize,
    pub rmp: &'a RmpConfig,
}

/// The goal-flavored policy a planner contributes to the sum.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalOutput {
    pub policy: Policy<f64>,
    pub direction: Point,
    pub lstm_influence: f64,
    /// Ends the rollout as stuck (e.g. the start is unreachable for the
    /// planner).
    pub give_up: bool,
}

/// Source of the goal-flavored policy. Obstacle policies are added by the
/// rollout and are identical for every planner.
pub trait Planner {
    fn name(&self) -> &str;
    /// Clears per-rollout state (recurrent memory, held directions).
    fn reset(&mut self) {}
    fn goal_policy(&mut self, ctx: &PlannerContext<'_>) -> Result<GoalOutput, RolloutError>;
}

/// Straight-line goal attraction.
#[derive(Clone, Debug, Default)]
pub struct BaselinePlanner;

impl Planner for BaselinePlanner {
    fn name(&self) -> &str {
        "baseline"
    }

    fn goal_policy(&mut self, ctx: &PlannerContext<'_>) -> Result<GoalOutput, RolloutError> {
        Ok(GoalOutput {
            policy: goal_policy(ctx.rmp, ctx.state, ctx.goal),
            direction: (*ctx.goal - ctx.state.x).normalize_or_zero(),
            lstm_influence: 0.0,
            give_up: false,
        })
    }
}

fn true_bundle(world: &World, x: &Point, set: &Arc<DirectionSet<f64>>, params: &RolloutParams) -> RayBundle {
    let mut b = cast_bundle(world, x, set, params.max_range);
    b.offset(params.robot_radius);
    b
}

/// Integrates from rest at `start` until success, collision, stall or the
/// step limit. Noise (σ = `sigma`) corrupts the rays seen by both the
/// planner and the avoidance policies; collisions are judged on the
/// noise-free rays.
pub fn rollout(
    world: &World,
    planner: &mut dyn Planner,
    start: Point,
    goal: Point,
    params: &RolloutParams,
    sigma: f64,
    rng: &mut Rng,
) -> Result<TrajectoryResult, RolloutError> {
    params.validate()?;
    if !(sigma >= 0.0) {
        return Err(RolloutError::InvalidParams("noise sigma must be non-negative".into()));
    }
    for (which, p) in [("start", start), ("goal", goal)] {
        if world.occupancy(&p) {
            return Err(RolloutError::Occupied {
                which,
                pos: p.to_array(),
            });
        }
    }
    let clock = Instant::now();
    planner.reset();
    let set = params.directions();
    let mut state = RobotState {
        x: start,
        xdot: Vec3::zeros(),
    };
    let mut path = vec![start.to_array()];
    let mut records = Vec::new();
    let mut speeds = Vec::new();
    let mut speed_window = 0.0;
    let mut min_clearance = f64::INFINITY;
    let mut query_total = 0.0;
    let mut status = Status::Timeout;

    if start.distance(&goal) <= params.goal_radius {
        status = Status::Success;
    } else {
        for step in 0..params.max_steps {
            let q0 = Instant::now();
            let clean = true_bundle(world, &state.x, &set, params);
            let min_ray = clean.min_distance();
            min_clearance = min_clearance.min(min_ray);
            if min_ray < params.collision_margin {
                status = Status::Collision;
                break;
            }
            let mut seen = apply_noise(&clean, sigma, rng);
            seen.step = step;
            let out = planner.goal_policy(&PlannerContext {
                state: &state,
                goal: &goal,
                bundle: &seen,
                step,
                rmp: &params.rmp,
            })?;
            if out.give_up {
                status = Status::Stuck;
                break;
            }
            let mut acc = PolicySum::default();
            acc.add(&out.policy);
            if accumulate_obstacles(&params.rmp, &state, &seen, &mut acc).is_err() {
                status = Status::Collision;
                break;
            }
            let f = acc.resolve().f;
            query_total += q0.elapsed().as_secs_f64();

            records.push(StepRecord {
                t: step as f64 * params.dt,
                x: state.x.to_array(),
                v: state.xdot.to_array(),
                f: f.to_array(),
                lstm_influence: out.lstm_influence,
                min_ray,
                direction: out.direction.to_array(),
            });

            let mut v = state.xdot + f * params.dt;
            let speed = v.norm();
            if speed > params.v_max {
                v = v * (params.v_max / speed);
            }
            state.xdot = v;
            state.x += v * params.dt;
            path.push(state.x.to_array());

            speeds.push(v.norm());
            speed_window += v.norm();
            if speeds.len() > params.stuck_window {
                speed_window -= speeds[speeds.len() - 1 - params.stuck_window];
            }
            if state.x.distance(&goal) <= params.goal_radius {
                status = Status::Success;
                break;
            }
            if speeds.len() >= params.stuck_window && speed_window / (params.stuck_window as f64) < params.stuck_speed {
                status = Status::Stuck;
                break;
            }
        }
        if status != Status::Collision {
            let last = true_bundle(world, &state.x, &set, params).min_distance();
            min_clearance = min_clearance.min(last);
            if last < params.collision_margin {
                status = Status::Collision;
            }
        }
    }

    let steps = records.len();
    let length = path
        .windows(2)
        .map(|w| Point::from(w[0]).distance(&Point::from(w[1])))
        .sum();
    Ok(TrajectoryResult {
        status,
        path,
        length,
        steps,
        records,
        min_clearance,
        query_time_s: if steps > 0 { query_total / steps as f64 } else { 0.0 },
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::worldgen::fixtures;

    fn p(x: f64, y: f64, z: f64) -> Point {
        Point::new(x, y, z)
    }

    #[test]
    fn start_at_goal_succeeds_immediately() {
        let w = World::empty(10.0);
        let r = rollout(
            &w,
            &mut BaselinePlanner,
            p(5.0, 5.0, 5.0),
            p(5.0, 5.0, 5.0),
            &RolloutParams::default(),
            0.0,
            &mut rng::rng_from_seed(0),
        )
        .unwrap();
        assert_eq!(r.status, Status::Success);
        assert_eq!((r.steps, r.length), (0, 0.0));
    }

    #[test]
    fn open_space_path_is_nearly_straight() {
        let mut w = World::empty(10.0);
        w.boundary_rays = false;
        let (s, g) = (p(2.5, 5.0, 5.0), p(7.5, 5.0, 5.0));
        let r = rollout(&w, &mut BaselinePlanner, s, g, &RolloutParams::default(), 0.0, &mut rng::rng_from_seed(0))
            .unwrap();
        assert_eq!(r.status, Status::Success);
        // Stops once within the goal radius of a 5 m straight line.
        assert!(r.length <= 5.0 * 1.05 && r.length >= 5.0 - 0.25 - 1e-9, "length {}", r.length);
        assert_eq!(r.records[0].v, [0.0; 3]);
        assert!(r.final_position().distance(&g) <= 0.25);
    }

    #[test]
    fn closed_empty_world_still_succeeds() {
        let w = World::empty(10.0);
        let r = rollout(
            &w,
            &mut BaselinePlanner,
            p(3.0, 5.0, 5.0),
            p(7.0, 5.0, 5.0),
            &RolloutParams::default(),
            0.0,
            &mut rng::rng_from_seed(0),
        )
        .unwrap();
        assert_eq!(r.status, Status::Success);
    }

    #[test]
    fn baseline_stalls_in_the_u_trap() {
        let w = fixtures::u_trap();
        let r = rollout(
            &w,
            &mut BaselinePlanner,
            fixtures::U_TRAP_START.into(),
            fixtures::U_TRAP_GOAL.into(),
            &RolloutParams::default(),
            0.0,
            &mut rng::rng_from_seed(0),
        )
        .unwrap();
        assert_eq!(r.status, Status::Stuck);
        assert!(r.min_clearance > 0.05);
    }

    #[test]
    fn length_matches_path_and_velocity_is_capped() {
        let w = crate::worldgen::gen_sphere_box_world(3, 40, &Default::default());
        let mut rng = rng::rng_from_seed(3);
        let (s, g) = crate::worldgen::sample_start_goal(&w, &mut rng, &Default::default()).unwrap();
        let params = RolloutParams::default();
        let r = rollout(&w, &mut BaselinePlanner, s, g, &params, 0.1, &mut rng).unwrap();
        let seg: f64 = r.path.windows(2).map(|q| Point::from(q[0]).distance(&Point::from(q[1]))).sum();
        assert!((seg - r.length).abs() <= 1e-6 * seg.max(1.0));
        assert!(r.records.iter().all(|s| Point::from(s.v).norm() <= params.v_max + 1e-12));
        assert!(r.query_time_s <= r.wall_time_s);
        assert_eq!(r.status == Status::Success, r.final_position().distance(&g) <= params.goal_radius);
    }

    #[test]
    fn rollouts_are_deterministic_per_seed() {
        let w = crate::worldgen::gen_plane_world(5, 30, &Default::default());
        let mut rng = rng::rng_from_seed(8);
        let (s, g) = crate::worldgen::sample_start_goal(&w, &mut rng, &Default::default()).unwrap();
        let run = |seed| {
            rollout(&w, &mut BaselinePlanner, s, g, &RolloutParams::default(), 0.2, &mut rng::rng_from_seed(seed))
                .unwrap()
        };
        let (a, b) = (run(1), run(1));
        assert_eq!((a.status, &a.path), (b.status, &b.path));
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = World::empty(10.0);
        let bad = RolloutParams {
            stuck_window: 5000,
            ..Default::default()
        };
        let mut rng = rng::rng_from_seed(0);
        assert!(matches!(
            rollout(&w, &mut BaselinePlanner, p(1.0, 1.0, 1.0), p(5.0, 5.0, 5.0), &bad, 0.0, &mut rng),
            Err(RolloutError::InvalidParams(_))
        ));
        assert!(matches!(
            rollout(&w, &mut BaselinePlanner, p(-1.0, 1.0, 1.0), p(5.0, 5.0, 5.0), &Default::default(), 0.0, &mut rng),
            Err(RolloutError::Occupied { which: "start", .. })
        ));
    }

    #[test]
    fn jsonl_has_one_line_per_step_plus_summary() {
        let w = World::empty(10.0);
        let r = rollout(
            &w,
            &mut BaselinePlanner,
            p(4.0, 5.0, 5.0),
            p(6.0, 5.0, 5.0),
            &RolloutParams::default(),
            0.0,
            &mut rng::rng_from_seed(0),
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf, &serde_json::json!({"sigma": 0.0})).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), r.steps + 1);
        let first: StepRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first, r.records[0]);
        let summary: serde_json::Value = serde_json::from_str(lines[r.steps]).unwrap();
        assert_eq!(summary["summary"]["status"], "success");
        assert_eq!(summary["summary"]["config"]["sigma"], 0.0);
    }
}
