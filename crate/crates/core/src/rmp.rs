//! Riemannian motion policies: the `(f, A)` algebra, obstacle and goal
//! policies, and the rollout integrator.

use serde::{Deserialize, Serialize};

use crate::math::{Mat3, Vec3};
use crate::raycast::RayBundle;
use crate::scalar::Real;

pub mod rollout;

pub use rollout::{
    rollout, BaselinePlanner, GoalOutput, Planner, PlannerContext, RobotState, RolloutError, RolloutParams,
    StepRecord, Status, TrajectoryResult,
};

/// Relative eigenvalue cutoff of the pseudoinverse in [`sum_policies`].
pub const PINV_RANK_TOL: f64 = 1e-8;

/// An acceleration `f` with its metric `A`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize + Copy", deserialize = "T: Deserialize<'de>"))]
pub struct Policy<T> {
    pub f: Vec3<T>,
    pub a: Mat3<T>,
}

impl<T: Real> Policy<T> {
    pub fn new(f: Vec3<T>, a: Mat3<T>) -> Self {
        Self { f, a }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Mat3::zeros())
    }

    /// Symmetric within `tol` and no eigenvalue below `-tol`.
    pub fn is_valid(&self, tol: T) -> bool {
        if !self.f.is_finite() || !self.a.is_finite() {
            return false;
        }
        if self.a.max_abs_diff(&self.a.transpose()) > tol {
            return false;
        }
        let (vals, _) = self.a.symmetric_eigen();
        vals.iter().all(|&l| l >= -tol)
    }
}

/// Running sums `Σ A_i` and `Σ A_i f_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicySum<T> {
    pub a: Mat3<T>,
    pub af: Vec3<T>,
}

impl<T: Real> Default for PolicySum<T> {
    fn default() -> Self {
        Self {
            a: Mat3::zeros(),
            af: Vec3::zeros(),
        }
    }
}

impl<T: Real> PolicySum<T> {
    pub fn add(&mut self, p: &Policy<T>) {
        self.a += p.a;
        self.af += p.a.mul_vec(&p.f);
    }

    /// Adds the rank-one policy `(m·u, s·u uᵀ)` without forming it.
    #[inline]
    pub fn add_rank_one(&mut self, u: &Vec3<T>, m: T, s: T) {
        for i in 0..3 {
            for j in 0..3 {
                self.a.m[i][j] += s * u[i] * u[j];
            }
        }
        // (s u uᵀ)(m u) = s m u for unit u.
        self.af += *u * (s * m);
    }

    pub fn merge(&mut self, o: &Self) {
        self.a += o.a;
        self.af += o.af;
    }

    pub fn resolve(&self) -> Policy<T> {
        let pinv = self.a.symmetric_pinv(T::lit(PINV_RANK_TOL));
        Policy::new(pinv.mul_vec(&self.af), self.a)
    }
}

/// Metric-weighted combination: `A_c = Σ A_i`, `f_c = A_c⁺ Σ A_i f_i`.
///
/// An empty list or all-zero metrics yield the zero policy.
pub fn sum_policies<T: Real>(policies: &[Policy<T>]) -> Policy<T> {
    let mut acc = PolicySum::default();
    for p in policies {
        acc.add(p);
    }
    acc.resolve()
}

/// `h(v) = v / η(‖v‖)` with `η(z) = z + c·log(1 + exp(−2z/c))`.
pub fn soft_norm<T: Real>(v: &Vec3<T>, c: T) -> Vec3<T> {
    let z = v.norm();
    if z == T::zero() {
        return Vec3::zeros();
    }
    let eta = z + c * (-T::lit(2.0) * z / c).exp().ln_1p();
    *v * (T::one() / eta)
}

/// Constants of the obstacle and goal policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmpConfig {
    /// Repulsion gain, m/s².
    pub eta_rep: f64,
    /// Repulsion length scale, m.
    pub nu_rep: f64,
    /// Damping gain.
    pub eta_damp: f64,
    /// Distance at which the obstacle metric weight reaches zero, m.
    pub metric_radius: f64,
    /// Softness of the normalization inside the obstacle metric.
    pub metric_softness: f64,
    pub alpha_goal: f64,
    pub beta_goal: f64,
    /// Softness `c` of the goal soft-normalization.
    pub goal_softness: f64,
}

impl Default for RmpConfig {
    fn default() -> Self {
        Self {
            eta_rep: 8.0,
            nu_rep: 0.15,
            eta_damp: 2.0,
            metric_radius: 1.0,
            metric_softness: 0.1,
            alpha_goal: 1.0,
            beta_goal: 2.0,
            goal_softness: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
#[error("obstacle at non-positive distance {distance}")]
pub struct CollisionSentinel {
    pub distance: f64,
}

/// Magnitude of the acceleration pushing away from an obstacle at distance
/// `d` along unit `r`, and the weight of its rank-one metric `s·r rᵀ`.
#[inline]
fn obstacle_terms<T: Real>(cfg: &RmpConfig, xdot: &Vec3<T>, r: &Vec3<T>, d: T, max_range: T) -> (T, T) {
    if d >= max_range {
        return (T::zero(), T::zero());
    }
    let rep = T::lit(cfg.eta_rep) * (-d / T::lit(cfg.nu_rep)).exp();
    let toward = xdot.dot(r).max(T::zero());
    let damp = T::lit(cfg.eta_damp) * toward * toward / d;
    let mag = rep + damp;
    let w = (T::one() - d / T::lit(cfg.metric_radius)).max(T::zero()).powi(2);
    let c = T::lit(cfg.metric_softness);
    let hn = mag / (mag + c * (-T::lit(2.0) * mag / c).exp().ln_1p());
    (mag, w * hn * hn)
}

/// Repulsive plus damping policy for one ray hitting at `distance` along
/// unit `direction`. Obstacles at or beyond `max_range` contribute nothing.
pub fn obstacle_policy<T: Real>(
    cfg: &RmpConfig,
    state: &RobotState<T>,
    direction: &Vec3<T>,
    distance: T,
    max_range: T,
) -> Result<Policy<T>, CollisionSentinel> {
    if !(distance > T::zero()) {
        return Err(CollisionSentinel {
            distance: distance.as_f64(),
        });
    }
    let (mag, s) = obstacle_terms(cfg, &state.xdot, direction, distance, max_range);
    Ok(Policy::new(
        -*direction * mag,
        Mat3::outer(direction, direction).scale(s),
    ))
}

/// One policy per ray shorter than the bundle's range.
pub fn obstacle_policies_from_bundle(
    cfg: &RmpConfig,
    state: &RobotState<f64>,
    bundle: &RayBundle,
) -> Result<Vec<Policy<f64>>, CollisionSentinel> {
    bundle
        .distances
        .iter()
        .zip(&bundle.set.directions)
        .filter(|(&d, _)| d < bundle.max_range)
        .map(|(&d, r)| obstacle_policy(cfg, state, r, d, bundle.max_range))
        .collect()
}

/// Accumulates every obstacle policy of a bundle into `acc` without
/// materializing them. Same result as summing
/// [`obstacle_policies_from_bundle`].
pub fn accumulate_obstacles(
    cfg: &RmpConfig,
    state: &RobotState<f64>,
    bundle: &RayBundle,
    acc: &mut PolicySum<f64>,
) -> Result<(), CollisionSentinel> {
    let l = bundle.max_range;
    for (&d, r) in bundle.distances.iter().zip(&bundle.set.directions) {
        if d >= l {
            continue;
        }
        if !(d > 0.0) {
            return Err(CollisionSentinel { distance: d });
        }
        let (mag, s) = obstacle_terms(cfg, &state.xdot, r, d, l);
        acc.add_rank_one(r, -mag, s);
    }
    Ok(())
}

/// `f = α·h(x_g − x) − β·ẋ`, `A = I`.
pub fn goal_policy<T: Real>(cfg: &RmpConfig, state: &RobotState<T>, goal: &Vec3<T>) -> Policy<T> {
    attractor(cfg, state, *goal - state.x)
}

/// Goal policy whose direction is replaced by `dir` (unit for the geodesic
/// expert, a decoded direction for learned planners), keeping the Euclidean
/// goal distance: `f = α·h(‖x_g − x‖·dir) − β·ẋ`, `A = I`.
pub fn directed_goal_policy<T: Real>(
    cfg: &RmpConfig,
    state: &RobotState<T>,
    goal: &Vec3<T>,
    dir: &Vec3<T>,
) -> Policy<T> {
    let dist = (*goal - state.x).norm();
    attractor(cfg, state, *dir * dist)
}

/// Goal policy driven by a learned direction `ŷ`.
pub fn learned_goal_policy<T: Real>(
    cfg: &RmpConfig,
    state: &RobotState<T>,
    goal: &Vec3<T>,
    y_hat: &Vec3<T>,
) -> Policy<T> {
    directed_goal_policy(cfg, state, goal, y_hat)
}

fn attractor<T: Real>(cfg: &RmpConfig, state: &RobotState<T>, pull: Vec3<T>) -> Policy<T> {
    let f = soft_norm(&pull, T::lit(cfg.goal_softness)) * T::lit(cfg.alpha_goal) - state.xdot * T::lit(cfg.beta_goal);
    Policy::new(f, Mat3::identity())
}
