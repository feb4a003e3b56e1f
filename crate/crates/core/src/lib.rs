//! Reactive navigation in cluttered 3-D worlds from ray distances.
//!
//! The crate bundles procedural world generation, ray casting with a
//! multiplicative noise model, Riemannian motion policies, a fast-marching
//! geodesic expert, a small recurrent network that predicts goal directions
//! from raw rays, its trainer and a paired benchmark harness.
//!
//! Numerical code that benefits from it is generic over [`Real`] (`f32` or
//! `f64`); the aliases below name the common instantiations.

pub mod bench;
pub mod geodesic;
pub mod math;
pub mod neural;
pub mod raycast;
pub mod rmp;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod worldgen;

pub use scalar::Real;

pub type Vec3d = math::Vec3<f64>;
pub type Vec3f = math::Vec3<f32>;
pub type Mat3d = math::Mat3<f64>;
pub type Mat3f = math::Mat3<f32>;
pub type Directions64 = raycast::DirectionSet<f64>;
pub type Directions32 = raycast::DirectionSet<f32>;
pub type Policy64 = rmp::Policy<f64>;
pub type Policy32 = rmp::Policy<f32>;
