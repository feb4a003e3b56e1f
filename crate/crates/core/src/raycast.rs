//! Halton ray directions, truncated ray distances and the sensor-noise model.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::math::{Aabb, Vec3};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::worldgen::{ray_box_entry, Point, World};

/// Default number of rays per bundle.
pub const DEFAULT_RAYS: usize = 1024;
/// Default truncation distance, meters.
pub const DEFAULT_MAX_RANGE: f64 = 5.0;
/// Floor for noisy distances, meters.
pub const NOISE_FLOOR: f64 = 0.01;

/// Radical inverse of `i` in `base`.
pub fn halton<T: Real>(i: u64, base: u32) -> T {
    assert!(base >= 2, "Halton base must be at least 2");
    let b = T::from_u32(base).unwrap();
    let mut f = T::one() / b;
    let mut r = T::zero();
    let mut n = i;
    while n > 0 {
        let digit = T::from_u64(n % base as u64).unwrap();
        r += f * digit;
        n /= base as u64;
        f /= b;
    }
    r
}

/// The fixed, quasi-uniform ray directions.
///
/// Ray `i` (0-based) uses Halton index `i + 1`: elevation
/// `φ = acos(1 − 2·H(i+1, 2))`, azimuth `θ = 2π·H(i+1, 3)`, mapped through
/// standard spherical coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet<T> {
    pub directions: Vec<Vec3<T>>,
    pub elevations: Vec<T>,
    pub azimuths: Vec<T>,
}

impl<T: Real> DirectionSet<T> {
    pub fn halton(n: usize) -> Self {
        assert!(n >= 1, "need at least one ray");
        let mut directions = Vec::with_capacity(n);
        let mut elevations = Vec::with_capacity(n);
        let mut azimuths = Vec::with_capacity(n);
        let two = T::lit(2.0);
        for i in 1..=n as u64 {
            let phi = (T::one() - two * halton::<T>(i, 2)).acos();
            let theta = two * T::PI() * halton::<T>(i, 3);
            directions.push(Vec3::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()));
            elevations.push(phi);
            azimuths.push(theta);
        }
        Self {
            directions,
            elevations,
            azimuths,
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn cast<U: Real>(&self) -> DirectionSet<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        DirectionSet {
            directions: self.directions.iter().map(Vec3::cast).collect(),
            elevations: conv(&self.elevations),
            azimuths: conv(&self.azimuths),
        }
    }
}

/// Shorthand for [`DirectionSet::halton`].
pub fn halton_directions<T: Real>(n: usize) -> DirectionSet<T> {
    DirectionSet::halton(n)
}

/// Distances measured along every direction of a [`DirectionSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct RayBundle {
    pub origin: Point,
    pub set: Arc<DirectionSet<f64>>,
    /// One distance per direction, in `(0, max_range]`; 0 marks a ray cast
    /// from inside an obstacle.
    pub distances: Vec<f64>,
    pub max_range: f64,
    pub step: usize,
}

impl RayBundle {
    pub fn min_distance(&self) -> f64 {
        self.distances.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True if some ray started inside an obstacle.
    pub fn in_collision(&self) -> bool {
        self.distances.contains(&0.0)
    }

    /// Subtracts a constant robot radius from every ray (floored at zero).
    pub fn offset(&mut self, radius: f64) {
        if radius != 0.0 {
            self.distances.iter_mut().for_each(|d| *d = (*d - radius).max(0.0));
        }
    }
}

/// Small fixed-capacity record of primitives already tested by one ray.
struct Tested {
    ids: [u32; 48],
    len: usize,
}

impl Tested {
    fn new() -> Self {
        Self { ids: [0; 48], len: 0 }
    }

    /// Records `id`; returns false if it was seen before.
    fn insert(&mut self, id: u32) -> bool {
        if self.ids[..self.len].contains(&id) {
            return false;
        }
        if self.len < self.ids.len() {
            self.ids[self.len] = id;
            self.len += 1;
        }
        true
    }
}

/// Voxel-walk state for a ray through a uniform grid.
struct GridWalk {
    cell: [i64; 3],
    step: [i64; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    dims: [usize; 3],
}

impl GridWalk {
    /// Starts a walk at parameter `t0` (the ray's entry into the grid).
    fn new(origin: &Point, cell_size: f64, dims: [usize; 3], o: &Point, d: &Point, t0: f64) -> Self {
        let p = *o + *d * t0;
        let mut cell = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            let rel = (p[k] - origin[k]) / cell_size;
            cell[k] = (rel.floor() as i64).clamp(0, dims[k] as i64 - 1);
            if d[k] > 0.0 {
                step[k] = 1;
                let next = origin[k] + (cell[k] + 1) as f64 * cell_size;
                t_max[k] = (next - o[k]) / d[k];
                t_delta[k] = cell_size / d[k];
            } else if d[k] < 0.0 {
                step[k] = -1;
                let next = origin[k] + cell[k] as f64 * cell_size;
                t_max[k] = (next - o[k]) / d[k];
                t_delta[k] = -cell_size / d[k];
            }
        }
        Self {
            cell,
            step,
            t_max,
            t_delta,
            dims,
        }
    }

    /// Parameter at which the ray leaves the current cell.
    fn exit(&self) -> f64 {
        self.t_max[0].min(self.t_max[1]).min(self.t_max[2])
    }

    /// Moves to the next cell; false once outside the grid.
    fn advance(&mut self) -> bool {
        let k = if self.t_max[0] <= self.t_max[1] && self.t_max[0] <= self.t_max[2] {
            0
        } else if self.t_max[1] <= self.t_max[2] {
            1
        } else {
            2
        };
        self.cell[k] += self.step[k];
        self.t_max[k] += self.t_delta[k];
        self.cell[k] >= 0 && self.cell[k] < self.dims[k] as i64
    }

    fn index(&self) -> [usize; 3] {
        self.cell.map(|c| c as usize)
    }
}

fn grid_box(origin: &Point, cell: f64, dims: [usize; 3]) -> Aabb {
    Aabb::new(
        *origin,
        *origin + Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * cell,
    )
}

/// First obstacle hit along `o + t d` with `t < max_t`, ignoring the world
/// boundary. `Some(0)` if `o` is inside an obstacle.
pub fn obstacle_hit(world: &World, o: &Point, d: &Point, max_t: f64) -> Option<f64> {
    let mut best = f64::INFINITY;

    let b = &world.broad;
    if !world.primitives.is_empty() {
        if let Some(t0) = ray_box_entry(&grid_box(&b.origin, b.cell, b.dims), o, d) {
            let mut walk = GridWalk::new(&b.origin, b.cell, b.dims, o, d, t0);
            let mut tested = Tested::new();
            loop {
                let [i, j, k] = walk.index();
                for &id in b.cell_items(i, j, k) {
                    if tested.insert(id) {
                        if let Some(t) = world.primitives[id as usize].ray_entry(o, d) {
                            best = best.min(t);
                        }
                    }
                }
                let exit = walk.exit();
                if best <= exit || exit >= max_t || !walk.advance() {
                    break;
                }
            }
        }
    }

    if let Some(g) = &world.voxels {
        if let Some(t0) = ray_box_entry(&g.bounds(), o, d) {
            let mut walk = GridWalk::new(&g.origin, g.cell_size, g.dims, o, d, t0);
            let mut entry = t0;
            loop {
                if entry >= best.min(max_t) {
                    break;
                }
                let [i, j, k] = walk.index();
                if g.get(i, j, k) {
                    best = best.min(entry);
                    break;
                }
                entry = walk.exit();
                if !walk.advance() {
                    break;
                }
            }
        }
    }

    (best < max_t).then_some(best)
}

/// Distance from `o` along unit `d` to where it leaves `bounds`.
fn boundary_exit(bounds: &Aabb, o: &Point, d: &Point) -> f64 {
    let mut t = f64::INFINITY;
    for k in 0..3 {
        if d[k] > 0.0 {
            t = t.min((bounds.max[k] - o[k]) / d[k]);
        } else if d[k] < 0.0 {
            t = t.min((bounds.min[k] - o[k]) / d[k]);
        }
    }
    t.max(0.0)
}

/// Truncated distance to the nearest obstacle (or closed boundary) along `r`.
///
/// Returns 0 when `x` is itself occupied.
pub fn ray_distance(world: &World, x: &Point, r: &Point, max_range: f64) -> f64 {
    if world.occupancy(x) {
        return 0.0;
    }
    let mut t = max_range;
    if world.boundary_rays {
        t = t.min(boundary_exit(&world.bounds, x, r));
    }
    if let Some(hit) = obstacle_hit(world, x, r, t) {
        t = hit;
    }
    t
}

/// Casts every direction of `set` from `x`.
pub fn cast_bundle(world: &World, x: &Point, set: &Arc<DirectionSet<f64>>, max_range: f64) -> RayBundle {
    let distances = if world.occupancy(x) {
        vec![0.0; set.len()]
    } else {
        set.directions
            .iter()
            .map(|r| ray_distance(world, x, r, max_range))
            .collect()
    };
    RayBundle {
        origin: *x,
        set: Arc::clone(set),
        distances,
        max_range,
        step: 0,
    }
}

/// Multiplicative Gaussian noise `d · (1 + N(0, σ²))`, clamped to
/// `[NOISE_FLOOR, L]`. With `σ = 0` the bundle is returned untouched and no
/// random numbers are drawn.
pub fn apply_noise(bundle: &RayBundle, sigma: f64, rng: &mut Rng) -> RayBundle {
    assert!(sigma >= 0.0, "noise standard deviation must be non-negative");
    let mut out = bundle.clone();
    if sigma == 0.0 {
        return out;
    }
    let l = bundle.max_range;
    for d in out.distances.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *d = (*d * (1.0 + sigma * z)).clamp(NOISE_FLOOR, l);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Aabb;
    use crate::rng;
    use crate::worldgen::{fixtures, gen_plane_world, gen_sphere_box_world, GenConfig, Primitive, WorldKind};
    use proptest::prelude::*;

    /// Direct digit expansion, kept independent of `halton`.
    fn radical_inverse_oracle(i: u64, base: u64) -> f64 {
        let mut digits = Vec::new();
        let mut n = i;
        while n > 0 {
            digits.push(n % base);
            n /= base;
        }
        digits
            .iter()
            .enumerate()
            .map(|(p, &dg)| dg as f64 / (base as f64).powi(p as i32 + 1))
            .sum()
    }

    #[test]
    fn halton_hand_values() {
        assert_eq!(halton::<f64>(1, 2), 0.5);
        assert_eq!(halton::<f64>(2, 2), 0.25);
        assert_eq!(halton::<f64>(3, 2), 0.75);
        assert!((halton::<f64>(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((halton::<f64>(2, 3) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn first_direction_angles() {
        let s = DirectionSet::<f64>::halton(4);
        assert!((s.elevations[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((s.azimuths[0] - 2.0 * std::f64::consts::PI / 3.0).abs() < 1e-15);
    }

    #[test]
    fn directions_are_unit_and_balanced() {
        let s = DirectionSet::<f64>::halton(1024);
        assert!(s.directions.iter().all(|d| (d.norm() - 1.0).abs() < 1e-9));
        let mean: Vec3<f64> = s.directions.iter().copied().sum::<Vec3<f64>>() * (1.0 / 1024.0);
        assert!(mean.norm() < 0.05, "mean {mean:?}");
        assert_eq!(s, DirectionSet::halton(1024));
    }

    #[test]
    fn f32_directions_track_f64() {
        let a = DirectionSet::<f64>::halton(256);
        let b = DirectionSet::<f32>::halton(256);
        for (x, y) in a.directions.iter().zip(&b.directions) {
            assert!((*x - y.cast::<f64>()).norm() < 1e-5);
        }
    }

    fn sphere_world(edge: f64) -> World {
        World::new(
            WorldKind::SphereBox,
            0,
            Aabb::new(Vec3::splat(-edge), Vec3::splat(edge)),
            vec![Primitive::Sphere {
                center: Vec3::zeros(),
                radius: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn analytic_sphere_distance_and_truncation() {
        let w = sphere_world(5.0);
        let x = Vec3::new(-3.0, 0.0, 0.0);
        let r = Vec3::new(1.0, 0.0, 0.0);
        assert!((ray_distance(&w, &x, &r, 10.0) - 2.0).abs() < 1e-12);
        assert_eq!(ray_distance(&w, &x, &r, 1.5), 1.5);
        assert_eq!(ray_distance(&w, &Vec3::zeros(), &r, 10.0), 0.0);
    }

    #[test]
    fn open_empty_world_reports_max_range() {
        let mut w = World::empty(10.0);
        w.boundary_rays = false;
        let set = Arc::new(DirectionSet::halton(64));
        let b = cast_bundle(&w, &Vec3::splat(5.0), &set, 3.0);
        assert!(b.distances.iter().all(|&d| d == 3.0));
        // Closed: boundary caps distance.
        w.boundary_rays = true;
        let d = ray_distance(&w, &Vec3::new(9.0, 5.0, 5.0), &Vec3::new(1.0, 0.0, 0.0), 5.0);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hollow_shell_is_uniform() {
        let w = fixtures::hollow_shell(2.0, 0.1);
        let set = Arc::new(DirectionSet::halton(256));
        let b = cast_bundle(&w, &Vec3::splat(5.0), &set, 10.0);
        for d in &b.distances {
            assert!((d - 2.0).abs() <= 0.1 * 3f64.sqrt(), "distance {d}");
        }
    }

    #[test]
    fn single_wall_normal_and_edge_rays() {
        let w = gen_plane_world(3, 1, &GenConfig::default());
        let Primitive::Wall { center, axis, extent, thickness } = w.primitives[0].clone() else {
            unreachable!()
        };
        let mut wo = w.clone();
        wo.boundary_rays = false;
        let n = Vec3::<f64>::unit(axis);
        let from = center - n * 1.0;
        let d = ray_distance(&wo, &from, &n, 50.0);
        assert!((d - (1.0 - thickness / 2.0)).abs() < 1e-12);
        // Parallel ray offset beyond the wall's in-plane edge misses it.
        let u = Vec3::<f64>::unit((axis + 1) % 3);
        let past = from + u * (extent[0] / 2.0 + 0.05);
        assert_eq!(ray_distance(&wo, &past, &n, 50.0), 50.0);
    }

    #[test]
    fn noise_zero_is_identity_and_seeded_noise_reproducible() {
        let w = gen_sphere_box_world(1, 40, &GenConfig::default());
        let set = Arc::new(DirectionSet::halton(128));
        let x = crate::worldgen::sample_free_point(&w, &mut rng::rng_from_seed(2), 0.3, 10_000).unwrap();
        let b = cast_bundle(&w, &x, &set, 5.0);
        assert_eq!(apply_noise(&b, 0.0, &mut rng::rng_from_seed(0)), b);
        let n1 = apply_noise(&b, 0.1, &mut rng::rng_from_seed(9));
        let n2 = apply_noise(&b, 0.1, &mut rng::rng_from_seed(9));
        assert_eq!(n1, n2);
        assert_ne!(n1, b);
        let wild = apply_noise(&b, 2.0, &mut rng::rng_from_seed(3));
        assert!(wild.distances.iter().all(|&d| d > 0.0 && d <= 5.0));
    }

    #[test]
    fn noise_moment_matches_sigma() {
        let set = Arc::new(DirectionSet::halton(1));
        let b = RayBundle {
            origin: Vec3::zeros(),
            set,
            distances: vec![5.0],
            max_range: 50.0,
            step: 0,
        };
        let mut rng = rng::rng_from_seed(77);
        let n = 100_000;
        let rel: Vec<f64> = (0..n).map(|_| apply_noise(&b, 0.3, &mut rng).distances[0] / 5.0 - 1.0).collect();
        let mean = rel.iter().sum::<f64>() / n as f64;
        let sd = (rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 0.3).abs() <= 0.003, "sample sd {sd}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn halton_matches_digit_expansion(i in 1u64..10_000) {
            prop_assert!((halton::<f64>(i, 2) - radical_inverse_oracle(i, 2)).abs() < 1e-14);
            prop_assert!((halton::<f64>(i, 3) - radical_inverse_oracle(i, 3)).abs() < 1e-14);
        }

        /// Grid traversal agrees with testing every primitive.
        #[test]
        fn broad_phase_matches_brute_force(seed in 0u64..300, n in 1usize..120, ray in 0usize..1024,
                                           plane in any::<bool>()) {
            let cfg = GenConfig::default();
            let w = if plane { gen_plane_world(seed, n / 2, &cfg) } else { gen_sphere_box_world(seed, n, &cfg) };
            let mut rng = rng::rng_from_seed(seed);
            if let Some(x) = crate::worldgen::sample_free_point(&w, &mut rng, 0.0, 1000) {
                let set = DirectionSet::<f64>::halton(1024);
                let d = set.directions[ray];
                let brute = w.primitives.iter().filter_map(|p| p.ray_entry(&x, &d)).fold(f64::INFINITY, f64::min);
                let brute = brute.min(boundary_exit(&w.bounds, &x, &d)).min(5.0);
                prop_assert!((ray_distance(&w, &x, &d, 5.0) - brute).abs() < 1e-9);
            }
        }

        /// Moving forward by `t` along an unobstructed prefix shortens the ray by `t`.
        #[test]
        fn ray_triangle_property(seed in 0u64..200, ray in 0usize..256, frac in 0.0f64..1.0) {
            let w = gen_sphere_box_world(seed, 60, &GenConfig::default());
            let mut rng = rng::rng_from_seed(seed + 1);
            if let Some(x) = crate::worldgen::sample_free_point(&w, &mut rng, 0.0, 1000) {
                let r = DirectionSet::<f64>::halton(256).directions[ray];
                let d0 = ray_distance(&w, &x, &r, 5.0);
                let t = frac * d0 * 0.99;
                let d1 = ray_distance(&w, &(x + r * t), &r, 5.0);
                prop_assert!(d0 <= d1 + t + 1e-9);
            }
        }
    }
}
