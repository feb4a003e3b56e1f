//! Hand-authored scenes used by tests, examples and the acceptance suite.

use crate::math::{Aabb, Vec3};

use super::{Point, Primitive, VoxelGrid, World, WorldKind};

/// Start and goal that go with [`u_trap`].
pub const U_TRAP_START: [f64; 3] = [4.8, 5.0, 5.0];
pub const U_TRAP_GOAL: [f64; 3] = [8.5, 5.0, 5.0];

fn wall(center: [f64; 3], axis: usize, thickness: f64, extent: [f64; 2]) -> Primitive {
    Primitive::Wall {
        center: center.into(),
        axis,
        thickness,
        extent,
    }
}

/// A 10 m cube with one 6 × 6 m wall (normal +x) at `x = 5`, spanning
/// `y, z ∈ [2, 8]`.
pub fn single_wall() -> World {
    World::new(
        WorldKind::Plane,
        0,
        Aabb::cube(10.0),
        vec![wall([5.0, 5.0, 5.0], 0, 0.1, [6.0, 6.0])],
    )
    .expect("valid fixture")
}

/// A cup open towards `-x`: back wall at `x = 6`, four side walls reaching
/// back to `x = 3.5`. [`U_TRAP_START`] sits inside the cup and
/// [`U_TRAP_GOAL`] directly behind its bottom.
pub fn u_trap() -> World {
    let t = 0.2;
    let depth = 2.6;
    let cx = 6.1 - depth / 2.0;
    World::new(
        WorldKind::Imported,
        0,
        Aabb::cube(10.0),
        vec![
            wall([6.0, 5.0, 5.0], 0, t, [4.4, 4.4]),
            wall([cx, 3.0, 5.0], 1, t, [4.4, depth]),
            wall([cx, 7.0, 5.0], 1, t, [4.4, depth]),
            wall([cx, 5.0, 3.0], 2, t, [depth, 4.4]),
            wall([cx, 5.0, 7.0], 2, t, [depth, 4.4]),
        ],
    )
    .expect("valid fixture")
}

/// Voxel rendition of a U-trap on a 20³ grid with 0.5 m cells: the cup's
/// back is the `i = 12` layer and its sides run over `i = 7..=12`.
pub fn u_trap_voxels() -> VoxelGrid {
    let mut g = VoxelGrid::new([20, 20, 20], 0.5, Vec3::zeros());
    for (i, j, k) in u_trap_voxel_cells() {
        g.set(i, j, k, true);
    }
    g
}

/// The authored occupied cells of [`u_trap_voxels`].
pub fn u_trap_voxel_cells() -> Vec<(usize, usize, usize)> {
    let mut cells = Vec::new();
    for i in 7..=12 {
        for j in 6..=13 {
            for k in 6..=13 {
                let back = i == 12;
                let side = j == 6 || j == 13 || k == 6 || k == 13;
                if back || side {
                    cells.push((i, j, k));
                }
            }
        }
    }
    cells
}

/// Voxel sphere shell of the given radius around the center of a 10 m cube.
pub fn hollow_shell(radius: f64, cell: f64) -> World {
    let n = (10.0 / cell).round() as usize;
    let mut g = VoxelGrid::new([n, n, n], cell, Vec3::zeros());
    let c: Point = Vec3::splat(5.0);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let r = g.cell_center(i, j, k).distance(&c);
                if r >= radius && r < radius + 2.0 * cell {
                    g.set(i, j, k, true);
                }
            }
        }
    }
    World::from_voxels(g).expect("valid fixture")
}

/// Two parallel walls (normal y) forming a corridor along x, symmetric about
/// `y = 5` with the given half width.
pub fn corridor(half_width: f64) -> World {
    World::new(
        WorldKind::Plane,
        0,
        Aabb::cube(10.0),
        vec![
            wall([5.0, 5.0 - half_width, 5.0], 1, 0.1, [8.0, 8.0]),
            wall([5.0, 5.0 + half_width, 5.0], 1, 0.1, [8.0, 8.0]),
        ],
    )
    .expect("valid fixture")
}
