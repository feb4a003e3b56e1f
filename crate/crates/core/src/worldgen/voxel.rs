//! Dense bit-packed occupancy grids and their binary file format.
//!
//! Layout (little-endian):
//!
//! | bytes | field                                             |
//! |-------|---------------------------------------------------|
//! | 0..4  | magic (`RNVX` for occupancy, `RNGF` for fields)   |
//! | 4..8  | format version, `u32`                             |
//! | 8..12 | total header length in bytes (44), `u32`          |
//! | 12..16| flags, `u32`, currently 0                         |
//! | 16..28| dims `nx, ny, nz`, 3 × `u32`                      |
//! | 28..32| cell size, `f32`                                  |
//! | 32..44| origin (grid corner), 3 × `f32`                   |
//!
//! The payload follows in row-major order (`z` fastest). Occupancy is packed
//! eight cells per byte, least significant bit first.

use crate::math::{Aabb, Vec3};

use super::{Point, WorldError};

pub const VOXEL_MAGIC: &[u8; 4] = b"RNVX";
pub const GRID_FORMAT_VERSION: u32 = 1;
pub const GRID_HEADER_LEN: usize = 44;

/// Geometry shared by occupancy grids and distance fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridHeader {
    pub dims: [usize; 3],
    pub cell_size: f64,
    pub origin: Point,
}

impl GridHeader {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn encode(&self, magic: &[u8; 4]) -> Vec<u8> {
        let mut out = Vec::with_capacity(GRID_HEADER_LEN);
        out.extend_from_slice(magic);
        out.extend_from_slice(&GRID_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(GRID_HEADER_LEN as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.cell_size as f32).to_le_bytes());
        for k in 0..3 {
            out.extend_from_slice(&(self.origin[k] as f32).to_le_bytes());
        }
        out
    }

    /// Parses the header and returns it with the payload slice.
    pub fn decode<'a>(bytes: &'a [u8], magic: &'static [u8; 4]) -> Result<(Self, &'a [u8]), WorldError> {
        if bytes.len() < GRID_HEADER_LEN {
            return Err(WorldError::Truncated {
                needed: GRID_HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[0..4] != magic {
            return Err(WorldError::BadMagic {
                expected: std::str::from_utf8(magic).unwrap_or("?"),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != GRID_FORMAT_VERSION {
            return Err(WorldError::VersionMismatch {
                found: version,
                expected: GRID_FORMAT_VERSION,
            });
        }
        let header_len = u32_at(8) as usize;
        if header_len != GRID_HEADER_LEN {
            return Err(WorldError::Invalid(format!("unexpected header length {header_len}")));
        }
        let dims = [u32_at(16) as usize, u32_at(20) as usize, u32_at(24) as usize];
        let cell_size = f32_at(28) as f64;
        let origin = Vec3::new(f32_at(32) as f64, f32_at(36) as f64, f32_at(40) as f64);
        if dims.contains(&0) || !(cell_size > 0.0) || !origin.is_finite() {
            return Err(WorldError::Invalid("grid dims and cell size must be positive".into()));
        }
        Ok((
            Self {
                dims,
                cell_size,
                origin,
            },
            &bytes[GRID_HEADER_LEN..],
        ))
    }
}

/// Dense occupancy grid. Cell `(i, j, k)` spans
/// `origin + [i, i+1) × cell_size` etc.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub cell_size: f64,
    pub origin: Point,
    bits: Vec<u64>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], cell_size: f64, origin: Point) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            cell_size,
            origin,
            bits: vec![0; n.div_ceil(64)],
        }
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            dims: self.dims,
            cell_size: self.cell_size,
            origin: self.origin,
        }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get_linear(&self, idx: usize) -> bool {
        self.bits[idx >> 6] >> (idx & 63) & 1 == 1
    }

    #[inline]
    pub fn set_linear(&mut self, idx: usize, v: bool) {
        let mask = 1u64 << (idx & 63);
        if v {
            self.bits[idx >> 6] |= mask;
        } else {
            self.bits[idx >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.get_linear(self.index(i, j, k))
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.index(i, j, k);
        self.set_linear(idx, v)
    }

    pub fn count_occupied(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn bounds(&self) -> Aabb {
        let ext = Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.cell_size;
        Aabb::new(self.origin, self.origin + ext)
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Point {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.cell_size
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: &Point) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin[k]) / self.cell_size).floor();
            if f < 0.0 || f >= self.dims[k] as f64 {
                return None;
            }
            out[k] = f as usize;
        }
        Some(out)
    }

    /// Occupancy at `p`; points outside the grid read as free.
    pub fn occupied_at(&self, p: &Point) -> bool {
        self.cell_of(p).is_some_and(|[i, j, k]| self.get(i, j, k))
    }

    /// Distance from `p` to the nearest occupied cell box, searching no
    /// further than `cap` (returns `cap` when nothing closer exists).
    pub fn distance_to_occupied(&self, p: &Point, cap: f64) -> f64 {
        if self.occupied_at(p) {
            return 0.0;
        }
        let r = (cap / self.cell_size).ceil() as i64 + 1;
        let base = [0, 1, 2].map(|k| ((p[k] - self.origin[k]) / self.cell_size).floor() as i64);
        let mut best = cap;
        for di in -r..=r {
            for dj in -r..=r {
                for dk in -r..=r {
                    let c = [base[0] + di, base[1] + dj, base[2] + dk];
                    if (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a] as i64) {
                        continue;
                    }
                    if !self.get(c[0] as usize, c[1] as usize, c[2] as usize) {
                        continue;
                    }
                    let lo = self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.cell_size;
                    let hi = lo + Vec3::splat(self.cell_size);
                    let q = p.zip_map(&lo, f64::max).zip_map(&hi, f64::min);
                    best = best.min(p.distance(&q));
                }
            }
        }
        best
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header().encode(VOXEL_MAGIC);
        let n = self.len();
        let mut packed = vec![0u8; n.div_ceil(8)];
        for idx in 0..n {
            if self.get_linear(idx) {
                packed[idx >> 3] |= 1 << (idx & 7);
            }
        }
        out.extend_from_slice(&packed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WorldError> {
        let (h, payload) = GridHeader::decode(bytes, VOXEL_MAGIC)?;
        let n = h.len();
        let needed = n.div_ceil(8);
        if payload.len() != needed {
            return Err(WorldError::Truncated {
                needed: GRID_HEADER_LEN + needed,
                found: bytes.len(),
            });
        }
        let mut g = Self::new(h.dims, h.cell_size, h.origin);
        for idx in 0..n {
            if payload[idx >> 3] >> (idx & 7) & 1 == 1 {
                g.set_linear(idx, true);
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_exactly() {
        let mut g = VoxelGrid::new([5, 3, 7], 0.25, Vec3::new(-1.0, 0.5, 2.0));
        for idx in [0, 3, 17, 50, 104] {
            g.set_linear(idx, true);
        }
        let bytes = g.to_bytes();
        assert_eq!(&bytes[0..4], b"RNVX");
        assert_eq!(bytes.len(), GRID_HEADER_LEN + (105usize).div_ceil(8));
        let back = VoxelGrid::from_bytes(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn malformed_bytes_are_rejected() {
        let g = VoxelGrid::new([2, 2, 2], 1.0, Vec3::zeros());
        let bytes = g.to_bytes();
        assert!(matches!(VoxelGrid::from_bytes(&bytes[..10]), Err(WorldError::Truncated { .. })));
        assert!(matches!(
            VoxelGrid::from_bytes(&bytes[..bytes.len() - 1]),
            Err(WorldError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(VoxelGrid::from_bytes(&bad), Err(WorldError::BadMagic { .. })));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(VoxelGrid::from_bytes(&v2), Err(WorldError::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn distance_to_occupied_cell() {
        let mut g = VoxelGrid::new([10, 10, 10], 1.0, Vec3::zeros());
        g.set(5, 5, 5, true);
        let d = g.distance_to_occupied(&Vec3::new(2.5, 5.5, 5.5), 10.0);
        assert!((d - 2.5).abs() < 1e-12);
        assert_eq!(g.distance_to_occupied(&Vec3::new(5.5, 5.5, 5.5), 10.0), 0.0);
    }
}
