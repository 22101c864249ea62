use serde::{Deserialize, Serialize};

use crate::error::{Result, VolrigError};
use crate::mesh::{Aabb, Point, Vec3};

/// Cells of padding between the mesh bounding cube and the grid boundary.
pub const GRID_PADDING: usize = 2;

/// Regular `res³` grid. Cell `(i, j, k)` spans
/// `origin + [i, i+1) * cell_size` along x (likewise y, z); storage is
/// x-fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub res: usize,
    pub origin: [f64; 3],
    pub cell_size: f64,
}

impl VoxelGrid {
    pub fn new(res: usize, origin: [f64; 3], cell_size: f64) -> Result<Self> {
        if res < 8 {
            return Err(VolrigError::Config(format!("grid resolution {res} below 8")));
        }
        if !(cell_size > 0.0) {
            return Err(VolrigError::Config("cell size must be positive".into()));
        }
        Ok(VoxelGrid {
            res,
            origin,
            cell_size,
        })
    }

    /// Grid over the bounding cube of `bounds` (side = longest extent,
    /// centred on the box) with padding on every side.
    pub fn enclosing(bounds: &Aabb, res: usize) -> Result<Self> {
        if res < 8 {
            return Err(VolrigError::Config(format!("grid resolution {res} below 8")));
        }
        let side = bounds.longest_extent();
        if !(side > 0.0) {
            return Err(VolrigError::DegenerateMesh("zero extent".into()));
        }
        let cell = side / (res - 2 * GRID_PADDING) as f64;
        let c = bounds.center();
        let half = 0.5 * side + GRID_PADDING as f64 * cell;
        VoxelGrid::new(res, [c.x - half, c.y - half, c.z - half], cell)
    }

    pub fn len(&self) -> usize {
        self.res * self.res * self.res
    }

    pub fn is_empty(&self) -> bool {
        self.res == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res * (j + self.res * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let r = self.res;
        [idx % r, (idx / r) % r, idx / (r * r)]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point {
        let h = self.cell_size;
        Point::new(
            self.origin[0] + (i as f64 + 0.5) * h,
            self.origin[1] + (j as f64 + 0.5) * h,
            self.origin[2] + (k as f64 + 0.5) * h,
        )
    }

    pub fn center_of(&self, idx: usize) -> Point {
        let [i, j, k] = self.coords(idx);
        self.center(i, j, k)
    }

    /// Continuous grid coordinates in which cell centres are integers.
    pub fn to_grid(&self, p: &Point) -> Vec3 {
        let h = self.cell_size;
        Vec3::new(
            (p.x - self.origin[0]) / h - 0.5,
            (p.y - self.origin[1]) / h - 0.5,
            (p.z - self.origin[2]) / h - 0.5,
        )
    }

    pub fn from_grid(&self, g: &Vec3) -> Point {
        let h = self.cell_size;
        Point::new(
            self.origin[0] + (g.x + 0.5) * h,
            self.origin[1] + (g.y + 0.5) * h,
            self.origin[2] + (g.z + 0.5) * h,
        )
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: &Point) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.cell_size).floor();
            if f < 0.0 || f >= self.res as f64 {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.cell_of(p).is_some()
    }

    pub fn max_corner(&self) -> Point {
        let s = self.res as f64 * self.cell_size;
        Point::new(self.origin[0] + s, self.origin[1] + s, self.origin[2] + s)
    }

    /// 6-connected neighbours of a linear index.
    pub fn neighbors6(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let [i, j, k] = self.coords(idx);
        let r = self.res;
        let cand = [
            (i > 0).then(|| idx - 1),
            (i + 1 < r).then(|| idx + 1),
            (j > 0).then(|| idx - r),
            (j + 1 < r).then(|| idx + r),
            (k > 0).then(|| idx - r * r),
            (k + 1 < r).then(|| idx + r * r),
        ];
        cand.into_iter().flatten()
    }
}
