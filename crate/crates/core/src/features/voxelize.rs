use std::collections::VecDeque;

use super::grid::VoxelGrid;
use crate::error::{Result, VolrigError};
use crate::mesh::{Point, TriangleMesh, Vec3};

/// Surface-plus-interior voxels. The loss is averaged over these.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMask {
    pub grid: VoxelGrid,
    pub data: Vec<bool>,
}

impl OccupancyMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.grid.index(i, j, k)]
    }

    /// Centroid of the masked cell centres.
    pub fn centroid(&self) -> Option<Point> {
        let mut acc = Vec3::zeros();
        let mut n = 0usize;
        for (idx, &m) in self.data.iter().enumerate() {
            if m {
                acc += self.grid.center_of(idx).coords;
                n += 1;
            }
        }
        (n > 0).then(|| Point::from(acc / n as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellClass {
    Exterior,
    Surface,
    Interior,
}

#[derive(Debug, Clone)]
pub struct Voxelization {
    pub grid: VoxelGrid,
    pub classes: Vec<CellClass>,
}

impl Voxelization {
    pub fn is_surface(&self, idx: usize) -> bool {
        self.classes[idx] == CellClass::Surface
    }

    pub fn surface_count(&self) -> usize {
        self.classes.iter().filter(|&&c| c == CellClass::Surface).count()
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn mask(&self) -> OccupancyMask {
        OccupancyMask {
            grid: self.grid,
            data: self
                .classes
                .iter()
                .map(|&c| c != CellClass::Exterior)
                .collect(),
        }
    }
}

fn axis_test(axis: &Vec3, v: &[Vec3; 3], half: f64) -> bool {
    // separating if the triangle projection misses [-r, r]
    let p: Vec<f64> = v.iter().map(|x| x.dot(axis)).collect();
    let min = p[0].min(p[1]).min(p[2]);
    let max = p[0].max(p[1]).max(p[2]);
    let r = half * (axis.x.abs() + axis.y.abs() + axis.z.abs());
    !(min > r || max < -r)
}

/// Akenine-Möller separating-axis triangle/box overlap. Touching counts.
pub fn triangle_box_overlap(center: &Point, half: f64, tri: &[Point; 3]) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    for a in 0..3 {
        let min = v[0][a].min(v[1][a]).min(v[2][a]);
        let max = v[0][a].max(v[1][a]).max(v[2][a]);
        if min > half || max < -half {
            return false;
        }
    }
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let n = e[0].cross(&e[1]);
    if n.norm_squared() > 0.0 && !axis_test(&n, &v, half) {
        return false;
    }
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    for edge in &e {
        for b in &basis {
            let axis = b.cross(edge);
            if axis.norm_squared() > 0.0 && !axis_test(&axis, &v, half) {
                return false;
            }
        }
    }
    true
}

/// Surface voxels by conservative triangle/box overlap, exterior by 6-connected
/// flood fill from the grid boundary through non-surface cells; everything
/// else is interior.
pub fn voxelize(mesh: &TriangleMesh, grid: &VoxelGrid) -> Result<Voxelization> {
    let r = grid.res;
    let h = grid.cell_size;
    let half = 0.5 * h * (1.0 + 1e-9);
    let mut surface = vec![false; grid.len()];
    let lo_max = grid.max_corner();
    for t in 0..mesh.triangles.len() {
        let tri = mesh.triangle(t);
        let mut range = [(0usize, 0usize); 3];
        for a in 0..3 {
            let min = tri.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let max = tri.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            if min < grid.origin[a] - half || max > lo_max[a] + half {
                return Err(VolrigError::Invalid(format!("triangle {t} exceeds the grid")));
            }
            let lo = ((min - grid.origin[a]) / h - 1e-6).floor().max(0.0) as usize;
            let hi = (((max - grid.origin[a]) / h + 1e-6).floor() as usize).min(r - 1);
            range[a] = (lo, hi);
        }
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let idx = grid.index(i, j, k);
                    if !surface[idx] && triangle_box_overlap(&grid.center(i, j, k), half, &tri) {
                        surface[idx] = true;
                    }
                }
            }
        }
    }

    let mut classes: Vec<CellClass> = surface
        .iter()
        .map(|&s| if s { CellClass::Surface } else { CellClass::Interior })
        .collect();
    let mut queue = VecDeque::new();
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let boundary = i == 0 || j == 0 || k == 0 || i == r - 1 || j == r - 1 || k == r - 1;
                let idx = grid.index(i, j, k);
                if boundary && classes[idx] == CellClass::Interior {
                    classes[idx] = CellClass::Exterior;
                    queue.push_back(idx);
                }
            }
        }
    }
    while let Some(idx) = queue.pop_front() {
        for nb in grid.neighbors6(idx) {
            if classes[nb] == CellClass::Interior {
                classes[nb] = CellClass::Exterior;
                queue.push_back(nb);
            }
        }
    }
    Ok(Voxelization {
        grid: *grid,
        classes,
    })
}
