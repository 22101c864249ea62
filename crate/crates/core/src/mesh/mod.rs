//! Triangle soups: loading, canonical normalization, surface sampling, ray
//! queries and bilateral symmetry detection.

mod bvh;
mod obj;
mod sample;
mod symmetry;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VolrigError};

pub use bvh::{Bvh, RayHit};
pub use obj::{load_mesh, parse_obj, save_obj};
pub use sample::{sample_surface, SurfaceSample};
pub use symmetry::{detect_bilateral_symmetry, SymmetryPlane, SYMMETRY_SAMPLES, SYMMETRY_THRESHOLD};

pub type Point = Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Indexed triangle soup. Vertices are never welded.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
}

/// Uniform scale followed by a translation: `p' = scale * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::new(
            self.scale * p.x + self.translation[0],
            self.scale * p.y + self.translation[1],
            self.scale * p.z + self.translation[2],
        )
    }

    pub fn invert(&self, p: &Point) -> Point {
        Point::new(
            (p.x - self.translation[0]) / self.scale,
            (p.y - self.translation[1]) / self.scale,
            (p.z - self.translation[2]) / self.scale,
        )
    }

    pub fn inverse(&self) -> Similarity {
        let s = 1.0 / self.scale;
        Similarity {
            scale: s,
            translation: self.translation.map(|t| -t * s),
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Similarity) -> Similarity {
        let t = self.apply(&Point::from(first.translation));
        Similarity {
            scale: self.scale * first.scale,
            translation: [t.x, t.y, t.z],
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Point) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn longest_extent(&self) -> f64 {
        self.extent().max()
    }
}

impl TriangleMesh {
    /// Builds a mesh, validating indices and finiteness and computing
    /// area-weighted vertex normals.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            normals: Vec::new(),
        };
        mesh.validate()?;
        mesh.recompute_normals();
        Ok(mesh)
    }

    pub fn with_normals(vertices: Vec<Point>, triangles: Vec<[u32; 3]>, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != vertices.len() {
            return Err(VolrigError::Invalid(format!(
                "{} normals for {} vertices",
                normals.len(),
                vertices.len()
            )));
        }
        let mesh = TriangleMesh {
            vertices,
            triangles,
            normals,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(VolrigError::EmptyMesh);
        }
        let n = self.vertices.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(VolrigError::Invalid(format!(
                "triangle {t:?} references a vertex beyond {n}"
            )));
        }
        if self.vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(VolrigError::Invalid("non-finite vertex coordinate".into()));
        }
        Ok(())
    }

    /// Area-weighted average of incident face normals.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            // unnormalized cross product is already area-weighted
            let n = self.face_cross(t);
            for &i in t {
                acc[i as usize] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::y()
                }
            })
            .collect();
    }

    pub fn triangle(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    fn face_cross(&self, t: &[u32; 3]) -> Vec3 {
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, t: usize) -> Vec3 {
        let n = self.face_cross(&self.triangles[t]);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.face_cross(&self.triangles[t]).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for t in &self.triangles {
            for &i in t {
                b.grow(&self.vertices[i as usize]);
            }
        }
        b
    }

    pub fn longest_extent(&self) -> f64 {
        self.bounds().longest_extent()
    }

    /// Area-weighted surface centroid.
    pub fn surface_centroid(&self) -> Point {
        let mut acc = Vec3::zeros();
        let mut area = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let w = self.triangle_area(t);
            acc += w * (a.coords + b.coords + c.coords) / 3.0;
            area += w;
        }
        if area > 0.0 {
            Point::from(acc / area)
        } else {
            self.bounds().center()
        }
    }

    pub fn transformed(&self, xf: &Similarity) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| xf.apply(v)).collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.clone(),
        }
    }
}

/// Scales the mesh so its longest axis-aligned extent is 1, grounds it on the
/// x-z plane and moves the x/z projection of its surface centroid to the origin.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<(TriangleMesh, Similarity)> {
    if mesh.triangles.is_empty() {
        return Err(VolrigError::EmptyMesh);
    }
    let longest = mesh.longest_extent();
    if !(longest > 0.0) {
        return Err(VolrigError::DegenerateMesh("zero extent on all axes".into()));
    }
    let scale = 1.0 / longest;
    let scaled = mesh.transformed(&Similarity {
        scale,
        translation: [0.0; 3],
    });
    let c = scaled.surface_centroid();
    let min_y = scaled.bounds().min.y;
    let shift = Similarity {
        scale: 1.0,
        translation: [-c.x, -min_y, -c.z],
    };
    let out = scaled.transformed(&shift);
    let xf = shift.compose(&Similarity {
        scale,
        translation: [0.0; 3],
    });
    Ok((out, xf))
}

/// Mean length over all triangle edges, three per triangle.
pub fn average_edge_length(mesh: &TriangleMesh) -> f64 {
    if mesh.triangles.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(t);
        sum += (b - a).norm() + (c - b).norm() + (a - c).norm();
    }
    sum / (3 * mesh.triangles.len()) as f64
}
