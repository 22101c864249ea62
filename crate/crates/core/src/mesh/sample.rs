use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Point, TriangleMesh, Vec3};
use crate::error::{Result, VolrigError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Point,
    pub normal: Vec3,
    pub triangle: usize,
}

/// Area-uniform surface samples. Per-triangle counts come from systematic
/// sampling of the cumulative area, so each triangle receives the floor or
/// ceiling of its expected share; positions inside a triangle are uniform.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    if n == 0 {
        return Err(VolrigError::Invalid("sample count must be at least 1".into()));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(VolrigError::DegenerateMesh("zero total surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.gen();
    let step = total / n as f64;

    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut k = 0usize;
    for (t, &a) in areas.iter().enumerate() {
        cum += a;
        // the last triangle absorbs rounding in the running sum
        let upper = if t + 1 == areas.len() { f64::INFINITY } else { cum };
        while k < n && (offset + k as f64) * step < upper {
            out.push(sample_in_triangle(mesh, t, &mut rng));
            k += 1;
        }
    }
    Ok(out)
}

fn sample_in_triangle(mesh: &TriangleMesh, t: usize, rng: &mut ChaCha8Rng) -> SurfaceSample {
    let r1: f64 = rng.gen();
    let r2: f64 = rng.gen();
    let s = r1.sqrt();
    let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
    let [ia, ib, ic] = mesh.triangles[t].map(|i| i as usize);
    let [a, b, c] = mesh.triangle(t);
    let position = Point::from(wa * a.coords + wb * b.coords + wc * c.coords);
    let face = mesh.face_normal(t);
    let smooth = wa * mesh.normals[ia] + wb * mesh.normals[ib] + wc * mesh.normals[ic];
    let normal = match smooth.try_normalize(1e-12) {
        Some(n) if n.dot(&face) > 0.0 => n,
        _ => face,
    };
    SurfaceSample {
        position,
        normal,
        triangle: t,
    }
}
