use std::num::NonZeroUsize;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use crate::mesh::{SurfaceSample, Vec3};

pub const CURVATURE_NEIGHBORS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    pub k1: f64,
    pub k2: f64,
    /// Set when the neighbourhood could not support a quadric fit.
    pub degenerate: bool,
}

/// Any unit vector orthogonal to `n`.
pub(crate) fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Fits `z = a x² + b xy + c y²` in the tangent frame of `center` and returns
/// the principal curvatures, positive for surfaces bending away from the
/// normal (convex with outward normals).
pub fn fit_quadric(center: &SurfaceSample, neighbors: impl Iterator<Item = Vec3>) -> Curvature {
    let n = center.normal;
    let (t1, t2) = tangent_basis(&n);
    let mut ata = Matrix3::<f64>::zeros();
    let mut atz = Vector3::<f64>::zeros();
    let mut count = 0;
    let mut scale = 0.0f64;
    for q in neighbors {
        let d = q - center.position.coords;
        let (x, y, z) = (d.dot(&t1), d.dot(&t2), d.dot(&n));
        let row = Vector3::new(x * x, x * y, y * y);
        ata += row * row.transpose();
        atz += row * z;
        scale = scale.max(x * x + y * y);
        count += 1;
    }
    let fail = Curvature {
        k1: 0.0,
        k2: 0.0,
        degenerate: true,
    };
    if count < 3 || scale <= 0.0 {
        return fail;
    }
    // condition check on the scale-free system
    let s2 = scale * scale;
    let normalized = ata / s2;
    let eig = normalized.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo / hi < 1e-10 {
        return fail;
    }
    let Some(coef) = ata.cholesky().map(|c| c.solve(&atz)) else { return fail };
    let shape = Matrix2::new(2.0 * coef[0], coef[1], coef[1], 2.0 * coef[2]);
    let ev = shape.symmetric_eigenvalues();
    let (e0, e1) = (-ev[0], -ev[1]);
    Curvature {
        k1: e0.max(e1),
        k2: e0.min(e1),
        degenerate: false,
    }
}

/// Principal curvatures of every sample from its `CURVATURE_NEIGHBORS`
/// nearest samples.
pub fn compute_curvatures(samples: &[SurfaceSample]) -> Vec<Curvature> {
    if samples.is_empty() {
        return Vec::new();
    }
    let pts: Vec<[f64; 3]> = samples.iter().map(|s| s.position.coords.into()).collect();
    let tree = ImmutableKdTree::new_from_slice(&pts).expect("nonempty");
    let k = NonZeroUsize::new(CURVATURE_NEIGHBORS.min(samples.len())).expect("k > 0");
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let nn = tree
                .query(&pts[i])
                .nearest_n::<SquaredEuclidean<f64>>(k)
                .execute();
            fit_quadric(s, nn.iter().map(|r| Vec3::from(pts[r.item as usize])))
        })
        .collect()
}
