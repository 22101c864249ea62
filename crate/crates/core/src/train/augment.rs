//! Training-set augmentation: anisotropic scaling and subtree rotations with
//! a skinned mesh, rejecting variants whose surface folds into itself.

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::error::Result;
use crate::mesh::{detect_bilateral_symmetry, sample_surface, Bvh, Point, TriangleMesh, Vec3};
use crate::shapes::point_segment_distance;
use crate::skeleton::{RiggedCharacter, Skeleton};

pub const MAX_AUGMENTATIONS: usize = 5;
pub const SCALE_RANGE: (f64, f64) = (0.5, 1.5);
pub const ROTATION_RANGE_DEG: (f64, f64) = (30.0, 50.0);
/// Largest tolerated fraction of buried surface samples.
pub const PENETRATION_LIMIT: f64 = 0.02;
pub const PENETRATION_SAMPLES: usize = 2000;
pub const MAX_RETRIES: usize = 10;
/// Falloff exponent of the skinning weights.
const SKIN_POWER: i32 = 4;

/// Per-axis scale of mesh and joints (not re-normalized).
pub fn scale_character(c: &RiggedCharacter, s: [f64; 3]) -> RiggedCharacter {
    let f = |p: &Point| Point::new(p.x * s[0], p.y * s[1], p.z * s[2]);
    let mut mesh = c.mesh.clone();
    mesh.vertices.iter_mut().for_each(|p| *p = f(p));
    mesh.recompute_normals();
    let mut skeleton = c.skeleton.clone();
    skeleton.joints.iter_mut().for_each(|j| j.position = f(&j.position));
    RiggedCharacter { mesh, skeleton }
}

/// Rotates the subtree below `joint` rigidly about that joint and skins the
/// mesh between the moving and the static bones (not re-normalized).
pub fn rotate_subtree(c: &RiggedCharacter, joint: usize, rot: &Rotation3<f64>) -> RiggedCharacter {
    let sk = &c.skeleton;
    let pivot = sk.joints[joint].position;
    let moving = {
        let mut m = vec![false; sk.len()];
        for j in sk.subtree(joint) {
            m[j] = true;
        }
        m
    };
    let segs = sk.segments();
    // a bone moves when its parent end is in the subtree
    let bone_moves: Vec<bool> = sk.edges.iter().map(|&(a, _)| moving[a]).collect();
    let apply = |p: &Point| pivot + rot * (p - pivot);
    let mut mesh = c.mesh.clone();
    for v in &mut mesh.vertices {
        let (mut din, mut dout) = (f64::INFINITY, f64::INFINITY);
        for ((a, b), &mv) in segs.iter().zip(&bone_moves) {
            let d = point_segment_distance(v, a, b);
            if mv {
                din = din.min(d);
            } else {
                dout = dout.min(d);
            }
        }
        let w = skin_weight(din, dout);
        if w > 0.0 {
            *v = Point::from(v.coords * (1.0 - w) + apply(v).coords * w);
        }
    }
    mesh.recompute_normals();
    let mut skeleton = sk.clone();
    for (j, m) in skeleton.joints.iter_mut().zip(&moving) {
        if *m {
            j.position = apply(&j.position);
        }
    }
    RiggedCharacter { mesh, skeleton }
}

/// Share of the moving part given distances to moving and static bones.
fn skin_weight(din: f64, dout: f64) -> f64 {
    match (din.is_finite(), dout.is_finite()) {
        (false, _) => 0.0,
        (true, false) => 1.0,
        _ if din == 0.0 => 1.0,
        _ => {
            let a = din.powi(-SKIN_POWER);
            let b = dout.powi(-SKIN_POWER);
            a / (a + b)
        }
    }
}

/// Mirror partner of `j` about x = 0, if a distinct joint sits there.
pub fn mirror_partner(sk: &Skeleton, j: usize, tol: f64) -> Option<usize> {
    let p = sk.joints[j].position;
    let m = Point::new(-p.x, p.y, p.z);
    if (m - p).norm() <= tol {
        return None;
    }
    sk.joints
        .iter()
        .enumerate()
        .filter(|(k, q)| *k != j && (q.position - m).norm() <= tol)
        .min_by(|a, b| (a.1.position - m).norm().total_cmp(&(b.1.position - m).norm()))
        .map(|(k, _)| k)
}

/// Fraction of surface samples that sit inside the mesh once nudged outward,
/// i.e. surface buried under another part.
pub fn penetration_fraction(mesh: &TriangleMesh, samples: usize, seed: u64) -> Result<f64> {
    let s = sample_surface(mesh, samples, seed)?;
    let bvh = Bvh::build(mesh);
    let nudge = 1e-3 * mesh.longest_extent();
    let buried = s.iter().filter(|x| bvh.is_inside(&(x.position + x.normal * nudge))).count();
    Ok(buried as f64 / s.len() as f64)
}

fn renormalize(c: RiggedCharacter) -> Result<RiggedCharacter> {
    Ok(RiggedCharacter::normalized(&c.mesh, &c.skeleton)?.0)
}

/// Up to `count` (at most five) random variants. Fewer come back when
/// rejections use up the retries.
pub fn augment(c: &RiggedCharacter, seed: u64, count: usize) -> Result<Vec<RiggedCharacter>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symmetric = detect_bilateral_symmetry(&c.mesh).is_some();
    let tol = 1e-3 * c.mesh.longest_extent();
    let movable: Vec<usize> = (0..c.skeleton.len()).filter(|&j| j != c.skeleton.root).collect();
    let mut out = Vec::new();
    for _ in 0..count.min(MAX_AUGMENTATIONS) {
        for _attempt in 0..MAX_RETRIES {
            let variant = if movable.is_empty() || rng.gen_bool(0.5) {
                let s = [0; 3].map(|_| rng.gen_range(SCALE_RANGE.0..SCALE_RANGE.1));
                scale_character(c, s)
            } else {
                let j = movable[rng.gen_range(0..movable.len())];
                let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                let axis = Unit::new_normalize(Vec3::from(axis));
                let angle = rng.gen_range(ROTATION_RANGE_DEG.0..ROTATION_RANGE_DEG.1).to_radians();
                let rot = Rotation3::from_axis_angle(&axis, angle);
                let mut v = rotate_subtree(c, j, &rot);
                if symmetric {
                    if let Some(k) = mirror_partner(&c.skeleton, j, tol) {
                        // mirrored rotation: reflect the axis, reverse the sense
                        let maxis = Unit::new_normalize(Vec3::new(axis.x, -axis.y, -axis.z));
                        v = rotate_subtree(&v, k, &Rotation3::from_axis_angle(&maxis, angle));
                    }
                }
                v
            };
            let check_seed = rng.gen();
            if penetration_fraction(&variant.mesh, PENETRATION_SAMPLES, check_seed)? <= PENETRATION_LIMIT {
                out.push(renormalize(variant)?);
                break;
            }
        }
    }
    Ok(out)
}
