//! Voxels crossed by a segment between two cell centres, and the bone cost
//! accumulated along them.

use crate::features::OccupancyMask;

/// Cost of an unmasked voxel on a candidate bone.
pub const EXTERIOR_COST: f64 = 1e5;
pub const COST_CLAMP: f64 = 1e-7;

/// Grid walk from the centre of `a` to the centre of `b`. Both endpoints are
/// included once. When the segment passes exactly through an edge or corner,
/// axes are stepped one at a time in x, y, z order. Endpoints are put in
/// lexicographic order first, so `(a, b)` and `(b, a)` visit the same set.
pub fn traverse(a: [usize; 3], b: [usize; 3]) -> Vec<[usize; 3]> {
    let (a, b) = if b < a { (b, a) } else { (a, b) };
    let mut cur = a;
    let mut out = vec![a];
    if a == b {
        return out;
    }
    let d: [f64; 3] = [0, 1, 2].map(|i| b[i] as f64 - a[i] as f64);
    let step: [i64; 3] = d.map(|v| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 });
    // parametric distance to the first boundary (half a cell away) and per cell
    let delta: [f64; 3] = d.map(|v| if v != 0.0 { 1.0 / v.abs() } else { f64::INFINITY });
    let mut t_max: [f64; 3] = delta.map(|dl| 0.5 * dl);
    let total: usize = (0..3).map(|i| a[i].abs_diff(b[i])).sum();
    for _ in 0..total {
        let mut axis = 0;
        for i in 1..3 {
            if t_max[i] < t_max[axis] {
                axis = i;
            }
        }
        cur[axis] = (cur[axis] as i64 + step[axis]) as usize;
        t_max[axis] += delta[axis];
        out.push(cur);
    }
    debug_assert_eq!(cur, b);
    out
}

/// `Σ` over traversed voxels of `-ln P_b`, or the exterior penalty outside
/// the mask.
pub fn edge_cost(bones: &[f64], mask: &OccupancyMask, a: [usize; 3], b: [usize; 3]) -> f64 {
    let g = &mask.grid;
    traverse(a, b)
        .into_iter()
        .map(|v| {
            let idx = g.index(v[0], v[1], v[2]);
            if mask.data[idx] {
                -bones[idx].clamp(COST_CLAMP, 1.0).ln()
            } else {
                EXTERIOR_COST
            }
        })
        .sum()
}
