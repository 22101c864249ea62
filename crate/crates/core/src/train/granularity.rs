//! Granularity labels: a low percentile of the local shape diameter over the
//! character's surface.

use crate::error::{Result, VolrigError};
use crate::features::{compute_local_shape_diameter, ShapeDiameter};
use crate::mesh::{sample_surface, Bvh};
use crate::net::Granularity;
use crate::skeleton::RiggedCharacter;

pub const LABEL_PERCENTILE: f64 = 5.0;

/// Nearest-rank percentile: the smallest value with at least `q`% of the
/// data at or below it.
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank - 1])
}

/// Label from per-sample diameters. Samples whose rays all missed carry no
/// thickness information and are left out.
pub fn granularity_from_diameters(lsd: &[ShapeDiameter]) -> Result<Granularity> {
    let hits: Vec<f64> = lsd.iter().filter(|d| !d.missed).map(|d| d.value).collect();
    let p = percentile_nearest_rank(&hits, LABEL_PERCENTILE)
        .ok_or_else(|| VolrigError::Invalid("no surface samples with a shape diameter".into()))?;
    Granularity::new(p.clamp(0.0, 1.0))
}

/// Samples the character's surface and labels it.
pub fn compute_granularity_label(character: &RiggedCharacter, samples: usize, seed: u64) -> Result<Granularity> {
    let s = sample_surface(&character.mesh, samples, seed)?;
    let bvh = Bvh::build(&character.mesh);
    granularity_from_diameters(&compute_local_shape_diameter(&bvh, &s))
}
