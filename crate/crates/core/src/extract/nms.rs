//! Joint detection by soft non-maximum suppression on the joint map.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VolrigError};
use crate::features::{OccupancyMask, VoxelGrid};
use crate::mesh::Point;

/// Suppression ball radius in standard deviations.
pub const NMS_SUPPORT: f64 = 3.0;

/// How a picked joint lowers the map around it, with `G(d) = exp(-d²/2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    /// `P ← max(0, P - p·G(d))` where `p` is the picked value.
    #[default]
    Subtractive,
    /// `P ← P·(1 - G(d))`.
    Multiplicative,
}

impl std::str::FromStr for Decay {
    type Err = VolrigError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subtractive" => Ok(Decay::Subtractive),
            "multiplicative" => Ok(Decay::Multiplicative),
            _ => Err(VolrigError::Config(format!("unknown decay {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    /// Standard deviation of the decay kernel, voxels.
    pub sigma: f64,
    /// Stop once the best remaining probability falls below this.
    pub threshold: f64,
    #[serde(default)]
    pub decay: Decay,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            sigma: 4.5,
            threshold: 0.013,
            decay: Decay::default(),
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(VolrigError::Config(format!(
                "NMS needs sigma > 0 and 0 < t < 1, got {} and {}",
                self.sigma, self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointCandidate {
    pub voxel: [usize; 3],
    pub position: Point,
    /// Map value when the joint was picked.
    pub probability: f64,
}

/// Repeatedly takes the best masked voxel, clears the 26 cells around it and
/// decays the rest of its neighbourhood. Equal values go to the
/// lexicographically smallest `(i, j, k)`.
pub fn soft_nms(map: &[f64], mask: &OccupancyMask, cfg: &NmsConfig) -> Result<Vec<JointCandidate>> {
    run(map, mask, cfg, false)
}

/// Soft-NMS for a map symmetric about the grid's middle x layer: each pick
/// also takes its mirror cell (when that is not one of its 26 neighbours
/// and still above threshold) before either is decayed, so overlapping
/// suppression regions cannot break the symmetry of the joint set.
pub fn soft_nms_mirrored(map: &[f64], mask: &OccupancyMask, cfg: &NmsConfig) -> Result<Vec<JointCandidate>> {
    run(map, mask, cfg, true)
}

fn run(map: &[f64], mask: &OccupancyMask, cfg: &NmsConfig, mirrored: bool) -> Result<Vec<JointCandidate>> {
    cfg.validate()?;
    let grid = &mask.grid;
    if map.len() != grid.len() || mask.data.len() != grid.len() {
        return Err(VolrigError::Shape(format!(
            "joint map has {} cells, grid {}",
            map.len(),
            grid.len()
        )));
    }
    let mut p: Vec<f64> = map.to_vec();
    let candidates: Vec<usize> = (0..p.len()).filter(|&i| mask.data[i]).collect();
    let mut out = Vec::new();
    // every pick zeroes its own cell, so this bounds the loop
    for _ in 0..candidates.len() {
        let mut best: Option<(f64, [usize; 3], usize)> = None;
        for &idx in &candidates {
            let v = p[idx];
            let c = grid.coords(idx);
            let better = match best {
                None => true,
                Some((bv, bc, _)) => v > bv || (v == bv && c < bc),
            };
            if better {
                best = Some((v, c, idx));
            }
        }
        let Some((v, c, _)) = best else { break };
        if !(v >= cfg.threshold) {
            break;
        }
        out.push(JointCandidate {
            voxel: c,
            position: grid.center(c[0], c[1], c[2]),
            probability: v,
        });
        let m = [grid.res - 1 - c[0], c[1], c[2]];
        let twin = if mirrored && c[0].abs_diff(m[0]) > 1 {
            let mi = grid.index(m[0], m[1], m[2]);
            (mask.data[mi] && p[mi] >= cfg.threshold).then_some(p[mi])
        } else {
            None
        };
        decay(&mut p, grid, c, v, cfg);
        if let Some(pm) = twin {
            out.push(JointCandidate {
                voxel: m,
                position: grid.center(m[0], m[1], m[2]),
                probability: pm,
            });
            decay(&mut p, grid, m, pm, cfg);
        }
    }
    Ok(out)
}

fn decay(p: &mut [f64], grid: &VoxelGrid, c: [usize; 3], peak: f64, cfg: &NmsConfig) {
    let sigma = cfg.sigma;
    let reach = NMS_SUPPORT * sigma;
    let r = reach.floor() as i64;
    let n = grid.res as i64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for dk in -r..=r {
        for dj in -r..=r {
            for di in -r..=r {
                let d2 = (di * di + dj * dj + dk * dk) as f64;
                if d2 > reach * reach {
                    continue;
                }
                let (i, j, k) = (c[0] as i64 + di, c[1] as i64 + dj, c[2] as i64 + dk);
                if i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n {
                    continue;
                }
                let g = (-d2 * inv).exp();
                let v = &mut p[grid.index(i as usize, j as usize, k as usize)];
                if di.abs() <= 1 && dj.abs() <= 1 && dk.abs() <= 1 {
                    *v = 0.0;
                    continue;
                }
                *v = match cfg.decay {
                    Decay::Subtractive => (*v - peak * g).max(0.0),
                    Decay::Multiplicative => *v * (1.0 - g),
                };
            }
        }
    }
}
