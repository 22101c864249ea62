//! Similarity measures between a predicted and a reference skeleton.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VolrigError};
use crate::mesh::{Bvh, Point, TriangleMesh, Vec3};
use crate::shapes::point_segment_distance;
use crate::skeleton::Skeleton;

pub const DEFAULT_TOLERANCE: f64 = 0.5;
/// Rays cast around a bone when measuring its local diameter.
pub const DIAMETER_RAYS: usize = 8;

fn check_scale(longest_axis: f64) -> Result<()> {
    if !(longest_axis > 0.0 && longest_axis.is_finite()) {
        return Err(VolrigError::Invalid(format!("longest axis must be positive, got {longest_axis}")));
    }
    Ok(())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn nearest_point(p: &Point, set: &[Point]) -> f64 {
    set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

fn nearest_segment(p: &Point, segs: &[(Point, Point)]) -> f64 {
    segs.iter()
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric joint-to-joint Chamfer distance over `longest_axis`.
pub fn cd_joint(pred: &Skeleton, reference: &Skeleton, longest_axis: f64) -> Result<f64> {
    check_scale(longest_axis)?;
    let (a, b) = (pred.positions(), reference.positions());
    if a.is_empty() || b.is_empty() {
        return Err(VolrigError::Skeleton("empty skeleton".into()));
    }
    let ab = mean(a.iter().map(|p| nearest_point(p, &b)));
    let ba = mean(b.iter().map(|p| nearest_point(p, &a)));
    Ok(0.5 * (ab + ba) / longest_axis)
}

/// Joints of each skeleton against the bones of the other, over `longest_axis`.
pub fn cd_joint2bone(pred: &Skeleton, reference: &Skeleton, longest_axis: f64) -> Result<f64> {
    check_scale(longest_axis)?;
    let (sa, sb) = (pred.segments(), reference.segments());
    if sa.is_empty() || sb.is_empty() {
        return Err(VolrigError::Skeleton("skeleton without bones".into()));
    }
    let ab = mean(pred.positions().iter().map(|p| nearest_segment(p, &sb)));
    let ba = mean(reference.positions().iter().map(|p| nearest_segment(p, &sa)));
    Ok(0.5 * (ab + ba) / longest_axis)
}

/// Unit vectors perpendicular to `axis`, evenly spaced around it.
pub fn perpendicular_directions(axis: &Vec3, count: usize) -> Vec<Vec3> {
    let a = axis.normalize();
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = a.cross(&helper).normalize();
    let v = a.cross(&u);
    (0..count)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / count as f64;
            u * th.cos() + v * th.sin()
        })
        .collect()
}

/// Local diameters at every reference joint, each with a flag set when all
/// rays missed and the mean of the other joints was used instead.
pub fn joint_diameters(reference: &Skeleton, mesh: &TriangleMesh) -> Result<Vec<(f64, bool)>> {
    if reference.len() < 2 {
        return Err(VolrigError::Skeleton("matching rates need at least one bone".into()));
    }
    let bvh = Bvh::build(mesh);
    let children = reference.children();
    let parents = reference.parents();
    let raw: Vec<Option<f64>> = (0..reference.len())
        .map(|j| {
            let p = reference.joints[j].position;
            let other = match (children[j].first(), parents[j]) {
                (Some(&c), _) => c,
                (None, Some(q)) => q,
                (None, None) => return None,
            };
            let axis = reference.joints[other].position - p;
            if axis.norm() == 0.0 {
                return None;
            }
            let widths: Vec<f64> = perpendicular_directions(&axis, DIAMETER_RAYS)
                .iter()
                .filter_map(|d| {
                    let fwd = bvh.intersect(&p, d)?.t;
                    let back = bvh.intersect(&p, &-d)?.t;
                    Some(fwd + back)
                })
                .collect();
            (!widths.is_empty()).then(|| mean(widths.into_iter()))
        })
        .collect();
    let found: Vec<f64> = raw.iter().flatten().copied().collect();
    if found.is_empty() {
        return Err(VolrigError::Invalid("no diameter ray hit the mesh".into()));
    }
    let fallback = mean(found.iter().copied());
    Ok(raw.into_iter().map(|d| d.map_or((fallback, true), |v| (v, false))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingRates {
    pub mr_pred: f64,
    pub mr_ref: f64,
    /// Reference joints whose diameter came from the fallback.
    pub fallback_joints: usize,
}

/// Percentages of predicted joints near some reference joint and of reference
/// joints near some predicted joint, distances scaled by the reference
/// joint's local diameter.
pub fn matching_rates(pred: &Skeleton, reference: &Skeleton, mesh: &TriangleMesh, tol: f64) -> Result<MatchingRates> {
    if pred.is_empty() {
        return Err(VolrigError::Skeleton("empty skeleton".into()));
    }
    if !(tol > 0.0) {
        return Err(VolrigError::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    let diam = joint_diameters(reference, mesh)?;
    let matched = |p: &Point, r: usize| (p - reference.joints[r].position).norm() < tol * diam[r].0;
    let pred_hits = pred
        .joints
        .iter()
        .filter(|j| (0..reference.len()).any(|r| matched(&j.position, r)))
        .count();
    let ref_hits = (0..reference.len())
        .filter(|&r| pred.joints.iter().any(|j| matched(&j.position, r)))
        .count();
    Ok(MatchingRates {
        mr_pred: 100.0 * pred_hits as f64 / pred.len() as f64,
        mr_ref: 100.0 * ref_hits as f64 / reference.len() as f64,
        fallback_joints: diam.iter().filter(|d| d.1).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cd_joint: f64,
    pub cd_joint2bone: f64,
    pub mr_pred: f64,
    pub mr_ref: f64,
}

pub fn evaluate_pair(pred: &Skeleton, reference: &Skeleton, mesh: &TriangleMesh, tol: f64) -> Result<(Metrics, usize)> {
    let axis = mesh.longest_extent();
    let mr = matching_rates(pred, reference, mesh, tol)?;
    Ok((
        Metrics {
            cd_joint: cd_joint(pred, reference, axis)?,
            cd_joint2bone: cd_joint2bone(pred, reference, axis)?,
            mr_pred: mr.mr_pred,
            mr_ref: mr.mr_ref,
        },
        mr.fallback_joints,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub metrics: Option<Metrics>,
    pub fallback_joints: usize,
    pub error: Option<String>,
}

impl EvalRow {
    /// Failed, or relied on a fallback diameter.
    pub fn flagged(&self) -> bool {
        self.error.is_some() || self.fallback_joints > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tolerance: f64,
    pub rows: Vec<EvalRow>,
    /// Unweighted mean over rows without errors.
    pub mean: Option<Metrics>,
}

pub struct EvalCase {
    pub name: String,
    pub pred: Skeleton,
    pub reference: Skeleton,
    pub mesh: TriangleMesh,
}

pub fn evaluate_dataset(cases: &[EvalCase], tol: f64) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(VolrigError::Invalid("nothing to evaluate".into()));
    }
    let rows: Vec<EvalRow> = cases
        .par_iter()
        .map(|c| match evaluate_pair(&c.pred, &c.reference, &c.mesh, tol) {
            Ok((m, fallback_joints)) => EvalRow {
                name: c.name.clone(),
                metrics: Some(m),
                fallback_joints,
                error: None,
            },
            Err(e) => EvalRow {
                name: c.name.clone(),
                metrics: None,
                fallback_joints: 0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let ok: Vec<&Metrics> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let mean = (!ok.is_empty()).then(|| Metrics {
        cd_joint: mean(ok.iter().map(|m| m.cd_joint)),
        cd_joint2bone: mean(ok.iter().map(|m| m.cd_joint2bone)),
        mr_pred: mean(ok.iter().map(|m| m.mr_pred)),
        mr_ref: mean(ok.iter().map(|m| m.mr_ref)),
    });
    Ok(EvalReport {
        tolerance: tol,
        rows,
        mean,
    })
}

impl EvalReport {
    /// Aligned text table, distances as percentages of the longest axis.
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).chain([4]).max().unwrap_or(4);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>14}  {:>8}  {:>7}\n",
            "shape", "CD-joint", "CD-joint2bone", "MR-pred", "MR-ref"
        );
        let line = |name: &str, m: &Metrics, note: &str| {
            format!(
                "{:<width$}  {:>8.2}%  {:>13.2}%  {:>7.1}%  {:>6.1}%{note}\n",
                name,
                100.0 * m.cd_joint,
                100.0 * m.cd_joint2bone,
                m.mr_pred,
                m.mr_ref
            )
        };
        for r in &self.rows {
            match (&r.metrics, &r.error) {
                (Some(m), _) => {
                    let note = if r.fallback_joints > 0 {
                        format!("  ({} fallback diameters)", r.fallback_joints)
                    } else {
                        String::new()
                    };
                    out += &line(&r.name, m, &note);
                }
                (None, e) => out += &format!("{:<width$}  error: {}\n", r.name, e.as_deref().unwrap_or("?")),
            }
        }
        if let Some(m) = &self.mean {
            out += &line("mean", m, "");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::closed_cylinder;
    use crate::skeleton::Joint;

    fn chain(points: &[[f64; 3]]) -> Skeleton {
        let joints = points
            .iter()
            .enumerate()
            .map(|(i, p)| Joint {
                name: format!("j{i}"),
                position: Point::from(*p),
            })
            .collect();
        let edges = (1..points.len()).map(|i| (i - 1, i)).collect();
        Skeleton::new(joints, edges, 0).unwrap()
    }

    #[test]
    fn identical_and_shifted() {
        let a = chain(&[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 2.0, 0.0]]);
        assert_eq!(cd_joint(&a, &a, 2.0).unwrap(), 0.0);
        assert_eq!(cd_joint2bone(&a, &a, 2.0).unwrap(), 0.0);
        let b = a.transformed(&crate::mesh::Similarity {
            scale: 1.0,
            translation: [0.1, 0.0, 0.0],
        });
        assert!((cd_joint(&a, &b, 2.0).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn joint_on_bone_midpoint() {
        let r = chain(&[[0.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert_eq!(point_segment_distance(&Point::new(0.0, 1.0, 0.0), &Point::origin(), &Point::new(0.0, 2.0, 0.0)), 0.0);
        let d = point_segment_distance(&Point::new(0.3, 1.0, 0.0), &Point::origin(), &Point::new(0.0, 2.0, 0.0));
        assert!((d - 0.3).abs() < 1e-15);
        assert!(cd_joint2bone(&r, &r, 1.0).unwrap() == 0.0);
    }

    #[test]
    fn cylinder_threshold() {
        let r = 0.1;
        let mesh = closed_cylinder(Point::new(0.0, -1.0, 0.0), r, 2.0, 64, 8);
        let reference = chain(&[[0.0, -0.5, 0.0], [0.0, 0.0, 0.0], [0.0, 0.5, 0.0]]);
        let d = joint_diameters(&reference, &mesh).unwrap();
        for (v, fb) in &d {
            assert!(!fb);
            assert!((v - 2.0 * r).abs() < 0.01 * r, "{v}");
        }
        let shifted = |s: f64| chain(&[[0.0, -0.5 + s, 0.0], [0.0, s, 0.0], [0.0, 0.5 + s, 0.0]]);
        let m = matching_rates(&shifted(0.9 * r), &reference, &mesh, 0.5).unwrap();
        assert_eq!((m.mr_pred, m.mr_ref), (100.0, 100.0));
        let m = matching_rates(&shifted(1.1 * r), &reference, &mesh, 0.5).unwrap();
        assert_eq!((m.mr_pred, m.mr_ref), (0.0, 0.0));
    }

    #[test]
    fn spurious_joint_only_hurts_mr_pred() {
        let mesh = closed_cylinder(Point::new(0.0, -1.0, 0.0), 0.1, 2.0, 64, 8);
        let reference = chain(&[[0.0, -0.5, 0.0], [0.0, 0.5, 0.0]]);
        let pred = chain(&[[0.0, -0.5, 0.0], [0.0, 0.5, 0.0], [0.0, 0.9, 0.0]]);
        let m = matching_rates(&pred, &reference, &mesh, 0.5).unwrap();
        assert_eq!(m.mr_ref, 100.0);
        assert!(m.mr_pred < 100.0);
    }

    #[test]
    fn dataset_means_and_table() {
        let mesh = closed_cylinder(Point::new(0.0, -1.0, 0.0), 0.1, 2.0, 32, 4);
        let a = chain(&[[0.0, -0.5, 0.0], [0.0, 0.5, 0.0]]);
        let cases = vec![
            EvalCase {
                name: "same".into(),
                pred: a.clone(),
                reference: a.clone(),
                mesh: mesh.clone(),
            },
            EvalCase {
                name: "broken".into(),
                pred: chain(&[[0.0, 0.0, 0.0]]),
                reference: a.clone(),
                mesh,
            },
        ];
        let rep = evaluate_dataset(&cases, 0.5).unwrap();
        assert_eq!(
            rep.mean,
            Some(Metrics {
                cd_joint: 0.0,
                cd_joint2bone: 0.0,
                mr_pred: 100.0,
                mr_ref: 100.0
            })
        );
        assert!(rep.rows[1].flagged());
        let t = rep.table();
        assert!(t.contains("broken  error"));
        assert_eq!(t.lines().count(), 4);
    }
}
