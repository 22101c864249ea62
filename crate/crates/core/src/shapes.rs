//! Primitive meshes and an implicit-surface mesher. Used by the synthetic
//! character generator and by tests that need shapes with known geometry.

use std::collections::HashMap;

use crate::mesh::{Point, TriangleMesh, Vec3};

/// Concatenates meshes into one soup (no welding).
pub fn merge(parts: &[TriangleMesh]) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut normals = Vec::new();
    for p in parts {
        let base = vertices.len() as u32;
        vertices.extend_from_slice(&p.vertices);
        normals.extend_from_slice(&p.normals);
        triangles.extend(p.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }
    TriangleMesh::with_normals(vertices, triangles, normals).expect("merged parts are valid")
}

/// Reflection about x = 0 with winding flipped so normals stay outward.
pub fn mirror_x(mesh: &TriangleMesh) -> TriangleMesh {
    let v = mesh.vertices.iter().map(|p| Point::new(-p.x, p.y, p.z)).collect();
    let t = mesh.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect();
    TriangleMesh::new(v, t).expect("mirror of a valid mesh")
}

/// Closed axis-aligned box with outward winding.
pub fn box_mesh(min: [f64; 3], max: [f64; 3]) -> TriangleMesh {
    let v = (0..8)
        .map(|i| {
            Point::new(
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            )
        })
        .collect();
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let t = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh::new(v, t).expect("box is valid")
}

/// Two triangles covering the unit square at z = 0, sharing the diagonal.
pub fn quad_pair() -> TriangleMesh {
    let v = vec![
        Point::new(0.0, 0.0, 0.0),
        Point::new(1.0, 0.0, 0.0),
        Point::new(1.0, 1.0, 0.0),
        Point::new(0.0, 1.0, 0.0),
    ];
    TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).expect("valid")
}

/// Subdivided icosahedron with vertices on the sphere.
pub fn icosphere(center: Point, radius: f64, subdivisions: u32) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let normals = verts.clone();
    let v = verts.iter().map(|d| center + d * radius).collect();
    TriangleMesh::with_normals(v, faces, normals).expect("valid")
}

/// Closed cylinder along +y from `base` with flat caps. Cap rims use their own
/// vertices so side and cap normals stay sharp.
pub fn closed_cylinder(base: Point, radius: f64, height: f64, segments: u32, rings: u32) -> TriangleMesh {
    let mut v = Vec::new();
    let mut t = Vec::new();
    let seg = segments as usize;
    let ring_pt = |i: usize, y: f64| {
        let a = std::f64::consts::TAU * i as f64 / seg as f64;
        Point::new(base.x + radius * a.cos(), base.y + y, base.z - radius * a.sin())
    };
    for r in 0..=rings {
        let y = height * r as f64 / rings as f64;
        for i in 0..seg {
            v.push(ring_pt(i, y));
        }
    }
    for r in 0..rings as usize {
        for i in 0..seg {
            let a = (r * seg + i) as u32;
            let b = (r * seg + (i + 1) % seg) as u32;
            let c = ((r + 1) * seg + (i + 1) % seg) as u32;
            let d = ((r + 1) * seg + i) as u32;
            t.push([a, b, c]);
            t.push([a, c, d]);
        }
    }
    for (y, up) in [(0.0, false), (height, true)] {
        let center = v.len() as u32;
        v.push(Point::new(base.x, base.y + y, base.z));
        let start = v.len() as u32;
        for i in 0..seg {
            v.push(ring_pt(i, y));
        }
        for i in 0..seg as u32 {
            let a = start + i;
            let b = start + (i + 1) % seg as u32;
            t.push(if up { [center, a, b] } else { [center, b, a] });
        }
    }
    TriangleMesh::new(v, t).expect("valid")
}

/// Rigidly places a +y-aligned mesh so that its local origin maps to `from`
/// and its +y axis to the direction `to - from`.
pub fn orient_y_axis(mesh: &TriangleMesh, from: Point, to: Point) -> TriangleMesh {
    let dir = (to - from).normalize();
    let rot = nalgebra::Rotation3::rotation_between(&Vec3::y(), &dir)
        .unwrap_or_else(|| nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    let v = mesh.vertices.iter().map(|p| from + rot * p.coords).collect();
    let n = mesh.normals.iter().map(|n| rot * n).collect();
    TriangleMesh::with_normals(v, mesh.triangles.clone(), n).expect("valid")
}

/// Naive surface nets over the lattice `i * spacing` for integer `i` in
/// `[lo, hi]` per axis. `f < 0` is inside. Lattice coordinates are integer
/// multiples of the spacing, so a field symmetric about x = 0 produces a
/// mirror-symmetric mesh when the lattice is.
pub fn mesh_implicit<F>(f: F, lo: [i64; 3], hi: [i64; 3], spacing: f64) -> Option<TriangleMesh>
where
    F: Fn(&Point) -> f64,
{
    let n = [
        (hi[0] - lo[0] + 1) as usize,
        (hi[1] - lo[1] + 1) as usize,
        (hi[2] - lo[2] + 1) as usize,
    ];
    let pos = |i: usize, j: usize, k: usize| {
        Point::new(
            (lo[0] + i as i64) as f64 * spacing,
            (lo[1] + j as i64) as f64 * spacing,
            (lo[2] + k as i64) as f64 * spacing,
        )
    };
    let idx = |i: usize, j: usize, k: usize| i + n[0] * (j + n[1] * k);
    let mut field = vec![0.0; n[0] * n[1] * n[2]];
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                field[idx(i, j, k)] = f(&pos(i, j, k));
            }
        }
    }
    // one vertex per sign-changing cell
    let cidx = |i: usize, j: usize, k: usize| i + (n[0] - 1) * (j + (n[1] - 1) * k);
    let mut cell_vertex = vec![u32::MAX; (n[0] - 1) * (n[1] - 1) * (n[2] - 1)];
    let mut vertices = Vec::new();
    const EDGES: [([usize; 3], [usize; 3]); 12] = [
        ([0, 0, 0], [1, 0, 0]),
        ([0, 1, 0], [1, 1, 0]),
        ([0, 0, 1], [1, 0, 1]),
        ([0, 1, 1], [1, 1, 1]),
        ([0, 0, 0], [0, 1, 0]),
        ([1, 0, 0], [1, 1, 0]),
        ([0, 0, 1], [0, 1, 1]),
        ([1, 0, 1], [1, 1, 1]),
        ([0, 0, 0], [0, 0, 1]),
        ([1, 0, 0], [1, 0, 1]),
        ([0, 1, 0], [0, 1, 1]),
        ([1, 1, 0], [1, 1, 1]),
    ];
    for k in 0..n[2] - 1 {
        for j in 0..n[1] - 1 {
            for i in 0..n[0] - 1 {
                let mut acc = Vec3::zeros();
                let mut count = 0;
                for (a, b) in EDGES {
                    let pa = (i + a[0], j + a[1], k + a[2]);
                    let pb = (i + b[0], j + b[1], k + b[2]);
                    let fa = field[idx(pa.0, pa.1, pa.2)];
                    let fb = field[idx(pb.0, pb.1, pb.2)];
                    if (fa < 0.0) != (fb < 0.0) {
                        let t = fa / (fa - fb);
                        let qa = pos(pa.0, pa.1, pa.2);
                        let qb = pos(pb.0, pb.1, pb.2);
                        acc += qa.coords + (qb - qa) * t;
                        count += 1;
                    }
                }
                if count > 0 {
                    cell_vertex[cidx(i, j, k)] = vertices.len() as u32;
                    vertices.push(Point::from(acc / count as f64));
                }
            }
        }
    }
    let mut triangles = Vec::new();
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let p = [i, j, k];
                let f0 = field[idx(i, j, k)];
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    if p[axis] + 1 >= n[axis] || p[u] == 0 || p[v] == 0 {
                        continue;
                    }
                    let mut q = p;
                    q[axis] += 1;
                    let f1 = field[idx(q[0], q[1], q[2])];
                    if (f0 < 0.0) == (f1 < 0.0) {
                        continue;
                    }
                    let cell = |du: usize, dv: usize| {
                        let mut c = p;
                        c[u] -= du;
                        c[v] -= dv;
                        cell_vertex[cidx(c[0], c[1], c[2])]
                    };
                    let mut quad = [cell(1, 1), cell(0, 1), cell(0, 0), cell(1, 0)];
                    if f0 >= 0.0 {
                        quad.reverse();
                    }
                    let d02 = (vertices[quad[0] as usize] - vertices[quad[2] as usize]).norm_squared();
                    let d13 = (vertices[quad[1] as usize] - vertices[quad[3] as usize]).norm_squared();
                    if d02 <= d13 {
                        triangles.push([quad[0], quad[1], quad[2]]);
                        triangles.push([quad[0], quad[2], quad[3]]);
                    } else {
                        triangles.push([quad[0], quad[1], quad[3]]);
                        triangles.push([quad[1], quad[2], quad[3]]);
                    }
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles).ok()
}

/// Distance from `p` to the segment `[a, b]`. Exactly zero at either end.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { (p - a).dot(&ab) / len2 } else { 0.0 };
    if t <= 0.0 {
        (p - a).norm()
    } else if t >= 1.0 {
        (p - b).norm()
    } else {
        (p - (a + ab * t)).norm().min((p - a).norm()).min((p - b).norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn icosphere_area_approaches_sphere() {
        let m = icosphere(Point::origin(), 2.0, 4);
        let exact = 4.0 * std::f64::consts::PI * 4.0;
        assert!((m.total_area() - exact).abs() / exact < 0.01);
    }

    #[test]
    fn cylinder_area() {
        let m = closed_cylinder(Point::origin(), 0.5, 2.0, 256, 4);
        let exact = std::f64::consts::TAU * 0.5 * 2.0 + 2.0 * std::f64::consts::PI * 0.25;
        assert!((m.total_area() - exact).abs() / exact < 1e-3);
        let b = m.bounds();
        assert_abs_diff_eq!(b.max.y, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn surface_nets_sphere_is_closed_and_outward() {
        let m = mesh_implicit(|p| p.coords.norm() - 0.5, [-30; 3], [30; 3], 0.025).unwrap();
        // every sample point is within half a lattice diagonal of the sphere
        for v in &m.vertices {
            assert!((v.coords.norm() - 0.5).abs() < 0.025);
        }
        let outward = (0..m.triangles.len())
            .filter(|&t| {
                let [a, b, c] = m.triangle(t);
                m.face_normal(t).dot(&((a.coords + b.coords + c.coords) / 3.0)) > 0.0
            })
            .count();
        assert_eq!(outward, m.triangles.len());
    }

    #[test]
    fn mirror_flips_x() {
        let m = box_mesh([0.1, 0.0, 0.0], [0.2, 1.0, 1.0]);
        let r = mirror_x(&m);
        assert_abs_diff_eq!(r.bounds().max.x, -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(r.total_area(), m.total_area(), epsilon = 1e-12);
    }

    #[test]
    fn segment_distance() {
        let a = Point::new(0.0, 0.0, 0.0);
        let b = Point::new(2.0, 0.0, 0.0);
        assert_abs_diff_eq!(point_segment_distance(&Point::new(1.0, 3.0, 0.0), &a, &b), 3.0);
        assert_abs_diff_eq!(point_segment_distance(&Point::new(-1.0, 0.0, 0.0), &a, &b), 1.0);
    }
}
