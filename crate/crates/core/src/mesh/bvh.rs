use super::{Aabb, Point, TriangleMesh, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: usize,
    /// Sign of `dir · face_normal`: +1 when leaving through the face, -1 when entering.
    pub exiting: bool,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding volume hierarchy over the triangles of a mesh. Holds its own copy
/// of the triangle corners so it can outlive the mesh borrow.
#[derive(Debug, Clone)]
pub struct Bvh {
    tris: Vec<[Point; 3]>,
    normals: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    epsilon: f64,
}

fn tri_bounds(t: &[Point; 3]) -> Aabb {
    let mut b = Aabb::empty();
    for p in t {
        b.grow(p);
    }
    b
}

fn ray_box(b: &Aabb, o: &Point, inv: &Vec3, t_max: f64) -> Option<f64> {
    let mut t0: f64 = 0.0;
    let mut t1 = t_max;
    for k in 0..3 {
        let mut a = (b.min[k] - o[k]) * inv[k];
        let mut c = (b.max[k] - o[k]) * inv[k];
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        // NaN from 0 * inf means the ray lies in the slab plane; keep it.
        if a.is_nan() || c.is_nan() {
            continue;
        }
        t0 = t0.max(a);
        t1 = t1.min(c);
        if t0 > t1 * (1.0 + 1e-12) + 1e-12 {
            return None;
        }
    }
    Some(t0)
}

fn box_dist2(b: &Aabb, p: &Point) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let v = if p[k] < b.min[k] {
            b.min[k] - p[k]
        } else if p[k] > b.max[k] {
            p[k] - b.max[k]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

/// Möller–Trumbore with inclusive barycentric bounds.
fn ray_triangle(o: &Point, d: &Vec3, t: &[Point; 3]) -> Option<f64> {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - t[0];
    let u = s.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
pub(crate) fn closest_on_triangle(p: &Point, t: &[Point; 3]) -> Point {
    let (a, b, c) = (t[0], t[1], t[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

// Fixed, mutually non-degenerate directions for inside tests.
const PROBE_DIRS: [[f64; 3]; 3] = [
    [0.5773502691896258, 0.5773502691896258, 0.5773502691896258],
    [-0.6859943405700354, 0.7276068751089989, 0.0],
    [0.1961161351381841, -0.3922322702763681, 0.8980265101338745],
];

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Bvh {
        let tris: Vec<[Point; 3]> = (0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect();
        let normals = (0..mesh.triangles.len()).map(|t| mesh.face_normal(t)).collect();
        let extent = mesh.longest_extent();
        let mut bvh = Bvh {
            order: (0..tris.len()).collect(),
            tris,
            normals,
            nodes: Vec::new(),
            epsilon: 1e-6 * extent.max(f64::MIN_POSITIVE),
        };
        let centroids: Vec<Point> = bvh
            .tris
            .iter()
            .map(|t| Point::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let n = bvh.tris.len();
        bvh.build_node(&centroids, 0, n);
        bvh
    }

    fn build_node(&mut self, centroids: &[Point], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for &i in &self.order[start..end] {
            bounds.merge(&tri_bounds(&self.tris[i]));
            cb.grow(&centroids[i]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        self.nodes.push(Node::Leaf { bounds, start, end });
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(centroids, start, mid);
        let right = self.build_node(centroids, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    /// Nearest hit with `t > epsilon`; equal distances resolve to the lowest
    /// triangle index.
    pub fn intersect(&self, origin: &Point, dir: &Vec3) -> Option<RayHit> {
        if self.tris.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let limit = best.map_or(f64::INFINITY, |b| b.t);
            if ray_box(self.nodes[id].bounds(), origin, &inv, limit).is_none() {
                continue;
            }
            match self.nodes[id] {
                Node::Leaf { start, end, .. } => {
                    for &tri in &self.order[start..end] {
                        let Some(t) = ray_triangle(origin, dir, &self.tris[tri]) else { continue };
                        if t <= self.epsilon {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some(b) => {
                                let tol = 1e-12 * b.t.max(1.0);
                                t < b.t - tol || ((t - b.t).abs() <= tol && tri < b.triangle)
                            }
                        };
                        if better {
                            best = Some(RayHit {
                                t,
                                triangle: tri,
                                exiting: dir.dot(&self.normals[tri]) > 0.0,
                            });
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }

    /// Every hit along the ray with `t > epsilon`, sorted by distance.
    pub fn all_hits(&self, origin: &Point, dir: &Vec3) -> Vec<RayHit> {
        let mut hits = Vec::new();
        if self.tris.is_empty() {
            return hits;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if ray_box(self.nodes[id].bounds(), origin, &inv, f64::INFINITY).is_none() {
                continue;
            }
            match self.nodes[id] {
                Node::Leaf { start, end, .. } => {
                    for &tri in &self.order[start..end] {
                        if let Some(t) = ray_triangle(origin, dir, &self.tris[tri]) {
                            if t > self.epsilon {
                                hits.push(RayHit {
                                    t,
                                    triangle: tri,
                                    exiting: dir.dot(&self.normals[tri]) > 0.0,
                                });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.triangle.cmp(&b.triangle)));
        hits
    }

    /// Closest surface point: `(distance, point, triangle)`.
    pub fn closest_point(&self, p: &Point) -> (f64, Point, usize) {
        let mut best = (f64::INFINITY, *p, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if box_dist2(self.nodes[id].bounds(), p) > best.0 {
                continue;
            }
            match self.nodes[id] {
                Node::Leaf { start, end, .. } => {
                    for &tri in &self.order[start..end] {
                        let q = closest_on_triangle(p, &self.tris[tri]);
                        let d2 = (q - p).norm_squared();
                        if d2 < best.0 || (d2 == best.0 && tri < best.2) {
                            best = (d2, q, tri);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = box_dist2(self.nodes[left].bounds(), p);
                    let dr = box_dist2(self.nodes[right].bounds(), p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        (best.0.sqrt(), best.1, best.2)
    }

    /// Signed crossing count along a ray: the ray-based winding number.
    fn winding_along(&self, p: &Point, dir: &Vec3) -> i32 {
        self.all_hits(p, dir)
            .iter()
            .map(|h| if h.exiting { 1 } else { -1 })
            .sum()
    }

    /// Inside test for closed (possibly self-overlapping) soups: a point is
    /// inside when the majority of three probe rays report a positive
    /// winding number.
    pub fn is_inside(&self, p: &Point) -> bool {
        let votes = PROBE_DIRS
            .iter()
            .filter(|d| self.winding_along(p, &Vec3::new(d[0], d[1], d[2])) > 0)
            .count();
        votes >= 2
    }
}
