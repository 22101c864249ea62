//! Animation skeletons and the plain-text rig format.
//!
//! A rig file holds one record per line:
//!
//! ```text
//! mesh body.obj
//! joint hips 0 0.5 0
//! joint spine 0 0.8 0
//! root hips
//! bone hips spine
//! ```
//!
//! Blank lines and lines starting with `#` are skipped. The mesh path is
//! relative to the rig file.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VolrigError};
use crate::mesh::{load_mesh, normalize_mesh, save_obj, Point, Similarity, TriangleMesh};

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub position: Point,
}

/// Joint tree. Edges are `(parent, child)` and point away from the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    pub edges: Vec<(usize, usize)>,
    pub root: usize,
}

impl Skeleton {
    /// Validates the tree: every joint except the root has exactly one
    /// parent and all joints are reachable from the root.
    pub fn new(joints: Vec<Joint>, edges: Vec<(usize, usize)>, root: usize) -> Result<Self> {
        let n = joints.len();
        if n == 0 {
            return Err(VolrigError::Skeleton("no joints".into()));
        }
        if root >= n {
            return Err(VolrigError::Skeleton(format!("root {root} out of range")));
        }
        if let Some(j) = joints.iter().find(|j| !j.position.coords.iter().all(|v| v.is_finite())) {
            return Err(VolrigError::Skeleton(format!("joint {} has a non-finite position", j.name)));
        }
        let mut parent = vec![None; n];
        for &(p, c) in &edges {
            if p >= n || c >= n {
                return Err(VolrigError::Skeleton(format!("edge ({p}, {c}) references a missing joint")));
            }
            if p == c {
                return Err(VolrigError::Skeleton(format!("self-loop at joint {p}")));
            }
            if c == root {
                return Err(VolrigError::Skeleton("root has a parent".into()));
            }
            if parent[c].replace(p).is_some() {
                return Err(VolrigError::Skeleton(format!("joint {} has two parents", joints[c].name)));
            }
        }
        if edges.len() != n - 1 {
            return Err(VolrigError::Skeleton(format!("{} edges for {n} joints", edges.len())));
        }
        // with n - 1 edges and unique parents, reachability rules out cycles
        let s = Skeleton { joints, edges, root };
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        let children = s.children();
        while let Some(j) = stack.pop() {
            if std::mem::replace(&mut seen[j], true) {
                continue;
            }
            stack.extend(&children[j]);
        }
        if let Some(j) = seen.iter().position(|&v| !v) {
            return Err(VolrigError::Skeleton(format!(
                "joint {} is not connected to the root (cycle or forest)",
                s.joints[j].name
            )));
        }
        Ok(s)
    }

    /// Builds a tree from undirected edges by orienting them away from `root`.
    pub fn from_undirected(joints: Vec<Joint>, undirected: &[(usize, usize)], root: usize) -> Result<Self> {
        let n = joints.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in undirected {
            if a >= n || b >= n {
                return Err(VolrigError::Skeleton(format!("edge ({a}, {b}) references a missing joint")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        let mut edges = Vec::with_capacity(n.saturating_sub(1));
        let mut seen = vec![false; n];
        if root < n {
            seen[root] = true;
            let mut queue = std::collections::VecDeque::from([root]);
            while let Some(j) = queue.pop_front() {
                for &k in &adj[j] {
                    if !seen[k] {
                        seen[k] = true;
                        edges.push((j, k));
                        queue.push_back(k);
                    }
                }
            }
        }
        if edges.len() + 1 != n || undirected.len() != edges.len() {
            return Err(VolrigError::Skeleton("edges do not form a spanning tree".into()));
        }
        Skeleton::new(joints, edges, root)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.joints.iter().map(|j| j.position).collect()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut c = vec![Vec::new(); self.joints.len()];
        for &(p, ch) in &self.edges {
            c[p].push(ch);
        }
        c
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.joints.len()];
        for &(a, b) in &self.edges {
            p[b] = Some(a);
        }
        p
    }

    /// Joint indices of the subtree rooted at `j`, `j` first.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let children = self.children();
        let mut out = Vec::new();
        let mut stack = vec![j];
        while let Some(k) = stack.pop() {
            out.push(k);
            stack.extend(children[k].iter().rev());
        }
        out
    }

    /// Bone segments as endpoint pairs.
    pub fn segments(&self) -> Vec<(Point, Point)> {
        self.edges
            .iter()
            .map(|&(a, b)| (self.joints[a].position, self.joints[b].position))
            .collect()
    }

    /// Unordered edge set, each pair stored `(min, max)`.
    pub fn adjacency(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn transformed(&self, xf: &Similarity) -> Skeleton {
        let mut s = self.clone();
        for j in &mut s.joints {
            j.position = xf.apply(&j.position);
        }
        s
    }

    pub fn to_json(&self) -> SkeletonJson {
        let parents = self.parents();
        SkeletonJson {
            root: self.root,
            joints: self
                .joints
                .iter()
                .zip(parents)
                .map(|(j, p)| JointJson {
                    name: j.name.clone(),
                    position: [j.position.x, j.position.y, j.position.z],
                    parent: p,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointJson {
    pub name: String,
    pub position: [f64; 3],
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonJson {
    pub root: usize,
    pub joints: Vec<JointJson>,
}

/// A mesh and its skeleton in one (normalized) frame.
#[derive(Debug, Clone)]
pub struct RiggedCharacter {
    pub mesh: TriangleMesh,
    pub skeleton: Skeleton,
}

impl RiggedCharacter {
    /// Normalizes the mesh and carries the joints along.
    pub fn normalized(mesh: &TriangleMesh, skeleton: &Skeleton) -> Result<(RiggedCharacter, Similarity)> {
        let (m, xf) = normalize_mesh(mesh)?;
        // an already normalized pair stays bit-identical
        if near_identity(&xf) {
            let same = RiggedCharacter {
                mesh: mesh.clone(),
                skeleton: skeleton.clone(),
            };
            return Ok((same, Similarity::identity()));
        }
        Ok((
            RiggedCharacter {
                mesh: m,
                skeleton: skeleton.transformed(&xf),
            },
            xf,
        ))
    }
}

fn near_identity(xf: &Similarity) -> bool {
    (xf.scale - 1.0).abs() < 1e-12 && xf.translation.iter().all(|t| t.abs() < 1e-12)
}

/// Parsed rig file before the mesh is loaded.
#[derive(Debug, Clone)]
pub struct RigFile {
    pub mesh: Option<PathBuf>,
    pub skeleton: Skeleton,
}

pub fn parse_rig(text: &str, path: &Path) -> Result<RigFile> {
    let err = |line: usize, msg: String| VolrigError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut mesh = None;
    let mut joints: Vec<Joint> = Vec::new();
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut root_name: Option<(usize, String)> = None;
    let mut bones: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap_or_default();
        let rest: Vec<&str> = it.collect();
        match tag {
            "mesh" => {
                let p = line["mesh".len()..].trim();
                if p.is_empty() {
                    return Err(err(ln, "mesh record without a path".into()));
                }
                mesh = Some(PathBuf::from(p));
            }
            "joint" => {
                let [name, x, y, z] = rest[..] else {
                    return Err(err(ln, "expected `joint <name> <x> <y> <z>`".into()));
                };
                let num = |s: &str| s.parse::<f64>().map_err(|e| err(ln, format!("bad coordinate {s:?}: {e}")));
                let p = Point::new(num(x)?, num(y)?, num(z)?);
                if names.insert(name.to_string(), joints.len()).is_some() {
                    return Err(err(ln, format!("duplicate joint {name}")));
                }
                joints.push(Joint {
                    name: name.to_string(),
                    position: p,
                });
            }
            "root" => {
                let [name] = rest[..] else {
                    return Err(err(ln, "expected `root <name>`".into()));
                };
                if root_name.is_some() {
                    return Err(err(ln, "second root record".into()));
                }
                root_name = Some((ln, name.to_string()));
            }
            "bone" => {
                let [p, c] = rest[..] else {
                    return Err(err(ln, "expected `bone <parent> <child>`".into()));
                };
                bones.push((ln, p.to_string(), c.to_string()));
            }
            other => return Err(err(ln, format!("unknown record {other:?}"))),
        }
    }
    let lookup = |ln: usize, n: &str| names.get(n).copied().ok_or_else(|| err(ln, format!("unknown joint {n}")));
    let root = match &root_name {
        Some((ln, n)) => lookup(*ln, n)?,
        None => return Err(err(0, "no root record".into())),
    };
    let mut edges = Vec::with_capacity(bones.len());
    for (ln, p, c) in &bones {
        edges.push((lookup(*ln, p)?, lookup(*ln, c)?));
    }
    let skeleton = Skeleton::new(joints, edges, root)?;
    Ok(RigFile { mesh, skeleton })
}

pub fn format_rig(skeleton: &Skeleton, mesh: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(m) = mesh {
        let _ = writeln!(out, "mesh {m}");
    }
    for j in &skeleton.joints {
        let p = j.position;
        let _ = writeln!(out, "joint {} {} {} {}", j.name, p.x, p.y, p.z);
    }
    let _ = writeln!(out, "root {}", skeleton.joints[skeleton.root].name);
    for &(a, b) in &skeleton.edges {
        let _ = writeln!(out, "bone {} {}", skeleton.joints[a].name, skeleton.joints[b].name);
    }
    out
}

pub fn read_skeleton(path: impl AsRef<Path>) -> Result<RigFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| VolrigError::io(path, e))?;
    parse_rig(&text, path)
}

pub fn write_skeleton(path: impl AsRef<Path>, skeleton: &Skeleton, mesh: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| VolrigError::io(dir, e))?;
    }
    fs::write(path, format_rig(skeleton, mesh)).map_err(|e| VolrigError::io(path, e))
}

/// Loads a rig and its companion mesh, normalizing both together.
pub fn load_rig(path: impl AsRef<Path>) -> Result<RiggedCharacter> {
    let path = path.as_ref();
    let rig = read_skeleton(path)?;
    let rel = rig.mesh.ok_or_else(|| VolrigError::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "no mesh record".into(),
    })?;
    let mesh_path = path.parent().unwrap_or(Path::new(".")).join(rel);
    let mesh = load_mesh(&mesh_path)?;
    Ok(RiggedCharacter::normalized(&mesh, &rig.skeleton)?.0)
}

/// Writes `<stem>.obj` and `<stem>.rig` into `dir`; returns the rig path.
pub fn save_rig(dir: impl AsRef<Path>, stem: &str, character: &RiggedCharacter) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| VolrigError::io(dir, e))?;
    let obj = format!("{stem}.obj");
    save_obj(&character.mesh, dir.join(&obj))?;
    let rig = dir.join(format!("{stem}.rig"));
    write_skeleton(&rig, &character.skeleton, Some(&obj))?;
    Ok(rig)
}
